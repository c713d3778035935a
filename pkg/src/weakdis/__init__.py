"""Weakly disentangled representation learning.

An adversarial autoencoder whose latent space follows an adaptive
Gaussian-mixture prior (one component per generative-factor combination),
plus a relational learner that moves latent codes between components.
"""

from .factors import (
    FactorSpec,
    FactorSpace,
    FactorCombination,
    RelationDef,
    build_factor_space,
    builtin_relations,
    apply_relation,
    combination_to_index,
    index_to_combination,
)
from .datasets import Dataset, ImageSample, LabeledSubset, make_dataset, label_subset
from .networks import ArchConfig, NetworkParams, init_params
from .prior import GMPrior, estimate_prior, classify, responsibilities, warmup_sample
from .training import TrainConfig, run_training
from .evaluation import cluster_eval, relational_eval, mig, sap, dci

__version__ = "0.1.0"
