"""A small end-to-end run: render, train, evaluate, decode a relation chain.

This uses a deliberately tiny configuration so it finishes in a couple of
minutes on a laptop CPU; the test suite's acceptance run uses the full
desk-scale settings instead.
"""

import os
import tempfile

import numpy as np
from PIL import Image

from weakdis import build_factor_space, builtin_relations
from weakdis.datasets import label_subset, make_dataset
from weakdis.evaluation import cluster_eval, relational_eval
from weakdis.networks import ArchConfig, decode
from weakdis.training import TrainConfig, _estimate_prior_f32, run_training

space = build_factor_space("dsprites")
dataset = make_dataset(space, "dsprites", 20, seed=0, size=32)
subset = label_subset(dataset, 10, seed=0)

arch = ArchConfig(
    n_z=8, height=32, width=32, channels=1, conv_channels=(16, 32, 64),
    mlp_width=256, relation_arity=1,
    relation_count=len(builtin_relations(space)),
)
config = TrainConfig(
    beta=4.0, warmup_epochs=30, full_epochs=70, batch_absae=32, batch_rel=128,
    learning_rate=1e-4, learning_rate_rel=1e-3, refresh_every=10, seed=0,
)

out_dir = os.path.join(tempfile.gettempdir(), "weakdis_demo_run")
state = run_training(
    config, dataset, subset, out_dir=out_dir,
    log_fn=lambda row: print(
        f"epoch {row['epoch']:3d} [{row['phase']}] total={row['loss_total']:.3f}"
    ) if row["epoch"] % 20 == 0 else None,
)
print(f"\ncheckpoint and history written under {out_dir}")

# --- latent classification on the held-out test split -----------------------

prior = _estimate_prior_f32(state.params, dataset, subset, config.variance_floor)
for row in cluster_eval(state.params, prior, dataset, [0.0, 0.5]):
    print(f"alpha={row.alpha}: accuracy={row.accuracy:.3f} "
          f"acceptance={row.acceptance_ratio:.3f}")

# --- relational rollouts through the trained network ------------------------

rows = relational_eval(
    prior, space, builtin_relations(space), depths=[1], alphas=[0.0],
    trials=1000, seed=1, params=state.params,
)
print(f"relation accuracy at depth 1: {rows[0].accuracy:.3f}")

# --- decode the component means into an image strip --------------------------

strip = np.concatenate(list(decode(state.params, prior.means.astype(np.float32))), axis=1)
out = os.path.join(tempfile.gettempdir(), "component_means.png")
Image.fromarray(np.round(strip[..., 0] * 255).astype(np.uint8)).save(out)
print(f"decoded component means to {out}")
