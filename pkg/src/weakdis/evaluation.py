"""Evaluation protocols: alpha-swept latent classification, relational
accuracy at depth, factor decoding, and disentanglement scores (MIG, SAP,
DCI) plus reconstruction error.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, asdict

import numpy as np
import torch
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import mutual_info_score
from sklearn.multiclass import OneVsRestClassifier

from . import prior as prior_mod
from .datasets import Dataset
from .factors import FactorSpace, RelationDef, index_to_value_indices
from .networks import NetworkParams, encode
from .prior import GMPrior, classify_batch
from .training import recon_kind_for_channels, reconstruction_loss

__all__ = [
    "ClusterEvalRow",
    "RelEvalRow",
    "MetricReport",
    "cluster_eval",
    "relational_eval",
    "factor_decode",
    "mig",
    "sap",
    "dci",
    "dci_components",
    "reconstruction_error",
    "write_cluster_csv",
    "write_relational_csv",
    "write_metrics_json",
]


@dataclass(frozen=True)
class ClusterEvalRow:
    alpha: float
    tau: int | None
    accuracy: float
    acceptance_ratio: float
    n_evaluated: int
    n_accepted: int


@dataclass(frozen=True)
class RelEvalRow:
    alpha: float
    depth: int
    accuracy: float
    acceptance_ratio: float
    trials: int


@dataclass(frozen=True)
class MetricReport:
    dci: float
    mig: float
    sap: float
    reconstruction_error: float


def _encode_split(params: NetworkParams, dataset: Dataset, split: str, batch: int = 512):
    idx = dataset.splits[split]
    codes = []
    for start in range(0, len(idx), batch):
        images = np.stack(
            [dataset.samples[i].pixels for i in idx[start : start + batch]]
        )
        codes.append(encode(params, images))
    labels = np.array([dataset.samples[i].combination_index for i in idx])
    return np.concatenate(codes), labels


def _rows_from_classification(resp_comps, resp_best, truth, alphas, make_row):
    rows = []
    for alpha in alphas:
        accepted = resp_best >= alpha
        n_acc = int(accepted.sum())
        acc = float((resp_comps[accepted] == truth[accepted]).mean()) if n_acc else 0.0
        rows.append(make_row(alpha, acc, n_acc))
    return rows


def cluster_eval(
    params: NetworkParams,
    prior: GMPrior,
    dataset: Dataset,
    alphas,
    tau: int | None = None,
    split: str = "test",
) -> list[ClusterEvalRow]:
    """Encode the test split and classify with rejection at each alpha."""
    codes, truth = _encode_split(params, dataset, split)
    if len(codes) == 0:
        raise ValueError("empty evaluation set")
    comps, best, _ = classify_batch(prior, codes, 0.0)
    return _rows_from_classification(
        comps, best, truth, alphas,
        lambda alpha, acc, n_acc: ClusterEvalRow(
            alpha, tau, acc, n_acc / len(codes), len(codes), n_acc
        ),
    )


def _applicable(relations: list[RelationDef], state: int) -> list[int]:
    # unary: relations whose valid_inputs contain (state,)
    # binary: relations with some valid pair whose first element is state
    out = []
    for r, rel in enumerate(relations):
        if rel.arity == 1:
            if (state,) in rel.valid_inputs:
                out.append(r)
        else:
            if any(inp[0] == state for inp in rel.valid_inputs):
                out.append(r)
    return out


def relational_eval(
    prior: GMPrior,
    space: FactorSpace,
    relations: list[RelationDef],
    depths,
    alphas,
    trials: int,
    seed: int = 0,
    params: NetworkParams | None = None,
    relate_fn=None,
    operator_components: dict[str, int] | None = None,
) -> list[RelEvalRow]:
    """Chain random valid relations through the relational network.

    Rollouts run in lockstep to max(depths); the final code of each rollout
    prefix is classified with rejection. relate_fn(inputs, codes, targets)
    overrides the network (evaluation hook for oracles); rejection applies
    to the final code only.
    """
    if params is None and relate_fn is None:
        raise ValueError("provide params or relate_fn")
    rng = np.random.default_rng(seed)
    arity = max(r.arity for r in relations)
    code_dim = (
        params.arch.relation_code_dim if params is not None
        else max(len(relations), prior.n_z)
    )
    applicable = {s: _applicable(relations, s) for s in range(prior.n_components)}
    start_states = np.array([s for s, rels in applicable.items() if rels])
    if len(start_states) == 0:
        raise ValueError("no state has an applicable relation")
    pair_choices = {}
    if arity == 2:
        for r, rel in enumerate(relations):
            for inp in rel.valid_inputs:
                pair_choices.setdefault((r, inp[0]), []).append(inp[1])
        pair_choices = {k: sorted(v) for k, v in pair_choices.items()}

    if relate_fn is None:
        def relate_fn(inputs, codes, targets):
            with torch.no_grad():
                return params.relational(
                    torch.from_numpy(inputs.reshape(inputs.shape[0], -1).astype(np.float32)),
                    torch.from_numpy(codes.astype(np.float32)),
                ).numpy()

    states = start_states[rng.integers(len(start_states), size=trials)]
    codes = np.vstack(
        [prior_mod.sample_component(prior, s, 1, rng) for s in states]
    )
    checkpoints = {}
    for step in range(1, max(depths) + 1):
        rel_pos = np.array(
            [applicable[s][rng.integers(len(applicable[s]))] for s in states]
        )
        rel_codes = np.zeros((trials, code_dim))
        inputs = np.zeros((trials, arity, prior.n_z))
        targets = np.zeros(trials, dtype=np.int64)
        for t in range(trials):
            rel = relations[rel_pos[t]]
            if rel.arity == 1:
                state_tuple = (int(states[t]),)
                inputs[t, 0] = codes[t]
            else:
                seconds = pair_choices[(rel_pos[t], int(states[t]))]
                j = seconds[int(rng.integers(len(seconds)))]
                state_tuple = (int(states[t]), j)
                inputs[t, 0] = codes[t]
                inputs[t, 1] = prior_mod.sample_component(prior, j, 1, rng)[0]
            if operator_components and rel.name in operator_components:
                op_code = prior_mod.sample_component(
                    prior, operator_components[rel.name], 1, rng
                )[0]
                rel_codes[t, : prior.n_z] = op_code
            else:
                rel_codes[t, rel_pos[t]] = 1.0
            targets[t] = rel.transition(state_tuple)
        codes = np.asarray(relate_fn(inputs, rel_codes, targets), dtype=np.float64)
        states = targets
        if step in set(depths):
            checkpoints[step] = (codes.copy(), states.copy())

    rows = []
    for depth in depths:
        final_codes, final_states = checkpoints[depth]
        comps, best, _ = classify_batch(prior, final_codes, 0.0)
        rows.extend(
            _rows_from_classification(
                comps, best, final_states, alphas,
                lambda alpha, acc, n_acc, depth=depth: RelEvalRow(
                    alpha, depth, acc, n_acc / trials, trials
                ),
            )
        )
    return rows


def factor_decode(prior: GMPrior, space: FactorSpace, codes: np.ndarray) -> np.ndarray:
    """Classify each code at alpha=0 and unrank into K factor value indices."""
    comps, _, _ = classify_batch(prior, np.atleast_2d(codes), 0.0)
    return np.array([index_to_value_indices(space, int(c)) for c in comps])


# ---------------------------------------------------------------------------
# disentanglement metrics

def _discretize(representation: np.ndarray, n_bins: int) -> np.ndarray:
    out = np.zeros(representation.shape, dtype=np.int64)
    for d in range(representation.shape[1]):
        col = representation[:, d]
        lo, hi = col.min(), col.max()
        if hi <= lo:
            continue
        edges = np.linspace(lo, hi, n_bins + 1)[1:-1]
        out[:, d] = np.digitize(col, edges)
    return out


def _check_factors(factors: np.ndarray) -> None:
    for k in range(factors.shape[1]):
        if len(np.unique(factors[:, k])) < 2:
            raise ValueError(f"factor column {k} is constant")


def _entropy(labels: np.ndarray) -> float:
    _, counts = np.unique(labels, return_counts=True)
    p = counts / counts.sum()
    return float(-(p * np.log(p)).sum())


def mig(representation: np.ndarray, factors: np.ndarray, n_bins: int = 20) -> float:
    """Mutual information gap: normalized top-two MI gap, averaged over factors."""
    _check_factors(factors)
    disc = _discretize(np.asarray(representation, dtype=np.float64), n_bins)
    gaps = []
    for k in range(factors.shape[1]):
        mi = np.array(
            [mutual_info_score(disc[:, d], factors[:, k]) for d in range(disc.shape[1])]
        )
        top = np.sort(mi)[::-1]
        second = top[1] if len(top) > 1 else 0.0
        gaps.append((top[0] - second) / _entropy(factors[:, k]))
    return float(np.clip(np.mean(gaps), 0.0, 1.0))


def _split_half(n: int, seed: int):
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    half = n // 2
    return perm[:half], perm[half:]


def _bin_classifier_accuracy(train_x, train_y, test_x, test_y, n_bins: int) -> float:
    lo, hi = train_x.min(), train_x.max()
    if hi <= lo:
        counts = np.bincount(train_y)
        return float((test_y == counts.argmax()).mean())
    edges = np.linspace(lo, hi, n_bins + 1)[1:-1]
    train_bins = np.digitize(train_x, edges)
    global_major = np.bincount(train_y).argmax()
    lookup = np.full(n_bins, global_major)
    for b in np.unique(train_bins):
        lookup[b] = np.bincount(train_y[train_bins == b]).argmax()
    pred = lookup[np.digitize(test_x, edges)]
    return float((pred == test_y).mean())


def sap(representation: np.ndarray, factors: np.ndarray, n_bins: int = 20,
        seed: int = 0) -> float:
    """Attribute-predictability gap of single-dimension bin classifiers,
    normalized per factor by (1 - chance)."""
    _check_factors(factors)
    representation = np.asarray(representation, dtype=np.float64)
    tr, te = _split_half(len(representation), seed)
    scores = []
    for k in range(factors.shape[1]):
        y_tr, y_te = factors[tr, k], factors[te, k]
        accs = np.array(
            [
                _bin_classifier_accuracy(
                    representation[tr, d], y_tr, representation[te, d], y_te, n_bins
                )
                for d in range(representation.shape[1])
            ]
        )
        chance = np.bincount(y_te).max() / len(y_te)
        top = np.sort(accs)[::-1]
        second = top[1] if len(top) > 1 else chance
        scores.append((top[0] - second) / max(1.0 - chance, 1e-12))
    return float(np.clip(np.mean(scores), 0.0, 1.0))


def dci(representation: np.ndarray, factors: np.ndarray, seed: int = 0) -> float:
    """Average of disentanglement, completeness and informativeness."""
    return float(np.clip(np.mean(dci_components(representation, factors, seed)), 0.0, 1.0))


def dci_components(
    representation: np.ndarray, factors: np.ndarray, seed: int = 0
) -> tuple[float, float, float]:
    """(disentanglement, completeness, informativeness).

    Importance comes from L1-penalized multinomial logistic predictors (mean
    absolute weight per dimension); informativeness is held-out accuracy
    rescaled so chance maps to 0.
    """
    _check_factors(factors)
    if factors.shape[1] < 2:
        raise ValueError("DCI needs at least two factors")
    representation = np.asarray(representation, dtype=np.float64)
    mean, std = representation.mean(axis=0), representation.std(axis=0)
    X = (representation - mean) / np.where(std > 0, std, 1.0)
    tr, te = _split_half(len(X), seed)

    n_dims, n_factors = X.shape[1], factors.shape[1]
    importance = np.zeros((n_dims, n_factors))
    informativeness = []
    # liblinear minimizes ||w||_1 + C * sum(loss); keeping C * n_train fixed
    # makes the L1 threshold grow with n so noise coefficients stay at zero.
    # Importance is averaged over column-permuted refits: L1 breaks ties
    # between duplicated dimensions arbitrarily, and the average splits the
    # mass instead of crediting whichever duplicate the solver visited first.
    C = 25.0 / len(tr)
    n_refits = 5
    perm_rng = np.random.default_rng(seed)
    for k in range(n_factors):
        acc = None
        for r in range(n_refits):
            order = perm_rng.permutation(n_dims)
            clf = OneVsRestClassifier(
                LogisticRegression(
                    penalty="l1", C=C, solver="liblinear", random_state=seed,
                    max_iter=500,
                )
            )
            clf.fit(X[tr][:, order], factors[tr, k])
            coef = np.abs(np.vstack([est.coef_ for est in clf.estimators_])).mean(axis=0)
            importance[order, k] += coef / n_refits
            if r == 0:
                acc = clf.score(X[te][:, order], factors[te, k])
        chance = np.bincount(factors[te, k]).max() / len(te)
        informativeness.append(max(acc - chance, 0.0) / max(1.0 - chance, 1e-12))

    if importance.sum() == 0:
        if max(informativeness) > 0.1:
            raise ValueError("degenerate importance matrix (all zeros)")
        # no predictive signal at all: nothing is disentangled
        return 0.0, 0.0, float(np.mean(informativeness))

    def _norm_entropy(p, base):
        p = p / p.sum()
        p = p[p > 0]
        return float(-(p * np.log(p)).sum() / np.log(base))

    dim_mass = importance.sum(axis=1)
    weights = dim_mass / dim_mass.sum()
    disent = sum(
        w * (1.0 - _norm_entropy(importance[d], n_factors))
        for d, w in enumerate(weights)
        if dim_mass[d] > 0
    )
    complete = np.mean(
        [
            1.0 - _norm_entropy(importance[:, k], n_dims)
            for k in range(n_factors)
            if importance[:, k].sum() > 0
        ]
    )
    return float(disent), float(complete), float(np.mean(informativeness))


def reconstruction_error(params: NetworkParams, dataset: Dataset, split: str = "test",
                         batch: int = 256) -> float:
    """Mean reconstruction loss (training-module definition) over a split."""
    idx = dataset.splits[split]
    kind = recon_kind_for_channels(dataset.image_shape[2])
    total, count = 0.0, 0
    for start in range(0, len(idx), batch):
        images = np.stack([dataset.samples[i].pixels for i in idx[start : start + batch]])
        x = torch.from_numpy(images).permute(0, 3, 1, 2)
        with torch.no_grad():
            z = params.encoder(x)
            x_hat = params.decoder(z)
            total += float(reconstruction_loss(x, x_hat, kind)) * len(images)
        count += len(images)
    return total / count


# ---------------------------------------------------------------------------
# report files

def file_digest(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def write_cluster_csv(path, rows: list[ClusterEvalRow], dataset_name: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dataset", "alpha", "tau", "acc", "ar"])
        for r in rows:
            writer.writerow([dataset_name, r.alpha, r.tau, r.accuracy, r.acceptance_ratio])


def write_relational_csv(path, rows: list[RelEvalRow], dataset_name: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dataset", "alpha", "depth", "acc", "ar"])
        for r in rows:
            writer.writerow([dataset_name, r.alpha, r.depth, r.accuracy, r.acceptance_ratio])


def write_metrics_json(path, report: MetricReport, metadata: dict | None = None) -> None:
    payload = asdict(report)
    payload.update(metadata or {})
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
