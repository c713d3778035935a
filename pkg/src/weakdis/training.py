"""Loss terms, relation-tuple construction, and the two-phase training loop.

Training alternates one autoencoder/discriminator iteration with one
relational-learner iteration. The warmup phase uses a uniform latent prior;
the full phase estimates the Gaussian-mixture prior from the labeled subset
and refreshes it periodically from current encoder outputs.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, asdict, field

import numpy as np
import torch

from . import prior as prior_mod
from .datasets import Dataset, LabeledSubset
from .factors import FactorSpace, RelationDef, apply_relation, builtin_relations, hwf_operator_components
from .networks import ArchConfig, NetworkParams, init_params, load_checkpoint, save_checkpoint
from .prior import GMPrior

__all__ = [
    "TrainConfig",
    "TrainState",
    "RelationTuple",
    "reconstruction_loss",
    "recon_kind_for_channels",
    "discriminator_objective",
    "encoder_adversarial_loss",
    "relational_loss",
    "make_relation_tuple",
    "make_relation_batch",
    "train_step_absae",
    "train_step_rel",
    "run_training",
]

LOG_EPS = 1e-6


@dataclass(frozen=True)
class TrainConfig:
    beta: float = 1.0
    gamma: float = 1.0
    warmup_epochs: int = 1000
    full_epochs: int = 5000
    batch_absae: int = 1024
    batch_rel: int = 128
    learning_rate: float = 1e-4
    learning_rate_rel: float | None = None  # None = same as learning_rate
    refresh_every: int = 50
    rel_consolidation_steps: int = 2000  # final ReL fit on the frozen end-of-training prior
    seed: int = 0
    variance_floor: float = prior_mod.DEFAULT_VARIANCE_FLOOR
    checkpoint_every: int = 0  # 0 = final checkpoint only

    def __post_init__(self):
        if self.beta < 0 or self.gamma < 0:
            raise ValueError("beta and gamma must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")


@dataclass
class TrainState:
    params: NetworkParams
    config: TrainConfig
    prior: GMPrior | None  # None during warmup
    epoch: int
    optimizers: dict[str, torch.optim.Adam]
    rng: np.random.Generator
    recon_kind: str
    history: list[dict] = field(default_factory=list)


@dataclass(frozen=True)
class RelationTuple:
    input_codes: np.ndarray  # arity x n_z
    relation_code: np.ndarray
    target_component_index: int


# ---------------------------------------------------------------------------
# loss terms

def recon_kind_for_channels(channels: int) -> str:
    return "bernoulli" if channels == 1 else "mse"


def reconstruction_loss(x: torch.Tensor, x_hat: torch.Tensor, kind: str) -> torch.Tensor:
    """Mean per-pixel Bernoulli cross-entropy (grayscale) or MSE (color)."""
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    if kind == "bernoulli":
        p = torch.clamp(x_hat, LOG_EPS, 1.0 - LOG_EPS)
        return -(x * torch.log(p) + (1.0 - x) * torch.log(1.0 - p)).mean()
    if kind == "mse":
        return ((x - x_hat) ** 2).mean()
    raise ValueError(f"unknown reconstruction kind {kind!r}")


def discriminator_objective(d_real: torch.Tensor, d_fake: torch.Tensor) -> torch.Tensor:
    """E_q[log d(z)] + E_p[log(1 - d(z))]; encoded codes labeled 1, prior 0.

    The discriminator ascends this; the encoder uses the non-saturating
    surrogate in encoder_adversarial_loss (same optimum).
    """
    fake = torch.clamp(d_fake, LOG_EPS, 1.0 - LOG_EPS)
    real = torch.clamp(d_real, LOG_EPS, 1.0 - LOG_EPS)
    return torch.log(fake).mean() + torch.log(1.0 - real).mean()


def encoder_adversarial_loss(d_fake: torch.Tensor) -> torch.Tensor:
    """Non-saturating encoder surrogate: -E_q[log(1 - d(z))]."""
    fake = torch.clamp(d_fake, LOG_EPS, 1.0 - LOG_EPS)
    return -torch.log(1.0 - fake).mean()


def relational_loss(prior: GMPrior, z_out: torch.Tensor, target_index) -> torch.Tensor:
    """Negative log density of z_out under its target component (mean over batch)."""
    single = z_out.dim() == 1
    z = z_out.unsqueeze(0) if single else z_out
    targets = np.atleast_1d(np.asarray(target_index, dtype=np.int64))
    if np.any(targets < 0) or np.any(targets >= prior.n_components):
        raise IndexError("target component index out of range")
    mu = torch.as_tensor(prior.means[targets], dtype=z.dtype)
    var = torch.as_tensor(prior.variances[targets], dtype=z.dtype)
    nll = 0.5 * (torch.log(2.0 * torch.pi * var) + (z - mu) ** 2 / var).sum(dim=-1)
    return nll.mean()


# ---------------------------------------------------------------------------
# relation tuples

def _sorted_inputs(rel: RelationDef) -> list[tuple[int, ...]]:
    return sorted(rel.valid_inputs)


def _relation_code(
    rel_pos: int,
    relations: list[RelationDef],
    code_dim: int,
    prior: GMPrior,
    rng: np.random.Generator,
    operator_components: dict[str, int] | None,
) -> np.ndarray:
    rel = relations[rel_pos]
    if operator_components and rel.name in operator_components:
        code = prior_mod.sample_component(prior, operator_components[rel.name], 1, rng)[0]
        out = np.zeros(code_dim)
        out[: len(code)] = code
        return out
    one_hot = np.zeros(code_dim)
    one_hot[rel_pos] = 1.0
    return one_hot


def make_relation_tuple(
    prior: GMPrior,
    space: FactorSpace,
    relations: list[RelationDef],
    rng: np.random.Generator,
    code_dim: int | None = None,
    operator_components: dict[str, int] | None = None,
) -> RelationTuple:
    """Sample one training tuple: input codes, relation code, target component."""
    if not relations:
        raise ValueError("no relations to sample from")
    code_dim = code_dim or max(len(relations), prior.n_z)
    rel_pos = int(rng.integers(len(relations)))
    rel = relations[rel_pos]
    inputs = _sorted_inputs(rel)
    if not inputs:
        raise ValueError(f"relation {rel.name!r} has no valid inputs")
    state = inputs[int(rng.integers(len(inputs)))]
    input_codes = np.stack(
        [prior_mod.sample_component(prior, i, 1, rng)[0] for i in state]
    )
    code = _relation_code(rel_pos, relations, code_dim, prior, rng, operator_components)
    return RelationTuple(input_codes, code, apply_relation(rel, state))


def make_relation_batch(
    prior: GMPrior,
    space: FactorSpace,
    relations: list[RelationDef],
    n: int,
    rng: np.random.Generator,
    code_dim: int | None = None,
    operator_components: dict[str, int] | None = None,
):
    """Stack n relation tuples into (inputs, relation codes, targets) arrays."""
    tuples = [
        make_relation_tuple(prior, space, relations, rng, code_dim, operator_components)
        for _ in range(n)
    ]
    return (
        np.stack([t.input_codes for t in tuples]),
        np.stack([t.relation_code for t in tuples]),
        np.array([t.target_component_index for t in tuples]),
    )


# ---------------------------------------------------------------------------
# training steps

def _prior_draws(state: TrainState, n: int) -> np.ndarray:
    if state.prior is None:
        return prior_mod.warmup_sample(n, state.params.arch.n_z, state.rng)
    return prior_mod.sample_mixture(state.prior, n, state.rng)


def train_step_absae(state: TrainState, image_batch: np.ndarray) -> dict:
    """One discriminator ascent step, then one encoder/decoder descent step."""
    arch = state.params.arch
    x = torch.from_numpy(
        np.ascontiguousarray(image_batch, dtype=np.float32)
    ).permute(0, 3, 1, 2)
    enc, dec, disc = state.params.encoder, state.params.decoder, state.params.discriminator

    z = enc(x)
    z_prior = torch.from_numpy(
        _prior_draws(state, x.shape[0]).astype(np.float32)
    )

    # discriminator ascends the adversarial objective
    obj = discriminator_objective(d_real=disc(z_prior), d_fake=disc(z.detach()))
    disc_loss = -obj
    state.optimizers["disc"].zero_grad(set_to_none=True)
    disc_loss.backward()
    state.optimizers["disc"].step()

    # encoder/decoder descend reconstruction + beta * surrogate
    x_hat = dec(z)
    recon = reconstruction_loss(x, x_hat, state.recon_kind)
    loss = recon
    if state.config.beta > 0:
        loss = loss + state.config.beta * encoder_adversarial_loss(disc(z))
    state.optimizers["enc_dec"].zero_grad(set_to_none=True)
    disc.zero_grad(set_to_none=True)  # surrogate backprops through frozen disc
    loss.backward()
    state.optimizers["enc_dec"].step()

    losses = {"loss_ae": float(recon.detach()), "loss_disc": float(obj.detach())}
    for v in losses.values():
        if not np.isfinite(v):
            raise FloatingPointError(f"non-finite AbsAE loss at epoch {state.epoch}: {losses}")
    return losses


def train_step_rel(state: TrainState, tuple_batch) -> dict:
    """One descent step on gamma * relational loss; touches only the ReL."""
    if state.prior is None:
        raise RuntimeError("relational training requires the estimated prior (full phase)")
    inputs, rel_codes, targets = tuple_batch
    rel = state.params.relational
    z_out = rel(
        torch.from_numpy(inputs.reshape(inputs.shape[0], -1).astype(np.float32)),
        torch.from_numpy(rel_codes.astype(np.float32)),
    )
    loss_rel = relational_loss(state.prior, z_out, targets)
    loss = state.config.gamma * loss_rel
    state.optimizers["rel"].zero_grad(set_to_none=True)
    loss.backward()
    state.optimizers["rel"].step()
    value = float(loss_rel.detach())
    if not np.isfinite(value):
        raise FloatingPointError(f"non-finite relational loss at epoch {state.epoch}")
    return {"loss_rel": value}


# ---------------------------------------------------------------------------
# training loop with checkpoint/resume

def _make_optimizers(
    params: NetworkParams, lr: float, lr_rel: float | None = None
) -> dict[str, torch.optim.Adam]:
    return {
        "enc_dec": torch.optim.Adam(
            list(params.encoder.parameters()) + list(params.decoder.parameters()), lr=lr
        ),
        "disc": torch.optim.Adam(params.discriminator.parameters(), lr=lr),
        "rel": torch.optim.Adam(
            params.relational.parameters(), lr=lr if lr_rel is None else lr_rel
        ),
    }


def _encode_subset(params: NetworkParams, dataset: Dataset, subset: LabeledSubset):
    from .networks import encode

    codes = []
    for combo in range(dataset.space.N):
        idx = subset.indices_by_combination[combo]
        images = np.stack([dataset.samples[i].pixels for i in idx])
        codes.append(encode(params, images))
    return codes


def _estimate_prior_f32(params, dataset, subset, floor) -> GMPrior:
    # states are checkpointed as float32; quantize so resume is bit-exact
    est = prior_mod.estimate_prior(_encode_subset(params, dataset, subset), floor)
    means = est.means.astype(np.float32).astype(np.float64)
    variances = np.maximum(est.variances.astype(np.float32).astype(np.float64), floor)
    return GMPrior(means, variances, floor)


def _optimizer_blocks(optimizers: dict[str, torch.optim.Adam]) -> dict[str, np.ndarray]:
    blocks = {}
    for name, opt in optimizers.items():
        for gi, group in enumerate(opt.param_groups):
            for pi, p in enumerate(group["params"]):
                s = opt.state.get(p)
                if not s:
                    continue
                key = f"opt.{name}.{gi}.{pi}"
                blocks[f"{key}.step"] = np.array([float(s["step"])], dtype=np.float32)
                blocks[f"{key}.exp_avg"] = s["exp_avg"].numpy()
                blocks[f"{key}.exp_avg_sq"] = s["exp_avg_sq"].numpy()
    return blocks


def _restore_optimizers(optimizers, blocks) -> None:
    for name, opt in optimizers.items():
        for gi, group in enumerate(opt.param_groups):
            for pi, p in enumerate(group["params"]):
                key = f"opt.{name}.{gi}.{pi}"
                if f"{key}.step" not in blocks:
                    continue
                opt.state[p] = {
                    "step": torch.tensor(float(blocks[f"{key}.step"][0])),
                    "exp_avg": torch.from_numpy(blocks[f"{key}.exp_avg"].copy()),
                    "exp_avg_sq": torch.from_numpy(blocks[f"{key}.exp_avg_sq"].copy()),
                }


def save_train_checkpoint(path, state: TrainState) -> None:
    """Full resumable snapshot: params, prior, optimizer moments, RNG state."""
    meta = {
        "epoch": state.epoch,
        "phase": "warmup" if state.prior is None else "full",
        "recon_kind": state.recon_kind,
        "config": asdict(state.config),
        "rng_state": state.rng.bit_generator.state,
    }
    extra = _optimizer_blocks(state.optimizers)
    if state.prior is not None:
        extra["prior.means"] = state.prior.means
        extra["prior.variances"] = state.prior.variances
    save_checkpoint(path, state.params, meta, extra)


def load_train_checkpoint(path, dataset_channels: int | None = None) -> TrainState:
    params, meta, blocks = load_checkpoint(path)
    config = TrainConfig(**meta["config"])
    optimizers = _make_optimizers(params, config.learning_rate, config.learning_rate_rel)
    _restore_optimizers(optimizers, blocks)
    gm = None
    if "prior.means" in blocks:
        means = blocks["prior.means"].astype(np.float64)
        variances = np.maximum(
            blocks["prior.variances"].astype(np.float64), config.variance_floor
        )
        gm = GMPrior(means, variances, config.variance_floor)
    rng = np.random.Generator(np.random.PCG64())
    rng_state = meta["rng_state"]
    rng_state["state"] = {k: int(v) for k, v in rng_state["state"].items()}
    rng.bit_generator.state = rng_state
    return TrainState(
        params=params,
        config=config,
        prior=gm,
        epoch=int(meta["epoch"]),
        optimizers=optimizers,
        rng=rng,
        recon_kind=meta["recon_kind"],
    )


def write_history_csv(path, history: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "phase", "loss_ae", "loss_disc", "loss_rel", "loss_total"])
        for row in history:
            writer.writerow(
                [row["epoch"], row["phase"], row["loss_ae"], row["loss_disc"],
                 row["loss_rel"], row["loss_total"]]
            )


def run_training(
    config: TrainConfig,
    dataset: Dataset,
    labeled_subset: LabeledSubset,
    out_dir=None,
    resume_from=None,
    arch: ArchConfig | None = None,
    log_fn=None,
) -> TrainState:
    """Warmup then full-phase training; returns the final TrainState.

    Writes final.wdck and history.csv under out_dir when given, plus
    periodic ckpt_NNNN.wdck snapshots when config.checkpoint_every > 0.
    """
    h, w, c = dataset.image_shape
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    space = dataset.space
    relations = builtin_relations(space)
    operator_components = (
        hwf_operator_components(space) if space.preset == "hwf-like" else None
    )

    if resume_from is not None:
        state = load_train_checkpoint(resume_from)
    else:
        arch = arch or _default_arch(config, dataset)
        params = init_params(arch, config.seed)
        state = TrainState(
            params=params,
            config=config,
            prior=None,
            epoch=0,
            optimizers=_make_optimizers(params, config.learning_rate, config.learning_rate_rel),
            rng=np.random.default_rng(config.seed),
            recon_kind=recon_kind_for_channels(c),
        )

    train_idx = dataset.splits["train"]
    images = np.stack([dataset.samples[i].pixels for i in train_idx])
    total_epochs = config.warmup_epochs + config.full_epochs
    code_dim = state.params.arch.relation_code_dim

    while state.epoch < total_epochs:
        epoch = state.epoch
        full_phase = epoch >= config.warmup_epochs
        if full_phase and (
            state.prior is None
            or (epoch - config.warmup_epochs) % config.refresh_every == 0
        ):
            state.prior = _estimate_prior_f32(
                state.params, dataset, labeled_subset, config.variance_floor
            )

        perm = state.rng.permutation(len(images))
        ae_losses, disc_losses, rel_losses = [], [], []
        for start in range(0, len(perm), config.batch_absae):
            batch = images[perm[start : start + config.batch_absae]]
            step = train_step_absae(state, batch)
            ae_losses.append(step["loss_ae"])
            disc_losses.append(step["loss_disc"])
            if full_phase:
                tuples = make_relation_batch(
                    state.prior, space, relations, config.batch_rel, state.rng,
                    code_dim, operator_components,
                )
                rel_losses.append(train_step_rel(state, tuples)["loss_rel"])

        loss_ae = float(np.mean(ae_losses))
        loss_disc = float(np.mean(disc_losses))
        loss_rel = float(np.mean(rel_losses)) if rel_losses else 0.0
        row = {
            "epoch": epoch,
            "phase": "full" if full_phase else "warmup",
            "loss_ae": loss_ae,
            "loss_disc": loss_disc,
            "loss_rel": loss_rel,
            "loss_total": loss_ae + config.beta * loss_disc + config.gamma * loss_rel,
        }
        state.history.append(row)
        if log_fn:
            log_fn(row)
        state.epoch = epoch + 1

        if out_dir and config.checkpoint_every and state.epoch % config.checkpoint_every == 0:
            save_train_checkpoint(
                os.path.join(out_dir, f"ckpt_{state.epoch:05d}.wdck"), state
            )

    # The relational learner trains purely in latent space, so once the encoder
    # has settled it gets a final fit against the frozen end-of-training prior;
    # the online steps above chase a prior that moves with every refresh.
    if config.full_epochs > 0 and config.rel_consolidation_steps > 0:
        state.prior = _estimate_prior_f32(
            state.params, dataset, labeled_subset, config.variance_floor
        )
        for _ in range(config.rel_consolidation_steps):
            tuples = make_relation_batch(
                state.prior, space, relations, config.batch_rel, state.rng,
                code_dim, operator_components,
            )
            train_step_rel(state, tuples)

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        save_train_checkpoint(os.path.join(out_dir, "final.wdck"), state)
        write_history_csv(os.path.join(out_dir, "history.csv"), state.history)
    return state


def _default_arch(config: TrainConfig, dataset: Dataset) -> ArchConfig:
    h, w, c = dataset.image_shape
    space = dataset.space
    relations = builtin_relations(space)
    n_z = 16 if space.preset == "shapes3d" else 8
    conv = (32, 64, 128, 256) if h >= 64 else (32, 64, 128)
    arity = max(r.arity for r in relations)
    return ArchConfig(
        n_z=n_z, height=h, width=w, channels=c, conv_channels=conv,
        relation_arity=arity, relation_count=len(relations),
    )
