"""Command-line surface: generate / train / eval / sample.

Config files are INI-style with [run], [arch], [train] and [eval] sections;
command-line flags override file values. Exit codes: 0 success, 2 config
error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys

import numpy as np

from . import prior as prior_mod
from .datasets import label_subset, load_archive, make_dataset, save_native
from .evaluation import (
    MetricReport,
    cluster_eval,
    factor_decode,
    file_digest,
    mig,
    sap,
    dci,
    reconstruction_error,
    relational_eval,
    write_cluster_csv,
    write_metrics_json,
    write_relational_csv,
    _encode_split,
)
from .factors import (
    apply_relation,
    build_factor_space,
    builtin_relations,
    combination_to_index,
    hwf_operator_components,
    index_to_value_indices,
)
from .networks import ArchConfig, decode
from .prior import GMPrior
from .training import (
    TrainConfig,
    load_train_checkpoint,
    run_training,
    _estimate_prior_f32,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

DEFAULTS = {
    "run": {
        "preset": "dsprites",
        "data_dir": "data",
        "out_dir": "out",
        "seed": "0",
        "image_size": "64",
        "samples_per_combination": "50",
        "noise_kind": "gaussian",
        "noise_level": "0.05",
        "tau": "30",
    },
    "arch": {},
    "train": {
        "beta": "1.0",
        "gamma": "1.0",
        "warmup_epochs": "1000",
        "full_epochs": "5000",
        "batch_absae": "1024",
        "batch_rel": "128",
        "learning_rate": "1e-4",
        "learning_rate_rel": "",
        "refresh_every": "50",
        "rel_consolidation_steps": "2000",
        "checkpoint_every": "0",
    },
    "eval": {
        "alphas": "0.0,0.1,0.3,0.5,0.7,0.9",
        "depths": "1,5,10",
        "taus": "10,20,30",
        "trials": "10000",
    },
}


def load_config(path: str | None) -> configparser.ConfigParser:
    cfg = configparser.ConfigParser()
    cfg.read_dict(DEFAULTS)
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        cfg.read(path)
    return cfg


class ConfigError(Exception):
    pass


def _train_config(cfg, seed: int) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(
        beta=t.getfloat("beta"),
        gamma=t.getfloat("gamma"),
        warmup_epochs=t.getint("warmup_epochs"),
        full_epochs=t.getint("full_epochs"),
        batch_absae=t.getint("batch_absae"),
        batch_rel=t.getint("batch_rel"),
        learning_rate=t.getfloat("learning_rate"),
        learning_rate_rel=t.getfloat("learning_rate_rel") if t.get("learning_rate_rel") else None,
        refresh_every=t.getint("refresh_every"),
        rel_consolidation_steps=t.getint("rel_consolidation_steps"),
        checkpoint_every=t.getint("checkpoint_every"),
        seed=seed,
    )


def _arch_override(cfg, dataset) -> ArchConfig | None:
    a = cfg["arch"]
    if not a:
        return None
    h, w, c = dataset.image_shape
    relations = builtin_relations(dataset.space)
    conv = tuple(
        int(x) for x in a.get("conv_channels", "32,64,128,256").split(",")
    )
    return ArchConfig(
        n_z=a.getint("n_z", 8),
        height=h,
        width=w,
        channels=c,
        conv_channels=conv,
        mlp_width=a.getint("mlp_width", 1024),
        mlp_depth=a.getint("mlp_depth", 3),
        relation_arity=max(r.arity for r in relations),
        relation_count=len(relations),
    )


def cmd_generate(args) -> int:
    cfg = load_config(args.config)
    run = cfg["run"]
    seed = args.seed if args.seed is not None else run.getint("seed")
    preset = run["preset"]
    try:
        space = build_factor_space(preset)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    dataset = make_dataset(
        space,
        preset,
        run.getint("samples_per_combination"),
        {"kind": run["noise_kind"], "level": run.getfloat("noise_level")},
        seed=seed,
        size=run.getint("image_size"),
    )
    data_dir = args.out or run["data_dir"]
    save_native(dataset, data_dir)
    print(f"wrote {len(dataset.samples)} samples to {data_dir}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    run = cfg["run"]
    seed = args.seed if args.seed is not None else run.getint("seed")
    data_dir = run["data_dir"]
    if not os.path.exists(data_dir):
        print(f"error: dataset not found at {data_dir}", file=sys.stderr)
        return EXIT_DATA
    dataset = load_archive(data_dir, "native")
    subset = label_subset(dataset, run.getint("tau"), seed)
    out_dir = args.out or run["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    try:
        run_training(
            _train_config(cfg, seed),
            dataset,
            subset,
            out_dir=out_dir,
            resume_from=args.resume,
            arch=_arch_override(cfg, dataset),
            log_fn=lambda row: print(
                f"epoch {row['epoch']:5d} [{row['phase']}] "
                f"ae={row['loss_ae']:.4f} disc={row['loss_disc']:.4f} "
                f"rel={row['loss_rel']:.4f} total={row['loss_total']:.4f}"
            ),
        )
    except FloatingPointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"checkpoint written to {os.path.join(out_dir, 'final.wdck')}")
    return EXIT_OK


def _load_eval_state(args):
    state = load_train_checkpoint(args.checkpoint)
    if state.prior is None:
        raise ValueError("checkpoint has no estimated prior (warmup-phase checkpoint)")
    return state


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    run = cfg["run"]
    ev = cfg["eval"]
    seed = args.seed if args.seed is not None else run.getint("seed")
    try:
        state = _load_eval_state(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    data_dir = run["data_dir"]
    if not os.path.exists(data_dir):
        print(f"error: dataset not found at {data_dir}", file=sys.stderr)
        return EXIT_DATA
    dataset = load_archive(data_dir, "native")
    space = dataset.space
    relations = builtin_relations(space)
    op_comps = hwf_operator_components(space) if space.preset == "hwf-like" else None
    out_dir = args.out or run["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    digest = file_digest(args.checkpoint)
    alphas = [float(x) for x in ev["alphas"].split(",")]
    name = space.preset or "custom"

    if args.which in ("cluster", "all"):
        rows = []
        for tau in (int(x) for x in ev["taus"].split(",")):
            subset = label_subset(dataset, tau, seed)
            gm = _estimate_prior_f32(
                state.params, dataset, subset, state.config.variance_floor
            )
            rows.extend(cluster_eval(state.params, gm, dataset, alphas, tau))
        path = os.path.join(out_dir, "cluster_eval.csv")
        write_cluster_csv(path, rows, name)
        print(f"# latent classification ({name}), checkpoint {digest[:12]}")
        print("alpha   tau   acc     ar")
        for r in rows:
            print(f"{r.alpha:<7g} {r.tau:<5d} {r.accuracy:<7.4f} {r.acceptance_ratio:.4f}")

    if args.which in ("relations", "all"):
        rows = relational_eval(
            state.prior, space, relations,
            depths=[int(x) for x in ev["depths"].split(",")],
            alphas=alphas,
            trials=ev.getint("trials"),
            seed=seed,
            params=state.params,
            operator_components=op_comps,
        )
        path = os.path.join(out_dir, "relational_eval.csv")
        write_relational_csv(path, rows, name)
        print(f"# relational accuracy ({name}), checkpoint {digest[:12]}")
        print("alpha   depth acc     ar")
        for r in rows:
            print(f"{r.alpha:<7g} {r.depth:<5d} {r.accuracy:<7.4f} {r.acceptance_ratio:.4f}")

    if args.which in ("disentangle", "recon", "all"):
        recon = reconstruction_error(state.params, dataset)
        if args.which == "recon":
            print(f"reconstruction_error = {recon:.6f}")
            return EXIT_OK
        codes, _ = _encode_split(state.params, dataset, "test")
        decoded = factor_decode(state.prior, space, codes)
        truth = np.array(
            [
                index_to_value_indices(space, dataset.samples[i].combination_index)
                for i in dataset.splits["test"]
            ]
        )
        report = MetricReport(
            dci=dci(decoded.astype(np.float64), truth),
            mig=mig(decoded.astype(np.float64), truth),
            sap=sap(decoded.astype(np.float64), truth),
            reconstruction_error=recon,
        )
        path = os.path.join(out_dir, "metrics.json")
        write_metrics_json(path, report, {"seed": seed, "checkpoint_digest": digest})
        print(
            f"dci={report.dci:.4f} mig={report.mig:.4f} sap={report.sap:.4f} "
            f"recon={report.reconstruction_error:.6f}"
        )
    return EXIT_OK


def cmd_sample(args) -> int:
    from PIL import Image

    cfg = load_config(args.config)
    run = cfg["run"]
    seed = args.seed if args.seed is not None else run.getint("seed")
    try:
        state = _load_eval_state(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    space = build_factor_space(run["preset"])
    relations = {r.name: r for r in builtin_relations(space)}
    op_comps = hwf_operator_components(space) if space.preset == "hwf-like" else None
    rel_list = builtin_relations(space)

    try:
        start_index = combination_to_index(space, tuple(args.start.split(",")))
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    chain = [c for c in (args.chain.split(",") if args.chain else []) if c]
    rng = np.random.default_rng(seed)
    gm = state.prior
    code = prior_mod.sample_component(gm, start_index, 1, rng)[0]
    codes, symbolic = [code], start_index
    for step, entry in enumerate(chain):
        name, _, operand = entry.partition(":")
        if name not in relations:
            print(f"error: step {step}: unknown relation {name!r}", file=sys.stderr)
            return EXIT_CONFIG
        rel = relations[name]
        if rel.arity == 1:
            state_tuple = (symbolic,)
            inputs = code[None]
        else:
            if not operand:
                print(f"error: step {step}: relation {name!r} needs an operand "
                      f"(use {name}:<value>)", file=sys.stderr)
                return EXIT_CONFIG
            j = combination_to_index(space, (operand,))
            state_tuple = (symbolic, j)
            inputs = np.stack([code, prior_mod.sample_component(gm, j, 1, rng)[0]])
        try:
            symbolic = apply_relation(rel, state_tuple)
        except ValueError:
            print(
                f"error: step {step}: relation {name!r} is invalid from state "
                f"{state_tuple}", file=sys.stderr,
            )
            return EXIT_CONFIG
        code_dim = state.params.arch.relation_code_dim
        rel_code = np.zeros(code_dim)
        if op_comps and name in op_comps:
            rel_code[: gm.n_z] = prior_mod.sample_component(gm, op_comps[name], 1, rng)[0]
        else:
            rel_code[rel_list.index(rel)] = 1.0
        from .networks import relate

        code = relate(state.params, inputs, rel_code)
        codes.append(code)

    images = decode(state.params, np.stack(codes))
    strip = np.concatenate(list(images), axis=1)
    strip8 = np.round(strip * 255.0).astype(np.uint8)
    if strip8.shape[-1] == 1:
        strip8 = strip8[..., 0]
    out_path = args.out or "strip.png"
    if os.path.isdir(out_path):
        out_path = os.path.join(out_path, "strip.png")
    Image.fromarray(strip8).save(out_path)
    print(f"wrote {len(codes)}-image strip to {out_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="weakdis",
        description="Weakly disentangled representation learning pipeline",
    )
    parser.add_argument("--config", help="INI config file")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", help="output directory (or file for sample)")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("generate", help="render a dataset to the native format")

    p_train = sub.add_parser("train", help="run warmup + full training")
    p_train.add_argument("--resume", help="checkpoint to resume from")

    p_eval = sub.add_parser("eval", help="run evaluation protocols")
    p_eval.add_argument("checkpoint")
    p_eval.add_argument(
        "--which", default="all",
        choices=["cluster", "relations", "disentangle", "recon", "all"],
    )

    p_sample = sub.add_parser("sample", help="decode a relation chain as an image strip")
    p_sample.add_argument("checkpoint")
    p_sample.add_argument("--start", required=True,
                          help="comma-separated factor values of the start combination")
    p_sample.add_argument("--chain", default="",
                          help="comma-separated relation names (name:operand for binary)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "generate": cmd_generate,
        "train": cmd_train,
        "eval": cmd_eval,
        "sample": cmd_sample,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
