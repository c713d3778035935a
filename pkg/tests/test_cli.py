import os

import numpy as np
import pytest

from weakdis.cli import main

TINY_CONFIG = """
[run]
preset = dsprites
data_dir = {data_dir}
out_dir = {out_dir}
seed = 0
image_size = 32
samples_per_combination = 10
noise_kind = gaussian
noise_level = 0.0
tau = 3

[arch]
n_z = 8
conv_channels = 8,16,32
mlp_width = 32

[train]
warmup_epochs = 1
full_epochs = 2
batch_absae = 32
batch_rel = 16
learning_rate = 1e-4
refresh_every = 1

[eval]
alphas = 0.0,0.5
depths = 1
taus = 3
trials = 50
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Shared generate + train run for the round-trip tests."""
    root = tmp_path_factory.mktemp("cli")
    data_dir = root / "data"
    out_dir = root / "out"
    config = root / "run.ini"
    config.write_text(TINY_CONFIG.format(data_dir=data_dir, out_dir=out_dir))
    assert main(["--config", str(config), "generate"]) == 0
    assert main(["--config", str(config), "train"]) == 0
    return root, config, data_dir, out_dir


def test_generate_writes_native_layout(workspace):
    _, _, data_dir, _ = workspace
    for name in ("images.bin", "labels.csv", "space.txt"):
        assert (data_dir / name).exists()
    assert (data_dir / "images.bin").read_bytes()[:4] == b"WDIS"


def test_generate_reproducible(workspace, tmp_path):
    root, config, data_dir, _ = workspace
    other = tmp_path / "data2"
    assert main(["--config", str(config), "--out", str(other), "generate"]) == 0
    for name in ("images.bin", "labels.csv", "space.txt"):
        assert (data_dir / name).read_bytes() == (other / name).read_bytes()


def test_train_writes_checkpoint_and_history(workspace):
    _, _, _, out_dir = workspace
    assert (out_dir / "final.wdck").exists()
    assert (out_dir / "final.wdck").read_bytes()[:4] == b"WDCK"
    history = (out_dir / "history.csv").read_text().strip().splitlines()
    assert history[0] == "epoch,phase,loss_ae,loss_disc,loss_rel,loss_total"
    assert len(history) == 4  # header + 3 epochs


def test_eval_all(workspace, capsys):
    root, config, _, out_dir = workspace
    ckpt = out_dir / "final.wdck"
    assert main(["--config", str(config), "eval", str(ckpt), "--which", "all"]) == 0
    out = capsys.readouterr().out
    assert "latent classification" in out
    assert "relational accuracy" in out
    assert (out_dir / "cluster_eval.csv").exists()
    assert (out_dir / "relational_eval.csv").exists()
    assert (out_dir / "metrics.json").exists()
    cluster = (out_dir / "cluster_eval.csv").read_text().strip().splitlines()
    # header + one row per (tau, alpha) pair: 1 tau x 2 alphas
    assert len(cluster) == 3


def test_eval_cluster_row_count(workspace):
    root, config, _, out_dir = workspace
    ckpt = out_dir / "final.wdck"
    assert main(["--config", str(config), "eval", str(ckpt), "--which", "cluster"]) == 0


def test_sample_chain(workspace, tmp_path):
    root, config, _, out_dir = workspace
    ckpt = out_dir / "final.wdck"
    png = tmp_path / "strip.png"
    rc = main([
        "--config", str(config), "--out", str(png),
        "sample", str(ckpt),
        "--start", "center,center,square",
        "--chain", "move_right,change_shape",
    ])
    assert rc == 0
    from PIL import Image

    img = Image.open(png)
    assert img.size == (3 * 32, 32)  # start + two relation steps


def test_sample_invalid_chain_names_failing_step(workspace, tmp_path, capsys):
    root, config, _, out_dir = workspace
    ckpt = out_dir / "final.wdck"
    rc = main([
        "--config", str(config), "--out", str(tmp_path / "x.png"),
        "sample", str(ckpt),
        "--start", "right,center,square",
        "--chain", "move_right",
    ])
    assert rc == 2
    assert "step 0" in capsys.readouterr().err


def test_sample_unknown_relation(workspace, tmp_path):
    root, config, _, out_dir = workspace
    ckpt = out_dir / "final.wdck"
    rc = main([
        "--config", str(config), "--out", str(tmp_path / "x.png"),
        "sample", str(ckpt), "--start", "center,center,square",
        "--chain", "teleport",
    ])
    assert rc == 2


def test_bad_config_exit_code(tmp_path, capsys):
    config = tmp_path / "bad.ini"
    config.write_text("[run]\npreset = nonexistent\n")
    assert main(["--config", str(config), "generate"]) == 2


def test_missing_config_file(tmp_path):
    assert main(["--config", str(tmp_path / "none.ini"), "generate"]) == 2


def test_missing_dataset_exit_code(tmp_path):
    config = tmp_path / "run.ini"
    config.write_text(f"[run]\ndata_dir = {tmp_path / 'nope'}\n")
    assert main(["--config", str(config), "train"]) == 3


def test_corrupt_checkpoint_exit_code(workspace, tmp_path):
    root, config, _, out_dir = workspace
    bad = tmp_path / "bad.wdck"
    bad.write_bytes(b"WDCKgarbage")
    assert main(["--config", str(config), "eval", str(bad)]) != 0
