import os

import numpy as np
import pytest

from weakdis.datasets import (
    augment,
    label_subset,
    load_archive,
    make_dataset,
    render_glyph,
    render_scene,
    render_sprite,
    save_native,
)
from weakdis.factors import HWF_SYMBOLS, build_factor_space, combination_to_index


@pytest.fixture(scope="module")
def dsprites_space():
    return build_factor_space("dsprites")


def _centroid(pixels):
    mass = pixels[..., 0]
    total = mass.sum()
    ys, xs = np.indices(mass.shape)
    return (xs * mass).sum() / total + 0.5, (ys * mass).sum() / total + 0.5


def test_sprite_centered_square(dsprites_space):
    idx = combination_to_index(dsprites_space, ("center", "center", "square"))
    img = render_sprite(dsprites_space, idx, {"scale": 1.0, "orientation": 0.0}, size=64)
    cx, cy = _centroid(img.pixels)
    assert abs(cx - 32.0) < 1.0
    assert abs(cy - 32.0) < 1.0


def test_sprite_left_right_mirror(dsprites_space):
    nuisance = {"scale": 1.0, "orientation": 0.0}
    left = render_sprite(
        dsprites_space,
        combination_to_index(dsprites_space, ("left", "center", "square")),
        nuisance, size=64,
    )
    right = render_sprite(
        dsprites_space,
        combination_to_index(dsprites_space, ("right", "center", "square")),
        nuisance, size=64,
    )
    lx, ly = _centroid(left.pixels)
    rx, ry = _centroid(right.pixels)
    assert abs((64.0 - lx) - rx) < 1.0
    assert abs(ly - ry) < 1.0


def test_sprite_deterministic(dsprites_space):
    nuisance = {"scale": 0.8, "orientation": 1.1}
    a = render_sprite(dsprites_space, 5, nuisance, size=32)
    b = render_sprite(dsprites_space, 5, nuisance, size=32)
    assert np.array_equal(a.pixels, b.pixels)


def test_sprite_unknown_shape():
    space = build_factor_space("dsprites")
    with pytest.raises(ValueError):
        from weakdis.datasets import _shape_mask

        _shape_mask("triangle", np.zeros((2, 2)), np.zeros((2, 2)))


def test_glyph_plus_has_crossing_strokes():
    img = render_glyph("+", size=64).pixels[..., 0]
    mid = 32
    assert img[mid - 1 : mid + 1, 16:48].max(axis=0).min() > 0.5  # horizontal stroke
    assert img[16:48, mid - 1 : mid + 1].max(axis=1).min() > 0.5  # vertical stroke


def test_glyph_symbols_distinct():
    a = render_glyph("0", size=64).pixels
    b = render_glyph("1", size=64).pixels
    assert (np.abs(a - b) > 0.5).mean() >= 0.05


def test_glyph_deterministic_and_labeled():
    a = render_glyph("7", {"jitter_seed": 42, "thickness": 0.05}, size=32)
    b = render_glyph("7", {"jitter_seed": 42, "thickness": 0.05}, size=32)
    assert np.array_equal(a.pixels, b.pixels)
    assert a.combination_index == HWF_SYMBOLS.index("7")


def test_glyph_unknown_symbol():
    with pytest.raises(ValueError):
        render_glyph("q")


def test_all_glyphs_nonempty():
    for symbol in HWF_SYMBOLS:
        img = render_glyph(symbol, size=32).pixels
        assert img.max() > 0.9
        assert img.min() == 0.0


def test_scene_colors_follow_object_hue():
    space = build_factor_space("shapes3d")
    a = render_scene(space, combination_to_index(space, ("hue_0", "cube", "big")), size=32)
    b = render_scene(space, combination_to_index(space, ("hue_5", "cube", "big")), size=32)
    assert not np.array_equal(a.pixels, b.pixels)
    assert a.pixels.shape == (32, 32, 3)
    assert a.pixels.min() >= 0.0 and a.pixels.max() <= 1.0


def test_augment_zero_level_identity():
    img = np.full((8, 8, 1), 0.25, dtype=np.float32)
    for kind in ("bernoulli", "gaussian"):
        assert np.array_equal(augment(img, kind, 0.0, 3), img)


def test_augment_gaussian_statistics():
    img = np.full((64, 64, 1), 0.5, dtype=np.float32)
    noisy = augment(img, "gaussian", 0.1, 12345)
    std = (noisy - img).std()
    assert 0.08 <= std <= 0.12


def test_augment_bernoulli_flip_rate():
    img = np.zeros((128, 128, 1), dtype=np.float32)
    noisy = augment(img, "bernoulli", 0.2, 5)
    changed = (noisy != img).mean()
    assert 0.15 <= changed <= 0.25


def test_augment_range_and_errors():
    img = np.full((16, 16, 1), 0.9, dtype=np.float32)
    out = augment(img, "gaussian", 0.5, 0)
    assert out.min() >= 0.0 and out.max() <= 1.0
    with pytest.raises(ValueError):
        augment(img, "salt", 0.1, 0)
    with pytest.raises(ValueError):
        augment(img, "gaussian", -0.1, 0)


def test_make_dataset_sizes_and_splits(dsprites_space):
    ds = make_dataset(dsprites_space, "dsprites", 50, seed=0, size=32)
    assert len(ds.samples) == 1350
    assert len(ds.splits["test"]) == 270
    all_idx = np.concatenate([ds.splits[k] for k in ("train", "val", "test")])
    assert len(np.unique(all_idx)) == len(ds.samples)
    # every combination appears in every split
    for split in ("train", "val", "test"):
        assert len(np.unique(ds.labels(split))) == dsprites_space.N


def test_make_dataset_deterministic(dsprites_space):
    a = make_dataset(dsprites_space, "dsprites", 4, seed=11, size=32)
    b = make_dataset(dsprites_space, "dsprites", 4, seed=11, size=32)
    assert np.array_equal(a.images(), b.images())
    assert all(np.array_equal(a.splits[k], b.splits[k]) for k in a.splits)


def test_make_dataset_zero_noise_equals_clean(dsprites_space):
    ds = make_dataset(
        dsprites_space, "dsprites", 2, {"kind": "gaussian", "level": 0.0}, seed=3, size=32
    )
    s = ds.samples[0]
    clean = render_sprite(dsprites_space, s.combination_index, s.nuisance, size=32)
    quantized = (np.round(clean.pixels * 255) / np.float32(255.0)).astype(np.float32)
    assert np.array_equal(s.pixels, quantized)


def test_label_subset(dsprites_space):
    ds = make_dataset(dsprites_space, "dsprites", 50, seed=0, size=32)
    sub = label_subset(ds, 10, seed=1)
    assert sum(len(v) for v in sub.indices_by_combination.values()) == 270
    train = set(ds.splits["train"].tolist())
    for combo, idx in sub.indices_by_combination.items():
        assert len(idx) == 10
        assert set(idx.tolist()) <= train
        assert all(ds.samples[i].combination_index == combo for i in idx)
    again = label_subset(ds, 10, seed=1)
    assert all(
        np.array_equal(sub.indices_by_combination[c], again.indices_by_combination[c])
        for c in sub.indices_by_combination
    )
    with pytest.raises(ValueError):
        label_subset(ds, 1000, seed=1)


def test_native_round_trip(tmp_path, dsprites_space):
    ds = make_dataset(dsprites_space, "dsprites", 3, seed=5, size=16)
    d1 = tmp_path / "d1"
    save_native(ds, d1)
    loaded = load_archive(d1, "native")
    assert np.array_equal(ds.images(), loaded.images())
    assert np.array_equal(ds.labels(), loaded.labels())
    assert all(np.array_equal(ds.splits[k], loaded.splits[k]) for k in ds.splits)
    for a, b in zip(ds.samples, loaded.samples):
        assert a.nuisance == b.nuisance
    # saving the loaded dataset reproduces the bytes exactly
    d2 = tmp_path / "d2"
    save_native(loaded, d2)
    for name in ("images.bin", "labels.csv", "space.txt"):
        assert (d1 / name).read_bytes() == (d2 / name).read_bytes()


def test_native_truncated_file(tmp_path, dsprites_space):
    ds = make_dataset(dsprites_space, "dsprites", 2, seed=5, size=16)
    save_native(ds, tmp_path)
    path = tmp_path / "images.bin"
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(ValueError, match="truncated"):
        load_archive(tmp_path, "native")
    path.write_bytes(b"oops")
    with pytest.raises(ValueError, match="malformed"):
        load_archive(tmp_path, "native")


def test_unknown_archive_format(tmp_path):
    with pytest.raises(ValueError):
        load_archive(tmp_path, "tfrecord")
    with pytest.raises(FileNotFoundError):
        load_archive(tmp_path / "missing", "native")


def test_dsprites_official_binning(tmp_path):
    # synthetic archive in the official npz schema: 32 positions per axis
    rng = np.random.default_rng(0)
    n = 200
    classes = np.zeros((n, 6), dtype=np.int64)
    classes[:, 1] = rng.integers(0, 3, n)   # shape
    classes[:, 2] = rng.integers(0, 6, n)   # scale
    classes[:, 3] = rng.integers(0, 40, n)  # orientation
    classes[:, 4] = rng.integers(0, 32, n)  # posX
    classes[:, 5] = rng.integers(0, 32, n)  # posY
    imgs = rng.integers(0, 2, (n, 64, 64)).astype(np.uint8)
    path = tmp_path / "dsprites.npz"
    np.savez(path, imgs=imgs, latents_classes=classes)
    ds = load_archive(path, "dsprites-official")
    assert ds.space.N == 27
    # position bins follow thirds of the 32-step range
    for sample, row in zip(ds.samples, classes):
        x_bin = min(int(row[4]) * 3 // 32, 2)
        expected_x = ("left", "center", "right")[x_bin]
        from weakdis.factors import index_to_combination

        assert index_to_combination(ds.space, sample.combination_index).values[0] == expected_x
        assert set(sample.nuisance) == {"scale", "orientation"}
