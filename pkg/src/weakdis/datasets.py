"""Procedural image datasets with known factor labels.

Renderers are deterministic functions of (combination, nuisance, size).
Default nuisance ranges: dsprites scale ~ U(0.8, 1.1) and orientation
~ U(-0.4, 0.4) rad; hwf-like stroke thickness ~ U(0.04, 0.07) with an
integer jitter seed; shapes3d floor/background hue ~ U(0, 1) and camera
orientation ~ U(-0.4, 0.4). Pixels are quantized to the uint8/255 grid
when a dataset is assembled so that the native on-disk format round-trips
bit-exactly.
"""

from __future__ import annotations

import csv
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .factors import (
    FactorSpace,
    FactorCombination,
    HWF_SYMBOLS,
    build_factor_space,
    combination_to_index,
    index_to_combination,
)

__all__ = [
    "ImageSample",
    "Dataset",
    "LabeledSubset",
    "render_sprite",
    "render_glyph",
    "render_scene",
    "augment",
    "make_dataset",
    "label_subset",
    "save_native",
    "load_archive",
]

NATIVE_MAGIC = b"WDIS"
NATIVE_VERSION = 1


@dataclass(frozen=True)
class ImageSample:
    pixels: np.ndarray  # H x W x C float32 in [0, 1]
    combination_index: int | None
    nuisance: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Dataset:
    samples: tuple[ImageSample, ...]
    space: FactorSpace
    splits: dict  # {"train": ndarray, "val": ndarray, "test": ndarray}

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return self.samples[0].pixels.shape

    def images(self, split: str | None = None) -> np.ndarray:
        idx = self.splits[split] if split else np.arange(len(self.samples))
        return np.stack([self.samples[i].pixels for i in idx])

    def labels(self, split: str | None = None) -> np.ndarray:
        idx = self.splits[split] if split else np.arange(len(self.samples))
        return np.array([self.samples[i].combination_index for i in idx])


@dataclass(frozen=True)
class LabeledSubset:
    """tau training-sample indices per factor combination."""

    indices_by_combination: dict[int, np.ndarray]
    tau: int


# ---------------------------------------------------------------------------
# rasterizers

def _grid(size: int, supersample: int = 2):
    n = size * supersample
    c = (np.arange(n) + 0.5) / supersample
    return np.meshgrid(c, c)  # xx, yy in pixel units


def _downsample(mask: np.ndarray, size: int, supersample: int = 2) -> np.ndarray:
    return mask.reshape(size, supersample, size, supersample).mean(axis=(1, 3))


def _shape_mask(shape: str, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    # u, v are coordinates in units of the shape radius
    if shape in ("square", "cube"):
        return np.maximum(np.abs(u), np.abs(v)) <= 1.0
    if shape in ("ellipse", "ellipsoid"):
        return (u / 1.0) ** 2 + (v / 0.62) ** 2 <= 1.0
    if shape == "sphere":
        return u**2 + v**2 <= 1.0
    if shape == "cylinder":
        return (np.abs(u) <= 0.55) & (np.abs(v) <= 1.0)
    if shape == "heart":
        x, y = u / 0.82, -v / 0.82 + 0.22
        return (x**2 + y**2 - 1.0) ** 3 - x**2 * y**3 <= 0.0
    raise ValueError(f"unknown shape {shape!r}")


def render_sprite(
    space: FactorSpace,
    combo: FactorCombination | int,
    nuisance: dict | None = None,
    size: int = 64,
) -> ImageSample:
    """Rasterize a dsprites-style shape at its 3x3 grid cell (grayscale)."""
    if isinstance(combo, (int, np.integer)):
        combo = index_to_combination(space, int(combo))
    nuisance = dict(nuisance or {})
    scale = float(nuisance.setdefault("scale", 1.0))
    orientation = float(nuisance.setdefault("orientation", 0.0))

    values = dict(zip((f.name for f in space.relevant), combo.values))
    x_pos = ("left", "center", "right").index(values["x_position"])
    y_pos = ("up", "center", "down").index(values["y_position"])
    shape = values["shape"]

    cx = size * (x_pos + 0.5) / 3.0
    cy = size * (y_pos + 0.5) / 3.0
    radius = scale * size / 6.0

    xx, yy = _grid(size)
    dx, dy = xx - cx, yy - cy
    cos, sin = np.cos(orientation), np.sin(orientation)
    u = (cos * dx + sin * dy) / radius
    v = (-sin * dx + cos * dy) / radius
    mask = _downsample(_shape_mask(shape, u, v).astype(np.float64), size)
    pixels = mask.astype(np.float32)[..., None]
    return ImageSample(pixels, combo.index, nuisance)


# polyline strokes per glyph, control points in the unit square
_GLYPH_STROKES: dict[str, list[list[tuple[float, float]]]] = {
    "0": [[(0.5, 0.15), (0.75, 0.3), (0.75, 0.7), (0.5, 0.85), (0.25, 0.7), (0.25, 0.3), (0.5, 0.15)]],
    "1": [[(0.35, 0.3), (0.5, 0.15), (0.5, 0.85)], [(0.3, 0.85), (0.7, 0.85)]],
    "2": [[(0.25, 0.3), (0.5, 0.15), (0.75, 0.3), (0.3, 0.85), (0.75, 0.85)]],
    "3": [[(0.25, 0.2), (0.7, 0.2), (0.45, 0.48), (0.75, 0.68), (0.5, 0.88), (0.25, 0.78)]],
    "4": [[(0.65, 0.85), (0.65, 0.15), (0.25, 0.6), (0.8, 0.6)]],
    "5": [[(0.75, 0.15), (0.3, 0.15), (0.28, 0.48), (0.65, 0.45), (0.72, 0.68), (0.5, 0.88), (0.25, 0.8)]],
    "6": [[(0.7, 0.15), (0.35, 0.45), (0.28, 0.7), (0.5, 0.88), (0.72, 0.7), (0.6, 0.5), (0.3, 0.62)]],
    "7": [[(0.25, 0.15), (0.75, 0.15), (0.42, 0.85)]],
    "8": [[(0.5, 0.48), (0.7, 0.32), (0.5, 0.15), (0.3, 0.32), (0.5, 0.48), (0.72, 0.68), (0.5, 0.88), (0.28, 0.68), (0.5, 0.48)]],
    "9": [[(0.7, 0.38), (0.5, 0.5), (0.3, 0.34), (0.5, 0.14), (0.7, 0.3), (0.68, 0.62), (0.45, 0.88)]],
    "+": [[(0.2, 0.5), (0.8, 0.5)], [(0.5, 0.2), (0.5, 0.8)]],
    "-": [[(0.2, 0.5), (0.8, 0.5)]],
    "*": [[(0.25, 0.25), (0.75, 0.75)], [(0.75, 0.25), (0.25, 0.75)], [(0.5, 0.18), (0.5, 0.82)]],
}


def _segment_distance(px, py, ax, ay, bx, by):
    abx, aby = bx - ax, by - ay
    denom = abx * abx + aby * aby
    if denom == 0.0:
        return np.hypot(px - ax, py - ay)
    t = np.clip(((px - ax) * abx + (py - ay) * aby) / denom, 0.0, 1.0)
    return np.hypot(px - (ax + t * abx), py - (ay + t * aby))


def render_glyph(symbol: str, nuisance: dict | None = None, size: int = 64) -> ImageSample:
    """Rasterize one of the 13 hwf-like symbols with seeded stroke jitter."""
    if symbol not in _GLYPH_STROKES:
        raise ValueError(f"unknown symbol {symbol!r}")
    nuisance = dict(nuisance or {})
    seed = int(nuisance.setdefault("jitter_seed", 0))
    thickness = float(nuisance.setdefault("thickness", 0.05))

    rng = np.random.default_rng(seed)
    xx, yy = _grid(size)
    px, py = xx / size, yy / size
    dist = np.full_like(px, np.inf)
    for stroke in _GLYPH_STROKES[symbol]:
        pts = [
            (x + rng.normal(0.0, 0.015), y + rng.normal(0.0, 0.015))
            for x, y in stroke
        ]
        for (ax, ay), (bx, by) in zip(pts, pts[1:]):
            dist = np.minimum(dist, _segment_distance(px, py, ax, ay, bx, by))
    soft = np.clip((thickness - dist) / (0.5 / size) + 0.5, 0.0, 1.0)
    pixels = _downsample(soft, size).astype(np.float32)[..., None]
    index = HWF_SYMBOLS.index(symbol)
    return ImageSample(pixels, index, nuisance)


def _hue_to_rgb(h: float) -> np.ndarray:
    # full-saturation HSV wheel
    k = (np.array([0.0, 2.0, 4.0]) + h * 6.0) % 6.0
    return (1.0 - np.clip(np.minimum(k, 4.0 - k), 0.0, 1.0)).astype(np.float64)


def render_scene(
    space: FactorSpace,
    combo: FactorCombination | int,
    nuisance: dict | None = None,
    size: int = 64,
) -> ImageSample:
    """Flat-shaded shapes3d-style scene: background, floor, colored object."""
    if isinstance(combo, (int, np.integer)):
        combo = index_to_combination(space, int(combo))
    nuisance = dict(nuisance or {})
    floor_hue = float(nuisance.setdefault("floor_color", 0.33))
    bg_hue = float(nuisance.setdefault("background_color", 0.66))
    orientation = float(nuisance.setdefault("orientation", 0.0))

    values = dict(zip((f.name for f in space.relevant), combo.values))
    hue = int(values["object_color"].split("_")[1]) / 10.0
    shape = values["shape"]
    radius = {"small": 0.14, "medium": 0.2, "big": 0.27}[values["scale"]] * size

    img = np.empty((size, size, 3), dtype=np.float64)
    img[:] = 0.35 + 0.45 * _hue_to_rgb(bg_hue)
    floor_rows = slice(int(size * 2 / 3), size)
    img[floor_rows] = 0.3 + 0.5 * _hue_to_rgb(floor_hue)

    xx, yy = _grid(size)
    dx, dy = xx - size / 2.0, yy - size * 0.55
    cos, sin = np.cos(orientation), np.sin(orientation)
    u = (cos * dx + sin * dy) / radius
    v = (-sin * dx + cos * dy) / radius
    mask = _downsample(_shape_mask(shape, u, v).astype(np.float64), size)[..., None]
    color = 0.15 + 0.85 * _hue_to_rgb(hue)
    pixels = (img * (1.0 - mask) + color * mask).astype(np.float32)
    return ImageSample(np.clip(pixels, 0.0, 1.0), combo.index, nuisance)


# ---------------------------------------------------------------------------
# augmentation and assembly

def augment(image: ImageSample | np.ndarray, kind: str, level: float, seed: int) -> ImageSample | np.ndarray:
    """Corrupt an image with bernoulli pixel flips or additive gaussian noise."""
    if level < 0:
        raise ValueError("noise level must be >= 0")
    pixels = image.pixels if isinstance(image, ImageSample) else image
    rng = np.random.default_rng(seed)
    if level == 0:
        out = pixels.copy()
    elif kind == "bernoulli":
        flip = rng.random(pixels.shape) < level
        out = np.where(flip, rng.random(pixels.shape), pixels)
    elif kind == "gaussian":
        out = pixels + rng.normal(0.0, level, pixels.shape)
    else:
        raise ValueError(f"unknown noise kind {kind!r}")
    out = np.clip(out, 0.0, 1.0).astype(np.float32)
    if isinstance(image, ImageSample):
        return ImageSample(out, image.combination_index, image.nuisance)
    return out


def _draw_nuisance(preset: str, rng: np.random.Generator) -> dict:
    if preset == "dsprites":
        return {
            "scale": float(rng.uniform(0.8, 1.1)),
            "orientation": float(rng.uniform(-0.4, 0.4)),
        }
    if preset == "hwf-like":
        return {
            "jitter_seed": int(rng.integers(0, 2**31 - 1)),
            "thickness": float(rng.uniform(0.04, 0.07)),
        }
    if preset == "shapes3d":
        return {
            "floor_color": float(rng.uniform(0.0, 1.0)),
            "background_color": float(rng.uniform(0.0, 1.0)),
            "orientation": float(rng.uniform(-0.4, 0.4)),
        }
    raise ValueError(f"unknown preset {preset!r}")


def _render(space: FactorSpace, preset: str, index: int, nuisance: dict, size: int) -> ImageSample:
    if preset == "dsprites":
        return render_sprite(space, index, nuisance, size)
    if preset == "hwf-like":
        symbol = index_to_combination(space, index).values[0]
        return render_glyph(symbol, nuisance, size)
    if preset == "shapes3d":
        return render_scene(space, index, nuisance, size)
    raise ValueError(f"unknown preset {preset!r}")


def _quantize(pixels: np.ndarray) -> np.ndarray:
    return (np.round(pixels * 255.0).astype(np.uint8) / np.float32(255.0)).astype(np.float32)


def _stratified_splits(labels: np.ndarray, rng: np.random.Generator) -> dict:
    """Per-combination 20% test, then 10% of the remainder validation."""
    train, val, test = [], [], []
    for combo in np.unique(labels):
        idx = np.flatnonzero(labels == combo)
        idx = idx[rng.permutation(len(idx))]
        n_test = max(1, round(0.2 * len(idx)))
        n_val = max(1, round(0.1 * (len(idx) - n_test)))
        test.extend(idx[:n_test])
        val.extend(idx[n_test : n_test + n_val])
        train.extend(idx[n_test + n_val :])
    return {
        "train": np.sort(np.array(train)),
        "val": np.sort(np.array(val)),
        "test": np.sort(np.array(test)),
    }


def make_dataset(
    space: FactorSpace,
    preset: str,
    samples_per_combination: int,
    noise: dict | None = None,
    seed: int = 0,
    size: int = 64,
) -> Dataset:
    """Render a full labeled dataset with seeded nuisances plus noise."""
    if samples_per_combination < 1:
        raise ValueError("samples_per_combination must be >= 1")
    noise = noise or {"kind": "gaussian", "level": 0.05}
    rng = np.random.default_rng(seed)
    samples = []
    for index in range(space.N):
        for _ in range(samples_per_combination):
            nuisance = _draw_nuisance(preset, rng)
            sample = _render(space, preset, index, nuisance, size)
            sample = augment(sample, noise["kind"], noise["level"], int(rng.integers(2**31 - 1)))
            samples.append(ImageSample(_quantize(sample.pixels), index, nuisance))
    labels = np.array([s.combination_index for s in samples])
    splits = _stratified_splits(labels, rng)
    return Dataset(tuple(samples), space, splits)


def label_subset(dataset: Dataset, tau: int, seed: int = 0) -> LabeledSubset:
    """Uniformly sample tau training indices per combination."""
    rng = np.random.default_rng(seed)
    train = set(dataset.splits["train"].tolist())
    by_combo: dict[int, np.ndarray] = {}
    for combo in range(dataset.space.N):
        idx = np.array(
            [i for i in dataset.splits["train"] if dataset.samples[i].combination_index == combo]
        )
        if len(idx) < tau:
            raise ValueError(
                f"combination {combo} has only {len(idx)} training samples, need tau={tau}"
            )
        by_combo[combo] = np.sort(rng.choice(idx, size=tau, replace=False))
    assert all(set(v.tolist()) <= train for v in by_combo.values())
    return LabeledSubset(by_combo, tau)


# ---------------------------------------------------------------------------
# native format and archive loaders

def save_native(dataset: Dataset, directory) -> None:
    """Write images.bin (WDIS container) and labels.csv."""
    os.makedirs(directory, exist_ok=True)
    h, w, c = dataset.image_shape
    with open(os.path.join(directory, "images.bin"), "wb") as fh:
        fh.write(NATIVE_MAGIC)
        fh.write(struct.pack("<5I", NATIVE_VERSION, len(dataset.samples), h, w, c))
        for s in dataset.samples:
            fh.write(np.round(s.pixels * 255.0).astype(np.uint8).tobytes())

    split_of = {}
    for name, idx in dataset.splits.items():
        for i in idx:
            split_of[int(i)] = name
    factor_names = [f.name for f in dataset.space.relevant]
    nuisance_names = sorted(dataset.samples[0].nuisance)
    with open(os.path.join(directory, "labels.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_index", *factor_names, *nuisance_names, "split"])
        for i, s in enumerate(dataset.samples):
            combo = index_to_combination(dataset.space, s.combination_index)
            writer.writerow(
                [i, *combo.values, *(repr(s.nuisance[k]) for k in nuisance_names), split_of[i]]
            )
    from .factors import builtin_relations, save_space_spec

    relations = builtin_relations(dataset.space) if dataset.space.preset else []
    save_space_spec(os.path.join(directory, "space.txt"), dataset.space, relations)


def _load_native(directory) -> Dataset:
    from .factors import load_space_spec
    import ast

    path = os.path.join(directory, "images.bin")
    with open(path, "rb") as fh:
        header = fh.read(24)
        if len(header) < 24 or header[:4] != NATIVE_MAGIC:
            raise ValueError(f"malformed header in {path}")
        version, count, h, w, c = struct.unpack("<5I", header[4:])
        if version != NATIVE_VERSION:
            raise ValueError(f"unsupported container version {version}")
        raw = fh.read(count * h * w * c)
        if len(raw) != count * h * w * c:
            raise ValueError(f"truncated pixel data in {path}")
    images = np.frombuffer(raw, dtype=np.uint8).reshape(count, h, w, c)
    images = (images / np.float32(255.0)).astype(np.float32)

    space, _ = load_space_spec(os.path.join(directory, "space.txt"))
    factor_names = [f.name for f in space.relevant]
    samples = [None] * count
    splits = {"train": [], "val": [], "test": []}
    with open(os.path.join(directory, "labels.csv"), newline="") as fh:
        reader = csv.reader(fh)
        header_row = next(reader)
        nuisance_names = header_row[1 + len(factor_names) : -1]
        for row in reader:
            i = int(row[0])
            values = tuple(row[1 : 1 + len(factor_names)])
            index = combination_to_index(space, values)
            nuisance = {
                k: ast.literal_eval(v)
                for k, v in zip(nuisance_names, row[1 + len(factor_names) : -1])
            }
            samples[i] = ImageSample(images[i], index, nuisance)
            splits[row[-1]].append(i)
    return Dataset(
        tuple(samples), space, {k: np.sort(np.array(v)) for k, v in splits.items()}
    )


def _load_dsprites_official(path) -> Dataset:
    """Official dSprites npz: positions binned to thirds, scale/orientation to nuisance."""
    arc = np.load(path, allow_pickle=True)
    imgs = arc["imgs"]
    classes = arc["latents_classes"]  # color, shape, scale, orientation, posX, posY
    space = build_factor_space("dsprites")
    shape_map = {0: "square", 1: "ellipse", 2: "heart"}  # archive order
    n_pos = int(classes[:, 4].max()) + 1
    samples = []
    for img, row in zip(imgs, classes):
        x_bin = min(int(row[4]) * 3 // n_pos, 2)
        y_bin = min(int(row[5]) * 3 // n_pos, 2)
        values = (
            ("left", "center", "right")[x_bin],
            ("up", "center", "down")[y_bin],
            shape_map[int(row[1])],
        )
        index = combination_to_index(space, values)
        pixels = img.astype(np.float32).reshape(img.shape[0], img.shape[1], 1)
        nuisance = {"scale": int(row[2]), "orientation": int(row[3])}
        samples.append(ImageSample(pixels, index, nuisance))
    labels = np.array([s.combination_index for s in samples])
    splits = _stratified_splits(labels, np.random.default_rng(0))
    return Dataset(tuple(samples), space, splits)


def _load_shapes3d_official(path) -> Dataset:
    """Official Shapes3D h5: images uint8, labels (floor,wall,object,scale,shape,orient)."""
    import h5py

    space = build_factor_space("shapes3d")
    with h5py.File(path, "r") as fh:
        images = fh["images"][:]
        labels = fh["labels"][:]
    samples = []
    for img, row in zip(images, labels):
        hue_bin = min(int(round(row[2] * 10)), 9)
        scale_bin = min(int((row[3] - 0.75) / 0.5 * 3), 2) if row[3] >= 0.75 else 0
        values = (
            f"hue_{hue_bin}",
            ("cube", "cylinder", "sphere", "ellipsoid")[int(row[4])],
            ("small", "medium", "big")[scale_bin],
        )
        index = combination_to_index(space, values)
        pixels = (img / np.float32(255.0)).astype(np.float32)
        nuisance = {
            "floor_color": float(row[0]),
            "background_color": float(row[1]),
            "orientation": float(row[5]),
        }
        samples.append(ImageSample(pixels, index, nuisance))
    label_arr = np.array([s.combination_index for s in samples])
    splits = _stratified_splits(label_arr, np.random.default_rng(0))
    return Dataset(tuple(samples), space, splits)


def _load_hwf_official(path) -> Dataset:
    """HWF archive layout: one subdirectory per symbol holding image files."""
    from PIL import Image

    space = build_factor_space("hwf-like")
    name_map = {"plus": "+", "minus": "-", "times": "*", "add": "+", "sub": "-", "mul": "*"}
    samples = []
    for entry in sorted(os.listdir(path)):
        sub = os.path.join(path, entry)
        if not os.path.isdir(sub):
            continue
        symbol = name_map.get(entry, entry)
        if symbol not in HWF_SYMBOLS:
            raise ValueError(f"unknown factor value {entry!r} in archive")
        index = combination_to_index(space, (symbol,))
        for fname in sorted(os.listdir(sub)):
            img = np.asarray(Image.open(os.path.join(sub, fname)).convert("L"))
            pixels = (img / np.float32(255.0)).astype(np.float32)[..., None]
            samples.append(ImageSample(pixels, index, {"source": fname}))
    if not samples:
        raise ValueError(f"no samples found under {path}")
    labels = np.array([s.combination_index for s in samples])
    splits = _stratified_splits(labels, np.random.default_rng(0))
    return Dataset(tuple(samples), space, splits)


def load_archive(path, format: str = "native") -> Dataset:
    """Load a dataset from disk; see the native container docs in save_native."""
    loaders = {
        "native": _load_native,
        "dsprites-official": _load_dsprites_official,
        "shapes3d-official": _load_shapes3d_official,
        "hwf-official": _load_hwf_official,
    }
    if format not in loaders:
        raise ValueError(f"unknown archive format {format!r}")
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    return loaders[format](path)
