"""The four trainable networks and the binary checkpoint container.

Encoder/decoder are convolutional; discriminator and relational learner
are tanh MLPs (sigmoid output on the discriminator, linear output on the
relational learner so it can reach any point of the latent space). All
forward passes are deterministic.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, asdict, field

import numpy as np
import torch
from torch import nn

__all__ = [
    "ArchConfig",
    "NetworkParams",
    "init_params",
    "encode",
    "decode",
    "discriminate",
    "relate",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_MAGIC = b"WDCK"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ArchConfig:
    n_z: int = 8
    height: int = 64
    width: int = 64
    channels: int = 1
    conv_channels: tuple[int, ...] = (32, 64, 128, 256)
    conv_kernel: int = 4
    conv_stride: int = 2
    mlp_width: int = 1024
    mlp_depth: int = 3
    relation_arity: int = 1
    relation_count: int = 5

    def __post_init__(self):
        if self.n_z < 1:
            raise ValueError("n_z must be >= 1")
        side = self.height
        for _ in self.conv_channels:
            side = side // self.conv_stride
        if side < 1:
            raise ValueError("conv stack too deep for the image size")

    @property
    def relation_code_dim(self) -> int:
        # one-hot relation codes are zero-padded up to the latent width
        return max(self.relation_count, self.n_z)

    @property
    def conv_out_side(self) -> int:
        if self.height != self.width:
            raise ValueError("images must be square")
        side = self.height
        for _ in self.conv_channels:
            if side % self.conv_stride != 0:
                raise ValueError(
                    f"image side {self.height} is not divisible by stride "
                    f"{self.conv_stride} across {len(self.conv_channels)} conv layers"
                )
            side //= self.conv_stride
        if side < 1:
            raise ValueError("too many conv layers for this image size")
        return side


class Encoder(nn.Module):
    def __init__(self, arch: ArchConfig):
        super().__init__()
        layers = []
        in_ch = arch.channels
        for out_ch in arch.conv_channels:
            layers += [
                nn.Conv2d(in_ch, out_ch, arch.conv_kernel, arch.conv_stride, padding=1),
                nn.LeakyReLU(0.2),
            ]
            in_ch = out_ch
        self.conv = nn.Sequential(*layers)
        flat = arch.conv_channels[-1] * arch.conv_out_side**2
        self.head = nn.Linear(flat, arch.n_z)

    def forward(self, x):
        h = self.conv(x)
        return self.head(h.flatten(1))


class Decoder(nn.Module):
    def __init__(self, arch: ArchConfig):
        super().__init__()
        self.arch = arch
        side = arch.conv_out_side
        flat = arch.conv_channels[-1] * side**2
        self.head = nn.Linear(arch.n_z, flat)
        layers = []
        chans = list(reversed(arch.conv_channels))
        for in_ch, out_ch in zip(chans, chans[1:] + [arch.channels]):
            layers += [
                nn.ConvTranspose2d(
                    in_ch, out_ch, arch.conv_kernel, arch.conv_stride,
                    padding=1, output_padding=0,
                ),
                nn.LeakyReLU(0.2),
            ]
        layers = layers[:-1]  # no nonlinearity before the sigmoid
        self.deconv = nn.Sequential(*layers)

    def forward(self, z):
        side = self.arch.conv_out_side
        h = self.head(z).view(-1, self.arch.conv_channels[-1], side, side)
        return torch.sigmoid(self.deconv(h))


def _mlp(in_dim: int, out_dim: int, width: int, depth: int) -> nn.Sequential:
    layers: list[nn.Module] = []
    dim = in_dim
    for _ in range(depth):
        layers += [nn.Linear(dim, width), nn.Tanh()]
        dim = width
    layers.append(nn.Linear(dim, out_dim))
    return nn.Sequential(*layers)


class Discriminator(nn.Module):
    def __init__(self, arch: ArchConfig):
        super().__init__()
        self.net = _mlp(arch.n_z, 1, arch.mlp_width, arch.mlp_depth)

    def forward(self, z):
        return torch.sigmoid(self.net(z)).squeeze(-1)


class RelationalLearner(nn.Module):
    def __init__(self, arch: ArchConfig):
        super().__init__()
        in_dim = arch.relation_arity * arch.n_z + arch.relation_code_dim
        self.net = _mlp(in_dim, arch.n_z, arch.mlp_width, arch.mlp_depth)

    def forward(self, inputs, relation_code):
        # inputs: B x (arity * n_z), relation_code: B x relation_code_dim
        return self.net(torch.cat([inputs, relation_code], dim=-1))


@dataclass
class NetworkParams:
    encoder: Encoder
    decoder: Decoder
    discriminator: Discriminator
    relational: RelationalLearner
    arch: ArchConfig = field(repr=False, default=None)

    def modules(self) -> dict[str, nn.Module]:
        return {
            "encoder": self.encoder,
            "decoder": self.decoder,
            "discriminator": self.discriminator,
            "relational": self.relational,
        }

    def state_blocks(self) -> dict[str, np.ndarray]:
        blocks = {}
        for net_name, module in self.modules().items():
            for p_name, tensor in module.state_dict().items():
                blocks[f"{net_name}.{p_name}"] = tensor.detach().numpy()
        return blocks


def _init_weights(module: nn.Module, gen: torch.Generator) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Linear, nn.Conv2d, nn.ConvTranspose2d)):
            fan_in = nn.init._calculate_correct_fan(m.weight, "fan_in")
            bound = 1.0 / np.sqrt(fan_in)
            with torch.no_grad():
                m.weight.uniform_(-bound, bound, generator=gen)
                m.bias.zero_()


def init_params(arch: ArchConfig, seed: int = 0) -> NetworkParams:
    """Deterministic fan-in scaled initialization, zero biases."""
    gen = torch.Generator().manual_seed(seed)
    nets = NetworkParams(
        Encoder(arch), Decoder(arch), Discriminator(arch), RelationalLearner(arch), arch
    )
    for module in nets.modules().values():
        _init_weights(module, gen)
    return nets


def _as_images_tensor(images: np.ndarray, arch: ArchConfig) -> torch.Tensor:
    images = np.asarray(images, dtype=np.float32)
    if images.ndim == 3:
        images = images[None]
    if images.shape[1:] != (arch.height, arch.width, arch.channels):
        raise ValueError(
            f"expected images of shape (H,W,C)=({arch.height},{arch.width},{arch.channels}), "
            f"got {images.shape[1:]}"
        )
    return torch.from_numpy(images).permute(0, 3, 1, 2)


def _as_codes_tensor(codes: np.ndarray, n_z: int) -> torch.Tensor:
    codes = np.asarray(codes, dtype=np.float32)
    if codes.ndim == 1:
        codes = codes[None]
    if codes.shape[-1] != n_z:
        raise ValueError(f"expected codes of dimension {n_z}, got {codes.shape[-1]}")
    return torch.from_numpy(codes)


def encode(params: NetworkParams, images: np.ndarray) -> np.ndarray:
    """Encode a batch of H x W x C images to B x n_z latent codes."""
    x = _as_images_tensor(images, params.arch)
    with torch.no_grad():
        return params.encoder(x).numpy()


def decode(params: NetworkParams, codes: np.ndarray) -> np.ndarray:
    """Decode B x n_z codes to B x H x W x C images in [0, 1]."""
    z = _as_codes_tensor(codes, params.arch.n_z)
    with torch.no_grad():
        return params.decoder(z).permute(0, 2, 3, 1).numpy()


def discriminate(params: NetworkParams, codes: np.ndarray) -> np.ndarray:
    """One probability in (0, 1) per latent code."""
    z = _as_codes_tensor(codes, params.arch.n_z)
    with torch.no_grad():
        p = params.discriminator(z).numpy()
    return np.clip(p, 1e-6, 1.0 - 1e-6)


def relate(params: NetworkParams, input_codes: np.ndarray, relation_code: np.ndarray) -> np.ndarray:
    """Map (arity x n_z input codes, relation code) to an output code."""
    arch = params.arch
    inputs = np.asarray(input_codes, dtype=np.float32)
    single = inputs.ndim == 2
    if single:
        inputs = inputs[None]
    if inputs.shape[1:] != (arch.relation_arity, arch.n_z):
        raise ValueError(
            f"expected input codes of shape (arity,n_z)=({arch.relation_arity},{arch.n_z}), "
            f"got {inputs.shape[1:]}"
        )
    rel = np.asarray(relation_code, dtype=np.float32)
    if rel.ndim == 1:
        rel = np.broadcast_to(rel, (inputs.shape[0], rel.shape[0]))
    if rel.shape[-1] != arch.relation_code_dim:
        raise ValueError(
            f"expected relation code of dimension {arch.relation_code_dim}, got {rel.shape[-1]}"
        )
    with torch.no_grad():
        out = params.relational(
            torch.from_numpy(inputs.reshape(inputs.shape[0], -1)),
            torch.from_numpy(np.ascontiguousarray(rel).copy()),
        ).numpy()
    return out[0] if single else out


# ---------------------------------------------------------------------------
# WDCK checkpoint container

def _write_block(fh, name: str, array: np.ndarray) -> None:
    data = np.ascontiguousarray(array, dtype="<f4")
    raw_name = name.encode()
    fh.write(struct.pack("<I", len(raw_name)))
    fh.write(raw_name)
    fh.write(struct.pack("<I", data.ndim))
    fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
    fh.write(data.tobytes())


def _read_block(fh) -> tuple[str, np.ndarray] | None:
    raw = fh.read(4)
    if not raw:
        return None
    (name_len,) = struct.unpack("<I", raw)
    name = fh.read(name_len).decode()
    (rank,) = struct.unpack("<I", fh.read(4))
    dims = struct.unpack(f"<{rank}I", fh.read(4 * rank))
    count = int(np.prod(dims)) if rank else 1
    data = np.frombuffer(fh.read(count * 4), dtype="<f4").reshape(dims)
    return name, data


def save_checkpoint(path, params: NetworkParams, meta: dict | None = None,
                    extra_blocks: dict[str, np.ndarray] | None = None) -> None:
    """Write the versioned WDCK container: metadata JSON then named blocks."""
    meta = dict(meta or {})
    meta["arch"] = asdict(params.arch)
    payload = json.dumps(meta, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<2I", CHECKPOINT_VERSION, len(payload)))
        fh.write(payload)
        for name, array in params.state_blocks().items():
            _write_block(fh, name, array)
        for name, array in (extra_blocks or {}).items():
            _write_block(fh, name, array)


def load_checkpoint(path) -> tuple[NetworkParams, dict, dict[str, np.ndarray]]:
    """Read a WDCK container; returns (params, metadata, non-network blocks)."""
    with open(path, "rb") as fh:
        header = fh.read(12)
        if len(header) < 12 or header[:4] != CHECKPOINT_MAGIC:
            raise ValueError(f"not a WDCK checkpoint: {path}")
        version, meta_len = struct.unpack("<2I", header[4:])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        meta = json.loads(fh.read(meta_len).decode())
        blocks = {}
        while (item := _read_block(fh)) is not None:
            blocks[item[0]] = item[1]

    arch_dict = dict(meta["arch"])
    arch_dict["conv_channels"] = tuple(arch_dict["conv_channels"])
    arch = ArchConfig(**arch_dict)
    params = NetworkParams(
        Encoder(arch), Decoder(arch), Discriminator(arch), RelationalLearner(arch), arch
    )
    extra = {}
    for name, array in blocks.items():
        net, _, p_name = name.partition(".")
        if net in params.modules() and p_name:
            module = params.modules()[net]
            state = module.state_dict()
            if p_name in state:
                state[p_name] = torch.from_numpy(array.copy())
                module.load_state_dict(state)
                continue
        extra[name] = array
    return params, meta, extra
