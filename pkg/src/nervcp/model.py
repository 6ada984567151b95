"""The video-representation network: MLP head, upscaling blocks, RGB head.

The network maps a 2l-dimensional timestamp embedding to a full RGB frame.
An MLP produces a coarse channel-last feature grid; each block then runs a
same-padded 3x3 convolution, a sub-pixel shuffle that trades channels for
an r-fold spatial upscale, and a GELU. A 1x1 convolution plus a bounded
activation emits the frame.

Feature maps are channel-last throughout, matching the frame layout.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import math

import numpy as np
import torch
from torch import nn

from .container import read_container, write_container
from .errors import ConfigError, FormatVersionError, ShapeMismatch
from .key import PEConfig

MODEL_MAGIC = b"NVCP"
MODEL_FORMAT_VERSION = 1

_HEAD_ACTIVATIONS = ("sigmoid", "clamp")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; fully determines every layer shape."""

    c1: int  # MLP output channels at the base grid
    c2: int  # first block output channels; halved per block down to min_channels
    upscale_factors: tuple[int, ...] = (5, 2, 2, 2, 2)
    base_grid: tuple[int, int] = (9, 16)  # (h0, w0)
    min_channels: int = 96
    pe: PEConfig = field(default_factory=PEConfig)
    kernel_size: int = 3
    mlp_hidden: int = 512
    head_activation: str = "sigmoid"

    def __post_init__(self):
        if self.c1 < 1 or self.c2 < 1 or self.min_channels < 1 or self.mlp_hidden < 1:
            raise ConfigError("channel counts must be positive")
        if not self.upscale_factors or any(r < 1 for r in self.upscale_factors):
            raise ConfigError(f"bad upscale factors {self.upscale_factors}")
        if self.kernel_size % 2 != 1:
            raise ConfigError("kernel size must be odd for same-padding")
        if self.head_activation not in _HEAD_ACTIVATIONS:
            raise ConfigError(f"head activation must be one of {_HEAD_ACTIVATIONS}")

    @property
    def target_resolution(self) -> tuple[int, int]:
        h0, w0 = self.base_grid
        scale = math.prod(self.upscale_factors)
        return h0 * scale, w0 * scale

    @property
    def channel_schedule(self) -> list[tuple[int, int]]:
        """(in_channels, out_channels) per block; halving floored at min_channels."""
        schedule = []
        c_in = self.c1
        c_out = self.c2
        for i, _ in enumerate(self.upscale_factors):
            schedule.append((c_in, c_out))
            c_in = c_out
            c_out = max(self.c2 // (2 ** (i + 1)), self.min_channels)
        return schedule

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pe"] = {"b": self.pe.b, "l": self.pe.l}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["pe"] = PEConfig(**d["pe"])
        d["upscale_factors"] = tuple(d["upscale_factors"])
        d["base_grid"] = tuple(d["base_grid"])
        return cls(**d)


def pixel_shuffle(x, r: int):
    """Sub-pixel shuffle of a channel-last map: (..., H, W, C*r^2) -> (..., rH, rW, C).

    Index map: out[x, y, c] = in[x//r, y//r, C*r*(y%r) + C*(x%r) + c].
    Works on numpy arrays and torch tensors; differentiable for the latter.
    """
    if r < 1:
        raise ShapeMismatch(f"upscale factor must be positive, got {r}")
    *lead, h, w, cr2 = x.shape
    if cr2 % (r * r) != 0:
        raise ShapeMismatch(f"channel count {cr2} not divisible by r^2 = {r * r}")
    c = cr2 // (r * r)
    # Channel index k = C*r*a + C*b + c decomposes as (a, b, c) with a = y%r, b = x%r.
    expanded = x.reshape(*lead, h, w, r, r, c)
    n = len(lead)
    order = tuple(range(n)) + (n, n + 3, n + 1, n + 2, n + 4)
    if torch.is_tensor(x):
        shuffled = expanded.permute(order)
        return shuffled.reshape(*lead, h * r, w * r, c)
    shuffled = np.transpose(expanded, order)
    return shuffled.reshape(*lead, h * r, w * r, c)


def pixel_unshuffle(x, r: int):
    """Exact inverse of :func:`pixel_shuffle`."""
    *lead, hr, wr, c = x.shape
    if hr % r or wr % r:
        raise ShapeMismatch(f"spatial dims {(hr, wr)} not divisible by r = {r}")
    h, w = hr // r, wr // r
    n = len(lead)
    expanded = x.reshape(*lead, h, r, w, r, c)
    order = tuple(range(n)) + (n, n + 2, n + 3, n + 1, n + 4)
    if torch.is_tensor(x):
        return expanded.permute(order).reshape(*lead, h, w, c * r * r)
    return np.transpose(expanded, order).reshape(*lead, h, w, c * r * r)


class NervBlock(nn.Module):
    """conv3x3(same) -> pixel shuffle(r) -> GELU on channel-last maps."""

    def __init__(self, c_in: int, c_out: int, r: int, kernel_size: int = 3):
        super().__init__()
        self.r = r
        self.conv = nn.Conv2d(c_in, c_out * r * r, kernel_size, stride=1, padding=kernel_size // 2)
        self.act = nn.GELU()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.conv(x.permute(0, 3, 1, 2)).permute(0, 2, 3, 1)
        return self.act(pixel_shuffle(y, self.r))


class NervModel(nn.Module):
    """The cipher network: its weights are the transmitted ciphertext."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        h0, w0 = config.base_grid
        self.mlp = nn.Sequential(
            nn.Linear(config.pe.embedding_length, config.mlp_hidden),
            nn.GELU(),
            nn.Linear(config.mlp_hidden, config.c1 * h0 * w0),
        )
        self.blocks = nn.ModuleList(
            NervBlock(c_in, c_out, r, config.kernel_size)
            for (c_in, c_out), r in zip(config.channel_schedule, config.upscale_factors)
        )
        last_channels = config.channel_schedule[-1][1]
        self.head = nn.Conv2d(last_channels, 3, kernel_size=1, stride=1)

    @property
    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def forward(self, embedding: torch.Tensor) -> torch.Tensor:
        """Render frame(s) from embedding(s); output values lie in [0, 1]."""
        expected = self.config.pe.embedding_length
        if embedding.shape[-1] != expected:
            raise ShapeMismatch(f"embedding length {embedding.shape[-1]}, expected {expected}")
        squeeze = embedding.ndim == 1
        if squeeze:
            embedding = embedding[None]
        h0, w0 = self.config.base_grid
        x = self.mlp(embedding).reshape(-1, h0, w0, self.config.c1)
        for block in self.blocks:
            x = block(x)
        x = self.head(x.permute(0, 3, 1, 2)).permute(0, 2, 3, 1)
        if self.config.head_activation == "sigmoid":
            x = torch.sigmoid(x)
        else:
            x = torch.clamp(x, 0.0, 1.0)
        return x[0] if squeeze else x


def build_model(config: ModelConfig, seed: int) -> NervModel:
    """Instantiate a model with seeded uniform fan-in initialization."""
    model = NervModel(config)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for module in model.modules():
            if isinstance(module, (nn.Linear, nn.Conv2d)):
                fan_in = module.weight.shape[1:].numel()
                bound = 1.0 / math.sqrt(fan_in)
                module.weight.uniform_(-bound, bound, generator=gen)
                module.bias.uniform_(-bound, bound, generator=gen)
    return model


def save_model(model: NervModel, path, quantized: dict | None = None) -> None:
    """NVCP container. ``quantized`` maps tensor name -> QuantizedTensor and
    replaces the f32 payload with integer codes plus per-tensor ranges."""
    meta = {"config": model.config.to_dict(), "quantized": quantized is not None}
    tensors = []
    for name, param in model.state_dict().items():
        if quantized is not None:
            qt = quantized[name]
            entry = {"name": name, "mu_min": qt.mu_min, "mu_max": qt.mu_max, "bit": qt.bit}
            tensors.append((entry, qt.q))
        else:
            tensors.append(({"name": name}, param.detach().numpy().astype(np.float32)))
    write_container(path, MODEL_MAGIC, MODEL_FORMAT_VERSION, meta, tensors)


def load_model(path) -> NervModel:
    """Load a model, transparently dequantizing a quantized payload."""
    _, meta, tensors = read_container(path, MODEL_MAGIC, MODEL_FORMAT_VERSION)
    model = NervModel(ModelConfig.from_dict(meta["config"]))
    state = {}
    for name, array in tensors.items():
        if meta["quantized"]:
            from .compression import QuantizedTensor, dequantize_tensor

            entry = meta["tensors"][name]
            qt = QuantizedTensor(q=array, mu_min=entry["mu_min"], mu_max=entry["mu_max"], bit=entry["bit"])
            array = dequantize_tensor(qt).astype(np.float32)
        state[name] = torch.from_numpy(array.copy())
    model.load_state_dict(state)
    return model


def load_quantized_payload(path) -> dict:
    """Raw quantized tensors (name -> QuantizedTensor) from a quantized file."""
    from .compression import QuantizedTensor

    _, meta, tensors = read_container(path, MODEL_MAGIC, MODEL_FORMAT_VERSION)
    if not meta["quantized"]:
        raise FormatVersionError(f"{path}: file holds a full-precision payload")
    return {
        name: QuantizedTensor(
            q=array,
            mu_min=meta["tensors"][name]["mu_min"],
            mu_max=meta["tensors"][name]["mu_max"],
            bit=meta["tensors"][name]["bit"],
        )
        for name, array in tensors.items()
    }
