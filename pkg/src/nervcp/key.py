"""Sinusoidal timestamp encoding and the key-controllable encoder.

The encoder is the cipher key: a tiny 1 -> 2l -> 2l -> 2l stack of affine
layers with GELU after the first two. Its per-timestamp output (the key
mask) multiplies the sinusoidal embedding elementwise before the video
network sees it. Anyone without the mask decodes from the raw embedding
only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .container import read_container, write_container
from .errors import DivergenceError, OutOfRangeTimestamp, ShapeMismatch

KEY_MAGIC = b"NVKEY"
KEY_FORMAT_VERSION = 1

MODE_FAE = "FAE"  # key frozen; pre-distributable, reusable across videos
MODE_LAE = "LAE"  # key co-trained with the video network


@dataclass(frozen=True)
class PEConfig:
    """Frequency base ``b`` and count ``l`` of the sinusoidal encoding."""

    b: float = 1.25
    l: int = 80

    def __post_init__(self):
        if self.b <= 1.0:
            raise ValueError(f"frequency base must exceed 1, got {self.b}")
        if self.l < 1:
            raise ValueError(f"frequency count must be positive, got {self.l}")

    @property
    def embedding_length(self) -> int:
        return 2 * self.l


def _as_timestamp_tensor(t, dtype=torch.float32) -> torch.Tensor:
    if isinstance(t, np.ndarray):
        t = t.copy()  # frames module hands out read-only arrays
    ts = torch.as_tensor(t, dtype=dtype)
    if not torch.all((ts > 0) & (ts <= 1)):
        raise OutOfRangeTimestamp(f"timestamps must lie in (0, 1], got {t}")
    return ts


def positional_encode(t, cfg: PEConfig, dtype=torch.float32) -> torch.Tensor:
    """Embedding (sin(b^0·pi·t), cos(b^0·pi·t), ..., sin(b^(l-1)·pi·t), cos(b^(l-1)·pi·t)).

    Sin/cos are interleaved per frequency; output length is 2l. Accepts a
    scalar or a batch of timestamps (last axis becomes the embedding).
    """
    ts = _as_timestamp_tensor(t, dtype=dtype)
    freqs = cfg.b ** torch.arange(cfg.l, dtype=ts.dtype) * math.pi
    angles = ts[..., None] * freqs
    out = torch.empty(ts.shape + (cfg.embedding_length,), dtype=ts.dtype)
    out[..., 0::2] = torch.sin(angles)
    out[..., 1::2] = torch.cos(angles)
    return out


class KeyModule(nn.Module):
    """Three affine layers (1 -> 2l -> 2l -> 2l), GELU after the first two."""

    def __init__(self, cfg: PEConfig, mode: str = MODE_FAE):
        super().__init__()
        if mode not in (MODE_FAE, MODE_LAE):
            raise ValueError(f"mode must be {MODE_FAE} or {MODE_LAE}, got {mode!r}")
        self.cfg = cfg
        self.mode = mode
        width = cfg.embedding_length
        self.net = nn.Sequential(
            nn.Linear(1, width),
            nn.GELU(),
            nn.Linear(width, width),
            nn.GELU(),
            nn.Linear(width, width),
        )

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        return self.net(t[..., None])


def new_key_module(cfg: PEConfig, seed: int, mode: str = MODE_FAE) -> KeyModule:
    """Build a key module with seeded uniform fan-in initialization."""
    key = KeyModule(cfg, mode=mode)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for layer in key.net:
            if isinstance(layer, nn.Linear):
                bound = 1.0 / math.sqrt(layer.in_features)
                layer.weight.uniform_(-bound, bound, generator=gen)
                layer.bias.uniform_(-bound, bound, generator=gen)
    return key


def key_mask(t, key: KeyModule, dtype=torch.float32) -> torch.Tensor:
    """Deterministic forward pass of the key encoder at timestamp(s) t."""
    ts = _as_timestamp_tensor(t, dtype=dtype)
    with torch.no_grad():
        return key(ts)


def key_embed(t, key: KeyModule, cfg: PEConfig, dtype=torch.float32) -> torch.Tensor:
    """Elementwise product key_mask(t) * positional_encode(t)."""
    if key.cfg.embedding_length != cfg.embedding_length:
        raise ShapeMismatch(
            f"key produces length {key.cfg.embedding_length}, "
            f"config expects {cfg.embedding_length}"
        )
    return key_mask(t, key, dtype=dtype) * positional_encode(t, cfg, dtype=dtype)


def pretrain_key(
    cfg: PEConfig,
    timestamps,
    epochs: int = 30,
    lr: float = 1e-4,
    seed: int = 0,
) -> tuple[KeyModule, list[float]]:
    """Fit the key mask to the raw sinusoidal embedding with Adam (MSE loss).

    One optimizer step per timestamp per epoch, in grid order, so runs are
    reproducible for a fixed seed. Returns the trained module (mode FAE,
    parameters frozen) and the per-epoch mean loss history.
    """
    ts = _as_timestamp_tensor(np.asarray(timestamps, dtype=np.float64), dtype=torch.float32)
    targets = positional_encode(ts, cfg)
    key = new_key_module(cfg, seed=seed, mode=MODE_FAE)
    optimizer = torch.optim.Adam(key.parameters(), lr=lr, betas=(0.9, 0.999))

    history = []
    for _ in range(epochs):
        epoch_loss = 0.0
        for i in range(len(ts)):
            optimizer.zero_grad()
            loss = torch.mean((key(ts[i]) - targets[i]) ** 2)
            if not torch.isfinite(loss):
                raise DivergenceError("key pretraining loss became non-finite")
            loss.backward()
            optimizer.step()
            epoch_loss += loss.item()
        history.append(epoch_loss / len(ts))

    key.requires_grad_(False)
    return key, history


def key_fit_mse(key: KeyModule, cfg: PEConfig, timestamps) -> float:
    """Mean MSE between the key mask and the raw embedding over a grid."""
    ts = _as_timestamp_tensor(np.asarray(timestamps, dtype=np.float64), dtype=torch.float32)
    with torch.no_grad():
        return torch.mean((key(ts) - positional_encode(ts, cfg)) ** 2).item()


def save_key(key: KeyModule, path) -> None:
    """NVKEY container: PE config, mode, and all parameters as f32 blobs."""
    meta = {"pe": {"b": key.cfg.b, "l": key.cfg.l}, "mode": key.mode}
    tensors = [
        ({"name": name}, param.detach().numpy().astype(np.float32))
        for name, param in key.state_dict().items()
    ]
    write_container(path, KEY_MAGIC, KEY_FORMAT_VERSION, meta, tensors)


def load_key(path) -> KeyModule:
    _, meta, tensors = read_container(path, KEY_MAGIC, KEY_FORMAT_VERSION)
    cfg = PEConfig(b=meta["pe"]["b"], l=meta["pe"]["l"])
    key = KeyModule(cfg, mode=meta["mode"])
    key.load_state_dict({name: torch.from_numpy(arr.copy()) for name, arr in tensors.items()})
    if key.mode == MODE_FAE:
        key.requires_grad_(False)
    return key
