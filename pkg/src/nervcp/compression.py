"""Model compression: global magnitude pruning, min-max quantization, BPP.

Pruning pools |theta| over every trainable tensor, zeroes everything below
the sparsity quantile, and records per-tensor masks so fine-tuning can pin
pruned positions at zero. Quantization is per-tensor post-hoc min-max with
scale S = (max - min) / 2^bit and codes clamped to [0, 2^bit - 1].
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConfigError, NonFiniteInput, ZeroPixels
from .frame_io import FrameSequence
from .key import KeyModule
from .model import NervModel
from .training import TrainConfig, train_video


@dataclass(frozen=True)
class PruneSpec:
    sparsity: float
    threshold: float
    masks: dict  # tensor name -> bool array, True where the weight survives


@dataclass(frozen=True)
class QuantizedTensor:
    q: np.ndarray  # integer codes in [0, 2^bit - 1]
    mu_min: float
    mu_max: float
    bit: int

    @property
    def scale(self) -> float:
        return (self.mu_max - self.mu_min) / float(2 ** self.bit)


@dataclass(frozen=True)
class CompressionReport:
    p_theta: int
    sparsity: float
    qb: int
    n_pixel: int
    bpp: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "p_theta": self.p_theta,
                "sparsity": self.sparsity,
                "qb": self.qb,
                "n_pixel": self.n_pixel,
                "bpp": self.bpp,
            }
        )


def prune_global(model: NervModel, sparsity: float) -> tuple[NervModel, PruneSpec]:
    """Zero the smallest-magnitude ``sparsity`` fraction of all parameters.

    The threshold is the global quantile of |theta|; values exactly at the
    threshold are kept. Returns a pruned copy and the surviving-weight masks.
    """
    if not 0.0 <= sparsity <= 1.0:
        raise ConfigError(f"sparsity must be in [0, 1], got {sparsity}")
    model = copy.deepcopy(model)
    state = model.state_dict()
    if sparsity == 0.0:
        return model, PruneSpec(sparsity=0.0, threshold=0.0, masks={})

    magnitudes = torch.cat([p.abs().flatten() for p in state.values()])
    total = magnitudes.numel()
    k = int(round(sparsity * total))
    if k >= total:
        threshold = float("inf")
    else:
        # (k+1)-th smallest magnitude; zeroing strictly-below leaves k zeros.
        threshold = torch.kthvalue(magnitudes, k + 1).values.item()

    masks = {}
    with torch.no_grad():
        for name, param in state.items():
            keep = param.abs() >= threshold
            param.mul_(keep)
            masks[name] = keep.numpy().copy()
    return model, PruneSpec(sparsity=sparsity, threshold=threshold, masks=masks)


def finetune_pruned(
    model: NervModel,
    spec: PruneSpec,
    frames: FrameSequence,
    key: KeyModule,
    cfg: TrainConfig,
    out_dir=None,
) -> tuple[NervModel, list[float]]:
    """Retrain a pruned model with pruned positions pinned at zero."""
    masks = {
        name: torch.from_numpy(np.ascontiguousarray(mask))
        for name, mask in spec.masks.items()
    }

    def pin(trained):
        with torch.no_grad():
            for name, param in trained.state_dict().items():
                if name in masks:
                    param.mul_(masks[name])

    return train_video(frames, key, model, cfg, out_dir=out_dir, post_step=pin)


def quantize_tensor(values: np.ndarray, bit: int) -> QuantizedTensor:
    """Per-tensor min-max quantization to ``bit``-wide integer codes."""
    if not 1 <= bit <= 16:
        raise ConfigError(f"bit width must be in [1, 16], got {bit}")
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise NonFiniteInput("cannot quantize non-finite values")
    mu_min = float(values.min())
    mu_max = float(values.max())
    dtype = np.uint8 if bit <= 8 else np.uint16
    scale = (mu_max - mu_min) / float(2 ** bit)
    if scale == 0.0:
        q = np.zeros(values.shape, dtype=dtype)
    else:
        q = np.clip(np.rint((values - mu_min) / scale), 0, 2 ** bit - 1).astype(dtype)
    return QuantizedTensor(q=q, mu_min=mu_min, mu_max=mu_max, bit=bit)


def dequantize_tensor(qt: QuantizedTensor) -> np.ndarray:
    """Reconstruction q * S + mu_min."""
    return qt.q.astype(np.float64) * qt.scale + qt.mu_min


def quantize_model(model: NervModel, bit: int) -> dict[str, QuantizedTensor]:
    """Quantize every tensor in the state dict (weights and biases alike)."""
    return {
        name: quantize_tensor(param.detach().numpy(), bit)
        for name, param in model.state_dict().items()
    }


def dequantize_model(model: NervModel, quantized: dict[str, QuantizedTensor]) -> NervModel:
    """A copy of ``model`` with parameters replaced by their dequantization."""
    model = copy.deepcopy(model)
    state = {
        name: torch.from_numpy(dequantize_tensor(qt).astype(np.float32))
        for name, qt in quantized.items()
    }
    model.load_state_dict(state)
    return model


def bpp(p_theta: int, sparsity: float, qb: int, n_pixel: int) -> float:
    """Bits per pixel of the transmitted model: P * sparsity * QB / N_pixel."""
    if n_pixel <= 0:
        raise ZeroPixels(f"pixel count must be positive, got {n_pixel}")
    if p_theta < 0 or qb <= 0 or not 0.0 <= sparsity <= 1.0:
        raise ConfigError("bpp inputs out of range")
    return p_theta * sparsity * qb / n_pixel


def compression_report(model: NervModel, sparsity: float, qb: int, n_pixel: int) -> CompressionReport:
    p_theta = model.parameter_count
    return CompressionReport(
        p_theta=p_theta,
        sparsity=sparsity,
        qb=qb,
        n_pixel=n_pixel,
        bpp=bpp(p_theta, sparsity, qb, n_pixel),
    )
