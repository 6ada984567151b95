"""Cipher-quality statistics and the noise-substitution attack harness.

Correlation uses the whole-frame mean in both factors of the normalized
sum, evaluated over adjacent pixel pairs in the horizontal, vertical, or
diagonal direction. Entropy is the 256-bin empirical Shannon entropy in
bits. The attack harness replaces the key mask with random noise (one
fresh draw per timestamp) and measures how badly the decode degrades.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import ConfigError, DegenerateFrame, FrameTooSmall
from .frame_io import FrameSequence
from .key import positional_encode
from .model import NervModel
from .training import QualityReport, ms_ssim, psnr, ssim

# Reference statistics reported for the original 720p evaluation frame;
# carried as documentation constants for report footers, never asserted.
REFERENCE_PLAIN = {"horizontal": 0.9897, "vertical": 0.9942, "diagonal": 0.9819, "entropy": 7.625}
REFERENCE_ENCRYPTED = {"horizontal": 0.8934, "vertical": 0.8512, "diagonal": 0.7839, "entropy": 5.033}

_OFFSETS = {"horizontal": (0, 1), "vertical": (1, 0), "diagonal": (1, 1)}

NOISE_KINDS = ("gaussian", "uniform", "bernoulli", "truncated_normal")


@dataclass(frozen=True)
class NoiseSpec:
    kind: str
    param: float = 0.0  # sigma for truncated_normal; unused otherwise
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ConfigError(f"unknown noise kind {self.kind!r}")
        if self.kind == "truncated_normal" and self.param <= 0:
            raise ConfigError("truncated_normal needs a positive sigma")


@dataclass(frozen=True)
class CorrelationReport:
    horizontal: float
    vertical: float
    diagonal: float
    entropy: float
    pair_samples: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "horizontal": self.horizontal,
                "vertical": self.vertical,
                "diagonal": self.diagonal,
                "entropy": self.entropy,
                "pair_samples": {k: [list(p) for p in v] for k, v in self.pair_samples.items()},
                "reference_plain": REFERENCE_PLAIN,
                "reference_encrypted": REFERENCE_ENCRYPTED,
            }
        )


def _shifted_pair(gray: np.ndarray, direction: str) -> tuple[np.ndarray, np.ndarray]:
    if direction not in _OFFSETS:
        raise ConfigError(f"unknown direction {direction!r}")
    di, dj = _OFFSETS[direction]
    h, w = gray.shape
    return gray[: h - di, : w - dj], gray[di:, dj:]


def correlation_coefficient(gray: np.ndarray, direction: str) -> float:
    """Adjacent-pixel correlation with the whole-frame mean in both factors."""
    gray = np.asarray(gray, dtype=np.float64)
    if gray.ndim != 2 or gray.shape[0] < 2 or gray.shape[1] < 2:
        raise FrameTooSmall(f"need at least 2x2 pixels, got {gray.shape}")
    a, b = _shifted_pair(gray, direction)
    mean = gray.mean()
    da, db = a - mean, b - mean
    denom = np.sqrt(np.sum(da * da) * np.sum(db * db))
    if denom == 0.0:
        raise DegenerateFrame("correlation undefined for a constant frame")
    return float(np.sum(da * db) / denom)


def histogram(gray: np.ndarray) -> np.ndarray:
    """256-bin pixel-value counts; sums to H*W."""
    return np.bincount(np.asarray(gray, dtype=np.uint8).ravel(), minlength=256)


def entropy(gray: np.ndarray) -> float:
    """Empirical Shannon entropy of the 256-bin histogram, in bits."""
    counts = histogram(gray)
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log2(p)))


def sample_adjacent_pairs(gray: np.ndarray, n: int = 600, direction: str = "horizontal", seed: int = 0):
    """n random (value, neighbor) pairs, sampled with replacement per seed."""
    gray = np.asarray(gray)
    a, b = _shifted_pair(gray, direction)
    if a.size == 0:
        raise FrameTooSmall(f"frame {gray.shape} too small for {direction} pairs")
    if n < 1:
        raise ConfigError(f"pair count must be positive, got {n}")
    rng = np.random.default_rng(seed)
    rows = rng.integers(0, a.shape[0], size=n)
    cols = rng.integers(0, a.shape[1], size=n)
    return [(int(a[i, j]), int(b[i, j])) for i, j in zip(rows, cols)]


def analyze_frame(gray: np.ndarray, n_pairs: int = 600, seed: int = 0) -> CorrelationReport:
    """Full statistics bundle for one grayscale frame."""
    return CorrelationReport(
        horizontal=correlation_coefficient(gray, "horizontal"),
        vertical=correlation_coefficient(gray, "vertical"),
        diagonal=correlation_coefficient(gray, "diagonal"),
        entropy=entropy(gray),
        pair_samples={
            d: sample_adjacent_pairs(gray, n_pairs, d, seed) for d in _OFFSETS
        },
    )


def generate_noise_mask(spec: NoiseSpec, length: int, seed: int | None = None) -> np.ndarray:
    """Random mask substituting for the key mask; deterministic per seed."""
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    if spec.kind == "gaussian":
        return rng.standard_normal(length)
    if spec.kind == "uniform":
        return rng.uniform(-1.0, 1.0, size=length)
    if spec.kind == "bernoulli":
        return rng.integers(0, 2, size=length).astype(np.float64)
    # truncated_normal: N(0, sigma^2) rejection-sampled into [-1, 1]
    out = np.empty(length)
    filled = 0
    while filled < length:
        draw = rng.normal(0.0, spec.param, size=length)
        keep = draw[(draw >= -1.0) & (draw <= 1.0)]
        take = min(len(keep), length - filled)
        out[filled : filled + take] = keep[:take]
        filled += take
    return out


def decrypt_without_key(model: NervModel, t) -> torch.Tensor:
    """Keyless decode: the raw sinusoidal embedding, no mask."""
    with torch.no_grad():
        return model(positional_encode(t, model.config.pe))


def noise_attack(model: NervModel, frames: FrameSequence, spec: NoiseSpec) -> QualityReport:
    """Decode every frame with a fresh noise mask in place of the key mask.

    Per-timestamp masks are seeded with ``spec.seed XOR frame_index`` so
    parallel and serial evaluation orders agree. Returns PSNR/SSIM/MS-SSIM
    averaged over timestamps against the plaintext frames.
    """
    cfg = model.config.pe
    psnrs, ssims, ms_ssims = [], [], []
    with torch.no_grad():
        for i, (t, target) in enumerate(zip(frames.timestamps, frames.frames)):
            mask = generate_noise_mask(spec, cfg.embedding_length, seed=spec.seed ^ i)
            embedding = torch.from_numpy(mask).float() * positional_encode(float(t), cfg)
            pred = model(embedding)
            target_t = torch.from_numpy(target.copy())
            psnrs.append(psnr(pred, target_t))
            ssims.append(float(ssim(pred, target_t).item()))
            ms_ssims.append(float(ms_ssim(pred, target_t).item()))
    return QualityReport(
        psnr=float(np.mean(psnrs)),
        ssim=float(np.mean(ssims)),
        ms_ssim=float(np.mean(ms_ssims)),
    )


def keyless_report(model: NervModel, frames: FrameSequence) -> QualityReport:
    """Quality of the adversary's keyless decode, averaged over timestamps."""
    psnrs, ssims, ms_ssims = [], [], []
    for t, target in zip(frames.timestamps, frames.frames):
        pred = decrypt_without_key(model, float(t))
        target_t = torch.from_numpy(target.copy())
        psnrs.append(psnr(pred, target_t))
        ssims.append(float(ssim(pred, target_t).item()))
        ms_ssims.append(float(ms_ssim(pred, target_t).item()))
    return QualityReport(
        psnr=float(np.mean(psnrs)),
        ssim=float(np.mean(ssims)),
        ms_ssim=float(np.mean(ms_ssims)),
    )
