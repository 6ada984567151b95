"""Loss, quality metrics, and the video-overfitting ("encryption") loop.

The loss is alpha * L1 + (1 - alpha) * (1 - SSIM) with single-scale SSIM;
evaluation additionally reports PSNR and MS-SSIM. All metric code operates
on channel-last frames in [0, 1] and is differentiable where training
needs it to be.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np
import torch
from torch.nn import functional as F

from .errors import ConfigMismatch, DivergenceError, ShapeMismatch
from .frame_io import FrameSequence
from .key import MODE_FAE, MODE_LAE, KeyModule, key_embed, positional_encode
from .model import NervModel, save_model

PSNR_CAP_DB = 99.0

_SSIM_K1 = 0.01
_SSIM_K2 = 0.03
_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5

# Standard five-scale MS-SSIM weights.
_MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)

# Five halvings of an 11-window SSIM need at least this much resolution.
_MS_SSIM_MIN_SIDE = 176


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int = 1
    lr: float = 5e-4
    alpha: float = 0.7
    seed: int = 0
    key_mode: str = MODE_FAE
    checkpoint_every: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.key_mode not in (MODE_FAE, MODE_LAE):
            raise ValueError(f"unknown key mode {self.key_mode!r}")


@dataclass(frozen=True)
class QualityReport:
    psnr: float
    ssim: float
    ms_ssim: float


def _to_nchw(frame: torch.Tensor) -> torch.Tensor:
    if frame.ndim == 3:
        frame = frame[None]
    return frame.permute(0, 3, 1, 2)


def _gaussian_window(size: int, sigma: float, channels: int, dtype, device) -> torch.Tensor:
    coords = torch.arange(size, dtype=dtype, device=device) - (size - 1) / 2.0
    g = torch.exp(-(coords ** 2) / (2 * sigma ** 2))
    g = g / g.sum()
    window = g[:, None] * g[None, :]
    return window.expand(channels, 1, size, size).contiguous()


def _ssim_parts(pred: torch.Tensor, gt: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Mean SSIM and mean contrast-structure term of two NCHW tensors."""
    channels = pred.shape[1]
    size = min(_SSIM_WINDOW, pred.shape[2], pred.shape[3])
    if size % 2 == 0:
        size -= 1
    window = _gaussian_window(size, _SSIM_SIGMA, channels, pred.dtype, pred.device)

    mu_p = F.conv2d(pred, window, groups=channels)
    mu_g = F.conv2d(gt, window, groups=channels)
    mu_pp, mu_gg, mu_pg = mu_p * mu_p, mu_g * mu_g, mu_p * mu_g
    var_p = F.conv2d(pred * pred, window, groups=channels) - mu_pp
    var_g = F.conv2d(gt * gt, window, groups=channels) - mu_gg
    cov = F.conv2d(pred * gt, window, groups=channels) - mu_pg

    c1 = _SSIM_K1 ** 2  # data range is 1.0
    c2 = _SSIM_K2 ** 2
    cs = (2 * cov + c2) / (var_p + var_g + c2)
    ssim_map = ((2 * mu_pg + c1) / (mu_pp + mu_gg + c1)) * cs
    return ssim_map.mean(), cs.mean()


def _as_tensor(x, dtype=None):
    if isinstance(x, np.ndarray) and not x.flags.writeable:
        x = x.copy()
    return torch.as_tensor(x, dtype=dtype)


def _check_pair(pred, gt) -> tuple[torch.Tensor, torch.Tensor]:
    pred = _as_tensor(pred)
    gt = _as_tensor(gt, dtype=pred.dtype)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"frame shapes differ: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    return pred, gt


def ssim(pred, gt) -> torch.Tensor:
    """Single-scale SSIM (11x11 Gaussian window, sigma 1.5, data range 1)."""
    pred, gt = _check_pair(pred, gt)
    value, _ = _ssim_parts(_to_nchw(pred), _to_nchw(gt))
    return value


def ms_ssim(pred, gt) -> torch.Tensor:
    """Five-scale MS-SSIM; falls back to SSIM below 176px on the short side."""
    pred, gt = _check_pair(pred, gt)
    p, g = _to_nchw(pred), _to_nchw(gt)
    if min(p.shape[2], p.shape[3]) < _MS_SSIM_MIN_SIDE:
        return ssim(pred, gt)
    weights = torch.tensor(_MS_SSIM_WEIGHTS, dtype=p.dtype, device=p.device)
    values = []
    for i in range(len(_MS_SSIM_WEIGHTS)):
        s, cs = _ssim_parts(p, g)
        values.append(s if i == len(_MS_SSIM_WEIGHTS) - 1 else cs)
        if i < len(_MS_SSIM_WEIGHTS) - 1:
            p = F.avg_pool2d(p, kernel_size=2)
            g = F.avg_pool2d(g, kernel_size=2)
    stacked = torch.stack(values).clamp(min=1e-8)
    return torch.prod(stacked ** weights)


def psnr(pred, gt) -> float:
    """10*log10(1/MSE) in dB, capped at 99 for near-identical frames."""
    pred, gt = _check_pair(pred, gt)
    mse = torch.mean((pred.double() - gt.double()) ** 2).item()
    if mse < 1e-10:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB)


def composite_loss(pred, gt, alpha: float = 0.7) -> torch.Tensor:
    """alpha * mean|pred - gt| + (1 - alpha) * (1 - SSIM(pred, gt))."""
    pred, gt = _check_pair(pred, gt)
    l1 = torch.mean(torch.abs(pred - gt))
    return alpha * l1 + (1.0 - alpha) * (1.0 - ssim(pred, gt))


def quality_metrics(pred, gt) -> QualityReport:
    pred, gt = _check_pair(pred, gt)
    return QualityReport(
        psnr=psnr(pred, gt),
        ssim=float(ssim(pred, gt).item()),
        ms_ssim=float(ms_ssim(pred, gt).item()),
    )


def decode_with_key(model: NervModel, key: KeyModule, timestamps) -> torch.Tensor:
    """Render frames through the keyed path; (T, H, W, 3) in [0, 1]."""
    with torch.no_grad():
        ts = np.atleast_1d(np.asarray(timestamps, dtype=np.float64))
        embeddings = key_embed(torch.from_numpy(ts.copy()).float(), key, model.config.pe)
        return model(embeddings)


def train_video(
    frames: FrameSequence,
    key: KeyModule,
    model: NervModel,
    cfg: TrainConfig,
    out_dir=None,
    post_step=None,
) -> tuple[NervModel, list[float]]:
    """Overfit the model to the video through the key path.

    FAE freezes the key module; LAE co-trains it. Per-epoch mean loss is
    returned. With ``out_dir`` set and ``checkpoint_every > 0``, periodic
    checkpoints and an ``epoch,loss,psnr`` CSV are written there.
    ``post_step(model)`` runs after every optimizer step (used by pruning
    fine-tune to pin zeroed weights).
    """
    if key.cfg.embedding_length != model.config.pe.embedding_length:
        raise ConfigMismatch("key embedding length does not match model PE config")
    if frames.resolution != model.config.target_resolution:
        raise ConfigMismatch(
            f"video resolution {frames.resolution} does not match "
            f"model target {model.config.target_resolution}"
        )

    targets = torch.from_numpy(frames.frames.copy())
    ts = torch.from_numpy(frames.timestamps.copy()).float()
    pe = positional_encode(ts, model.config.pe)

    train_key = cfg.key_mode == MODE_LAE
    key.requires_grad_(train_key)
    params = list(model.parameters()) + (list(key.parameters()) if train_key else [])
    optimizer = torch.optim.Adam(params, lr=cfg.lr, betas=(0.9, 0.999))

    csv_path = os.path.join(out_dir, "loss_history.csv") if out_dir else None
    if csv_path and not os.path.exists(csv_path):
        with open(csv_path, "w", newline="") as fh:
            csv.writer(fh).writerow(["epoch", "loss", "psnr"])

    history = []
    n = len(ts)
    batch = max(1, cfg.batch_size)
    for epoch in range(cfg.epochs):
        epoch_loss = 0.0
        epoch_mse = 0.0
        for start in range(0, n, batch):
            idx = slice(start, min(start + batch, n))
            optimizer.zero_grad()
            if train_key:
                embeddings = key(ts[idx]) * pe[idx]
            else:
                with torch.no_grad():
                    embeddings = key(ts[idx]) * pe[idx]
            pred = model(embeddings)
            loss = composite_loss(pred, targets[idx], cfg.alpha)
            if not torch.isfinite(loss):
                raise DivergenceError(f"training loss became non-finite at epoch {epoch}")
            loss.backward()
            optimizer.step()
            if post_step is not None:
                post_step(model)
            weight = idx.stop - idx.start
            epoch_loss += loss.item() * weight
            epoch_mse += torch.mean((pred.detach() - targets[idx]) ** 2).item() * weight
        history.append(epoch_loss / n)

        if csv_path:
            mse = epoch_mse / n
            db = PSNR_CAP_DB if mse < 1e-10 else min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB)
            with open(csv_path, "a", newline="") as fh:
                csv.writer(fh).writerow([epoch + 1, f"{history[-1]:.6f}", f"{db:.3f}"])
        if out_dir and cfg.checkpoint_every > 0 and (epoch + 1) % cfg.checkpoint_every == 0:
            save_model(model, os.path.join(out_dir, f"checkpoint_{epoch + 1:05d}.nvcp"))

    return model, history
