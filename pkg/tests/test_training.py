import math

import numpy as np
import pytest
import torch

from nervcp.errors import ConfigMismatch, ShapeMismatch
from nervcp.frame_io import FrameSequence, normalize_timestamps
from nervcp.key import MODE_LAE, PEConfig, new_key_module
from nervcp.model import ModelConfig, build_model
from nervcp.training import (
    PSNR_CAP_DB,
    TrainConfig,
    composite_loss,
    decode_with_key,
    ms_ssim,
    psnr,
    quality_metrics,
    ssim,
    train_video,
)


def _np_ssim(pred: np.ndarray, gt: np.ndarray, size: int = 11, sigma: float = 1.5) -> float:
    """Independent SSIM reference: explicit Gaussian filtering per channel in numpy."""
    coords = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(coords ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    window = np.outer(g, g)

    def filt(img):
        h, w = img.shape
        out = np.empty((h - size + 1, w - size + 1))
        for i in range(out.shape[0]):
            for j in range(out.shape[1]):
                out[i, j] = np.sum(img[i:i + size, j:j + size] * window)
        return out

    c1, c2 = 0.01 ** 2, 0.03 ** 2
    vals = []
    for c in range(pred.shape[2]):
        p, q = pred[:, :, c].astype(np.float64), gt[:, :, c].astype(np.float64)
        mp, mq = filt(p), filt(q)
        vp = filt(p * p) - mp * mp
        vq = filt(q * q) - mq * mq
        cov = filt(p * q) - mp * mq
        s = ((2 * mp * mq + c1) * (2 * cov + c2)) / ((mp ** 2 + mq ** 2 + c1) * (vp + vq + c2))
        vals.append(s.mean())
    return float(np.mean(vals))


class TestMetrics:
    def test_psnr_hand_values(self):
        a = np.zeros((4, 4, 3), dtype=np.float32)
        b = np.full((4, 4, 3), 0.5, dtype=np.float32)
        # MSE = 0.25 -> 10*log10(4) dB
        assert psnr(a, b) == pytest.approx(10 * math.log10(4), abs=1e-6)
        assert psnr(a, a) == PSNR_CAP_DB

    def test_psnr_uniform_error(self):
        rng = np.random.default_rng(0)
        gt = rng.uniform(0.2, 0.8, size=(8, 8, 3)).astype(np.float32)
        pred = gt + 0.1
        assert psnr(pred, gt) == pytest.approx(20.0, abs=1e-4)

    def test_ssim_identity_is_one(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(size=(32, 32, 3)).astype(np.float32)
        assert float(ssim(x, x)) == pytest.approx(1.0, abs=1e-6)

    def test_ssim_matches_numpy_reference(self):
        rng = np.random.default_rng(2)
        gt = rng.uniform(size=(24, 30, 3)).astype(np.float32)
        pred = np.clip(gt + rng.normal(0, 0.1, gt.shape), 0, 1).astype(np.float32)
        assert float(ssim(pred, gt)) == pytest.approx(_np_ssim(pred, gt), abs=1e-5)

    def test_ssim_small_frame_window_shrinks(self):
        rng = np.random.default_rng(3)
        gt = rng.uniform(size=(5, 7, 3)).astype(np.float32)
        pred = np.clip(gt + 0.05, 0, 1).astype(np.float32)
        got = float(ssim(pred, gt))
        assert got == pytest.approx(_np_ssim(pred, gt, size=5), abs=1e-5)

    def test_ssim_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            ssim(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))

    def test_ms_ssim_small_falls_back_to_ssim(self):
        rng = np.random.default_rng(4)
        gt = rng.uniform(size=(64, 64, 3)).astype(np.float32)
        pred = np.clip(gt + rng.normal(0, 0.05, gt.shape), 0, 1).astype(np.float32)
        assert float(ms_ssim(pred, gt)) == pytest.approx(float(ssim(pred, gt)), abs=1e-7)

    def test_ms_ssim_large_identity(self):
        x = np.random.default_rng(5).uniform(size=(192, 192, 3)).astype(np.float32)
        assert float(ms_ssim(x, x)) == pytest.approx(1.0, abs=1e-5)

    def test_ms_ssim_ranks_degradation(self):
        rng = np.random.default_rng(6)
        gt = rng.uniform(size=(192, 192, 3)).astype(np.float32)
        mild = np.clip(gt + rng.normal(0, 0.02, gt.shape), 0, 1).astype(np.float32)
        harsh = np.clip(gt + rng.normal(0, 0.3, gt.shape), 0, 1).astype(np.float32)
        assert float(ms_ssim(mild, gt)) > float(ms_ssim(harsh, gt))

    def test_quality_report_fields(self):
        x = np.random.default_rng(7).uniform(size=(16, 16, 3)).astype(np.float32)
        rep = quality_metrics(x, x)
        assert rep.psnr == PSNR_CAP_DB
        assert rep.ssim == pytest.approx(1.0, abs=1e-6)
        assert rep.ms_ssim == pytest.approx(1.0, abs=1e-6)


class TestCompositeLoss:
    def test_hand_value_constant_frames(self):
        a = np.full((16, 16, 3), 0.3)
        b = np.full((16, 16, 3), 0.5)
        # L1 = 0.2 exactly. SSIM of two constant frames:
        # (2*0.15 + 1e-4) / (0.09 + 0.25 + 1e-4) since all variances vanish.
        s = (2 * 0.3 * 0.5 + 1e-4) / (0.3 ** 2 + 0.5 ** 2 + 1e-4)
        expect = 0.7 * 0.2 + 0.3 * (1 - s)
        assert float(composite_loss(a, b, alpha=0.7)) == pytest.approx(expect, abs=1e-9)

    def test_alpha_extremes(self):
        rng = np.random.default_rng(8)
        gt = rng.uniform(size=(16, 16, 3)).astype(np.float32)
        pred = np.clip(gt + rng.normal(0, 0.1, gt.shape), 0, 1).astype(np.float32)
        l1 = float(np.mean(np.abs(pred - gt)))
        assert float(composite_loss(pred, gt, alpha=1.0)) == pytest.approx(l1, abs=1e-6)
        assert float(composite_loss(pred, gt, alpha=0.0)) == pytest.approx(
            1 - float(ssim(pred, gt)), abs=1e-6)

    def test_zero_at_identity(self):
        x = np.random.default_rng(9).uniform(size=(16, 16, 3)).astype(np.float32)
        assert float(composite_loss(x, x)) == pytest.approx(0.0, abs=1e-6)

    def test_gradient_matches_finite_differences(self):
        torch.manual_seed(0)
        gt = torch.rand(13, 14, 3, dtype=torch.float64)
        pred = torch.rand(13, 14, 3, dtype=torch.float64, requires_grad=True)
        loss = composite_loss(pred, gt, alpha=0.7)
        loss.backward()
        eps = 1e-6
        rng = np.random.default_rng(10)
        for _ in range(12):
            i, j, c = rng.integers(13), rng.integers(14), rng.integers(3)
            plus = pred.detach().clone()
            minus = pred.detach().clone()
            plus[i, j, c] += eps
            minus[i, j, c] -= eps
            fd = (float(composite_loss(plus, gt, 0.7)) - float(composite_loss(minus, gt, 0.7))) / (2 * eps)
            assert pred.grad[i, j, c].item() == pytest.approx(fd, abs=1e-5)


def _tiny_setup(frame_count=2):
    cfg = ModelConfig(c1=4, c2=8, upscale_factors=(2, 2), base_grid=(3, 4),
                      min_channels=4, pe=PEConfig(l=6), mlp_hidden=16)
    rng = np.random.default_rng(0)
    frames = FrameSequence(
        frames=rng.uniform(size=(frame_count, 12, 16, 3)).astype(np.float32),
        timestamps=normalize_timestamps(frame_count),
    )
    key = new_key_module(cfg.pe, seed=1)
    model = build_model(cfg, seed=2)
    return frames, key, model, cfg


class TestTrainVideo:
    def test_loss_decreases(self):
        frames, key, model, _ = _tiny_setup()
        _, history = train_video(frames, key, model, TrainConfig(epochs=40, lr=5e-4))
        assert len(history) == 40
        assert history[-1] < history[0]

    def test_frozen_key_is_bit_identical(self):
        frames, key, model, _ = _tiny_setup()
        before = {k: v.clone() for k, v in key.state_dict().items()}
        train_video(frames, key, model, TrainConfig(epochs=3))
        for name, value in key.state_dict().items():
            assert torch.equal(value, before[name])

    def test_cotrained_key_moves(self):
        frames, key, model, _ = _tiny_setup()
        before = {k: v.clone() for k, v in key.state_dict().items()}
        train_video(frames, key, model, TrainConfig(epochs=3, key_mode=MODE_LAE))
        moved = any(not torch.equal(v, before[k]) for k, v in key.state_dict().items())
        assert moved

    def test_mismatched_key_rejected(self):
        frames, _, model, _ = _tiny_setup()
        wrong = new_key_module(PEConfig(l=5), seed=0)
        with pytest.raises(ConfigMismatch):
            train_video(frames, wrong, model, TrainConfig(epochs=1))

    def test_mismatched_resolution_rejected(self):
        frames, key, model, cfg = _tiny_setup()
        small = FrameSequence(frames=frames.frames[:, :8, :8, :],
                              timestamps=frames.timestamps)
        with pytest.raises(ConfigMismatch):
            train_video(small, key, model, TrainConfig(epochs=1))

    def test_checkpoints_and_csv(self, tmp_path):
        frames, key, model, _ = _tiny_setup()
        out = tmp_path / "run"
        out.mkdir()
        train_video(frames, key, model,
                    TrainConfig(epochs=4, checkpoint_every=2), out_dir=str(out))
        assert (out / "checkpoint_00002.nvcp").exists()
        assert (out / "checkpoint_00004.nvcp").exists()
        lines = (out / "loss_history.csv").read_text().strip().splitlines()
        assert lines[0] == "epoch,loss,psnr"
        assert len(lines) == 5

    def test_training_is_deterministic(self):
        runs = []
        for _ in range(2):
            torch.manual_seed(0)
            frames, key, model, _ = _tiny_setup()
            trained, history = train_video(frames, key, model, TrainConfig(epochs=5))
            runs.append((history, {k: v.clone() for k, v in trained.state_dict().items()}))
        assert runs[0][0] == runs[1][0]
        for name in runs[0][1]:
            assert torch.equal(runs[0][1][name], runs[1][1][name])

    def test_two_frame_regression(self):
        # Small-scale end-to-end check: the keyed decode should approach the
        # training frames. Smooth gradients, not noise, so a tiny net can fit.
        frames, key, model, cfg = _tiny_setup()
        yy, xx = np.mgrid[0:12, 0:16].astype(np.float32)
        smooth = np.stack([
            np.stack([0.5 + 0.4 * np.sin(xx / 8 + 3 * t),
                      0.5 + 0.4 * np.cos(yy / 6 + 2 * t),
                      np.full_like(xx, 0.3 + 0.4 * t)], axis=-1)
            for t in frames.timestamps
        ]).astype(np.float32)
        frames = FrameSequence(frames=smooth, timestamps=frames.timestamps)
        trained, _ = train_video(frames, key, model, TrainConfig(epochs=300, lr=2e-3))
        decoded = decode_with_key(trained, key, frames.timestamps)
        assert decoded.shape == (2, 12, 16, 3)
        fit = psnr(decoded, torch.from_numpy(frames.frames.copy()))
        assert fit > 20.0

    def test_post_step_called(self):
        frames, key, model, _ = _tiny_setup()
        calls = []
        train_video(frames, key, model, TrainConfig(epochs=2),
                    post_step=lambda m: calls.append(m))
        assert len(calls) == 2 * len(frames.timestamps)
        assert all(m is model for m in calls)

    def test_bad_train_config(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=1, alpha=1.5)
        with pytest.raises(ValueError):
            TrainConfig(epochs=1, lr=0.0)
        with pytest.raises(ValueError):
            TrainConfig(epochs=1, key_mode="other")
