import numpy as np
import pytest
import torch

from nervcp.frame_io import FrameSequence, normalize_timestamps


def make_toy_video(frame_count=16, height=72, width=128, seed=0) -> FrameSequence:
    """Synthetic clip: moving color gradients plus a drifting textured patch."""
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.linspace(0, 1, height), np.linspace(0, 1, width), indexing="ij")
    texture = np.kron(rng.random((height // 8 + 1, width // 8 + 1)), np.ones((8, 8)))
    texture = texture[:height, :width]
    frames = []
    for i in range(frame_count):
        phase = i / frame_count
        red = 0.5 + 0.5 * np.sin(2 * np.pi * (xx + phase))
        green = 0.5 + 0.5 * np.cos(2 * np.pi * (yy - phase))
        blue = 0.3 + 0.4 * texture
        frame = np.stack([red, green, blue], axis=-1)
        cy = int((0.3 + 0.4 * phase) * height)
        cx = int((0.2 + 0.6 * phase) * width)
        patch = texture[cy % 16 : cy % 16 + 20, cx % 16 : cx % 16 + 28]
        frame[cy : cy + patch.shape[0], cx : cx + patch.shape[1], :] = patch[..., None]
        frames.append(np.clip(frame, 0.0, 1.0))
    return FrameSequence(
        frames=np.stack(frames).astype(np.float32),
        timestamps=normalize_timestamps(frame_count),
    )


@pytest.fixture(autouse=True)
def _fixed_torch_seed():
    torch.manual_seed(0)
