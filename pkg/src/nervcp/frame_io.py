"""Frame ingestion and pixel-format utilities.

Frames live in memory channel-last as float32 ``(H, W, 3)`` arrays in
``[0, 1]``. A video is a :class:`FrameSequence`: an ordered stack of frames
plus the normalized timestamp grid ``i/T`` for ``i = 1..T``.
"""

from __future__ import annotations

import os

from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DecodeError, InvalidCount, MissingInput, ShapeMismatch

_IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")

# BT.601 luma weights, the conventional choice for 8-bit analysis.
_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float64)


@dataclass(frozen=True)
class FrameSequence:
    """Immutable stack of normalized frames with their timestamp grid."""

    frames: np.ndarray  # (T, H, W, 3) float32 in [0, 1]
    timestamps: np.ndarray  # (T,) float64, strictly increasing, last == 1.0

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.shape[-1] != 3:
            raise ShapeMismatch(f"expected (T, H, W, 3) frames, got {self.frames.shape}")
        if len(self.frames) != len(self.timestamps):
            raise ShapeMismatch("frame count does not match timestamp count")
        self.frames.setflags(write=False)
        self.timestamps.setflags(write=False)

    @property
    def frame_count(self) -> int:
        return self.frames.shape[0]

    @property
    def resolution(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]


def normalize_timestamps(frame_count: int) -> np.ndarray:
    """Timestamp grid i/T for i = 1..T; strictly increasing inside (0, 1]."""
    if frame_count <= 0:
        raise InvalidCount(f"frame count must be positive, got {frame_count}")
    return np.arange(1, frame_count + 1, dtype=np.float64) / frame_count


def to_grayscale(frame: np.ndarray) -> np.ndarray:
    """BT.601 luma of an RGB frame, rounded to uint8 in [0, 255]."""
    gray = np.tensordot(frame.astype(np.float64), _LUMA, axes=([-1], [0]))
    return np.clip(np.rint(255.0 * gray), 0, 255).astype(np.uint8)


def load_frames(source_path, target_resolution=None) -> FrameSequence:
    """Load a video from a directory of PNG/JPEG frames or a single Y4M file.

    Frames are ordered lexicographically by filename, resized bilinearly to
    ``target_resolution=(H, W)`` when given, and scaled to [0, 1].
    """
    source_path = os.fspath(source_path)
    if os.path.isdir(source_path):
        raw = _load_image_dir(source_path)
    elif os.path.isfile(source_path) and source_path.lower().endswith(".y4m"):
        raw = _load_y4m(source_path)
    elif os.path.exists(source_path):
        raise MissingInput(f"unsupported input (expected frame directory or .y4m): {source_path}")
    else:
        raise MissingInput(f"no such path: {source_path}")

    if target_resolution is not None:
        raw = [_resize_bilinear(f, target_resolution) for f in raw]
    shapes = {f.shape for f in raw}
    if len(shapes) > 1:
        raise ShapeMismatch(f"frames have differing sizes {sorted(shapes)} and no target_resolution was given")

    frames = np.stack(raw).astype(np.float32) / 255.0
    return FrameSequence(frames=frames, timestamps=normalize_timestamps(len(raw)))


def save_frames(sequence: FrameSequence, out_dir) -> list[str]:
    """Write frames as zero-padded frame_%05d.png (numbered from 1)."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for i, frame in enumerate(sequence.frames, start=1):
        path = os.path.join(out_dir, f"frame_{i:05d}.png")
        pixels = np.clip(np.rint(frame * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(pixels, mode="RGB").save(path)
        paths.append(path)
    return paths


def _load_image_dir(path: str) -> list[np.ndarray]:
    names = sorted(n for n in os.listdir(path) if n.lower().endswith(_IMAGE_EXTENSIONS))
    if not names:
        raise MissingInput(f"no PNG/JPEG frames in {path}")
    frames = []
    for name in names:
        try:
            with Image.open(os.path.join(path, name)) as img:
                frames.append(np.asarray(img.convert("RGB"), dtype=np.uint8))
        except (UnidentifiedImageError, OSError) as exc:
            raise DecodeError(f"cannot decode frame {name}: {exc}") from exc
    return frames


def _resize_bilinear(frame: np.ndarray, target_resolution) -> np.ndarray:
    height, width = target_resolution
    if frame.shape[:2] == (height, width):
        return frame
    img = Image.fromarray(frame, mode="RGB").resize((width, height), Image.BILINEAR)
    return np.asarray(img, dtype=np.uint8)


def _load_y4m(path: str) -> list[np.ndarray]:
    """Minimal uncompressed Y4M reader (C420* and C444 color modes)."""
    with open(path, "rb") as fh:
        data = fh.read()
    newline = data.find(b"\x0a")
    if newline < 0 or not data.startswith(b"YUV4MPEG2"):
        raise DecodeError(f"not a Y4M stream: {path}")
    header = data[:newline].decode("ascii", errors="replace")
    width = height = None
    colorspace = "420"
    for token in header.split()[1:]:
        if token.startswith("W"):
            width = int(token[1:])
        elif token.startswith("H"):
            height = int(token[1:])
        elif token.startswith("C"):
            colorspace = token[1:]
    if not width or not height:
        raise DecodeError(f"Y4M header missing dimensions: {header!r}")
    if colorspace.startswith("420"):
        subsample = 2
    elif colorspace.startswith("444"):
        subsample = 1
    else:
        raise DecodeError(f"unsupported Y4M colorspace C{colorspace}")

    y_size = width * height
    c_size = (width // subsample) * (height // subsample)
    frame_bytes = y_size + 2 * c_size
    frames = []
    pos = newline + 1
    while pos < len(data):
        frame_newline = data.find(b"\x0a", pos)
        if frame_newline < 0 or not data[pos:frame_newline].startswith(b"FRAME"):
            raise DecodeError(f"corrupt Y4M frame marker at byte {pos}")
        start = frame_newline + 1
        end = start + frame_bytes
        if end > len(data):
            raise DecodeError("truncated Y4M frame payload")
        frames.append(_yuv_to_rgb(data[start:end], width, height, subsample))
        pos = end
    if not frames:
        raise MissingInput(f"Y4M stream has no frames: {path}")
    return frames


def _yuv_to_rgb(payload: bytes, width: int, height: int, subsample: int) -> np.ndarray:
    y_size = width * height
    cw, ch = width // subsample, height // subsample
    y = np.frombuffer(payload, dtype=np.uint8, count=y_size).reshape(height, width)
    u = np.frombuffer(payload, dtype=np.uint8, count=cw * ch, offset=y_size).reshape(ch, cw)
    v = np.frombuffer(payload, dtype=np.uint8, count=cw * ch, offset=y_size + cw * ch).reshape(ch, cw)
    if subsample > 1:
        u = np.repeat(np.repeat(u, subsample, axis=0), subsample, axis=1)
        v = np.repeat(np.repeat(v, subsample, axis=0), subsample, axis=1)
    # BT.601 full-range reconstruction.
    yf = y.astype(np.float64)
    uf = u.astype(np.float64) - 128.0
    vf = v.astype(np.float64) - 128.0
    rgb = np.stack(
        [yf + 1.402 * vf, yf - 0.344136 * uf - 0.714136 * vf, yf + 1.772 * uf],
        axis=-1,
    )
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)
