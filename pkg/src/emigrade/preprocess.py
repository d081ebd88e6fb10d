"""Frame -> network input: luma extraction, nearest-neighbour resize, /255 rescale,
and training-time flip augmentation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import INPUT_SIZE
from .synth import Frame


@dataclass(frozen=True)
class Sample:
    tensor: np.ndarray  # [1, 227, 227] float32 in [0, 1]
    label: int


def resize_nearest(plane: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Pixel-centre nearest neighbour: ``out[r, c] = in[(r+.5)*H/out_h, (c+.5)*W/out_w]``."""
    if out_h < 1 or out_w < 1:
        raise ValueError("target size must be positive")
    h, w = plane.shape
    if h < 1 or w < 1:
        raise ValueError("source plane is empty")
    # floor((r + 0.5) * h / out_h) in exact integer arithmetic
    rows = np.minimum((2 * np.arange(out_h) + 1) * h // (2 * out_h), h - 1)
    cols = np.minimum((2 * np.arange(out_w) + 1) * w // (2 * out_w), w - 1)
    return plane[rows[:, None], cols[None, :]]


def to_luma(frame: Frame) -> np.ndarray:
    return frame.y


def rescale(grid: np.ndarray) -> np.ndarray:
    return np.asarray(grid, dtype=np.float32) / np.float32(255)


def frame_to_tensor(frame: Frame, size: int = INPUT_SIZE) -> np.ndarray:
    return rescale(resize_nearest(to_luma(frame), size, size))[None]


def augment_flip(sample: Sample, rng: np.random.Generator) -> Sample:
    """Independently, with probability 1/2 each, mirror left-right and top-bottom."""
    t = sample.tensor
    if rng.random() < 0.5:
        t = t[..., :, ::-1]
    if rng.random() < 0.5:
        t = t[..., ::-1, :]
    return Sample(np.ascontiguousarray(t), sample.label)


def flip_batch(batch: np.ndarray, rngs) -> np.ndarray:
    """Apply :func:`augment_flip` draws to each ``[1, H, W]`` item of a batch."""
    return np.stack([augment_flip(Sample(x, 0), r).tensor for x, r in zip(batch, rngs)])
