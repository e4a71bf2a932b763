"""Training-time augmentation applied per sequence inside batch assembly."""

from typing import Optional

import numpy as np

from utils.data_types.corpus_types import FRAME_RATE, MaskLog
from utils.errors import ConfigurationError


def mask_length_cap(frames: int, frame_rate: int = FRAME_RATE, max_seconds: float = 0.4, proportional: bool = False) -> int:
    """Longest mask: `max_seconds` of video, or that fraction of the sequence when proportional."""
    if proportional:
        return int(np.floor(max_seconds * frames))
    return int(np.floor(max_seconds * frame_rate + 1e-9))


def time_mask(
    sequence: np.ndarray,
    rng: np.random.Generator,
    frame_rate: int = FRAME_RATE,
    max_seconds: float = 0.4,
    proportional: bool = False,
) -> tuple[np.ndarray, MaskLog]:
    """Replace random spans of frames by the sequence's temporal mean.

    One mask per full second of video. Each mask length is uniform on
    `{0, ..., cap}` and its start is uniform over the positions where it fits;
    masks may overlap. Time is the first axis.
    """
    sequence = np.asarray(sequence)
    frames = sequence.shape[0]
    cap = mask_length_cap(frames, frame_rate, max_seconds, proportional)
    log = MaskLog(max_length=cap)
    count = frames // frame_rate
    if count == 0:
        return sequence.copy(), log
    mean_frame = sequence.mean(axis=0)
    masked = sequence.copy()
    for _ in range(count):
        length = int(rng.integers(0, cap + 1))
        start = int(rng.integers(0, frames - length + 1))
        masked[start : start + length] = mean_frame
        log.spans.append((start, length))
    return masked, log


def crop_offset(canvas: tuple[int, int], crop_size: int, rng: Optional[np.random.Generator]) -> tuple[int, int]:
    height, width = canvas
    if crop_size > height or crop_size > width:
        raise ConfigurationError(f"Crop size {crop_size} exceeds the {height}x{width} frame")
    if rng is None:
        return (height - crop_size) // 2, (width - crop_size) // 2
    return int(rng.integers(0, height - crop_size + 1)), int(rng.integers(0, width - crop_size + 1))


def spatial_augment(
    frames: np.ndarray,
    crop_size: int,
    rng: Optional[np.random.Generator] = None,
    flip: Optional[bool] = None,
) -> tuple[np.ndarray, tuple[int, int], bool]:
    """Crop (and in training maybe mirror) every frame of `[T, H, W]` the same way.

    Without `rng` this is the evaluation transform: centre crop, no flip.
    Returns the frames, the crop offset and whether they were flipped.
    """
    frames = np.asarray(frames)
    if frames.ndim != 3:
        raise ConfigurationError(f"Spatial augmentation needs [T, H, W] frames, got shape {frames.shape}")
    dy, dx = crop_offset(frames.shape[1:], crop_size, rng)
    out = frames[:, dy : dy + crop_size, dx : dx + crop_size]
    if flip is None:
        flip = bool(rng.integers(0, 2)) if rng is not None else False
    if flip:
        out = out[:, :, ::-1]
    return np.ascontiguousarray(out), (dy, dx), flip
