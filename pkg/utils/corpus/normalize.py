import logging
from typing import Optional, Sequence

import numpy as np

from utils.data_types.corpus_types import NormStats, Utterance
from utils.errors import DataError
from utils.logging import log_once

_logger = logging.getLogger("vsr.normalize")

STD_FLOOR = 1e-8


def _moments(arrays: Sequence[np.ndarray], per_dimension: bool) -> tuple[np.ndarray, np.ndarray]:
    if per_dimension:
        stacked = np.concatenate([a.reshape(a.shape[0], -1) for a in arrays], axis=0).astype(np.float64)
        return stacked.mean(axis=0), stacked.std(axis=0)
    flat = np.concatenate([a.reshape(-1) for a in arrays]).astype(np.float64)
    return np.asarray(flat.mean()), np.asarray(flat.std())


def _floor(std: np.ndarray, label: str, floored: list[str]) -> np.ndarray:
    low = np.atleast_1d(std < STD_FLOOR)
    if low.any():
        if std.ndim == 0:
            floored.append(label)
        else:
            floored.extend(f"{label}[{i}]" for i in np.flatnonzero(low))
        log_once(_logger, f"{label} has zero variance in {int(low.sum())} dimension(s), flooring std to {STD_FLOOR}", logging.WARNING)
    return np.maximum(std, STD_FLOOR)


def compute_stats(utterances: Sequence[Utterance], provenance: str = "train") -> NormStats:
    """Mean/std of the given (training) utterances.

    Feature inputs `[T, D]` get per-dimension statistics; frame stacks
    `[T, H, W]` and waveforms get one scalar pair.
    """
    if not utterances:
        raise DataError("Cannot compute normalisation statistics over an empty split")
    visual = [u.visual for u in utterances]
    if any(v is None for v in visual):
        raise DataError("Normalisation statistics need loaded visual arrays")
    floored: list[str] = []
    v_mean, v_std = _moments(visual, per_dimension=visual[0].ndim == 2)
    v_std = _floor(v_std, "visual", floored)
    a_mean = a_std = None
    audio = [u.audio for u in utterances if u.audio is not None]
    if audio:
        a_mean, a_std = _moments(audio, per_dimension=audio[0].ndim == 2)
        a_std = _floor(a_std, "audio", floored)
    return NormStats(v_mean, v_std, a_mean, a_std, provenance=provenance, floored=floored)


def normalize(features: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    """(x - mean) / std with training statistics; std below the floor is raised to it."""
    std = np.asarray(std, dtype=np.float64)
    if np.any(std < STD_FLOOR):
        log_once(_logger, f"Normalising with a std below {STD_FLOOR}, flooring it", logging.WARNING)
        std = np.maximum(std, STD_FLOOR)
    return (np.asarray(features, dtype=np.float64) - np.asarray(mean, dtype=np.float64)) / std


def normalize_utterance(utt: Utterance, stats: NormStats) -> tuple[np.ndarray, Optional[np.ndarray]]:
    visual = normalize(utt.visual, stats.visual_mean, stats.visual_std)
    audio = None
    if utt.audio is not None:
        if stats.audio_mean is None:
            raise DataError(f"Utterance {utt.id} has audio but the statistics carry none")
        audio = normalize(utt.audio, stats.audio_mean, stats.audio_std)
    return visual, audio
