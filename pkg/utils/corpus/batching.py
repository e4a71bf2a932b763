"""Curriculum stages, batch plans and padding into model-ready arrays."""

from dataclasses import dataclass
from typing import Optional, Sequence
import logging

import numpy as np

from utils.data_types.config_types import CurriculumSchedule
from utils.data_types.corpus_types import Batch, NormStats, Utterance
from utils.data_types.vocabulary import EOS, SOS, Vocabulary
from utils.errors import ContractError, DataError
from utils.logging import log_once
from .augment import spatial_augment, time_mask
from .normalize import normalize_utterance

_logger = logging.getLogger("vsr.batching")


def curriculum_filter(utterances: Sequence[Utterance], schedule: CurriculumSchedule, stage: int) -> list[Utterance]:
    """Utterances no longer than the stage's frame cap, in input order."""
    if not 0 <= stage < len(schedule.caps):
        raise ContractError(f"Curriculum stage {stage} outside 0..{len(schedule.caps) - 1}")
    cap = schedule.caps[stage]
    subset = [u for u in utterances if u.frames <= cap]
    if not subset:
        raise DataError(
            f"No training utterance fits curriculum stage {stage} (cap {cap} frames); "
            "regenerate the corpus with shorter transcripts or raise the caps"
        )
    return subset


def make_batches(
    utterances: Sequence[Utterance],
    batch_size: int = 16,
    halve_threshold: int = 220,
    seed: int = 0,
    max_frames: Optional[int] = None,
) -> list[list[Utterance]]:
    """Shuffled, length-bucketed batch plan.

    Utterances are shuffled, stably sorted by length and cut into runs of
    `batch_size`; the run order is then shuffled. A batch holding a sequence
    longer than `halve_threshold` frames is split into two halves.
    """
    if batch_size < 1:
        raise ContractError(f"batch_size must be >= 1, got {batch_size}")
    kept = list(utterances)
    if max_frames is not None:
        too_long = [u.id for u in kept if u.frames > max_frames]
        if too_long:
            log_once(
                _logger,
                f"Excluding {len(too_long)} utterance(s) longer than {max_frames} frames: {', '.join(too_long[:5])}",
                logging.WARNING,
            )
        kept = [u for u in kept if u.frames <= max_frames]
    if not kept:
        return []
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(kept))
    shuffled = [kept[i] for i in order]
    shuffled.sort(key=lambda u: u.frames)
    runs = [shuffled[i : i + batch_size] for i in range(0, len(shuffled), batch_size)]
    runs = [runs[i] for i in rng.permutation(len(runs))]
    plan = []
    for run in runs:
        if len(run) > 1 and max(u.frames for u in run) > halve_threshold:
            half = (len(run) + 1) // 2
            plan.extend([run[:half], run[half:]])
        else:
            plan.append(run)
    return plan


@dataclass
class AugmentOptions:
    time_masking: bool = False
    mask_max_seconds: float = 0.4
    mask_proportional: bool = False
    spatial: bool = False
    crop_size: int = 0


def _pad(arrays: Sequence[np.ndarray], value: float = 0.0) -> np.ndarray:
    longest = max(a.shape[0] for a in arrays)
    out = np.full((len(arrays), longest) + arrays[0].shape[1:], value, dtype=np.float64)
    for i, a in enumerate(arrays):
        out[i, : a.shape[0]] = a
    return out


def token_targets(transcript: str, vocab: Vocabulary) -> list[int]:
    tokens = vocab.encode(transcript)
    if not tokens:
        raise DataError("Cannot build targets for an empty transcript")
    return tokens


def collate(
    utterances: Sequence[Utterance],
    vocab: Vocabulary,
    stats: NormStats,
    options: Optional[AugmentOptions] = None,
    rng: Optional[np.random.Generator] = None,
) -> Batch:
    """Normalise, augment and zero-pad one batch.

    Augmentation only happens when `rng` is given; without it frame stacks
    get the evaluation centre crop. Padded frames are zeros.
    """
    if not utterances:
        raise ContractError("Cannot collate an empty batch")
    options = options or AugmentOptions()
    visuals, audios, mask_logs, offsets = [], [], [], []
    for utt in utterances:
        if utt.visual is None:
            raise DataError(f"Utterance {utt.id} has no loaded visual features")
        visual, audio = normalize_utterance(utt, stats)
        if rng is not None and options.time_masking:
            visual, log = time_mask(
                visual, rng, max_seconds=options.mask_max_seconds, proportional=options.mask_proportional
            )
            mask_logs.append(log)
        if visual.ndim == 3 and options.crop_size and options.crop_size < max(visual.shape[1:]):
            augment_rng = rng if (rng is not None and options.spatial) else None
            visual, offset, _ = spatial_augment(visual, options.crop_size, augment_rng)
            offsets.append(offset)
        visuals.append(visual)
        if audio is not None:
            audios.append(audio)
    if audios and len(audios) != len(visuals):
        raise DataError("Either every utterance of a batch has audio or none has")

    token_lists = [token_targets(u.transcript, vocab) for u in utterances]
    longest = max(len(t) for t in token_lists) + 1
    decoder_inputs = np.full((len(utterances), longest), EOS, dtype=np.int64)
    decoder_targets = np.full((len(utterances), longest), -1, dtype=np.int64)
    for i, tokens in enumerate(token_lists):
        decoder_inputs[i, : len(tokens) + 1] = [SOS] + tokens
        decoder_targets[i, : len(tokens) + 1] = [Vocabulary.to_output(t) for t in tokens + [EOS]]

    return Batch(
        ids=[u.id for u in utterances],
        inputs=_pad(visuals),
        lengths=np.asarray([v.shape[0] for v in visuals], dtype=np.int64),
        targets=[[Vocabulary.to_ctc(t) for t in tokens] for tokens in token_lists],
        decoder_inputs=decoder_inputs,
        decoder_targets=decoder_targets,
        audio=_pad(audios) if audios else None,
        audio_lengths=np.asarray([a.shape[0] for a in audios], dtype=np.int64) if audios else None,
        mask_logs=mask_logs,
        crop_offsets=offsets,
    )
