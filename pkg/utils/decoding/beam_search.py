"""Joint CTC/attention beam search with shallow LM fusion.

Every hypothesis carries three component scores: the accumulated decoder
log-probability `s_att`, the CTC prefix log-probability `s_ctc` (replaced,
not accumulated, at each extension) and the accumulated LM log-probability
`s_lm`. They are combined as

    score = ctc_weight * s_ctc + (1 - ctc_weight) * s_att + lm_weight * s_lm

No length penalty is applied; the CTC term keeps hypothesis lengths honest.
"""

from dataclasses import dataclass, field, replace
from itertools import product
from typing import Callable, Optional, Sequence
import logging

import numpy as np

from utils import PRESETS_DIR, load_json_type_safe
from utils.autodiff import Tensor, no_grad
from utils.corpus.batching import AugmentOptions, collate
from utils.data_types.config_types import SUPPORTED_LANGUAGES, DecodeConfig
from utils.data_types.corpus_types import NormStats, Utterance
from utils.data_types.result_types import DecodeRecord
from utils.data_types.vocabulary import EOS, SOS, UNK, Vocabulary
from utils.errors import ConfigurationError, ContractError
from utils.nn.decoder import TransformerDecoder
from utils.nn.lm import CharLM
from utils.nn.model import VSRModel
from .ctc_prefix import CTCPrefixScorer, CTCPrefixState

_logger = logging.getLogger("vsr.decoding")

LANGUAGE_PRESETS_FILE = PRESETS_DIR / "language_presets.json"

StepScorer = Callable[[Sequence[int]], np.ndarray]


@dataclass(frozen=True)
class BeamHypothesis:
    tokens: tuple[int, ...]
    s_att: float = 0.0
    s_ctc: float = 0.0
    s_lm: float = 0.0
    ended: bool = False
    ctc_state: Optional[CTCPrefixState] = field(default=None, repr=False, compare=False)

    def combined(self, ctc_weight: float, lm_weight: float) -> float:
        return combined_score(self.s_ctc, self.s_att, self.s_lm, ctc_weight, lm_weight)

    @property
    def labels(self) -> tuple[int, ...]:
        """Emitted tokens without sos and eos."""
        return tuple(t for t in self.tokens[1:] if t != EOS)

    def transcript(self, vocab: Vocabulary) -> str:
        return vocab.decode(self.labels)


def combined_score(s_ctc: float, s_att: float, s_lm: float, ctc_weight: float, lm_weight: float) -> float:
    # a zero weight drops its term, so an impossible (-inf) component cannot turn into nan
    total = 0.0
    for weight, value in ((ctc_weight, s_ctc), (1.0 - ctc_weight, s_att), (lm_weight, s_lm)):
        if weight != 0.0:
            total += weight * value
    return total


def _rank_key(hyp: BeamHypothesis, cfg: DecodeConfig) -> tuple[float, tuple[int, ...]]:
    # ties go to the lexicographically smaller token sequence
    return (-hyp.combined(cfg.ctc_weight, cfg.lm_weight), hyp.tokens)


def candidate_tokens(vocab: Vocabulary) -> list[int]:
    """Every token a hypothesis may be extended with, eos excluded."""
    return [UNK] + [vocab.encode(c)[0] for c in vocab.characters]


def _zero_scorer(head_size: int) -> StepScorer:
    zeros = np.zeros(head_size)
    return lambda prefix: zeros


def beam_search(
    att_step: StepScorer,
    ctc_logprobs: np.ndarray,
    vocab: Vocabulary,
    cfg: DecodeConfig,
    lm_step: Optional[StepScorer] = None,
) -> list[BeamHypothesis]:
    """Search over character extensions, returns finished hypotheses best first.

    Parameters
    ----------
    att_step: Callable
        Maps an sos-prefixed token list to next-token decoder log-probabilities
        over the decoder head (eos at position 0).
    ctc_logprobs: np.ndarray
        `[T, C]` CTC head log-probabilities of the utterance.
    vocab: Vocabulary
        Output inventory.
    cfg: DecodeConfig
        Beam width, weights and length cap.
    lm_step: Callable, optional
        Same contract as `att_step` for the character LM. Without it `s_lm`
        stays 0.
    """
    cfg.validate()
    ctc_logprobs = np.asarray(ctc_logprobs, dtype=np.float64)
    frames = ctc_logprobs.shape[0]
    if frames == 0:
        return [BeamHypothesis(tokens=(SOS, EOS), ended=True)]
    lm_step = lm_step or _zero_scorer(vocab.head_size)
    scorer = CTCPrefixScorer(ctc_logprobs)
    max_len = cfg.length_limit(frames)
    candidates = candidate_tokens(vocab)
    ctc_candidates = [Vocabulary.to_ctc(t) for t in candidates]
    out_candidates = np.asarray([Vocabulary.to_output(t) for t in candidates])
    eos_position = Vocabulary.to_output(EOS)

    active = [BeamHypothesis(tokens=(SOS,), ctc_state=scorer.initial_state())]
    finished: list[BeamHypothesis] = []
    for step in range(max_len + 1):
        expansions: list[BeamHypothesis] = []
        for hyp in active:
            att = att_step(hyp.tokens)
            lm = lm_step(hyp.tokens)
            state = hyp.ctc_state
            scorer.check(state, [Vocabulary.to_ctc(t) for t in hyp.tokens[1:]])
            expansions.append(
                replace(
                    hyp,
                    tokens=hyp.tokens + (EOS,),
                    s_att=hyp.s_att + float(att[eos_position]),
                    s_ctc=scorer.final_score(state),
                    s_lm=hyp.s_lm + float(lm[eos_position]),
                    ended=True,
                    ctc_state=None,
                )
            )
            # only eos may follow once the length cap is reached
            if step == max_len:
                continue
            children = scorer.extend(state, ctc_candidates)
            for token, position, child in zip(candidates, out_candidates, children):
                expansions.append(
                    BeamHypothesis(
                        tokens=hyp.tokens + (token,),
                        s_att=hyp.s_att + float(att[position]),
                        s_ctc=child.log_psi,
                        s_lm=hyp.s_lm + float(lm[position]),
                        ctc_state=child,
                    )
                )
        expansions.sort(key=lambda h: _rank_key(h, cfg))
        kept = expansions[: cfg.beam_size]
        finished.extend(h for h in kept if h.ended)
        active = [h for h in kept if not h.ended]
        if not active:
            break
        # descendants never score above their ancestor: every component is a log-probability
        best_finished = min((_rank_key(h, cfg) for h in finished), default=None)
        best_active = _rank_key(active[0], cfg)
        if best_finished is not None and best_active[0] > best_finished[0]:
            break
    finished.sort(key=lambda h: _rank_key(h, cfg))
    return finished


def exhaustive_search(
    att_step: StepScorer,
    ctc_logprobs: np.ndarray,
    vocab: Vocabulary,
    cfg: DecodeConfig,
    lm_step: Optional[StepScorer] = None,
) -> BeamHypothesis:
    """Score every label sequence up to the length cap, return the best.

    Exponential in the cap; an oracle for tiny instances only.
    """
    cfg.validate()
    ctc_logprobs = np.asarray(ctc_logprobs, dtype=np.float64)
    frames = ctc_logprobs.shape[0]
    if frames == 0:
        return BeamHypothesis(tokens=(SOS, EOS), ended=True)
    lm_step = lm_step or _zero_scorer(vocab.head_size)
    scorer = CTCPrefixScorer(ctc_logprobs)
    candidates = candidate_tokens(vocab)
    best: Optional[BeamHypothesis] = None
    for length in range(cfg.length_limit(frames) + 1):
        for labels in product(candidates, repeat=length):
            tokens = (SOS,) + labels + (EOS,)
            s_att = s_lm = 0.0
            for i in range(1, len(tokens)):
                position = Vocabulary.to_output(tokens[i])
                s_att += float(att_step(tokens[:i])[position])
                s_lm += float(lm_step(tokens[:i])[position])
            s_ctc = scorer.final_score(scorer.prefix_state([Vocabulary.to_ctc(t) for t in labels]))
            hyp = BeamHypothesis(tokens=tokens, s_att=s_att, s_ctc=s_ctc, s_lm=s_lm, ended=True)
            if best is None or _rank_key(hyp, cfg) < _rank_key(best, cfg):
                best = hyp
    return best


def load_language_presets() -> dict[str, dict]:
    presets = load_json_type_safe(LANGUAGE_PRESETS_FILE, "dict")
    return {str(k): dict(v) for k, v in presets.items()}


def beam_preset(language: str) -> DecodeConfig:
    """Beam width and LM weight tuned for `language`; the CTC weight is always 0.1."""
    presets = load_language_presets()
    if language not in presets:
        supported = ", ".join(sorted(set(presets) | set(SUPPORTED_LANGUAGES)))
        raise ConfigurationError(f"No decoding preset for language `{language}`, supported: {supported}")
    entry = presets[language]
    return DecodeConfig(
        beam_size=int(entry["beam_size"]),
        ctc_weight=0.1,
        lm_weight=float(entry["lm_weight"]),
        language=language,
    )


def model_scorers(
    decoder: TransformerDecoder, memory: Tensor, lm: Optional[CharLM] = None
) -> tuple[StepScorer, Optional[StepScorer]]:
    """Bind a decoder's (and optional LM's) single-step scoring to one utterance."""
    if memory.ndim != 2:
        raise ContractError(f"Expected one utterance's memory [T, D], got {memory.shape}")

    def att_step(prefix: Sequence[int]) -> np.ndarray:
        with no_grad():
            return decoder.decode_step(memory, list(prefix))

    lm_step = None
    if lm is not None:

        def lm_step(prefix: Sequence[int]) -> np.ndarray:
            with no_grad():
                return lm.lm_score(list(prefix))

    return att_step, lm_step


def decode_utterance(
    model: VSRModel,
    utt: Utterance,
    vocab: Vocabulary,
    stats: NormStats,
    cfg: DecodeConfig,
    lm: Optional[CharLM] = None,
    crop_size: int = 0,
) -> list[BeamHypothesis]:
    """Evaluation-transform one utterance, encode it and run the beam search."""
    model.eval()
    batch = collate([utt], vocab, stats, AugmentOptions(crop_size=crop_size))
    with no_grad():
        encoded = model.encode(batch.inputs, batch.lengths)
        frames = int(encoded.lengths[0])
        ctc = model.ctc_head(encoded.top).data[0, :frames]
        memory = encoded.top[0, :frames]
    att_step, lm_step = model_scorers(model.decoder, memory, lm)
    return beam_search(att_step, ctc, vocab, cfg, lm_step)


def decode_corpus(
    model: VSRModel,
    utterances: Sequence[Utterance],
    vocab: Vocabulary,
    stats: NormStats,
    cfg: DecodeConfig,
    lm: Optional[CharLM] = None,
    crop_size: int = 0,
) -> list[DecodeRecord]:
    """Best hypothesis per utterance with its component scores, ordered by id."""
    records = []
    for utt in sorted(utterances, key=lambda u: u.id):
        best = decode_utterance(model, utt, vocab, stats, cfg, lm, crop_size)[0]
        records.append(
            DecodeRecord(
                id=utt.id,
                transcript=best.transcript(vocab),
                score=best.combined(cfg.ctc_weight, cfg.lm_weight),
                ctc=best.s_ctc,
                att=best.s_att,
                lm=best.s_lm,
            )
        )
        _logger.debug(f"{utt.id}: {records[-1].transcript!r} (score {records[-1].score:.4f})")
    return records
