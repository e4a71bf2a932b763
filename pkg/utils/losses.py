"""Training objectives of the hybrid recognizer.

CTC targets are head positions of the CTC output layer (blank is 0);
attention targets are head positions of the decoder output layer (eos is 0)
with -1 marking padding. `Vocabulary.to_ctc` / `Vocabulary.to_output` map
token ids to those positions.
"""

from dataclasses import dataclass
from typing import Optional, Sequence
import logging

import numpy as np

from utils.autodiff import Function, Tensor, as_tensor, logsumexp, take_along_last
from utils.data_types.config_types import LossWeights
from utils.data_types.result_types import CTCResult
from utils.errors import ContractError, DataError, ShapeError
from utils.logging import log_once
from utils.nn.module import Linear

_logger = logging.getLogger("vsr.losses")


def ctc_feasible(num_frames: int, target: Sequence[int]) -> bool:
    """A path exists iff there is one frame per label plus one per repeated pair."""
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return num_frames >= len(target) + repeats


def _extended(target: Sequence[int]) -> np.ndarray:
    ext = np.zeros(2 * len(target) + 1, dtype=np.int64)
    ext[1::2] = target
    return ext


def _skip_allowed(ext: np.ndarray) -> np.ndarray:
    """Whether state s may be entered from s - 2 (non-blank label differing from s - 2)."""
    allowed = np.zeros(len(ext), dtype=bool)
    allowed[2:] = (ext[2:] != 0) & (ext[2:] != ext[:-2])
    return allowed


def ctc_forward_variables(logprobs: np.ndarray, target: Sequence[int]) -> np.ndarray:
    """Log-domain forward variables `alpha[t, s]` over the blank-interleaved target."""
    ext = _extended(target)
    skip = _skip_allowed(ext)
    frames, states = logprobs.shape[0], len(ext)
    alpha = np.full((frames, states), -np.inf)
    alpha[0, 0] = logprobs[0, 0]
    if states > 1:
        alpha[0, 1] = logprobs[0, ext[1]]
    with np.errstate(divide="ignore", invalid="ignore"):
        for t in range(1, frames):
            prev = alpha[t - 1]
            step = np.full(states, -np.inf)
            step[1:] = prev[:-1]
            jump = np.full(states, -np.inf)
            jump[2:] = prev[:-2]
            jump[~skip] = -np.inf
            alpha[t] = logsumexp(np.stack([prev, step, jump]), axis=0) + logprobs[t, ext]
    return alpha


def ctc_backward_variables(logprobs: np.ndarray, target: Sequence[int]) -> np.ndarray:
    """`beta[t, s]`: log-probability of finishing from state s at frame t, frame t excluded."""
    ext = _extended(target)
    skip = _skip_allowed(ext)
    frames, states = logprobs.shape[0], len(ext)
    beta = np.full((frames, states), -np.inf)
    beta[-1, -1] = 0.0
    if states > 1:
        beta[-1, -2] = 0.0
    # s + 2 may be reached from s iff the skip into s + 2 is allowed
    skip_from = np.zeros(states, dtype=bool)
    skip_from[:-2] = skip[2:]
    with np.errstate(divide="ignore", invalid="ignore"):
        for t in range(frames - 2, -1, -1):
            nxt = beta[t + 1] + logprobs[t + 1, ext]
            step = np.full(states, -np.inf)
            step[:-1] = nxt[1:]
            jump = np.full(states, -np.inf)
            jump[:-2] = nxt[2:]
            jump[~skip_from] = -np.inf
            beta[t] = logsumexp(np.stack([nxt, step, jump]), axis=0)
    return beta


class CTCNegLogLikelihood(Function):
    """-log sum over alignments, with the exact forward-backward adjoint."""

    def forward(self, logprobs: np.ndarray, target: tuple[int, ...]) -> np.ndarray:
        self.target = target
        self.ext = _extended(target)
        self.alpha = ctc_forward_variables(logprobs, target)
        last = self.alpha[-1, -2:] if len(self.ext) > 1 else self.alpha[-1, -1:]
        self.log_likelihood = float(logsumexp(last))
        return np.asarray(-self.log_likelihood)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        logprobs = self.inputs[0].data
        beta = ctc_backward_variables(logprobs, self.target)
        occupancy = np.exp(self.alpha + beta - self.log_likelihood)
        d_loglik = np.zeros_like(logprobs)
        for s, label in enumerate(self.ext):
            d_loglik[:, label] += occupancy[:, s]
        return -d_loglik * grad


def ctc_loss(logprobs: Tensor, target: Sequence[int]) -> CTCResult:
    """CTC negative log-likelihood of one target under per-frame log-probabilities.

    Parameters
    ----------
    logprobs: Tensor
        `[T, C]` log-probabilities over CTC head positions, blank at 0.
    target: Sequence[int]
        Head positions of the label sequence, none of them blank.

    Returns
    -------
    CTCResult
        `feasible` is False, and the loss +inf with a zero gradient, when the
        target needs more frames than `T`.
    """
    logprobs = as_tensor(logprobs)
    if logprobs.ndim != 2:
        raise ShapeError("ctc_loss expects [T, C] log-probabilities", logprobs.shape)
    target = tuple(int(t) for t in target)
    if any(t <= 0 or t >= logprobs.shape[1] for t in target):
        raise ContractError(f"CTC targets must be non-blank head positions below {logprobs.shape[1]}, got {target}")
    if logprobs.shape[0] == 0 or not ctc_feasible(logprobs.shape[0], target):
        return CTCResult(loss=_infeasible(logprobs), feasible=False)
    return CTCResult(loss=CTCNegLogLikelihood.apply(logprobs, target=target), feasible=True)


def _infeasible(logprobs: Tensor) -> Tensor:
    # multiplying by zero keeps the tensor on the tape with an all-zero gradient
    return (logprobs * 0.0).sum() + np.inf if logprobs.requires_grad else Tensor(np.inf)


def batch_ctc_loss(logprobs: Tensor, lengths: Sequence[int], targets: Sequence[Sequence[int]]) -> Tensor:
    """Sum of per-sample CTC losses divided by the batch size.

    Infeasible samples are left out of the sum and reported once.
    """
    if logprobs.ndim != 3 or logprobs.shape[0] != len(targets) or len(lengths) != len(targets):
        raise ShapeError("batch_ctc_loss needs [B, T, C] log-probabilities and B lengths/targets", logprobs.shape)
    total: Optional[Tensor] = None
    for b, (length, target) in enumerate(zip(lengths, targets)):
        result = ctc_loss(logprobs[b, : int(length)], target)
        if not result.feasible:
            log_once(
                _logger,
                f"Skipping infeasible CTC sample: {len(target)} labels in {int(length)} frames",
                logging.WARNING,
            )
            continue
        total = result.loss if total is None else total + result.loss
    if total is None:
        return (logprobs * 0.0).sum()
    return total / len(targets)


def attention_loss(logprobs: Tensor, targets: np.ndarray, label_smoothing: float = 0.0) -> Tensor:
    """Teacher-forced cross-entropy, summed over tokens and averaged over the batch.

    `targets` is `[B, L]` decoder head positions (eos included), -1 for padding.
    With smoothing `eps` each token costs `-(1 - eps) log p(y) - eps mean_c log p(c)`.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if logprobs.ndim != 3 or targets.shape != logprobs.shape[:2]:
        raise ContractError(f"Decoder outputs {logprobs.shape} do not line up with targets {targets.shape}")
    if np.any(targets >= logprobs.shape[2]):
        raise ContractError("Attention targets exceed the decoder head size")
    valid = (targets >= 0).astype(logprobs.data.dtype)
    picked = take_along_last(logprobs, np.where(targets >= 0, targets, 0))
    loss = -(picked * valid).sum()
    if label_smoothing > 0:
        smooth = -(logprobs.mean(axis=-1) * valid).sum()
        loss = loss * (1.0 - label_smoothing) + smooth * label_smoothing
    return loss / targets.shape[0]


def vsr_loss(l_ctc: Tensor, l_att: Tensor, ctc_weight: float) -> Tensor:
    if not 0.0 <= ctc_weight <= 1.0:
        raise ContractError(f"CTC weight must be in [0, 1], got {ctc_weight}")
    return as_tensor(l_ctc) * ctc_weight + as_tensor(l_att) * (1.0 - ctc_weight)


def reconcile_lengths(student_frames: int, teacher_frames: int) -> int:
    """Common length of student and teacher sequences; at most one frame may differ."""
    if abs(student_frames - teacher_frames) > 1:
        raise DataError(f"Student has {student_frames} frames but the teacher has {teacher_frames}")
    return min(student_frames, teacher_frames)


def _masked_l1(prediction: Tensor, target: np.ndarray, lengths: Optional[np.ndarray]) -> Tensor:
    target = np.asarray(target)
    if prediction.shape[0] != target.shape[0] or prediction.shape[2] != target.shape[2]:
        raise ShapeError("Aux predictions and teacher targets differ in batch or width", prediction.shape, target.shape)
    frames = reconcile_lengths(prediction.shape[1], target.shape[1])
    prediction = prediction[:, :frames]
    target = target[:, :frames]
    diff = (prediction - target).abs()
    if lengths is None:
        return diff.mean()
    valid = (np.arange(frames)[None, :] < np.minimum(np.asarray(lengths), frames)[:, None]).astype(diff.data.dtype)
    count = max(float(valid.sum()) * diff.shape[2], 1.0)
    return (diff * valid[:, :, None]).sum() / count


@dataclass
class AuxTerms:
    audio: Optional[Tensor] = None
    visual: Optional[Tensor] = None

    @property
    def total(self) -> Optional[Tensor]:
        terms = [t for t in (self.audio, self.visual) if t is not None]
        if not terms:
            return None
        total = terms[0]
        for term in terms[1:]:
            total = total + term
        return total


def aux_loss(
    tap: Tensor,
    h_a: Linear,
    h_v: Linear,
    audio_targets: Optional[np.ndarray],
    visual_targets: Optional[np.ndarray],
    weights: LossWeights,
    lengths: Optional[np.ndarray] = None,
) -> AuxTerms:
    """Weighted L1 between predicted and teacher tap representations.

    A term whose weight is zero (or whose targets are absent) is omitted, so
    it contributes neither value nor gradient. Teacher targets are plain
    arrays, hence nothing flows back into the teachers.
    """
    terms = AuxTerms()
    if weights.audio_aux_weight > 0 and audio_targets is not None:
        terms.audio = _masked_l1(h_a(tap), audio_targets, lengths) * weights.audio_aux_weight
    if weights.visual_aux_weight > 0 and visual_targets is not None:
        terms.visual = _masked_l1(h_v(tap), visual_targets, lengths) * weights.visual_aux_weight
    return terms


def total_loss(l_vsr: Tensor, l_aux: Optional[Tensor] = None) -> Tensor:
    return l_vsr if l_aux is None else l_vsr + l_aux


@dataclass
class LossBreakdown:
    """Every component of one batch objective, for logging."""

    ctc: Tensor
    att: Tensor
    vsr: Tensor
    aux: AuxTerms
    total: Tensor

    def as_floats(self) -> dict[str, float]:
        out = {"ctc": self.ctc.item(), "att": self.att.item(), "vsr": self.vsr.item(), "total": self.total.item()}
        if self.aux.audio is not None:
            out["aux_audio"] = self.aux.audio.item()
        if self.aux.visual is not None:
            out["aux_visual"] = self.aux.visual.item()
        return out
