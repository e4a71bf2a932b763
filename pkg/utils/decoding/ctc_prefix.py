"""CTC prefix probabilities for label-synchronous decoding.

Each prefix keeps two forward variables per frame: the log-probability of
having emitted the prefix with the last frame on a label (`r[:, 0]`) or on a
blank (`r[:, 1]`). Extending a prefix by one label costs O(T) per candidate
and the candidates of one prefix are scored together.
"""

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from utils.errors import ContractError, ShapeError


@dataclass(frozen=True)
class CTCPrefixState:
    """Forward variables of one prefix (CTC head positions, no blanks)."""

    prefix: tuple[int, ...]
    r: np.ndarray = field(repr=False, compare=False)
    log_psi: float = 0.0


class CTCPrefixScorer:
    """Scores prefixes against one utterance's CTC log-probabilities `[T, C]`.

    `log_psi` of a prefix is the total probability of every labelling that
    starts with it; `final_score` is the probability of the labelling being
    exactly the prefix.
    """

    def __init__(self, logprobs: np.ndarray, blank: int = 0) -> None:
        logprobs = np.asarray(logprobs, dtype=np.float64)
        if logprobs.ndim != 2:
            raise ShapeError("CTC prefix scoring needs [T, C] log-probabilities", logprobs.shape)
        self.logprobs = logprobs
        self.blank = blank
        self.frames, self.classes = logprobs.shape

    def initial_state(self) -> CTCPrefixState:
        r = np.full((self.frames, 2), -np.inf)
        if self.frames:
            r[:, 1] = np.cumsum(self.logprobs[:, self.blank])
        return CTCPrefixState(prefix=(), r=r, log_psi=0.0)

    def final_score(self, state: CTCPrefixState) -> float:
        if self.frames == 0:
            return 0.0 if not state.prefix else -np.inf
        return float(np.logaddexp(state.r[-1, 0], state.r[-1, 1]))

    def extend(self, state: CTCPrefixState, candidates: Sequence[int]) -> list[CTCPrefixState]:
        """Child states for `state.prefix + (c,)` for every candidate `c`."""
        candidates = np.asarray(list(candidates), dtype=np.int64)
        if np.any(candidates == self.blank) or np.any(candidates < 0) or np.any(candidates >= self.classes):
            raise ContractError(f"CTC prefix candidates must be non-blank head positions, got {candidates.tolist()}")
        if state.r.shape != (self.frames, 2):
            raise ContractError("Prefix state was built for a different utterance")
        if len(candidates) == 0:
            return []
        if self.frames == 0:
            return [CTCPrefixState(state.prefix + (int(c),), np.zeros((0, 2)), -np.inf) for c in candidates]

        lp = self.logprobs
        n = len(candidates)
        r = np.full((self.frames, 2, n), -np.inf)
        with np.errstate(divide="ignore", invalid="ignore"):
            total_prev = np.logaddexp(state.r[:, 0], state.r[:, 1])
            # phi: probability mass from which the new label may start at frame t + 1
            phi = np.repeat(total_prev[:, None], n, axis=1)
            if state.prefix:
                repeat = candidates == state.prefix[-1]
                phi[:, repeat] = state.r[:, 1][:, None]
            else:
                r[0, 0] = lp[0, candidates]
            psi = r[0, 0].copy()
            emit = lp[:, candidates]
            blank = lp[:, self.blank]
            for t in range(1, self.frames):
                r[t, 0] = np.logaddexp(r[t - 1, 0], phi[t - 1]) + emit[t]
                r[t, 1] = np.logaddexp(r[t - 1, 0], r[t - 1, 1]) + blank[t]
                psi = np.logaddexp(psi, phi[t - 1] + emit[t])
        return [
            CTCPrefixState(state.prefix + (int(c),), np.ascontiguousarray(r[:, :, i]), float(psi[i]))
            for i, c in enumerate(candidates)
        ]

    def check(self, state: CTCPrefixState, prefix: Sequence[int]) -> None:
        if tuple(prefix) != state.prefix:
            raise ContractError(f"Cached CTC state is for {state.prefix}, not {tuple(prefix)}")

    def prefix_state(self, prefix: Sequence[int]) -> CTCPrefixState:
        """Recompute a prefix's state from scratch, one label at a time."""
        state = self.initial_state()
        for label in prefix:
            state = self.extend(state, [label])[0]
        return state
