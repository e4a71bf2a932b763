"""Multi-head scaled dot-product attention with optional relative-position keys."""

from typing import Optional

import numpy as np

from utils.autodiff import Tensor, einsum, masked_fill, softmax, take
from utils.errors import ConfigurationError, ShapeError
from .module import Dropout, Linear, Module

# Finite fill so fully masked rows stay NaN free; exp underflows to exactly 0.
MASK_FILL = -1e30


def relative_positions(t_query: int, t_key: int, max_distance: int) -> np.ndarray:
    """Index table `[Tq, Tk]` of clipped key-minus-query offsets, shifted to be >= 0."""
    offsets = np.arange(t_key)[None, :] - np.arange(t_query)[:, None]
    return np.clip(offsets, -max_distance, max_distance) + max_distance


def causal_mask(length: int) -> np.ndarray:
    """`[T, T]` boolean, true where query i may attend to key j (j <= i)."""
    return np.tril(np.ones((length, length), dtype=bool))


class MultiHeadAttention(Module):
    """Attention over `num_heads = dim // head_dim` heads.

    With `max_relative > 0` a learned embedding of the clipped offset j - i
    is added to every key when scoring query i against key j, the
    relative-key formulation for self-attention without absolute positions.

    Parameters
    ----------
    dim: int
        Model width, also the output width.
    head_dim: int
        Width of each head; must divide `dim`.
    rng: np.random.Generator
        Initialisation stream.
    dropout: float
        Dropout on the attention weights.
    max_relative: int
        Clipping distance of the relative keys, 0 disables them.
    """

    def __init__(
        self,
        dim: int,
        head_dim: int,
        rng: np.random.Generator,
        dropout: float = 0.0,
        max_relative: int = 0,
    ) -> None:
        super().__init__()
        if dim % head_dim:
            raise ConfigurationError(f"model_dim {dim} is not divisible by head_dim {head_dim}")
        self.dim, self.head_dim = dim, head_dim
        self.num_heads = dim // head_dim
        self.max_relative = max_relative
        self.q_proj = Linear(dim, dim, rng)
        self.k_proj = Linear(dim, dim, rng)
        self.v_proj = Linear(dim, dim, rng)
        self.out_proj = Linear(dim, dim, rng)
        self.dropout = Dropout(dropout)
        if max_relative > 0:
            self.relative_keys = Tensor(
                rng.normal(0.0, head_dim**-0.5, size=(2 * max_relative + 1, head_dim)),
                requires_grad=True,
            )
        self.last_weights: Optional[np.ndarray] = None

    def _split_heads(self, x: Tensor) -> Tensor:
        batch, length, _ = x.shape
        return x.reshape(batch, length, self.num_heads, self.head_dim).transpose(0, 2, 1, 3)

    def forward(self, query: Tensor, memory: Tensor, allowed: Optional[np.ndarray] = None) -> Tensor:
        """Attend from `query [B, Tq, D]` over `memory [B, Tk, D]`.

        `allowed` is a boolean mask broadcastable to `[B, Tq, Tk]`, true where
        a query may look at a key.
        """
        if query.ndim != 3 or query.shape[-1] != self.dim or memory.shape[-1] != self.dim:
            raise ShapeError(f"Attention expects [B, T, {self.dim}] inputs", query.shape, memory.shape)
        batch, t_query, _ = query.shape
        t_key = memory.shape[1]

        q = self._split_heads(self.q_proj(query))
        k = self._split_heads(self.k_proj(memory))
        v = self._split_heads(self.v_proj(memory))

        scores = q @ k.swapaxes(-1, -2)
        if self.max_relative > 0:
            rel = take(self.relative_keys, relative_positions(t_query, t_key, self.max_relative))
            scores = scores + einsum("bhid,ijd->bhij", q, rel)
        scores = scores * (self.head_dim**-0.5)

        if allowed is not None:
            allowed = np.broadcast_to(np.asarray(allowed, dtype=bool), (batch, t_query, t_key))
            scores = masked_fill(scores, ~allowed[:, None, :, :], MASK_FILL)
        weights = softmax(scores, axis=-1)
        self.last_weights = weights.data
        weights = self.dropout(weights)

        context = (weights @ v).transpose(0, 2, 1, 3).reshape(batch, t_query, self.dim)
        return self.out_proj(context)
