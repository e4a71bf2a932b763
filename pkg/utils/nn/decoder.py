"""Transformer decoder, CTC head and the layers shared with the character LM."""

from typing import Optional, Sequence

import numpy as np

from utils.autodiff import Tensor, length_mask, log_softmax, relu
from utils.data_types.config_types import DecoderConfig
from utils.data_types.vocabulary import BLANK, SOS, Vocabulary
from utils.errors import ContractError, ShapeError
from .attention import MultiHeadAttention, causal_mask
from .module import Dropout, Embedding, LayerNorm, Linear, Module


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    """Absolute sine/cosine position table `[length, dim]`."""
    positions = np.arange(length)[:, None]
    rates = np.exp(-np.log(10000.0) * (np.arange(0, dim, 2) / dim))
    table = np.zeros((length, dim))
    table[:, 0::2] = np.sin(positions * rates)
    table[:, 1::2] = np.cos(positions * rates)[:, : dim // 2]
    return table


class TransformerLayer(Module):
    """Pre-norm self-attention, optional cross-attention and feed-forward."""

    def __init__(
        self,
        dim: int,
        head_dim: int,
        ff_dim: int,
        dropout: float,
        rng: np.random.Generator,
        cross: bool = True,
    ) -> None:
        super().__init__()
        self.cross = cross
        self.self_norm = LayerNorm(dim)
        self.self_attn = MultiHeadAttention(dim, head_dim, rng, dropout)
        if cross:
            self.cross_norm = LayerNorm(dim)
            self.cross_attn = MultiHeadAttention(dim, head_dim, rng, dropout)
        self.ff_norm = LayerNorm(dim)
        self.ff_expand = Linear(dim, ff_dim, rng)
        self.ff_project = Linear(ff_dim, dim, rng)
        self.dropout = Dropout(dropout)

    def forward(
        self,
        x: Tensor,
        self_allowed: np.ndarray,
        memory: Optional[Tensor] = None,
        memory_allowed: Optional[np.ndarray] = None,
    ) -> Tensor:
        normed = self.self_norm(x)
        x = x + self.dropout(self.self_attn(normed, normed, self_allowed))
        if self.cross:
            if memory is None:
                raise ContractError("Cross-attention layer needs encoder memory")
            x = x + self.dropout(self.cross_attn(self.cross_norm(x), memory, memory_allowed))
        h = self.ff_project(relu(self.ff_expand(self.ff_norm(x))))
        return x + self.dropout(h)


def check_prefix(prefix: Sequence[int]) -> None:
    if len(prefix) == 0:
        raise ContractError("Decoding needs a non-empty prefix starting with <sos>")
    if prefix[0] != SOS:
        raise ContractError(f"Prefix must start with <sos> ({SOS}), got {prefix[0]}")


class TransformerDecoder(Module):
    """Attention decoder over encoder memory.

    Inputs are sos-prefixed token ids `[B, L]`; outputs are log-probabilities
    `[B, L, vocab.head_size]` over [eos, unk, characters].
    """

    def __init__(self, cfg: DecoderConfig, vocab: Vocabulary, rng: np.random.Generator) -> None:
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.vocab = vocab
        self.embedding = Embedding(len(vocab), cfg.model_dim, rng)
        self.positions = sinusoidal_positions(cfg.max_positions, cfg.model_dim)
        self.layers: list[TransformerLayer] = []
        for index in range(1, cfg.num_blocks + 1):
            layer = TransformerLayer(cfg.model_dim, cfg.head_dim, cfg.ff_dim, cfg.dropout, rng, cross=True)
            setattr(self, f"layer{index}", layer)
            self.layers.append(layer)
        self.final_norm = LayerNorm(cfg.model_dim)
        self.output = Linear(cfg.model_dim, vocab.head_size, rng)

    def forward(self, memory: Tensor, tokens: np.ndarray, memory_lengths: Optional[np.ndarray] = None) -> Tensor:
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim != 2 or memory.ndim != 3 or tokens.shape[0] != memory.shape[0]:
            raise ShapeError("Decoder expects tokens [B, L] and memory [B, T, D]", tokens.shape, memory.shape)
        batch, length = tokens.shape
        if length > self.cfg.max_positions:
            raise ShapeError(f"Decoder input longer than max_positions={self.cfg.max_positions}", tokens.shape)
        x = self.embedding(tokens) * (self.cfg.model_dim**0.5) + self.positions[:length]
        self_allowed = causal_mask(length)[None, :, :]
        memory_allowed = None
        if memory_lengths is not None:
            memory_allowed = length_mask(memory_lengths, memory.shape[1])[:, None, :]
        for layer in self.layers:
            x = layer(x, self_allowed, memory, memory_allowed)
        return log_softmax(self.output(self.final_norm(x)), axis=-1)

    def decode_step(self, memory: Tensor, prefix: Sequence[int]) -> np.ndarray:
        """Next-token log-probabilities after `prefix` for a single utterance.

        `memory` is `[T, D]` or `[1, T, D]`. The full prefix is re-encoded, so
        the result equals the matching row of a teacher-forced pass.
        """
        check_prefix(prefix)
        if memory.ndim == 2:
            memory = memory.reshape(1, *memory.shape)
        out = self.forward(memory, np.asarray([list(prefix)], dtype=np.int64))
        return out.data[0, -1]


class CTCHead(Module):
    """Linear projection + log-softmax over [blank, unk, characters]."""

    def __init__(self, dim: int, vocab: Vocabulary, rng: np.random.Generator) -> None:
        super().__init__()
        self.proj = Linear(dim, vocab.head_size, rng)

    def forward(self, top: Tensor) -> Tensor:
        return log_softmax(self.proj(top), axis=-1)


def greedy_ctc(logprobs: np.ndarray, vocab: Vocabulary) -> str:
    """Best-path decoding: per-frame argmax, collapse repeats, drop blanks."""
    best = np.argmax(np.asarray(logprobs), axis=-1)
    tokens = []
    previous = -1
    for position in best:
        if position != previous and position != 0:
            tokens.append(Vocabulary.from_ctc(int(position)))
        previous = position
    return vocab.decode([t for t in tokens if t != BLANK])
