"""Character-level causal transformer language model for shallow fusion."""

import logging
from typing import Sequence, Union

import numpy as np

from utils.autodiff import Tensor, log_softmax
from utils.data_types.config_types import LmConfig
from utils.data_types.vocabulary import EOS, SOS, UNK, Vocabulary
from utils.errors import ShapeError
from utils.logging import log_once
from .attention import causal_mask
from .decoder import TransformerLayer, check_prefix, sinusoidal_positions
from .module import Embedding, LayerNorm, Linear, Module

_logger = logging.getLogger("vsr.lm")


class CharLM(Module):
    """Decoder-only transformer over sos-prefixed character ids.

    Output positions follow the decoder head: 0 is eos, p >= 1 is token p + 2.
    """

    def __init__(self, cfg: LmConfig, vocab: Vocabulary, rng: np.random.Generator) -> None:
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.vocab = vocab
        self.embedding = Embedding(len(vocab), cfg.model_dim, rng)
        self.positions = sinusoidal_positions(cfg.max_positions, cfg.model_dim)
        self.layers: list[TransformerLayer] = []
        for index in range(1, cfg.num_blocks + 1):
            layer = TransformerLayer(cfg.model_dim, cfg.head_dim, cfg.ff_dim, cfg.dropout, rng, cross=False)
            setattr(self, f"layer{index}", layer)
            self.layers.append(layer)
        self.final_norm = LayerNorm(cfg.model_dim)
        self.output = Linear(cfg.model_dim, vocab.head_size, rng)
        self.unknown_tokens = 0

    def forward(self, tokens: np.ndarray) -> Tensor:
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim != 2:
            raise ShapeError("LM expects token ids [B, L]", tokens.shape)
        length = tokens.shape[1]
        if length > self.cfg.max_positions:
            raise ShapeError(f"LM input longer than max_positions={self.cfg.max_positions}", tokens.shape)
        x = self.embedding(tokens) * (self.cfg.model_dim**0.5) + self.positions[:length]
        allowed = causal_mask(length)[None, :, :]
        for layer in self.layers:
            x = layer(x, allowed)
        return log_softmax(self.output(self.final_norm(x)), axis=-1)

    def sanitize(self, prefix: Sequence[Union[int, str]]) -> list[int]:
        """Map characters to ids and anything outside the vocabulary to unk."""
        ids = []
        for position, token in enumerate(prefix):
            if isinstance(token, str):
                token_id = self.vocab.encode(token)[0] if len(token) == 1 else UNK
                unknown = token_id == UNK
            else:
                token_id = int(token)
                leading_sos = position == 0 and token_id == SOS
                unknown = not leading_sos and not UNK <= token_id < len(self.vocab)
            if unknown:
                self.unknown_tokens += 1
                log_once(_logger, f"LM prefix contains out-of-vocabulary token {token!r}, scoring it as <unk>", logging.WARNING)
                token_id = UNK
            ids.append(token_id)
        return ids

    def lm_score(self, prefix: Sequence[Union[int, str]]) -> np.ndarray:
        """Next-character log-probabilities (eos at position 0) after `prefix`."""
        ids = self.sanitize(prefix)
        if not ids or ids[0] != SOS:
            ids = [SOS] + ids
        check_prefix(ids)
        return self.forward(np.asarray([ids], dtype=np.int64)).data[0, -1]

    def sequence_logprob(self, text: str) -> float:
        """log P(text, eos) under the model."""
        ids = [SOS] + self.vocab.encode(text)
        logprobs = self.forward(np.asarray([ids], dtype=np.int64)).data[0]
        targets = [Vocabulary.to_output(t) for t in ids[1:]] + [Vocabulary.to_output(EOS)]
        return float(sum(logprobs[i, t] for i, t in enumerate(targets)))
