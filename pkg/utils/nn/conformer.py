"""Conformer back-end encoder with a tap on an intermediate block."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from utils.autodiff import Tensor, glu, length_mask, relu, swish
from utils.data_types.config_types import ConformerConfig
from utils.errors import ConfigurationError, NumericError, ShapeError
from .attention import MultiHeadAttention
from .module import BatchNorm, Conv, Dropout, LayerNorm, Linear, Module


@dataclass
class EncoderOutput:
    """Top and tapped representations `[B, T, D]` plus valid lengths."""

    top: Tensor
    tap: Tensor
    lengths: np.ndarray
    hidden: list[Tensor] = field(default_factory=list)

    @property
    def mask(self) -> np.ndarray:
        return length_mask(self.lengths, self.top.shape[1])


class FeedForward(Module):
    def __init__(self, dim: int, ff_dim: int, dropout: float, rng: np.random.Generator) -> None:
        super().__init__()
        self.norm = LayerNorm(dim)
        self.expand = Linear(dim, ff_dim, rng)
        self.inner_dropout = Dropout(dropout)
        self.project = Linear(ff_dim, dim, rng)
        self.out_dropout = Dropout(dropout)

    def forward(self, x: Tensor) -> Tensor:
        h = self.inner_dropout(relu(self.expand(self.norm(x))))
        return self.out_dropout(self.project(h))


class ConvModule(Module):
    """pointwise -> GLU -> depthwise -> batch norm -> swish -> pointwise -> layer norm.

    The pointwise convolutions are position-wise linear maps. Padded frames
    are zeroed before the depthwise convolution and left out of the batch
    statistics, so valid frames see exactly what an unpadded run sees.
    """

    def __init__(self, dim: int, kernel: int, dropout: float, rng: np.random.Generator) -> None:
        super().__init__()
        self.pointwise_in = Linear(dim, 2 * dim, rng)
        self.depthwise = Conv(dim, dim, kernel, rng, stride=1, padding=kernel // 2, dims=1, groups=dim)
        self.norm = BatchNorm(dim)
        self.pointwise_out = Linear(dim, dim, rng)
        self.dropout = Dropout(dropout)
        self.out_norm = LayerNorm(dim)

    def forward(self, x: Tensor, valid: np.ndarray) -> Tensor:
        h = glu(self.pointwise_in(x), axis=-1)
        h = h * valid[:, :, None].astype(h.data.dtype)
        h = self.depthwise(h.transpose(0, 2, 1))
        h = swish(self.norm(h, valid[:, None, :]))
        h = self.pointwise_out(h.transpose(0, 2, 1))
        return self.out_norm(self.dropout(h))


class ConformerBlock(Module):
    """Macaron block: half FF, relative self-attention, convolution, half FF."""

    def __init__(self, cfg: ConformerConfig, rng: np.random.Generator, index: int = 0) -> None:
        super().__init__()
        self.index = index
        dim = cfg.model_dim
        self.ff1 = FeedForward(dim, cfg.ff_dim, cfg.dropout, rng)
        self.attn_norm = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, cfg.head_dim, rng, cfg.dropout, max_relative=cfg.max_relative)
        self.attn_dropout = Dropout(cfg.dropout)
        self.conv = ConvModule(dim, cfg.conv_kernel, cfg.dropout, rng)
        self.ff2 = FeedForward(dim, cfg.ff_dim, cfg.dropout, rng)
        self.final_norm = LayerNorm(dim)

    def forward(self, x: Tensor, valid: np.ndarray) -> Tensor:
        x = x + self.ff1(x) * 0.5
        normed = self.attn_norm(x)
        x = x + self.attn_dropout(self.attn(normed, normed, valid[:, None, :]))
        x = x + self.conv(x, valid)
        x = x + self.ff2(x) * 0.5
        out = self.final_norm(x)
        if not np.all(np.isfinite(out.data)):
            raise NumericError("Non-finite activations after conformer block", {"block": self.index})
        return out


class ConformerEncoder(Module):
    """Linear embedding followed by `num_blocks` conformer blocks.

    Parameters
    ----------
    cfg: ConformerConfig
        Encoder geometry; `tap_layer` selects the block whose output is
        exposed as `EncoderOutput.tap` (0 is the embedding output).
    input_dim: int
        Channel count of the front-end features.
    rng: np.random.Generator
        Initialisation stream.
    """

    def __init__(self, cfg: ConformerConfig, input_dim: int, rng: np.random.Generator) -> None:
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.input_dim = input_dim
        self.embed_proj = Linear(input_dim, cfg.model_dim, rng)
        self.blocks: list[ConformerBlock] = []
        for index in range(1, cfg.num_blocks + 1):
            block = ConformerBlock(cfg, rng, index)
            setattr(self, f"block{index}", block)
            self.blocks.append(block)

    def embed(self, features: Tensor) -> Tensor:
        """`[B, C, T]` front-end output to `[B, T, model_dim]`."""
        if features.ndim != 3 or features.shape[1] != self.input_dim:
            raise ShapeError(f"Encoder expects [B, {self.input_dim}, T] features", features.shape)
        return self.embed_proj(features.transpose(0, 2, 1))

    def forward(
        self,
        features: Tensor,
        lengths: Optional[np.ndarray] = None,
        tap_layer: Optional[int] = None,
        stop_at_tap: bool = False,
        keep_hidden: bool = False,
    ) -> EncoderOutput:
        tap_layer = self.cfg.tap_layer if tap_layer is None else tap_layer
        if not 0 <= tap_layer <= len(self.blocks):
            raise ConfigurationError(f"tap_layer {tap_layer} outside [0, {len(self.blocks)}]")
        batch, _, frames = features.shape
        lengths = np.full(batch, frames, dtype=np.int64) if lengths is None else np.asarray(lengths, dtype=np.int64)
        valid = length_mask(lengths, frames)

        x = self.embed(features)
        hidden = [x] if keep_hidden else []
        tap = x
        for index, block in enumerate(self.blocks, start=1):
            x = block(x, valid)
            if keep_hidden:
                hidden.append(x)
            if index == tap_layer:
                tap = x
                if stop_at_tap:
                    break
        return EncoderOutput(top=x, tap=tap, lengths=lengths, hidden=hidden)

    def encode(self, features: Tensor, lengths: Optional[np.ndarray] = None) -> EncoderOutput:
        return self.forward(features, lengths)
