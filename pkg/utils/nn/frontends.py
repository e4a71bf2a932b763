"""Front-end encoders reducing raw video or waveforms to 25 Hz feature sequences.

Every front-end maps its input to `[B, C, T]` and reports the number of
valid output frames per sample through `output_lengths`. With a width
multiplier of 1 the channel ladder is 64 -> 128 -> 256 -> 512.
"""

from typing import Optional, Sequence

import numpy as np

from utils.autodiff import Tensor, avg_pool, length_mask, max_pool, output_extent, swish
from utils.data_types.config_types import FrontendConfig
from utils.errors import ConfigurationError, DataError, ShapeError
from .module import BatchNorm, Conv, Module

AUDIO_SAMPLES_PER_FRAME = 640
STAGE_BASES = (64, 128, 256, 512)
STAGE_STRIDES = (1, 2, 2, 2)


class Frontend(Module):
    """Base class; subclasses implement `forward(x, lengths)`."""

    def __init__(self, cfg: FrontendConfig) -> None:
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.trace: Optional[list[tuple[str, tuple[int, ...]]]] = None

    @property
    def output_dim(self) -> int:
        return self.cfg.feature_dim

    def output_lengths(self, lengths: np.ndarray) -> np.ndarray:
        return np.asarray(lengths, dtype=np.int64)

    def _record(self, stage: str, x: Tensor) -> None:
        if self.trace is not None:
            self.trace.append((stage, x.shape))

    def traced(self, x: Tensor, lengths: Optional[np.ndarray] = None) -> tuple[Tensor, list[tuple[str, tuple[int, ...]]]]:
        """Run `forward` and return the (stage, output shape) list it passed through."""
        self.trace = []
        try:
            out = self.forward(x, lengths)
            return out, self.trace
        finally:
            self.trace = None


class ResidualBlock(Module):
    """Two 3-tap convolutions with batch norm and a projected shortcut when needed."""

    def __init__(self, in_c: int, out_c: int, stride: int, dims: int, rng: np.random.Generator) -> None:
        super().__init__()
        self.conv1 = Conv(in_c, out_c, 3, rng, stride=stride, padding=1, dims=dims, bias=False)
        self.bn1 = BatchNorm(out_c)
        self.conv2 = Conv(out_c, out_c, 3, rng, stride=1, padding=1, dims=dims, bias=False)
        self.bn2 = BatchNorm(out_c)
        self.project = stride != 1 or in_c != out_c
        if self.project:
            self.shortcut = Conv(in_c, out_c, 1, rng, stride=stride, padding=0, dims=dims, bias=False)
            self.shortcut_bn = BatchNorm(out_c)

    def forward(self, x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        """`mask` marks valid positions at the block's output resolution."""
        h = swish(self.bn1(self.conv1(x), mask))
        h = self.bn2(self.conv2(h), mask)
        skip = self.shortcut_bn(self.shortcut(x), mask) if self.project else x
        return swish(h + skip)


class ResidualStage(Module):
    def __init__(self, in_c: int, out_c: int, stride: int, dims: int, rng: np.random.Generator) -> None:
        super().__init__()
        self.block1 = ResidualBlock(in_c, out_c, stride, dims, rng)
        self.block2 = ResidualBlock(out_c, out_c, 1, dims, rng)

    def forward(self, x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        return self.block2(self.block1(x, mask), mask)


def _spatial_chain(height: int, width: int) -> list[tuple[str, int, int]]:
    """Spatial extents after each visual stage, raising if any collapses."""
    chain = []
    h = output_extent(height, 7, 2, 3)
    w = output_extent(width, 7, 2, 3)
    chain.append(("stem_conv", h, w))
    h, w = output_extent(h, 3, 2, 1), output_extent(w, 3, 2, 1)
    chain.append(("stem_pool", h, w))
    for index, stride in enumerate(STAGE_STRIDES, start=1):
        h, w = output_extent(h, 3, stride, 1), output_extent(w, 3, stride, 1)
        chain.append((f"stage{index}", h, w))
    for stage, h, w in chain:
        if h <= 0 or w <= 0:
            raise ConfigurationError(
                f"Visual front-end input {height}x{width} collapses to {h}x{w} at stage `{stage}`"
            )
    return chain


class VisualFrontend(Frontend):
    """3D convolutional stem followed by a 2D residual network applied per frame.

    Input `[B, 1, T, H, W]`, output `[B, C, T]` with T unchanged.
    """

    def __init__(self, cfg: FrontendConfig, rng: np.random.Generator) -> None:
        super().__init__(cfg)
        stem = cfg.channels(64)
        self.stem_conv = Conv(1, stem, (5, 7, 7), rng, stride=(1, 2, 2), padding=(2, 3, 3), dims=3, bias=False)
        self.stem_bn = BatchNorm(stem)
        in_c = stem
        self.stages: list[ResidualStage] = []
        for index, (base, stride) in enumerate(zip(STAGE_BASES, STAGE_STRIDES), start=1):
            out_c = cfg.channels(base)
            stage = ResidualStage(in_c, out_c, stride, 2, rng)
            setattr(self, f"stage{index}", stage)
            self.stages.append(stage)
            in_c = out_c

    def forward(self, x: Tensor, lengths: Optional[np.ndarray] = None) -> Tensor:
        if x.ndim != 5 or x.shape[1] != 1:
            raise ShapeError("Visual front-end expects [B, 1, T, H, W]", x.shape)
        batch, _, frames, height, width = x.shape
        _spatial_chain(height, width)
        valid = None
        if lengths is not None:
            valid = length_mask(lengths, frames)

        x = self.stem_conv(x)
        self._record("stem_conv", x)
        x = swish(self.stem_bn(x, None if valid is None else valid[:, None, :, None, None]))
        x = max_pool(x, kernel=(1, 3, 3), stride=(1, 2, 2), padding=(0, 1, 1), dims=3)
        self._record("stem_pool", x)

        channels, h, w = x.shape[1], x.shape[3], x.shape[4]
        x = x.transpose(0, 2, 1, 3, 4).reshape(batch * frames, channels, h, w)
        self._record("reshape", x)
        flat = None if valid is None else valid.reshape(batch * frames)[:, None, None, None]
        for index, stage in enumerate(self.stages, start=1):
            x = stage(x, flat)
            self._record(f"stage{index}", x)

        x = x.mean(axis=(2, 3))
        self._record("global_pool", x)
        x = x.reshape(batch, frames, x.shape[1]).transpose(0, 2, 1)
        self._record("output", x)
        return x


def _trim_audio(x: Tensor) -> Tensor:
    if x.ndim != 3 or x.shape[1] != 1:
        raise ShapeError("Audio front-end expects [B, 1, T_a]", x.shape)
    samples = x.shape[2]
    if samples < AUDIO_SAMPLES_PER_FRAME:
        raise DataError(
            f"Audio input too short: {samples} samples, need at least {AUDIO_SAMPLES_PER_FRAME}"
        )
    usable = samples - samples % AUDIO_SAMPLES_PER_FRAME
    return x if usable == samples else x[:, :, :usable]


def _level_mask(lengths: Optional[np.ndarray], factor: int, extent: int) -> Optional[np.ndarray]:
    if lengths is None:
        return None
    return length_mask(np.asarray(lengths) // factor, extent)[:, None, :]


class AudioResidualFrontend(Frontend):
    """1D residual network over the waveform, 640 samples per output frame."""

    def __init__(self, cfg: FrontendConfig, rng: np.random.Generator) -> None:
        super().__init__(cfg)
        stem = cfg.channels(64)
        self.stem_conv = Conv(1, stem, 80, rng, stride=4, padding=38, dims=1, bias=False)
        self.stem_bn = BatchNorm(stem)
        in_c = stem
        self.stages: list[ResidualStage] = []
        for index, (base, stride) in enumerate(zip(STAGE_BASES, STAGE_STRIDES), start=1):
            out_c = cfg.channels(base)
            stage = ResidualStage(in_c, out_c, stride, 1, rng)
            setattr(self, f"stage{index}", stage)
            self.stages.append(stage)
            in_c = out_c

    def output_lengths(self, lengths: np.ndarray) -> np.ndarray:
        return np.asarray(lengths, dtype=np.int64) // AUDIO_SAMPLES_PER_FRAME

    def forward(self, x: Tensor, lengths: Optional[np.ndarray] = None) -> Tensor:
        x = _trim_audio(x)
        x = self.stem_conv(x)
        self._record("stem_conv", x)
        factor = 4
        x = swish(self.stem_bn(x, _level_mask(lengths, factor, x.shape[2])))
        for index, (stage, stride) in enumerate(zip(self.stages, STAGE_STRIDES), start=1):
            factor *= stride
            x = stage(x, _level_mask(lengths, factor, x.shape[2] // stride))
            self._record(f"stage{index}", x)
        x = avg_pool(x, kernel=20, stride=20, dims=1)
        self._record("avg_pool", x)
        return x


# (kernel, stride, padding, base channels)
CNN_LAYERS: Sequence[tuple[int, int, int, int]] = (
    (80, 4, 38, 64),
    (20, 4, 8, 64),
    (4, 2, 1, 128),
    (4, 2, 1, 256),
    (4, 2, 1, 512),
)


class AudioCNNFrontend(Frontend):
    """Five strided 1D convolutions and a stride-5 average pool."""

    def __init__(self, cfg: FrontendConfig, rng: np.random.Generator) -> None:
        super().__init__(cfg)
        in_c = 1
        self.layers: list[tuple[Conv, BatchNorm, int]] = []
        for index, (kernel, stride, padding, base) in enumerate(CNN_LAYERS, start=1):
            out_c = cfg.channels(base)
            layer = Conv(in_c, out_c, kernel, rng, stride=stride, padding=padding, dims=1, bias=False)
            norm = BatchNorm(out_c)
            setattr(self, f"conv{index}", layer)
            setattr(self, f"bn{index}", norm)
            self.layers.append((layer, norm, stride))
            in_c = out_c

    def output_lengths(self, lengths: np.ndarray) -> np.ndarray:
        return np.asarray(lengths, dtype=np.int64) // AUDIO_SAMPLES_PER_FRAME

    def forward(self, x: Tensor, lengths: Optional[np.ndarray] = None) -> Tensor:
        x = _trim_audio(x)
        factor = 1
        for index, (layer, norm, stride) in enumerate(self.layers, start=1):
            x = layer(x)
            factor *= stride
            x = swish(norm(x, _level_mask(lengths, factor, x.shape[2])))
            self._record(f"conv{index}", x)
        x = avg_pool(x, kernel=5, stride=5, dims=1)
        self._record("avg_pool", x)
        return x


class PassthroughFrontend(Frontend):
    """Identity over pre-extracted `[B, D, T]` features."""

    def forward(self, x: Tensor, lengths: Optional[np.ndarray] = None) -> Tensor:
        if x.ndim != 3 or x.shape[1] != self.cfg.output_dim:
            raise ShapeError(f"Passthrough front-end expects [B, {self.cfg.output_dim}, T]", x.shape)
        self._record("output", x)
        return x


def build_frontend(cfg: FrontendConfig, rng: np.random.Generator) -> Frontend:
    cfg.validate()
    if cfg.kind == "visual-3d-residual":
        return VisualFrontend(cfg, rng)
    if cfg.kind == "audio-1d-residual":
        return AudioResidualFrontend(cfg, rng)
    if cfg.kind == "audio-1d-cnn":
        return AudioCNNFrontend(cfg, rng)
    return PassthroughFrontend(cfg)
