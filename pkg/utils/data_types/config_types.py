"""Hyperparameter records.

Defaults are the full-scale values (`presets/full.ini`); the desk preset (`presets/desk.ini`)
overrides them for CPU-sized runs.
"""

from dataclasses import dataclass, field, fields
from typing import Any, Optional

from utils import stable_hash
from utils.errors import ConfigurationError
from .base import ConfigSection, DataModelObject

FRONTEND_KINDS = ("visual-3d-residual", "audio-1d-residual", "audio-1d-cnn", "passthrough")
SUPPORTED_LANGUAGES = ("en", "zh", "es", "it", "pt", "fr")


def _check_unit(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ConfigurationError(f"{name} must be in [0, 1], got {value}")


@dataclass
class FrontendConfig(ConfigSection):
    kind: str = "visual-3d-residual"
    width_multiplier: float = 1.0
    # passthrough: feature dimension of the pre-extracted input
    output_dim: int = 512

    def validate(self) -> None:
        if self.kind not in FRONTEND_KINDS:
            raise ConfigurationError(f"Unknown front-end kind `{self.kind}`, expected one of {FRONTEND_KINDS}")
        if self.width_multiplier <= 0:
            raise ConfigurationError(f"width_multiplier must be positive, got {self.width_multiplier}")
        if self.output_dim < 1:
            raise ConfigurationError(f"output_dim must be positive, got {self.output_dim}")

    def channels(self, base: int) -> int:
        return max(1, int(round(base * self.width_multiplier)))

    @property
    def feature_dim(self) -> int:
        """Channel count the encoder receives from this front-end."""
        if self.kind == "passthrough":
            return self.output_dim
        return self.channels(512)


@dataclass
class ConformerConfig(ConfigSection):
    num_blocks: int = 12
    model_dim: int = 256
    ff_dim: int = 2048
    head_dim: int = 64
    dropout: float = 0.1
    conv_kernel: int = 31
    tap_layer: int = 6
    max_relative: int = 64

    @property
    def num_heads(self) -> int:
        return self.model_dim // self.head_dim

    def validate(self) -> None:
        if self.num_blocks < 0:
            raise ConfigurationError(f"num_blocks must be >= 0, got {self.num_blocks}")
        if self.head_dim < 1 or self.model_dim % self.head_dim:
            raise ConfigurationError(f"model_dim {self.model_dim} is not divisible by head_dim {self.head_dim}")
        if self.conv_kernel < 1 or self.conv_kernel % 2 == 0:
            raise ConfigurationError(f"conv_kernel must be odd and positive, got {self.conv_kernel}")
        if not 0 <= self.tap_layer <= self.num_blocks:
            raise ConfigurationError(f"tap_layer {self.tap_layer} outside [0, {self.num_blocks}]")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.max_relative < 0:
            raise ConfigurationError(f"max_relative must be >= 0, got {self.max_relative}")


@dataclass
class DecoderConfig(ConfigSection):
    num_blocks: int = 6
    model_dim: int = 256
    ff_dim: int = 2048
    head_dim: int = 64
    dropout: float = 0.1
    max_positions: int = 1024

    @property
    def num_heads(self) -> int:
        return self.model_dim // self.head_dim

    def validate(self) -> None:
        if self.num_blocks < 1:
            raise ConfigurationError(f"Decoder needs at least one block, got {self.num_blocks}")
        if self.head_dim < 1 or self.model_dim % self.head_dim:
            raise ConfigurationError(f"model_dim {self.model_dim} is not divisible by head_dim {self.head_dim}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError(f"dropout must be in [0, 1), got {self.dropout}")


@dataclass
class LmConfig(ConfigSection):
    num_blocks: int = 2
    model_dim: int = 128
    ff_dim: int = 512
    head_dim: int = 32
    dropout: float = 0.1
    max_positions: int = 1024
    epochs: int = 10
    batch_size: int = 32
    peak_lr: float = 1e-3
    warmup_steps: int = 200

    @property
    def num_heads(self) -> int:
        return self.model_dim // self.head_dim

    def validate(self) -> None:
        if self.head_dim < 1 or self.model_dim % self.head_dim:
            raise ConfigurationError(f"LM model_dim {self.model_dim} is not divisible by head_dim {self.head_dim}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigurationError("LM epochs must be >= 0 and batch_size >= 1")


@dataclass
class LossWeights(ConfigSection):
    ctc_weight: float = 0.1
    audio_aux_weight: float = 0.4
    visual_aux_weight: float = 0.4
    label_smoothing: float = 0.0

    def validate(self) -> None:
        _check_unit("ctc_weight", self.ctc_weight)
        _check_unit("audio_aux_weight", self.audio_aux_weight)
        _check_unit("visual_aux_weight", self.visual_aux_weight)
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigurationError(f"label_smoothing must be in [0, 1), got {self.label_smoothing}")


@dataclass
class DecodeConfig(ConfigSection):
    beam_size: int = 40
    ctc_weight: float = 0.1
    lm_weight: float = 0.6
    max_len_ratio: float = 1.0
    # absolute cap on emitted characters, 0 means use max_len_ratio * T
    max_len: int = 0
    language: str = "en"

    def validate(self) -> None:
        if self.beam_size < 1:
            raise ConfigurationError(f"beam_size must be >= 1, got {self.beam_size}")
        _check_unit("ctc_weight", self.ctc_weight)
        if self.lm_weight < 0:
            raise ConfigurationError(f"lm_weight must be >= 0, got {self.lm_weight}")
        if self.max_len_ratio <= 0 and self.max_len <= 0:
            raise ConfigurationError("Either max_len_ratio or max_len must be positive")

    def length_limit(self, frames: int) -> int:
        if self.max_len > 0:
            return self.max_len
        return max(1, int(self.max_len_ratio * frames))


@dataclass
class CurriculumSchedule(ConfigSection):
    caps: list[int] = field(default_factory=lambda: [100, 150, 300, 450, 600])
    enabled: bool = True

    def validate(self) -> None:
        if not self.caps:
            raise ConfigurationError("Curriculum needs at least one stage")
        if any(b <= a for a, b in zip(self.caps, self.caps[1:])) or self.caps[0] < 1:
            raise ConfigurationError(f"Curriculum caps must be positive and strictly increasing, got {self.caps}")

    def stage_epochs(self, total_epochs: int) -> list[int]:
        """Split the epoch budget evenly over the stages, remainder to the last."""
        stages = len(self.caps) if self.enabled else 1
        base, rest = divmod(total_epochs, stages)
        plan = [base] * stages
        plan[-1] += rest
        return plan


@dataclass
class OptimizerConfig(ConfigSection):
    peak_lr: float = 4e-4
    warmup_steps: int = 25_000
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    clip_norm: float = 0.0

    def validate(self) -> None:
        if self.peak_lr <= 0 or self.warmup_steps < 1:
            raise ConfigurationError("peak_lr must be positive and warmup_steps >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.eps <= 0:
            raise ConfigurationError("Adam betas must be in [0, 1) and eps positive")


@dataclass
class TrainConfig(ConfigSection):
    epochs: int = 50
    teacher_epochs: int = 50
    batch_size: int = 16
    halve_threshold: int = 220
    average_last: int = 10
    seed: int = 0
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4, 5, 6, 7, 8, 9])
    mask_max_seconds: float = 0.4
    mask_proportional: bool = False
    spatial_augment: bool = True
    crop_size: int = 88
    dtype: str = "float64"

    def validate(self) -> None:
        if self.epochs < 1 or self.teacher_epochs < 1:
            raise ConfigurationError("epochs and teacher_epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.halve_threshold < 1:
            raise ConfigurationError(f"halve_threshold must be >= 1, got {self.halve_threshold}")
        if self.average_last < 1:
            raise ConfigurationError(f"average_last must be >= 1, got {self.average_last}")
        if self.dtype not in ("float64", "float32"):
            raise ConfigurationError(f"dtype must be float64 or float32, got {self.dtype}")
        if self.mask_max_seconds < 0:
            raise ConfigurationError("mask_max_seconds must be >= 0")


@dataclass
class AblationSwitches(ConfigSection):
    audio_aux: bool = True
    visual_aux: bool = True
    time_masking: bool = True


_SECTIONS: dict[str, type[ConfigSection]] = {
    "visual_frontend": FrontendConfig,
    "audio_frontend": FrontendConfig,
    "encoder": ConformerConfig,
    "decoder": DecoderConfig,
    "lm": LmConfig,
    "loss": LossWeights,
    "decode": DecodeConfig,
    "curriculum": CurriculumSchedule,
    "optimizer": OptimizerConfig,
    "train": TrainConfig,
    "ablation": AblationSwitches,
}


@dataclass
class ExperimentConfig(DataModelObject):
    """Everything a run depends on; serialized next to every run directory."""

    visual_frontend: FrontendConfig = field(default_factory=FrontendConfig)
    audio_frontend: FrontendConfig = field(default_factory=lambda: FrontendConfig(kind="audio-1d-residual"))
    encoder: ConformerConfig = field(default_factory=ConformerConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    lm: LmConfig = field(default_factory=LmConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    curriculum: CurriculumSchedule = field(default_factory=CurriculumSchedule)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    ablation: AblationSwitches = field(default_factory=AblationSwitches)

    @staticmethod
    def sections() -> dict[str, type[ConfigSection]]:
        return dict(_SECTIONS)

    def to_dict(self) -> dict[str, dict[str, Any]]:
        return {f.name: getattr(self, f.name).to_dict() for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentConfig":
        unknown = sorted(set(data) - set(_SECTIONS))
        if unknown:
            raise ConfigurationError(f"Unknown config sections: {unknown}")
        config = cls()
        for name, section in data.items():
            current = getattr(config, name).to_dict()
            current.update(section)
            setattr(config, name, _SECTIONS[name].from_dict(current))
        return config

    def validate(self) -> "ExperimentConfig":
        for f in fields(self):
            getattr(self, f.name).validate()
        if self.encoder.model_dim != self.decoder.model_dim:
            raise ConfigurationError(
                f"Encoder and decoder widths differ ({self.encoder.model_dim} vs {self.decoder.model_dim})"
            )
        if self.decode.language not in SUPPORTED_LANGUAGES:
            raise ConfigurationError(
                f"Unsupported language `{self.decode.language}`, expected one of {SUPPORTED_LANGUAGES}"
            )
        return self

    def config_hash(self) -> str:
        return stable_hash(self.to_dict())

    def with_ablation(self, audio_aux: bool, visual_aux: bool, time_masking: bool) -> "ExperimentConfig":
        data = self.to_dict()
        data["ablation"] = {"audio_aux": audio_aux, "visual_aux": visual_aux, "time_masking": time_masking}
        return ExperimentConfig.from_dict(data)

    def with_overrides(self, overrides: Optional[dict[str, dict[str, Any]]] = None) -> "ExperimentConfig":
        data = self.to_dict()
        for section, values in (overrides or {}).items():
            data.setdefault(section, {}).update(values)
        return ExperimentConfig.from_dict(data)

    @property
    def aux_enabled(self) -> bool:
        return self.effective_audio_aux > 0 or self.effective_visual_aux > 0

    @property
    def effective_audio_aux(self) -> float:
        return self.loss.audio_aux_weight if self.ablation.audio_aux else 0.0

    @property
    def effective_visual_aux(self) -> float:
        return self.loss.visual_aux_weight if self.ablation.visual_aux else 0.0
