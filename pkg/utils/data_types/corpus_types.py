from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from utils.errors import DataError
from .base import ConfigSection, DataModelObject

FRAME_RATE = 25
CORPUS_MODES = ("feature", "image")


@dataclass
class Utterance(DataModelObject):
    """One manifest entry, optionally with its loaded feature arrays.

    `visual` is `[T, D_v]` (feature mode) or `[T, H, W]` (image mode);
    `audio` is `[T, D_a]`. Paths are relative to the manifest directory.
    """

    id: str
    language: str
    transcript: str
    frames: int
    visual_path: str
    audio_path: Optional[str] = None
    visual: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    audio: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "language": self.language,
            "transcript": self.transcript,
            "frames": self.frames,
            "visual_path": self.visual_path,
            "audio_path": self.audio_path,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Utterance":
        try:
            utt = cls(
                id=str(data["id"]),
                language=str(data["language"]),
                transcript=str(data["transcript"]),
                frames=int(data["frames"]),
                visual_path=str(data["visual_path"]),
                audio_path=data.get("audio_path"),
            )
        except KeyError as e:
            raise DataError(f"Manifest record is missing field {e}") from e
        if not utt.transcript:
            raise DataError(f"Utterance {utt.id} has an empty transcript")
        if utt.frames < 1:
            raise DataError(f"Utterance {utt.id} has {utt.frames} frames")
        return utt

    @property
    def duration(self) -> float:
        return self.frames / FRAME_RATE


@dataclass
class AmbiguityMap(DataModelObject):
    """Many-to-one character -> viseme class assignment plus visual noise level."""

    classes: dict[str, int]
    sigma: float = 0.0

    @classmethod
    def identity(cls, characters: str, sigma: float = 0.0) -> "AmbiguityMap":
        return cls({c: i for i, c in enumerate(characters)}, sigma)

    @classmethod
    def merged(cls, characters: str, groups: list[str], sigma: float = 0.0) -> "AmbiguityMap":
        """Characters in the same group share a class; the rest stay distinct."""
        classes: dict[str, int] = {}
        next_id = 0
        for group in groups:
            for c in group:
                if c not in characters:
                    raise DataError(f"Merge group `{group}` uses `{c}`, which is not in the alphabet")
                classes[c] = next_id
            next_id += 1
        for c in characters:
            if c not in classes:
                classes[c] = next_id
                next_id += 1
        return cls(classes, sigma)

    @property
    def num_classes(self) -> int:
        return len(set(self.classes.values()))

    @property
    def homophene_groups(self) -> list[list[str]]:
        groups: dict[int, list[str]] = {}
        for c in sorted(self.classes):
            groups.setdefault(self.classes[c], []).append(c)
        return [g for _, g in sorted(groups.items()) if len(g) > 1]

    @property
    def is_degenerate(self) -> bool:
        return len(self.classes) > 1 and self.num_classes == 1

    def to_dict(self) -> dict[str, Any]:
        return {"classes": dict(sorted(self.classes.items())), "sigma": self.sigma}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "AmbiguityMap":
        return cls({str(k): int(v) for k, v in data["classes"].items()}, float(data["sigma"]))


@dataclass
class CorpusConfig(ConfigSection):
    """Parameters of the synthetic corpus generator."""

    seed: int = 0
    size: int = 500
    mode: str = "feature"
    language: str = "en"
    alphabet: str = "abcdefghijklmnop"
    use_space: bool = True
    merges: list[str] = field(default_factory=list)
    sigma_visual: float = 0.0
    sigma_audio: float = 0.0
    visual_dim: int = 32
    audio_dim: int = 32
    # write 640-sample-per-frame waveforms instead of audio feature vectors
    audio_waveform: bool = False
    min_chars: int = 3
    max_chars: int = 12
    min_frames_per_char: int = 2
    max_frames_per_char: int = 4
    dev_fraction: float = 0.1
    test_fraction: float = 0.1
    canvas: int = 24

    def validate(self) -> None:
        if self.size < 1:
            raise DataError(f"Corpus size must be >= 1, got {self.size}")
        if self.mode not in CORPUS_MODES:
            raise DataError(f"Corpus mode must be one of {CORPUS_MODES}, got `{self.mode}`")
        if len(set(self.alphabet)) != len(self.alphabet) or not self.alphabet or " " in self.alphabet:
            raise DataError("Alphabet must be non-empty with unique, non-space characters")
        if not 1 <= self.min_chars <= self.max_chars:
            raise DataError("Need 1 <= min_chars <= max_chars")
        if not 1 <= self.min_frames_per_char <= self.max_frames_per_char:
            raise DataError("Need 1 <= min_frames_per_char <= max_frames_per_char")
        if self.dev_fraction < 0 or self.test_fraction < 0 or self.dev_fraction + self.test_fraction >= 1:
            raise DataError("dev_fraction + test_fraction must be in [0, 1)")
        if self.sigma_visual < 0 or self.sigma_audio < 0:
            raise DataError("Noise levels must be >= 0")
        if self.canvas < 12:
            raise DataError(f"Image canvas must be at least 12 pixels, got {self.canvas}")

    @property
    def characters(self) -> str:
        return self.alphabet + (" " if self.use_space else "")

    def ambiguity(self) -> AmbiguityMap:
        return AmbiguityMap.merged(self.characters, self.merges, self.sigma_visual)


@dataclass
class NormStats(DataModelObject):
    """Training-split normalisation statistics.

    `mean`/`std` are scalars (image mode) or per-dimension lists (feature
    mode). `provenance` records the split they were computed on.
    """

    visual_mean: Any
    visual_std: Any
    audio_mean: Any = None
    audio_std: Any = None
    provenance: str = "train"
    floored: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        def plain(value: Any) -> Any:
            return np.asarray(value).tolist() if value is not None else None

        return {
            "visual_mean": plain(self.visual_mean),
            "visual_std": plain(self.visual_std),
            "audio_mean": plain(self.audio_mean),
            "audio_std": plain(self.audio_std),
            "provenance": self.provenance,
            "floored": list(self.floored),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "NormStats":
        def array(value: Any) -> Any:
            return None if value is None else np.asarray(value, dtype=np.float64)

        return cls(
            visual_mean=array(data["visual_mean"]),
            visual_std=array(data["visual_std"]),
            audio_mean=array(data.get("audio_mean")),
            audio_std=array(data.get("audio_std")),
            provenance=str(data.get("provenance", "train")),
            floored=list(data.get("floored", [])),
        )


@dataclass
class MaskLog:
    """Spans replaced by the temporal mean: (start, length) per mask."""

    spans: list[tuple[int, int]] = field(default_factory=list)
    max_length: int = 0

    @property
    def count(self) -> int:
        return len(self.spans)

    def masked_frames(self) -> list[int]:
        frames = set()
        for start, length in self.spans:
            frames.update(range(start, start + length))
        return sorted(frames)


@dataclass
class Batch:
    """Padded, model-ready arrays for one step.

    `decoder_inputs` is `<sos>` + tokens (padded with `<eos>`), and
    `decoder_targets` holds decoder-head positions of tokens + `<eos>`,
    padded with -1.
    """

    ids: list[str]
    inputs: np.ndarray
    lengths: np.ndarray
    targets: list[list[int]]
    decoder_inputs: np.ndarray
    decoder_targets: np.ndarray
    audio: Optional[np.ndarray] = None
    audio_lengths: Optional[np.ndarray] = None
    mask_logs: list[MaskLog] = field(default_factory=list)
    crop_offsets: list[tuple[int, int]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.ids)
