"""Pre-trained ASR/VSR teachers whose tapped representations are the auxiliary targets."""

from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Optional, Sequence, Union

import numpy as np

from utils.autodiff import no_grad
from utils.data_types.config_types import ExperimentConfig
from utils.data_types.corpus_types import Batch, NormStats, Utterance
from utils.data_types.vocabulary import Vocabulary
from utils.errors import DataError
from utils.logging import LoggedClass
from utils.nn.model import VSRModel
from .checkpoint import load_checkpoint, restore_model

if TYPE_CHECKING:
    from .trainer import TrainResult

AUDIO_DIR = "teacher_audio"
VISUAL_DIR = "teacher_visual"
AVERAGED = "model_avg.vsrc"


@dataclass
class Teachers:
    """Frozen audio (ASR) and visual (VSR) recognizers, either may be absent.

    `tap_layer` overrides the encoder block the targets are read from.
    """

    audio: Optional[VSRModel] = None
    visual: Optional[VSRModel] = None
    tap_layer: Optional[int] = None

    def __post_init__(self) -> None:
        for model in (self.audio, self.visual):
            if model is not None:
                model.freeze().eval()

    def extract(
        self, batch: Batch, audio: bool = True, visual: bool = True
    ) -> tuple[Optional[np.ndarray], Optional[np.ndarray]]:
        """Tapped encoder outputs `[B, T, D]` as plain arrays (no gradient path)."""
        audio_targets = visual_targets = None
        with no_grad():
            if audio:
                if self.audio is None:
                    raise DataError("Audio auxiliary targets requested but no ASR teacher is loaded")
                if batch.audio is None:
                    raise DataError("Batch has no audio channel for the ASR teacher")
                audio_targets = self.audio.encode(
                    batch.audio, batch.audio_lengths, stop_at_tap=True, tap_layer=self.tap_layer
                ).tap.data
            if visual:
                if self.visual is None:
                    raise DataError("Visual auxiliary targets requested but no VSR teacher is loaded")
                visual_targets = self.visual.encode(
                    batch.inputs, batch.lengths, stop_at_tap=True, tap_layer=self.tap_layer
                ).tap.data
        return audio_targets, visual_targets


class TeacherTrainer(LoggedClass):
    """Trains the baseline ASR and VSR models on the same data as the student."""

    def __init__(self, cfg: ExperimentConfig, vocab: Vocabulary, stats: NormStats, out_dir: Union[str, Path]) -> None:
        super().__init__()
        self.cfg = cfg
        self.vocab = vocab
        self.stats = stats
        self.out_dir = Path(out_dir)

    def _baseline_cfg(self) -> ExperimentConfig:
        # teachers are trained on the main loss only
        return self.cfg.with_ablation(False, False, self.cfg.ablation.time_masking)

    def train_one(
        self,
        modality: str,
        train: Sequence[Utterance],
        dev: Optional[Sequence[Utterance]] = None,
        epochs: Optional[int] = None,
        seed: Optional[int] = None,
    ) -> "TrainResult":
        from .trainer import Trainer

        run_dir = self.out_dir / (AUDIO_DIR if modality == "audio" else VISUAL_DIR)
        trainer = Trainer(
            self._baseline_cfg(),
            self.vocab,
            self.stats,
            run_dir,
            modality=modality,
            epochs=epochs or self.cfg.train.teacher_epochs,
            seed=seed,
        )
        self.info(f"Training {modality} teacher into {run_dir}")
        return trainer.fit(train, dev)

    def train(
        self,
        train: Sequence[Utterance],
        dev: Optional[Sequence[Utterance]] = None,
        epochs: Optional[int] = None,
        seed: Optional[int] = None,
    ) -> Teachers:
        if any(u.audio is None for u in train):
            raise DataError("Every training utterance needs audio to build the ASR teacher")
        audio = self.train_one("audio", train, dev, epochs, seed).model
        visual = self.train_one("visual", train, dev, epochs, seed).model
        return Teachers(audio=audio, visual=visual)


def train_teachers(
    cfg: ExperimentConfig,
    vocab: Vocabulary,
    stats: NormStats,
    train: Sequence[Utterance],
    out_dir: Union[str, Path],
    dev: Optional[Sequence[Utterance]] = None,
    epochs: Optional[int] = None,
    seed: Optional[int] = None,
) -> Teachers:
    return TeacherTrainer(cfg, vocab, stats, out_dir).train(train, dev, epochs, seed)


def load_teachers(teacher_dir: Union[str, Path]) -> Teachers:
    teacher_dir = Path(teacher_dir)
    models = {}
    for name, sub in (("audio", AUDIO_DIR), ("visual", VISUAL_DIR)):
        path = teacher_dir / sub / AVERAGED
        models[name] = restore_model(load_checkpoint(path)) if path.exists() else None
    if models["audio"] is None and models["visual"] is None:
        raise DataError(f"No teacher checkpoints under {teacher_dir}")
    return Teachers(**models)
