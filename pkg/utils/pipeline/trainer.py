from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence, Union

import numpy as np

from utils import append_jsonl, write_json
from utils.autodiff import Adam, NoamSchedule, backward, no_grad, set_default_dtype
from utils.corpus.batching import AugmentOptions, collate, curriculum_filter, make_batches
from utils.data_types.config_types import ExperimentConfig, LossWeights
from utils.data_types.corpus_types import Batch, NormStats, Utterance
from utils.data_types.vocabulary import Vocabulary
from utils.errors import ConfigurationError, ContractError, DataError, NumericError
from utils.logging import LoggedClass, format_metrics
from utils.losses import (
    AuxTerms,
    LossBreakdown,
    attention_loss,
    aux_loss,
    batch_ctc_loss,
    total_loss,
    vsr_loss,
)
from utils.nn.decoder import greedy_ctc
from utils.nn.model import ModelOutput, VSRModel
from .checkpoint import (
    Checkpoint,
    average_checkpoints,
    dropout_generators,
    generator_states,
    load_checkpoint,
    model_checkpoint,
    restore_generators,
    save_checkpoint,
)
from .metrics import edit_distance_counts
from .teachers import Teachers


def model_inputs(model: VSRModel, batch: Batch) -> tuple[np.ndarray, np.ndarray]:
    """The stream a model consumes: visual for VSR models, audio for ASR models."""
    if model.modality == "visual":
        return batch.inputs, batch.lengths
    if batch.audio is None:
        raise DataError("The corpus has no audio channel, an audio model cannot be trained on it")
    return batch.audio, batch.audio_lengths


def batch_loss(
    model: VSRModel,
    batch: Batch,
    cfg: ExperimentConfig,
    teachers: Optional[Teachers] = None,
) -> LossBreakdown:
    """Every loss component of one batch.

    Auxiliary terms are only built for a model with predictors when teachers
    are supplied and the (ablation-aware) weights are non-zero.
    """
    inputs, lengths = model_inputs(model, batch)
    return losses_from_output(model, model(inputs, lengths, batch.decoder_inputs), batch, cfg, teachers)


def losses_from_output(
    model: VSRModel,
    out: ModelOutput,
    batch: Batch,
    cfg: ExperimentConfig,
    teachers: Optional[Teachers] = None,
) -> LossBreakdown:
    l_ctc = batch_ctc_loss(out.ctc_logprobs, out.encoder.lengths, batch.targets)
    l_att = attention_loss(out.decoder_logprobs, batch.decoder_targets, cfg.loss.label_smoothing)
    l_vsr = vsr_loss(l_ctc, l_att, cfg.loss.ctc_weight)
    aux = AuxTerms()
    if teachers is not None and model.has_predictors and cfg.aux_enabled:
        weights = LossWeights(
            ctc_weight=cfg.loss.ctc_weight,
            audio_aux_weight=cfg.effective_audio_aux,
            visual_aux_weight=cfg.effective_visual_aux,
            label_smoothing=cfg.loss.label_smoothing,
        )
        audio_targets, visual_targets = teachers.extract(batch, audio=weights.audio_aux_weight > 0, visual=weights.visual_aux_weight > 0)
        aux = aux_loss(out.encoder.tap, model.h_a, model.h_v, audio_targets, visual_targets, weights, out.encoder.lengths)
    return LossBreakdown(ctc=l_ctc, att=l_att, vsr=l_vsr, aux=aux, total=total_loss(l_vsr, aux.total))


@dataclass
class TrainResult:
    run_dir: Path
    checkpoints: list[Path] = field(default_factory=list)
    averaged: Optional[Path] = None
    history: list[dict[str, Any]] = field(default_factory=list)
    model: Optional[VSRModel] = None


class Trainer(LoggedClass):
    """Curriculum training of one recognizer.

    The epoch budget is split over the curriculum stages; every stage keeps
    training the same parameters, so each starts from where the previous
    one ended. A checkpoint is written after every epoch and the last
    `train.average_last` are averaged at the end.

    Parameters
    ----------
    cfg: ExperimentConfig
        Validated experiment configuration.
    vocab: Vocabulary
        Output inventory.
    stats: NormStats
        Training-split normalisation statistics.
    run_dir: str or Path
        Receives `checkpoints/`, `train_log.jsonl` and `model_avg.vsrc`.
    modality: str
        "visual" (student or VSR teacher) or "audio" (ASR teacher).
    teachers: Teachers, optional
        Frozen teachers providing auxiliary targets.
    epochs: int, optional
        Overrides `cfg.train.epochs` (teachers use `teacher_epochs`).
    seed: int, optional
        Overrides `cfg.train.seed`.
    """

    def __init__(
        self,
        cfg: ExperimentConfig,
        vocab: Vocabulary,
        stats: NormStats,
        run_dir: Union[str, Path],
        modality: str = "visual",
        teachers: Optional[Teachers] = None,
        epochs: Optional[int] = None,
        seed: Optional[int] = None,
    ) -> None:
        super().__init__()
        cfg.validate()
        set_default_dtype(cfg.train.dtype)
        self.cfg = cfg
        self.vocab = vocab
        self.stats = stats
        self.run_dir = Path(run_dir)
        self.teachers = teachers
        self.epochs = epochs or cfg.train.epochs
        self.seed = cfg.train.seed if seed is None else seed
        wants_predictors = modality == "visual" and teachers is not None and cfg.aux_enabled
        self.model = VSRModel(cfg, vocab, modality=modality, seed=self.seed, predictors=wants_predictors)
        opt = cfg.optimizer
        self.optimizer = Adam(
            self.model.named_parameters(),
            NoamSchedule(opt.peak_lr, opt.warmup_steps),
            beta1=opt.beta1,
            beta2=opt.beta2,
            eps=opt.eps,
            clip_norm=opt.clip_norm,
        )
        self.augment = AugmentOptions(
            time_masking=cfg.ablation.time_masking and modality == "visual",
            mask_max_seconds=cfg.train.mask_max_seconds,
            mask_proportional=cfg.train.mask_proportional,
            spatial=cfg.train.spatial_augment,
            crop_size=cfg.train.crop_size,
        )
        self.order_rng = np.random.default_rng([self.seed, 1])
        self.augment_rng = np.random.default_rng([self.seed, 2])
        self.log_path = self.run_dir / "train_log.jsonl"

    def generators(self) -> dict[str, np.random.Generator]:
        """Every generator training draws from, by name."""
        return {"order": self.order_rng, "augment": self.augment_rng, **dropout_generators(self.model)}

    def rng_state(self, epoch: int) -> dict[str, Any]:
        return {"seed": self.seed, "epoch": epoch, "generators": generator_states(self.generators())}

    def restore_rng(self, rng_state: dict[str, Any]) -> None:
        """Continue every generator from a checkpoint's `rng_state`."""
        if not rng_state or "generators" not in rng_state:
            raise DataError("Checkpoint carries no generator state to resume from")
        restore_generators(self.generators(), rng_state["generators"])

    def _resume(self, checkpoint: Checkpoint, ckpt_dir: Path) -> tuple[int, list[Path]]:
        meta = checkpoint.metadata
        if meta.get("config_hash") != self.cfg.config_hash():
            raise ConfigurationError("Cannot resume: checkpoint was written under a different configuration")
        if meta.get("kind") != f"{self.model.modality}-model":
            raise DataError(f"Cannot resume a {self.model.modality} run from a `{meta.get('kind')}` checkpoint")
        if checkpoint.epoch >= self.epochs:
            raise ContractError(f"Checkpoint epoch {checkpoint.epoch} leaves nothing of a {self.epochs}-epoch run")
        self.model.load_state_dict(checkpoint.params)
        self.restore_rng(meta.get("rng_state") or {})
        self.optimizer.step_count = checkpoint.step
        earlier = [ckpt_dir / f"epoch_{e:03d}.vsrc" for e in range(1, checkpoint.epoch + 1)]
        self.info(f"Resuming at epoch {checkpoint.epoch + 1}, step {checkpoint.step}; Adam moments restart from zero")
        return checkpoint.epoch, [p for p in earlier if p.exists()]

    def stage_plan(self) -> list[tuple[int, Optional[int]]]:
        """(stage index, frame cap) for every epoch."""
        schedule = self.cfg.curriculum
        if not schedule.enabled:
            return [(0, None)] * self.epochs
        plan = []
        for stage, count in enumerate(schedule.stage_epochs(self.epochs)):
            plan.extend([(stage, schedule.caps[stage])] * count)
        return plan

    def train_step(self, batch: Batch, epoch: int, stage: int) -> dict[str, Any]:
        self.model.train()
        self.optimizer.zero_grad()
        losses = batch_loss(self.model, batch, self.cfg, self.teachers)
        values = losses.as_floats()
        if not np.isfinite(values["total"]):
            self._dump_batch(batch, values, epoch)
            raise NumericError(
                "Non-finite training loss",
                {"epoch": epoch, "step": self.optimizer.step_count + 1, "batch": ",".join(batch.ids[:4])},
            )
        backward(losses.total)
        lr = self.optimizer.step()
        record = {"epoch": epoch, "stage": stage, "step": self.optimizer.step_count, "lr": lr, "batch_size": len(batch)}
        record.update(values)
        append_jsonl(self.log_path, record)
        self.debug(format_metrics(record))
        return record

    def _dump_batch(self, batch: Batch, values: dict[str, float], epoch: int) -> None:
        path = self.run_dir / "failed_batch.json"
        write_json(path, {"epoch": epoch, "ids": batch.ids, "lengths": batch.lengths, "losses": values})
        self.error(f"Non-finite loss, batch written to {path}")

    def evaluate(self, utterances: Sequence[Utterance]) -> dict[str, float]:
        """Dev loss and greedy-CTC character error rate, evaluation transforms only."""
        self.model.eval()
        errors = ErrorTally()
        vsr_total = 0.0
        batches = make_batches(utterances, self.cfg.train.batch_size, self.cfg.train.halve_threshold, seed=0)
        with no_grad():
            for plan in batches:
                batch = collate(plan, self.vocab, self.stats, self.augment)
                inputs, lengths = model_inputs(self.model, batch)
                out = self.model(inputs, lengths, batch.decoder_inputs)
                losses = losses_from_output(self.model, out, batch, self.cfg, None)
                vsr_total += losses.vsr.item() * len(batch)
                for i, utt in enumerate(plan):
                    hyp = greedy_ctc(out.ctc_logprobs.data[i, : out.encoder.lengths[i]], self.vocab)
                    errors.add(hyp, utt.transcript)
        return {"dev_vsr_loss": vsr_total / max(len(utterances), 1), "dev_greedy_cer": errors.rate}

    def fit(
        self,
        train: Sequence[Utterance],
        dev: Optional[Sequence[Utterance]] = None,
        resume: Optional[Checkpoint] = None,
    ) -> TrainResult:
        """Train every epoch of `stage_plan`, or the epochs after `resume`."""
        self.run_dir.mkdir(parents=True, exist_ok=True)
        ckpt_dir = self.run_dir / "checkpoints"
        ckpt_dir.mkdir(exist_ok=True)
        result = TrainResult(run_dir=self.run_dir, model=self.model)
        done = 0
        if resume is not None:
            done, result.checkpoints = self._resume(resume, ckpt_dir)
        self.info(
            f"Training {self.model.modality} model ({self.model.num_parameters()} parameters) for {self.epochs} epochs "
            f"on {len(train)} utterances, config {self.cfg.config_hash()[:12]}"
        )
        for epoch, (stage, cap) in enumerate(self.stage_plan(), start=1):
            if epoch <= done:
                continue
            subset = curriculum_filter(train, self.cfg.curriculum, stage) if cap is not None else list(train)
            plan = make_batches(
                subset,
                self.cfg.train.batch_size,
                self.cfg.train.halve_threshold,
                seed=int(self.order_rng.integers(1 << 31)),
                max_frames=cap,
            )
            sums: dict[str, float] = {}
            for index, utterances in enumerate(plan):
                batch = collate(utterances, self.vocab, self.stats, self.augment, self.augment_rng)
                record = self.train_step(batch, epoch, stage)
                for key in ("ctc", "att", "vsr", "total", "aux_audio", "aux_visual"):
                    if key in record:
                        sums[key] = sums.get(key, 0.0) + record[key]
            summary: dict[str, Any] = {"epoch": epoch, "stage": stage, "utterances": len(subset)}
            summary.update({k: v / max(len(plan), 1) for k, v in sums.items()})
            if dev:
                summary.update(self.evaluate(dev))
            self.info(format_metrics(summary))
            result.history.append(summary)
            path = ckpt_dir / f"epoch_{epoch:03d}.vsrc"
            save_checkpoint(
                path,
                model_checkpoint(
                    self.model,
                    self.cfg,
                    self.vocab,
                    kind=f"{self.model.modality}-model",
                    step=self.optimizer.step_count,
                    epoch=epoch,
                    rng_state=self.rng_state(epoch),
                ),
            )
            result.checkpoints.append(path)

        last = result.checkpoints[-self.cfg.train.average_last :]
        averaged = average_checkpoints([load_checkpoint(p) for p in last])
        result.averaged = self.run_dir / "model_avg.vsrc"
        save_checkpoint(result.averaged, averaged)
        self.model.load_state_dict(averaged.params)
        self.model.eval()
        self.info(f"Averaged {len(last)} checkpoint(s) into {result.averaged}")
        return result


class ErrorTally:
    """Running pooled character error counts."""

    def __init__(self) -> None:
        self.errors = 0
        self.reference = 0

    def add(self, hyp: str, ref: str) -> None:
        counts = edit_distance_counts(list(hyp), list(ref))
        self.errors += counts.errors
        self.reference += counts.reference_length

    @property
    def rate(self) -> float:
        return self.errors / self.reference if self.reference else 0.0
