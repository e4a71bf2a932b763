"""Multi-seed ablation runs.

Every configuration is trained from scratch once per seed and scored by
beam decoding an evaluation split. Besides the ablation table the runner
sweeps the auxiliary tap layer and the decoding beam size. A run that fails is recorded against
its seed instead of stopping the whole table.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

from utils.corpus.dataset import CorpusData
from utils.data_types.config_types import ExperimentConfig
from utils.data_types.result_types import ReportTable, RunReport
from utils.errors import ConfigurationError, ContractError, VSRError
from utils.logging import LoggedClass
from utils.nn.lm import CharLM
from utils.nn.model import VSRModel
from .evaluation import evaluate_model, write_decodes
from .teachers import TeacherTrainer, Teachers
from .trainer import Trainer


@dataclass(frozen=True)
class AblationRow:
    name: str
    audio_aux: bool
    visual_aux: bool
    time_masking: bool

    @property
    def needs_teachers(self) -> bool:
        return self.audio_aux or self.visual_aux

    @property
    def slug(self) -> str:
        return "".join(c if c.isalnum() else "_" for c in self.name.lower()).strip("_")


ABLATION_ROWS = (
    AblationRow("Full model", True, True, True),
    AblationRow("- Audio auxiliary task", False, True, True),
    AblationRow("- Visual auxiliary task", True, False, True),
    AblationRow("- Audio and visual auxiliary tasks", False, False, True),
    AblationRow("- Time masking", True, True, False),
    AblationRow("- Auxiliary tasks and time masking", False, False, False),
)

CONVERGED_TEACHERS = "converged teachers"
ONE_EPOCH_TEACHERS = "1-epoch teachers"
DEFAULT_BEAM_SIZES = (1, 5, 10, 20, 40)


class AblationRunner(LoggedClass):
    """Trains and scores experiment variants over several seeds.

    Parameters
    ----------
    cfg: ExperimentConfig
        Base configuration; each row flips its ablation switches.
    corpus: CorpusData
        Loaded corpus.
    out_dir: str or Path
        Receives one run directory per (row, seed) plus the teachers.
    lm: CharLM, optional
        Fusion LM used while decoding.
    split: str
        Split the error rate is measured on ("dev" or "test").
    unit: str
        "char" for CER, "word" for WER.
    """

    def __init__(
        self,
        cfg: ExperimentConfig,
        corpus: CorpusData,
        out_dir: Union[str, Path],
        lm: Optional[CharLM] = None,
        split: str = "test",
        unit: str = "char",
    ) -> None:
        super().__init__()
        self.cfg = cfg.validate()
        self.corpus = corpus
        self.out_dir = Path(out_dir)
        self.lm = lm
        self.unit = unit
        self.eval_set = getattr(corpus, split) or corpus.dev
        if not self.eval_set:
            raise ContractError(f"Corpus has no `{split}` or dev utterances to score")

    def teachers(self, name: str, epochs: Optional[int] = None) -> Teachers:
        trainer = TeacherTrainer(self.cfg, self.corpus.vocab, self.corpus.stats, self.out_dir / name)
        return trainer.train(self.corpus.train, self.corpus.dev, epochs=epochs, seed=self.cfg.train.seed)

    def train_once(self, cfg: ExperimentConfig, seed: int, run_dir: Path, teachers: Optional[Teachers]) -> VSRModel:
        result = Trainer(cfg, self.corpus.vocab, self.corpus.stats, run_dir, teachers=teachers, seed=seed).fit(
            self.corpus.train, self.corpus.dev
        )
        return result.model

    def score(self, model: VSRModel, cfg: ExperimentConfig, decodes: Path) -> float:
        """Beam decode the evaluation split and return the error rate in percent."""
        records, counts = evaluate_model(
            model,
            self.eval_set,
            self.corpus.vocab,
            self.corpus.stats,
            cfg.decode,
            self.lm,
            self.unit,
            cfg.train.crop_size,
        )
        write_decodes(decodes, records)
        if counts.rate is None:
            raise ContractError("Evaluation references are empty")
        return 100.0 * counts.rate

    def run_once(self, cfg: ExperimentConfig, seed: int, run_dir: Path, teachers: Optional[Teachers]) -> float:
        """Train one variant and return its error rate in percent."""
        return self.score(self.train_once(cfg, seed, run_dir, teachers), cfg, run_dir / "decodes.jsonl")

    def _fill(
        self, report: RunReport, cfg: ExperimentConfig, seeds: Sequence[int], run_root: Path, teachers: Optional[Teachers]
    ) -> RunReport:
        for seed in seeds:
            try:
                report.per_seed[seed] = self.run_once(cfg, seed, run_root / f"seed_{seed}", teachers)
                self.info(f"{report.name} seed {seed}: {report.per_seed[seed]:.2f}%")
            except VSRError as e:
                report.failures[seed] = f"{type(e).__name__}: {e}"
                self.error(f"{report.name} seed {seed} failed: {e}")
        return report

    def ablate(self, seeds: Sequence[int], teachers: Optional[Teachers] = None) -> ReportTable:
        _check_seeds(seeds)
        table = ReportTable(title="Ablation study")
        teachers, teacher_failure = self._shared_teachers(teachers)
        for row in ABLATION_ROWS:
            report = RunReport(name=row.name, unit=self.unit)
            if row.needs_teachers and teachers is None:
                report.failures = {seed: str(teacher_failure) for seed in seeds}
            else:
                cfg = self.cfg.with_ablation(row.audio_aux, row.visual_aux, row.time_masking)
                self._fill(report, cfg, seeds, self.out_dir / row.slug, teachers if row.needs_teachers else None)
            table.rows.append(report)
        return table

    def teacher_quality(self, seeds: Sequence[int]) -> ReportTable:
        _check_seeds(seeds)
        table = ReportTable(title="Teacher quality")
        for name, folder, epochs in (
            (CONVERGED_TEACHERS, "teachers", None),
            (ONE_EPOCH_TEACHERS, "teachers_1_epoch", 1),
        ):
            report = RunReport(name=name, unit=self.unit)
            try:
                teachers = self.teachers(folder, epochs)
            except VSRError as e:
                report.failures = {seed: f"teachers unavailable: {e}" for seed in seeds}
                table.rows.append(report)
                continue
            self._fill(report, self.cfg.with_ablation(True, True, self.cfg.ablation.time_masking), seeds,
                       self.out_dir / f"student_{folder}", teachers)
            table.rows.append(report)
        return table

    def _shared_teachers(self, teachers: Optional[Teachers]) -> tuple[Optional[Teachers], Optional[str]]:
        if teachers is not None:
            return teachers, None
        try:
            return self.teachers("teachers"), None
        except VSRError as e:
            self.error(f"teachers unavailable: {e}")
            return None, f"teachers unavailable: {e}"

    def sweep_layer_position(
        self, seeds: Sequence[int], layers: Optional[Sequence[int]] = None, teachers: Optional[Teachers] = None
    ) -> ReportTable:
        """Full model with the auxiliary tasks attached after each of `layers`.

        Teacher targets are read from the same block as the student
        predictions. Layer 0 is the embedding output.
        """
        _check_seeds(seeds)
        num_blocks = self.cfg.encoder.num_blocks
        layers = list(range(0, num_blocks + 1, 2)) if layers is None else list(layers)
        if not layers or len(set(layers)) != len(layers):
            raise ContractError(f"Layer sweep needs distinct layers, got {layers}")
        bad = [layer for layer in layers if not 0 <= layer <= num_blocks]
        if bad:
            raise ConfigurationError(f"Tap layers {bad} outside [0, {num_blocks}]")
        teachers, failure = self._shared_teachers(teachers)
        table = ReportTable(title="Auxiliary layer position")
        for layer in layers:
            report = RunReport(name=f"layer {layer}", unit=self.unit)
            if teachers is None:
                report.failures = {seed: str(failure) for seed in seeds}
            else:
                cfg = self.cfg.with_ablation(True, True, self.cfg.ablation.time_masking).with_overrides(
                    {"encoder": {"tap_layer": layer}}
                )
                tapped = Teachers(audio=teachers.audio, visual=teachers.visual, tap_layer=layer)
                self._fill(report, cfg, seeds, self.out_dir / f"layer_{layer}", tapped)
            table.rows.append(report)
        return table

    def sweep_beam_size(
        self, seeds: Sequence[int], beam_sizes: Sequence[int] = DEFAULT_BEAM_SIZES, teachers: Optional[Teachers] = None
    ) -> ReportTable:
        """Full model trained once per seed, then decoded with every beam size."""
        _check_seeds(seeds)
        beam_sizes = list(beam_sizes)
        if not beam_sizes or len(set(beam_sizes)) != len(beam_sizes):
            raise ContractError(f"Beam sweep needs distinct beam sizes, got {beam_sizes}")
        if min(beam_sizes) < 1:
            raise ConfigurationError(f"Beam sizes must be >= 1, got {beam_sizes}")
        table = ReportTable(title="Beam size")
        table.rows = [RunReport(name=f"beam {size}", unit=self.unit) for size in beam_sizes]
        teachers, failure = self._shared_teachers(teachers)
        if teachers is None:
            for report in table.rows:
                report.failures = {seed: str(failure) for seed in seeds}
            return table
        cfg = self.cfg.with_ablation(True, True, self.cfg.ablation.time_masking)
        for seed in seeds:
            run_dir = self.out_dir / "beam_sweep" / f"seed_{seed}"
            try:
                model = self.train_once(cfg, seed, run_dir, teachers)
            except VSRError as e:
                self.error(f"beam sweep seed {seed} failed: {e}")
                for report in table.rows:
                    report.failures[seed] = f"{type(e).__name__}: {e}"
                continue
            for size, report in zip(beam_sizes, table.rows):
                sized = cfg.with_overrides({"decode": {"beam_size": size}})
                try:
                    report.per_seed[seed] = self.score(model, sized, run_dir / f"decodes_beam_{size}.jsonl")
                    self.info(f"{report.name} seed {seed}: {report.per_seed[seed]:.2f}%")
                except VSRError as e:
                    report.failures[seed] = f"{type(e).__name__}: {e}"
                    self.error(f"{report.name} seed {seed} failed: {e}")
        return table


def _check_seeds(seeds: Sequence[int]) -> None:
    if len(seeds) < 2:
        raise ContractError(f"Multi-seed comparisons need at least 2 seeds, got {list(seeds)}")
    if len(set(seeds)) != len(seeds):
        raise ContractError(f"Duplicate seeds in {list(seeds)}")


def ablate(
    cfg: ExperimentConfig,
    corpus: CorpusData,
    seeds: Sequence[int],
    out_dir: Union[str, Path],
    lm: Optional[CharLM] = None,
    teachers: Optional[Teachers] = None,
    split: str = "test",
    unit: str = "char",
) -> ReportTable:
    return AblationRunner(cfg, corpus, out_dir, lm, split, unit).ablate(seeds, teachers)


def teacher_quality(
    cfg: ExperimentConfig,
    corpus: CorpusData,
    seeds: Sequence[int],
    out_dir: Union[str, Path],
    lm: Optional[CharLM] = None,
    unit: str = "char",
) -> ReportTable:
    return AblationRunner(cfg, corpus, out_dir, lm, "dev", unit).teacher_quality(seeds)


def sweep_layer_position(
    cfg: ExperimentConfig,
    corpus: CorpusData,
    seeds: Sequence[int],
    out_dir: Union[str, Path],
    layers: Optional[Sequence[int]] = None,
    lm: Optional[CharLM] = None,
    teachers: Optional[Teachers] = None,
    split: str = "test",
    unit: str = "char",
) -> ReportTable:
    return AblationRunner(cfg, corpus, out_dir, lm, split, unit).sweep_layer_position(seeds, layers, teachers)


def sweep_beam_size(
    cfg: ExperimentConfig,
    corpus: CorpusData,
    seeds: Sequence[int],
    out_dir: Union[str, Path],
    beam_sizes: Sequence[int] = DEFAULT_BEAM_SIZES,
    lm: Optional[CharLM] = None,
    teachers: Optional[Teachers] = None,
    split: str = "test",
    unit: str = "char",
) -> ReportTable:
    return AblationRunner(cfg, corpus, out_dir, lm, split, unit).sweep_beam_size(seeds, beam_sizes, teachers)
