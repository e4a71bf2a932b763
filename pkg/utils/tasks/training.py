from argparse import ArgumentParser
from pathlib import Path

from utils import write_json
from utils.config import write_ini
from utils.errors import ConfigurationError, DataError
from utils.pipeline.checkpoint import average_checkpoints, load_checkpoint, save_checkpoint
from utils.pipeline.lm_training import read_lm_text, train_lm
from utils.pipeline.teachers import load_teachers, train_teachers
from utils.pipeline.trainer import Trainer
from . import Task, add_corpus_argument


class TrainLmTask(Task):
    name = "train-lm"
    help = "Train the character language model on the corpus LM text"

    @classmethod
    def add_arguments(cls, parser: ArgumentParser) -> None:
        add_corpus_argument(parser)
        parser.add_argument("--out", type=Path, help="LM checkpoint path (default: <work dir>/lm.vsrc)")
        parser.add_argument("--text", type=Path, help="Training text, one sentence per line (default: corpus lm_text.txt)")

    def run(self) -> None:
        corpus = self.corpus()
        text_path = self.args.text or corpus.lm_text_path
        out_path = self.path_arg("out", "lm.vsrc")
        out_path.parent.mkdir(parents=True, exist_ok=True)
        dev_texts = [u.transcript for u in corpus.dev]
        train_lm(self.cfg, corpus.vocab, read_lm_text(text_path), out_path, self.cfg.train.seed, dev_texts)
        self.info(f"Language model written to {out_path}")


class TrainTeachersTask(Task):
    name = "train-teachers"
    help = "Train the baseline ASR and VSR models used as auxiliary-task teachers"

    @classmethod
    def add_arguments(cls, parser: ArgumentParser) -> None:
        add_corpus_argument(parser)
        parser.add_argument("--out", type=Path, help="Teacher directory (default: <work dir>/teachers)")
        parser.add_argument("--epochs", type=int, help="Override train.teacher_epochs")

    def run(self) -> None:
        corpus = self.corpus()
        out_dir = self.prepare_output_dir(self.path_arg("out", "teachers"))
        write_ini(self.cfg, out_dir / "config.ini")
        train_teachers(self.cfg, corpus.vocab, corpus.stats, corpus.train, out_dir, corpus.dev, self.args.epochs)
        self.info(f"Teachers written to {out_dir}")


class TrainTask(Task):
    name = "train"
    help = "Train the visual speech recognizer, with auxiliary tasks when teachers are given"

    @classmethod
    def add_arguments(cls, parser: ArgumentParser) -> None:
        add_corpus_argument(parser)
        parser.add_argument("--out", type=Path, help="Run directory (default: <work dir>/run)")
        parser.add_argument("--teachers", type=Path, help="Directory written by train-teachers")
        parser.add_argument("--seed", type=int, help="Override train.seed")

    def run(self) -> None:
        cfg = self.cfg
        if cfg.aux_enabled and self.args.teachers is None:
            raise ConfigurationError(
                "Auxiliary weights are non-zero but no --teachers were given; "
                "pass --teachers or disable them with --ablation-audio-aux false --ablation-visual-aux false"
            )
        teachers = None
        if self.args.teachers is not None:
            if cfg.aux_enabled:
                teachers = load_teachers(self.args.teachers)
            else:
                self.warning("Auxiliary tasks are disabled, ignoring --teachers")
        corpus = self.corpus()
        run_dir = self.prepare_output_dir(self.path_arg("out", "run"))
        write_ini(cfg, run_dir / "config.ini")
        result = Trainer(cfg, corpus.vocab, corpus.stats, run_dir, teachers=teachers, seed=self.args.seed).fit(
            corpus.train, corpus.dev
        )
        write_json(run_dir / "history.json", result.history)
        self.info(f"Averaged model written to {result.averaged}")


class AverageCheckpointsTask(Task):
    name = "average-checkpoints"
    help = "Average the parameters of several checkpoints"
    uses_config = False

    @classmethod
    def add_arguments(cls, parser: ArgumentParser) -> None:
        parser.add_argument("checkpoints", type=Path, nargs="*", help="Checkpoint files to average")
        parser.add_argument("--run-dir", type=Path, help="Average the newest checkpoints of this run directory")
        parser.add_argument("--last", type=int, default=10, help="How many of the newest checkpoints to use (default: 10)")
        parser.add_argument("--out", type=Path, required=True, help="Averaged checkpoint path")

    def sources(self) -> list[Path]:
        paths = list(self.args.checkpoints)
        if self.args.run_dir is not None:
            found = sorted((self.args.run_dir / "checkpoints").glob("epoch_*.vsrc"))
            if self.args.last < 1:
                raise ConfigurationError(f"--last must be >= 1, got {self.args.last}")
            paths.extend(found[-self.args.last :])
        if not paths:
            raise DataError("No checkpoints to average")
        return paths

    def run(self) -> None:
        paths = self.sources()
        averaged = average_checkpoints([load_checkpoint(p) for p in paths])
        self.args.out.parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(self.args.out, averaged)
        self.info(f"Averaged {len(paths)} checkpoints (steps {averaged.metadata['source_steps']}) into {self.args.out}")
