from abc import ABC, abstractmethod
from argparse import ArgumentParser, Namespace
from pathlib import Path
from typing import Optional

from utils.config import config_from_args
from utils.corpus.dataset import CorpusData, load_corpus
from utils.data_types.config_types import ExperimentConfig
from utils.general import confirm_overwrite
from utils.logging import LoggedClass

DEFAULT_WORK_DIR = Path("work")


class Task(LoggedClass, ABC):
    """One CLI subcommand.

    Subclasses declare their arguments in `add_arguments` and do all of
    their work in `run`; `main.py` maps escaping `VSRError`s to exit codes.
    """

    name: str = ""
    help: str = ""
    uses_config: bool = True

    def __init__(self, args: Namespace) -> None:
        super().__init__(self.__class__.__name__)
        self.args = args
        self.work_dir: Path = getattr(args, "work_dir", None) or DEFAULT_WORK_DIR
        self._cfg: Optional[ExperimentConfig] = None
        self._corpus: Optional[CorpusData] = None

    @classmethod
    def add_arguments(cls, parser: ArgumentParser) -> None:
        pass

    @property
    def cfg(self) -> ExperimentConfig:
        if self._cfg is None:
            self._cfg = config_from_args(self.args)
        return self._cfg

    def path_arg(self, name: str, default: str) -> Path:
        """`--name` if given, otherwise `default` under the work directory."""
        value = getattr(self.args, name, None)
        return Path(value) if value is not None else self.work_dir / default

    def corpus(self) -> CorpusData:
        if self._corpus is None:
            self._corpus = load_corpus(self.path_arg("corpus", "corpus"), self.cfg.decode.language)
        return self._corpus

    def prepare_output_dir(self, directory: Path) -> Path:
        confirm_overwrite(directory, getattr(self.args, "yes", False))
        directory.mkdir(parents=True, exist_ok=True)
        return directory

    @abstractmethod
    def run(self) -> None:
        """Execute the subcommand."""
        pass


def add_corpus_argument(parser: ArgumentParser) -> None:
    parser.add_argument("--corpus", type=Path, help="Generated corpus directory (default: <work dir>/corpus)")


def all_tasks() -> list[type[Task]]:
    from .data import GenerateDataTask
    from .training import AverageCheckpointsTask, TrainLmTask, TrainTask, TrainTeachersTask
    from .evaluation import DecodeTask, EvaluateTask
    from .experiments import AblateTask, ReportTask

    return [
        GenerateDataTask,
        TrainLmTask,
        TrainTeachersTask,
        TrainTask,
        DecodeTask,
        EvaluateTask,
        AverageCheckpointsTask,
        AblateTask,
        ReportTask,
    ]
