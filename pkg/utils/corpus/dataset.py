from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

from utils import load_json_type_safe
from utils.data_types.corpus_types import NormStats, Utterance
from utils.data_types.vocabulary import Vocabulary
from utils.errors import DataError
from .features import load_split, split_path


@dataclass
class CorpusData:
    """A generated corpus loaded into memory: splits, vocabulary and training statistics."""

    root: Path
    vocab: Vocabulary
    stats: NormStats
    train: list[Utterance] = field(default_factory=list)
    dev: list[Utterance] = field(default_factory=list)
    test: list[Utterance] = field(default_factory=list)

    @property
    def lm_text_path(self) -> Path:
        return self.root / "lm_text.txt"


def load_corpus(corpus_dir: Union[str, Path], language: str = "en") -> CorpusData:
    root = Path(corpus_dir)
    if not (root / "vocab.txt").exists() or not (root / "stats.json").exists():
        raise DataError(f"{root} is not a generated corpus (vocab.txt or stats.json missing)")
    stats = NormStats.from_dict(load_json_type_safe(root / "stats.json", "dict"))
    if stats.provenance != "train":
        raise DataError(f"Normalisation statistics in {root} were computed on `{stats.provenance}`, not the training split")
    splits = {name: load_split(root, name) if split_path(root, name) else [] for name in ("train", "dev", "test")}
    if not splits["train"]:
        raise DataError(f"Corpus {root} has no training utterances")
    return CorpusData(root=root, vocab=Vocabulary.load(root / "vocab.txt", language), stats=stats, **splits)
