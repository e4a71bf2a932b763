from pathlib import Path
from typing import Optional, Sequence, Union

from utils import stream_jsonl, write_jsonl
from utils.data_types.config_types import DecodeConfig
from utils.data_types.corpus_types import NormStats, Utterance
from utils.data_types.result_types import DecodeRecord, ErrorCounts
from utils.data_types.vocabulary import Vocabulary
from utils.decoding.beam_search import decode_corpus
from utils.errors import DataError
from utils.nn.lm import CharLM
from utils.nn.model import VSRModel
from .metrics import score_corpus


def write_decodes(path: Union[str, Path], records: Sequence[DecodeRecord]) -> int:
    return write_jsonl(path, (r.to_dict() for r in sorted(records, key=lambda r: r.id)))


def read_decodes(path: Union[str, Path]) -> list[DecodeRecord]:
    if not Path(path).exists():
        raise DataError(f"Decode file {path} does not exist")
    try:
        return [DecodeRecord.from_dict(r) for r in stream_jsonl(path)]
    except (KeyError, ValueError) as e:
        raise DataError(f"Malformed decode file {path}: {e}") from e


def score_decodes(records: Sequence[DecodeRecord], utterances: Sequence[Utterance], unit: str = "char") -> ErrorCounts:
    hypotheses = {r.id: r.transcript for r in records}
    references = {u.id: u.transcript for u in utterances}
    return score_corpus(hypotheses, references, unit)


def evaluate_model(
    model: VSRModel,
    utterances: Sequence[Utterance],
    vocab: Vocabulary,
    stats: NormStats,
    cfg: DecodeConfig,
    lm: Optional[CharLM] = None,
    unit: str = "char",
    crop_size: int = 0,
) -> tuple[list[DecodeRecord], ErrorCounts]:
    """Beam-decode `utterances` and pool their error counts."""
    records = decode_corpus(model, utterances, vocab, stats, cfg, lm, crop_size)
    return records, score_decodes(records, utterances, unit)
