from argparse import ArgumentParser
from pathlib import Path
from typing import Optional

from utils import write_json
from utils.data_types.config_types import DecodeConfig, ExperimentConfig
from utils.data_types.result_types import DecodeRecord
from utils.decoding.beam_search import beam_preset, decode_corpus
from utils.errors import ConfigurationError, DataError
from utils.nn.lm import CharLM
from utils.pipeline.checkpoint import load_checkpoint, restore_lm, restore_model
from utils.pipeline.evaluation import read_decodes, score_decodes, write_decodes
from utils.pipeline.metrics import UNITS
from . import Task, add_corpus_argument


def _add_decoding_arguments(parser: ArgumentParser) -> None:
    add_corpus_argument(parser)
    parser.add_argument("--checkpoint", type=Path, help="Recognizer checkpoint (e.g. <run>/model_avg.vsrc)")
    parser.add_argument("--lm", type=Path, help="Language model checkpoint for shallow fusion")
    parser.add_argument("--split", choices=("train", "dev", "test"), default="test", help="Split to decode (default: test)")
    parser.add_argument(
        "--language",
        help="Use the tuned beam width and LM weight of this language instead of the [decode] section",
    )


class _DecodingTask(Task):
    def decode_config(self) -> DecodeConfig:
        if self.args.language:
            return beam_preset(self.args.language)
        return self.cfg.decode

    def decode(self) -> list[DecodeRecord]:
        if self.args.checkpoint is None:
            raise ConfigurationError("--checkpoint is required to decode")
        checkpoint = load_checkpoint(self.args.checkpoint)
        model = restore_model(checkpoint)
        lm: Optional[CharLM] = restore_lm(load_checkpoint(self.args.lm)) if self.args.lm else None
        corpus = self.corpus()
        if model.vocab.characters != corpus.vocab.characters:
            raise DataError("Checkpoint vocabulary does not match the corpus vocabulary")
        utterances = getattr(corpus, self.args.split)
        if not utterances:
            raise DataError(f"Split `{self.args.split}` of {corpus.root} is empty")
        cfg = self.decode_config()
        if lm is None and cfg.lm_weight > 0:
            self.warning(f"lm_weight is {cfg.lm_weight} but no --lm was given, decoding without a language model")
        crop = ExperimentConfig.from_dict(checkpoint.metadata["config"]).train.crop_size
        self.info(f"Decoding {len(utterances)} {self.args.split} utterances, beam {cfg.beam_size}")
        return decode_corpus(model, utterances, corpus.vocab, corpus.stats, cfg, lm, crop)


class DecodeTask(_DecodingTask):
    name = "decode"
    help = "Beam-search decode a corpus split with joint CTC/attention/LM scoring"

    @classmethod
    def add_arguments(cls, parser: ArgumentParser) -> None:
        _add_decoding_arguments(parser)
        parser.add_argument("--out", type=Path, help="Decode records (default: <work dir>/decodes.jsonl)")

    def run(self) -> None:
        records = self.decode()
        out_path = self.path_arg("out", "decodes.jsonl")
        out_path.parent.mkdir(parents=True, exist_ok=True)
        write_decodes(out_path, records)
        self.info(f"Wrote {len(records)} decodes to {out_path}")


class EvaluateTask(_DecodingTask):
    name = "evaluate"
    help = "Score decodes (or decode a checkpoint first) against corpus references"

    @classmethod
    def add_arguments(cls, parser: ArgumentParser) -> None:
        _add_decoding_arguments(parser)
        parser.add_argument("--decodes", type=Path, help="Existing decode records; skips decoding")
        parser.add_argument("--unit", choices=UNITS, default="char", help="char (CER) or word (WER), default char")
        parser.add_argument("--out", type=Path, help="Result JSON (default: <work dir>/evaluation.json)")

    def run(self) -> None:
        records = read_decodes(self.args.decodes) if self.args.decodes else self.decode()
        references = getattr(self.corpus(), self.args.split)
        counts = score_decodes(records, references, self.args.unit)
        metric = "CER" if self.args.unit == "char" else "WER"
        result = {
            "split": self.args.split,
            "unit": self.args.unit,
            "substitutions": counts.substitutions,
            "deletions": counts.deletions,
            "insertions": counts.insertions,
            "reference_length": counts.reference_length,
            "rate": counts.rate,
        }
        out_path = self.path_arg("out", "evaluation.json")
        out_path.parent.mkdir(parents=True, exist_ok=True)
        write_json(out_path, result)
        if counts.rate is None:
            self.warning(f"{metric} undefined: the references of `{self.args.split}` are empty")
        else:
            self.info(f"{metric} on {self.args.split}: {100 * counts.rate:.2f}% ({counts.as_tuple()})")
