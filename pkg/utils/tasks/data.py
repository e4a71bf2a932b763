import configparser
from argparse import ArgumentParser
from pathlib import Path
from typing import Any

from utils.corpus.generator import generate_corpus
from utils.data_types.corpus_types import CorpusConfig
from utils.errors import ConfigurationError
from . import Task

CORPUS_PREFIX = "corpus__"


class GenerateDataTask(Task):
    """Writes a synthetic corpus: manifests, features, vocabulary, LM text and statistics."""

    name = "generate-data"
    help = "Generate a synthetic audio-visual corpus"
    uses_config = False

    @classmethod
    def add_arguments(cls, parser: ArgumentParser) -> None:
        parser.add_argument("--out", type=Path, help="Output directory (default: <work dir>/corpus)")
        group = parser.add_argument_group("corpus options")
        group.add_argument("--corpus-config", type=Path, help="INI file with a [corpus] section")
        defaults = CorpusConfig()
        for field_name, annotation in CorpusConfig.field_types().items():
            group.add_argument(
                f"--{field_name}".replace("_", "-"),
                dest=f"{CORPUS_PREFIX}{field_name}",
                metavar=getattr(annotation, "__name__", "VALUE").upper(),
                help=f"{field_name} (default {getattr(defaults, field_name)})",
            )

    def corpus_config(self) -> CorpusConfig:
        values: dict[str, Any] = CorpusConfig().to_dict()
        if self.args.corpus_config is not None:
            parser = configparser.ConfigParser(interpolation=None)
            if not parser.read(self.args.corpus_config, encoding="utf-8") or not parser.has_section("corpus"):
                raise ConfigurationError(f"{self.args.corpus_config} has no [corpus] section")
            values.update(dict(parser.items("corpus")))
        for dest, value in vars(self.args).items():
            if dest.startswith(CORPUS_PREFIX) and value is not None:
                values[dest[len(CORPUS_PREFIX) :]] = value
        return CorpusConfig.from_dict(values)

    def run(self) -> None:
        cfg = self.corpus_config()
        out_dir = self.prepare_output_dir(self.path_arg("out", "corpus"))
        counts = generate_corpus(cfg, out_dir)
        self.info(f"Generated {sum(counts.values())} utterances in {out_dir}: {counts}")
