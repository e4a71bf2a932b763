"""Checkpoint container.

    b"VSRC" | version u16 | metadata length u32 | metadata JSON (canonical)
    | tensor count u32 | per tensor: name length u16, UTF-8 name, tensor record

Tensor records use the feature-file layout with float64 data, in parameter
registration order, so saving the same state twice gives identical bytes.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence, Union
import json
import struct

import numpy as np

from utils import dumps_record
from utils.corpus.features import read_tensor, write_tensor
from utils.data_types.config_types import ExperimentConfig
from utils.data_types.vocabulary import Vocabulary
from utils.errors import DataError
from utils.nn.lm import CharLM
from utils.nn.model import VSRModel
from utils.nn.module import Dropout, Module

MAGIC = b"VSRC"
VERSION = 1


@dataclass
class Checkpoint:
    """Named parameter/buffer arrays plus run metadata.

    `metadata` carries `step`, `epoch`, `config_hash`, the serialized
    config, the vocabulary and `rng_state`: the seed, the epoch and the
    `bit_generator.state` of every generator the trainer draws from.
    """

    params: dict[str, np.ndarray]
    metadata: dict[str, Any] = field(default_factory=dict)

    @property
    def step(self) -> int:
        return int(self.metadata.get("step", 0))

    @property
    def epoch(self) -> int:
        return int(self.metadata.get("epoch", 0))


def save_checkpoint(path: Union[str, Path], checkpoint: Checkpoint) -> None:
    meta = dumps_record(checkpoint.metadata).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<HI", VERSION, len(meta)))
        f.write(meta)
        f.write(struct.pack("<I", len(checkpoint.params)))
        for name, array in checkpoint.params.items():
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            write_tensor(f, array, "float64")


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    try:
        f = open(path, "rb")
    except FileNotFoundError as e:
        raise DataError(f"Checkpoint {path} does not exist") from e
    with f:
        if f.read(4) != MAGIC:
            raise DataError(f"{path} is not a checkpoint")
        try:
            version, meta_len = struct.unpack("<HI", f.read(6))
            if version != VERSION:
                raise DataError(f"Unsupported checkpoint version {version}")
            metadata = json.loads(f.read(meta_len).decode("utf-8"))
            (count,) = struct.unpack("<I", f.read(4))
            params = {}
            for _ in range(count):
                (name_len,) = struct.unpack("<H", f.read(2))
                name = f.read(name_len).decode("utf-8")
                params[name] = read_tensor(f)
        except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as e:
            raise DataError(f"Checkpoint {path} is truncated or corrupt: {e}") from e
    return Checkpoint(params, metadata)


def average_checkpoints(checkpoints: Sequence[Checkpoint]) -> Checkpoint:
    """Elementwise mean of every parameter; metadata follows the newest input."""
    if not checkpoints:
        raise DataError("Nothing to average")
    names = list(checkpoints[0].params)
    for ckpt in checkpoints[1:]:
        if set(ckpt.params) != set(names):
            diff = sorted(set(ckpt.params) ^ set(names))
            raise DataError(f"Checkpoints disagree on parameter `{diff[0]}`")
    averaged = {}
    for name in names:
        shapes = {c.params[name].shape for c in checkpoints}
        if len(shapes) != 1:
            raise DataError(f"Parameter `{name}` has mismatched shapes {sorted(shapes)}")
        averaged[name] = np.mean(np.stack([c.params[name] for c in checkpoints]), axis=0)
    newest = max(checkpoints, key=lambda c: c.step)
    metadata = dict(newest.metadata)
    metadata["source_steps"] = [c.step for c in checkpoints]
    return Checkpoint(averaged, metadata)


def model_checkpoint(
    model: Module,
    cfg: ExperimentConfig,
    vocab: Vocabulary,
    kind: str,
    step: int,
    epoch: int,
    rng_state: Optional[dict[str, Any]] = None,
    **extra: Any,
) -> Checkpoint:
    metadata = {
        "kind": kind,
        "step": step,
        "epoch": epoch,
        "config_hash": cfg.config_hash(),
        "config": cfg.to_dict(),
        "vocabulary": vocab.characters,
        "language": vocab.language,
        "rng_state": rng_state,
    }
    if isinstance(model, VSRModel):
        metadata.update({"modality": model.modality, "seed": model.seed, "predictors": model.has_predictors})
    metadata.update(extra)
    return Checkpoint(model.state_dict(), metadata)


def generator_states(generators: Mapping[str, np.random.Generator]) -> dict[str, dict[str, Any]]:
    """`bit_generator.state` of every named generator, JSON-serializable."""
    return {name: g.bit_generator.state for name, g in generators.items()}


def restore_generators(generators: Mapping[str, np.random.Generator], states: Mapping[str, Any]) -> None:
    """Put every named generator back to its saved state, in place."""
    missing = sorted(set(generators) - set(states))
    if missing:
        raise DataError(f"Checkpoint has no generator state for {missing}")
    for name, g in generators.items():
        try:
            g.bit_generator.state = states[name]
        except (TypeError, ValueError, KeyError) as e:
            raise DataError(f"Invalid generator state for `{name}`: {e}") from e


def dropout_generators(model: Module) -> dict[str, np.random.Generator]:
    return {f"dropout.{path}": m.rng for path, m in model.named_modules() if isinstance(m, Dropout)}


def _restore_dropout(model: Module, rng_state: Optional[Mapping[str, Any]]) -> None:
    saved = (rng_state or {}).get("generators")
    if saved:
        restore_generators(dropout_generators(model), saved)


def _vocabulary(checkpoint: Checkpoint) -> Vocabulary:
    return Vocabulary(checkpoint.metadata["vocabulary"], checkpoint.metadata.get("language", "en"))


def restore_model(checkpoint: Checkpoint) -> VSRModel:
    meta = checkpoint.metadata
    if meta.get("kind") == "lm":
        raise DataError("Checkpoint holds a language model, not a recognizer")
    cfg = ExperimentConfig.from_dict(meta["config"])
    model = VSRModel(
        cfg,
        _vocabulary(checkpoint),
        modality=meta.get("modality", "visual"),
        seed=int(meta.get("seed", 0)),
        predictors=bool(meta.get("predictors", True)),
    )
    model.load_state_dict(checkpoint.params)
    _restore_dropout(model, meta.get("rng_state"))
    return model.eval()


def restore_lm(checkpoint: Checkpoint) -> CharLM:
    meta = checkpoint.metadata
    if meta.get("kind") != "lm":
        raise DataError(f"Checkpoint kind `{meta.get('kind')}` is not a language model")
    cfg = ExperimentConfig.from_dict(meta["config"])
    lm = CharLM(cfg.lm, _vocabulary(checkpoint), np.random.default_rng(0))
    lm.load_state_dict(checkpoint.params)
    _restore_dropout(lm, meta.get("rng_state"))
    return lm.eval()
