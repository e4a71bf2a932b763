"""Binary tensor files and line-delimited manifests.

A tensor record is

    b"VSRF" | version u16 | dtype code u8 | rank u8 | rank x extent u64 | data

all little-endian, data row-major. Feature files hold one float32 record;
checkpoints reuse the record layout with float64 data.
"""

from pathlib import Path
from typing import BinaryIO, Iterable, Optional, Union
import struct

import numpy as np

from utils import stream_jsonl, write_jsonl
from utils.data_types.corpus_types import Utterance
from utils.errors import DataError

MAGIC = b"VSRF"
VERSION = 1
DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODE_OF = {np.dtype("float32"): 1, np.dtype("float64"): 2}

SPLITS = ("train", "dev", "test")


def write_tensor(f: BinaryIO, array: np.ndarray, dtype: str = "float32") -> None:
    array = np.asarray(array)
    target = np.dtype(dtype)
    if target not in _CODE_OF:
        raise DataError(f"Unsupported tensor dtype `{dtype}`")
    f.write(MAGIC)
    f.write(struct.pack("<HBB", VERSION, _CODE_OF[target], array.ndim))
    f.write(struct.pack(f"<{array.ndim}Q", *array.shape))
    f.write(np.ascontiguousarray(array, dtype=target.newbyteorder("<")).tobytes(order="C"))


def _read_exact(f: BinaryIO, size: int, what: str) -> bytes:
    data = f.read(size)
    if len(data) != size:
        raise DataError(f"Truncated tensor record while reading {what}")
    return data


def read_tensor(f: BinaryIO) -> np.ndarray:
    magic = _read_exact(f, 4, "magic")
    if magic != MAGIC:
        raise DataError(f"Not a tensor record: magic {magic!r}")
    version, code, rank = struct.unpack("<HBB", _read_exact(f, 4, "header"))
    if version != VERSION:
        raise DataError(f"Unsupported tensor record version {version}")
    if code not in DTYPE_CODES:
        raise DataError(f"Unknown tensor dtype code {code}")
    shape = struct.unpack(f"<{rank}Q", _read_exact(f, 8 * rank, "extents")) if rank else ()
    dtype = DTYPE_CODES[code]
    count = int(np.prod(shape)) if shape else 1
    data = _read_exact(f, count * dtype.itemsize, "data")
    return np.frombuffer(data, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))


def save_features(path: Union[str, Path], array: np.ndarray) -> None:
    with open(path, "wb") as f:
        write_tensor(f, array, "float32")


def load_features(path: Union[str, Path]) -> np.ndarray:
    try:
        with open(path, "rb") as f:
            return read_tensor(f)
    except FileNotFoundError as e:
        raise DataError(f"Feature file {path} does not exist") from e


def write_manifest(path: Union[str, Path], utterances: Iterable[Utterance]) -> int:
    return write_jsonl(path, (u.to_dict() for u in utterances))


def read_manifest(path: Union[str, Path], load_arrays: bool = False) -> list[Utterance]:
    """Read a manifest; with `load_arrays` the referenced feature files are attached."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"Manifest {path} does not exist")
    utterances = []
    try:
        for record in stream_jsonl(path):
            utterances.append(Utterance.from_dict(record))
    except ValueError as e:
        raise DataError(f"Malformed manifest {path}: {e}") from e
    if load_arrays:
        for utt in utterances:
            attach_arrays(utt, path.parent)
    return utterances


def attach_arrays(utt: Utterance, root: Union[str, Path]) -> Utterance:
    root = Path(root)
    utt.visual = load_features(root / utt.visual_path)
    if utt.visual.shape[0] != utt.frames:
        raise DataError(f"Utterance {utt.id}: manifest says {utt.frames} frames, visual file has {utt.visual.shape[0]}")
    if utt.audio_path:
        utt.audio = load_features(root / utt.audio_path)
    return utt


def load_split(corpus_dir: Union[str, Path], split: str, load_arrays: bool = True) -> list[Utterance]:
    if split not in SPLITS:
        raise DataError(f"Unknown split `{split}`, expected one of {SPLITS}")
    return read_manifest(Path(corpus_dir) / f"{split}.jsonl", load_arrays=load_arrays)


def split_path(corpus_dir: Union[str, Path], split: str) -> Optional[Path]:
    path = Path(corpus_dir) / f"{split}.jsonl"
    return path if path.exists() else None
