from pathlib import Path
from typing import Any, Iterable, Iterator, Literal, Union, overload
import hashlib
import json

import ijson
import numpy as np

ROOT_DIR = Path(__file__).parent.parent
PRESETS_DIR = ROOT_DIR / "presets"


def _json_default(o: Any) -> Any:
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    return None


def write_json(filepath: Union[str, Path], data: Any, indent: int = 2) -> None:
    with open(filepath, "w") as f:
        json.dump(data, f, indent=indent, sort_keys=True, default=_json_default)
        f.write("\n")


def _load_json(filepath: Union[str, Path]) -> Union[dict, list]:
    with open(filepath, "r") as f:
        json_obj = json.load(f)
    return json_obj


@overload
def load_json_type_safe(
    filepath: Union[str, Path], return_type: Literal["dict"]
) -> dict:
    pass


@overload
def load_json_type_safe(
    filepath: Union[str, Path], return_type: Literal["list"]
) -> list:
    pass


def load_json_type_safe(
    filepath: Union[str, Path], return_type: Literal["dict", "list"]
) -> Union[dict, list]:
    """Handles the type checking for the expected return types.

    Parameters
    ----------
    filepath: str or Path
        The filepath to the JSON file to load.
    return_type: Literal["dict", "list"]
        The expected return type.
    """
    loaded_json = _load_json(filepath)
    if return_type == "dict" and not isinstance(loaded_json, dict):
        raise ValueError(
            f"Expected type `dict` for file {filepath}, got type `{type(loaded_json)}`."
        )
    elif return_type == "list" and not isinstance(loaded_json, list):
        raise ValueError(
            f"Expected type `list` for file {filepath}, got type `{type(loaded_json)}`."
        )
    return loaded_json


def dumps_record(record: dict[str, Any]) -> str:
    """Canonical single-line JSON used for every line-delimited file."""
    return json.dumps(record, sort_keys=True, separators=(",", ":"), default=_json_default)


def write_jsonl(filepath: Union[str, Path], records: Iterable[dict[str, Any]]) -> int:
    """Write records one per line, returns the number written."""
    count = 0
    with open(filepath, "w", encoding="utf-8", newline="\n") as f:
        for record in records:
            f.write(dumps_record(record) + "\n")
            count += 1
    return count


def append_jsonl(filepath: Union[str, Path], record: dict[str, Any]) -> None:
    Path(filepath).parent.mkdir(parents=True, exist_ok=True)
    with open(filepath, "a", encoding="utf-8", newline="\n") as f:
        f.write(dumps_record(record) + "\n")


def stream_jsonl(filepath: Union[str, Path]) -> Iterator[dict[str, Any]]:
    """Stream records from a line-delimited JSON file without loading it whole."""
    with open(filepath, "rb") as f:
        for item in ijson.items(f, "", multiple_values=True, use_float=True):
            if not isinstance(item, dict):
                raise ValueError(f"Expected JSON object records in {filepath}, got {type(item)}")
            yield item


def stable_hash(data: Any) -> str:
    """SHA-256 over canonical JSON, stable across processes and platforms."""
    return hashlib.sha256(dumps_record(data).encode("utf-8")).hexdigest()
