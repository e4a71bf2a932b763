from abc import ABC, abstractmethod
from dataclasses import fields
from typing import Any, get_args, get_origin, get_type_hints

from utils.errors import ConfigurationError


class DataModelObject(ABC):
    """Base abstract class for every serializable record."""

    @abstractmethod
    def to_dict(self) -> Any:
        pass

    @classmethod
    @abstractmethod
    def from_dict(cls, data: dict[str, Any]) -> Any:
        pass


def coerce_value(raw: Any, annotation: Any, name: str) -> Any:
    """Convert a JSON or INI value to the annotated field type.

    Strings coming from INI files or `--set` overrides are parsed; list
    fields accept comma separated values.
    """
    origin = get_origin(annotation)
    try:
        if origin is list:
            (item_type,) = get_args(annotation)
            if isinstance(raw, str):
                raw = [part.strip() for part in raw.split(",") if part.strip()]
            return [coerce_value(item, item_type, name) for item in raw]
        if annotation is bool:
            if isinstance(raw, str):
                lowered = raw.strip().lower()
                if lowered in ("1", "true", "yes", "on"):
                    return True
                if lowered in ("0", "false", "no", "off"):
                    return False
                raise ValueError(raw)
            return bool(raw)
        if annotation is int:
            if isinstance(raw, float) and not raw.is_integer():
                raise ValueError(raw)
            return int(raw)
        if annotation is float:
            return float(raw)
        if annotation is str:
            return str(raw).strip()
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"Invalid value {raw!r} for `{name}` ({annotation})") from e
    return raw


class ConfigSection(DataModelObject):
    """Flat dataclass record whose fields are scalars or lists of scalars."""

    def to_dict(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}  # type: ignore[arg-type]

    @classmethod
    def field_types(cls) -> dict[str, Any]:
        hints = get_type_hints(cls)
        return {f.name: hints[f.name] for f in fields(cls)}  # type: ignore[arg-type]

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Any:
        types = cls.field_types()
        unknown = sorted(set(data) - set(types))
        if unknown:
            raise ConfigurationError(f"Unknown {cls.__name__} fields: {unknown}")
        values = {key: coerce_value(value, types[key], f"{cls.__name__}.{key}") for key, value in data.items()}
        return cls(**values)

    def validate(self) -> None:
        pass
