from dataclasses import dataclass, field
from typing import Any, Optional
import math

from utils.autodiff import Tensor
from .base import DataModelObject


@dataclass
class CTCResult:
    """CTC loss for one sample; infeasible targets give +inf and no gradient."""

    loss: Tensor
    feasible: bool

    @property
    def value(self) -> float:
        return self.loss.item()


@dataclass
class DecodeRecord(DataModelObject):
    id: str
    transcript: str
    score: float
    ctc: float
    att: float
    lm: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "transcript": self.transcript,
            "score": self.score,
            "ctc": self.ctc,
            "att": self.att,
            "lm": self.lm,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "DecodeRecord":
        return cls(
            id=str(data["id"]),
            transcript=str(data["transcript"]),
            score=float(data["score"]),
            ctc=float(data["ctc"]),
            att=float(data["att"]),
            lm=float(data["lm"]),
        )


@dataclass(frozen=True)
class ErrorCounts:
    substitutions: int
    deletions: int
    insertions: int
    reference_length: int

    def __add__(self, other: "ErrorCounts") -> "ErrorCounts":
        return ErrorCounts(
            self.substitutions + other.substitutions,
            self.deletions + other.deletions,
            self.insertions + other.insertions,
            self.reference_length + other.reference_length,
        )

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def rate(self) -> Optional[float]:
        """(S + D + I) / N, None when the reference is empty."""
        if self.reference_length == 0:
            return None
        return self.errors / self.reference_length

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.substitutions, self.deletions, self.insertions, self.reference_length)


@dataclass
class RunReport(DataModelObject):
    """Per-seed error rates (in percent) of one configuration."""

    name: str
    unit: str = "char"
    per_seed: dict[int, float] = field(default_factory=dict)
    failures: dict[int, str] = field(default_factory=dict)

    @property
    def values(self) -> list[float]:
        return [self.per_seed[s] for s in sorted(self.per_seed)]

    @property
    def mean(self) -> Optional[float]:
        values = self.values
        return sum(values) / len(values) if values else None

    @property
    def std(self) -> Optional[float]:
        """Sample standard deviation (n - 1 denominator)."""
        values = self.values
        if len(values) < 2:
            return None
        mu = sum(values) / len(values)
        return math.sqrt(sum((v - mu) ** 2 for v in values) / (len(values) - 1))

    @property
    def best(self) -> Optional[float]:
        values = self.values
        return min(values) if values else None

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "unit": self.unit,
            "per_seed": {str(k): v for k, v in sorted(self.per_seed.items())},
            "failures": {str(k): v for k, v in sorted(self.failures.items())},
            "mean": self.mean,
            "std": self.std,
            "best": self.best,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunReport":
        return cls(
            name=str(data["name"]),
            unit=str(data.get("unit", "char")),
            per_seed={int(k): float(v) for k, v in data.get("per_seed", {}).items()},
            failures={int(k): str(v) for k, v in data.get("failures", {}).items()},
        )


@dataclass
class ReportTable(DataModelObject):
    title: str
    rows: list[RunReport] = field(default_factory=list)

    def row(self, name: str) -> RunReport:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_dict(self) -> dict[str, Any]:
        return {"title": self.title, "rows": [r.to_dict() for r in self.rows]}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ReportTable":
        return cls(title=str(data["title"]), rows=[RunReport.from_dict(r) for r in data["rows"]])
