import csv
import io
from pathlib import Path
from typing import Optional, Union

from utils import load_json_type_safe, write_json
from utils.data_types.result_types import ReportTable
from utils.errors import DataError

CSV_COLUMNS = ("name", "unit", "mean", "std", "best", "seeds", "failures")


def _fmt(value: Optional[float], precision: int) -> str:
    return "-" if value is None else f"{value:.{precision}f}"


def mean_std(mean: Optional[float], std: Optional[float], precision: int = 1) -> str:
    if mean is None:
        return "-"
    if std is None:
        return _fmt(mean, precision)
    return f"{mean:.{precision}f}±{std:.{precision}f}"


def render_report(table: ReportTable, precision: int = 1) -> str:
    """Plain-text table with a "Mean±Std | Best" column pair per row.

    Failed seeds are listed under the table.
    """
    unit = table.rows[0].unit.upper() if table.rows else "CHAR"
    metric = "CER" if unit == "CHAR" else "WER"
    header = ("Configuration", f"{metric} Mean±Std", "Best", "Seeds")
    body = [
        (
            r.name,
            mean_std(r.mean, r.std, precision),
            _fmt(r.best, precision),
            f"{len(r.per_seed)}/{len(r.per_seed) + len(r.failures)}",
        )
        for r in table.rows
    ]
    widths = [max(len(line[i]) for line in [header, *body]) for i in range(len(header))]

    def line(cells: tuple[str, ...]) -> str:
        return " | ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(cells, widths)))

    out = [table.title, line(header), "-+-".join("-" * w for w in widths)]
    out.extend(line(cells) for cells in body)
    notes = [f"  {r.name}, seed {seed}: {reason}" for r in table.rows for seed, reason in sorted(r.failures.items())]
    if notes:
        out.append("")
        out.append("Failed runs:")
        out.extend(notes)
    return "\n".join(out) + "\n"


def report_csv(table: ReportTable) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in table.rows:
        writer.writerow(
            [
                r.name,
                r.unit,
                "" if r.mean is None else repr(r.mean),
                "" if r.std is None else repr(r.std),
                "" if r.best is None else repr(r.best),
                ";".join(f"{s}:{v!r}" for s, v in sorted(r.per_seed.items())),
                ";".join(f"{s}:{reason}" for s, reason in sorted(r.failures.items())),
            ]
        )
    return buffer.getvalue()


def write_report(table: ReportTable, out_dir: Union[str, Path], stem: str = "report") -> dict[str, Path]:
    """Write `<stem>.json`, `<stem>.csv` and `<stem>.txt`."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {kind: out_dir / f"{stem}.{kind}" for kind in ("json", "csv", "txt")}
    write_json(paths["json"], table.to_dict())
    paths["csv"].write_text(report_csv(table), encoding="utf-8")
    paths["txt"].write_text(render_report(table), encoding="utf-8")
    return paths


def load_report(path: Union[str, Path]) -> ReportTable:
    if not Path(path).exists():
        raise DataError(f"Report {path} does not exist")
    try:
        return ReportTable.from_dict(load_json_type_safe(path, "dict"))
    except (KeyError, ValueError) as e:
        raise DataError(f"Malformed report {path}: {e}") from e
