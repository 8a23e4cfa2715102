import csv
import io
import json
import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, fields, is_dataclass
from enum import StrEnum
from typing import Any

import numpy as np

logger = logging.getLogger(__name__)


SIGNIFICANT_DIGITS = 12
NAN_TEXT = "nan"
MISSING_CELL = "--"
CAPPED_SUFFIX = "*"


class OutputFormat(StrEnum):
    JSON = "json"
    CSV = "csv"
    TEXT = "text"


Cell = str | int | float | bool | None


@dataclass(frozen=True, kw_only=True)
class Report:
    """What one command prints: run metadata followed by one table."""

    command: str
    columns: tuple[str, ...]
    rows: tuple[tuple[Cell, ...], ...]
    metadata: Mapping[str, Any] = field(default_factory=dict)
    # JSON output prints this object instead of metadata plus table when set
    document: Mapping[str, Any] | None = None

    def __post_init__(self) -> None:
        for row in self.rows:
            if len(row) != len(self.columns):
                raise ValueError(
                    f"row {row!r} does not match the {len(self.columns)} columns"
                )


def format_float(value: float) -> str:
    if math.isnan(value):
        return NAN_TEXT
    return f"{value:.{SIGNIFICANT_DIGITS}g}"


def round_float(value: float) -> float | None:
    if not math.isfinite(value):
        return None
    return float(format_float(value))


def to_jsonable(obj: Any) -> Any:
    """Plain JSON values with floats at fixed precision and nan/inf as null."""
    if isinstance(obj, StrEnum):
        return obj.value
    if isinstance(obj, bool | int | str) or obj is None:
        return obj
    if isinstance(obj, float | np.floating):
        return round_float(float(obj))
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [to_jsonable(item) for item in obj.tolist()]
    if is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, Mapping):
        return {str(key): to_jsonable(value) for key, value in obj.items()}
    if isinstance(obj, Sequence):
        return [to_jsonable(item) for item in obj]
    return obj


def report_as_dict(report: Report) -> dict[str, Any]:
    return {
        "command": report.command,
        "metadata": report.metadata,
        "columns": report.columns,
        "rows": [dict(zip(report.columns, row, strict=True)) for row in report.rows],
    }


class ReportEncoder(json.JSONEncoder):
    def encode(self, o: Any) -> str:
        if isinstance(o, Report):
            o = report_as_dict(o)
        return super().encode(to_jsonable(o))


def json_dumps(obj: Any) -> str:
    return json.dumps(obj, cls=ReportEncoder, allow_nan=False)


def format_cell(value: Cell) -> str:
    match value:
        case None:
            return ""
        case bool():
            return "true" if value else "false"
        case float():
            return format_float(value)
        case _:
            return str(value)


def to_csv(report: Report) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(report.columns)
    for row in report.rows:
        writer.writerow(format_cell(cell) for cell in row)
    return buffer.getvalue()


def _metadata_text(value: Any) -> str:
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, str | int | float | bool) or value is None:
        return format_cell(value)
    return json.dumps(to_jsonable(value))


def to_text(report: Report) -> str:
    lines = [f"# {report.command}"]
    lines.extend(f"# {key}: {_metadata_text(value)}" for key, value in report.metadata.items())

    table = [list(report.columns), *([format_cell(c) for c in row] for row in report.rows)]
    widths = [max(len(row[k]) for row in table) for k in range(len(report.columns))]
    lines.extend(
        "  ".join(cell.ljust(width) for cell, width in zip(row, widths, strict=True)).rstrip()
        for row in table
    )
    return "\n".join(lines) + "\n"


def render(report: Report, output_format: OutputFormat) -> str:
    match output_format:
        case OutputFormat.JSON:
            body = report if report.document is None else report.document
            return json_dumps(body) + "\n"
        case OutputFormat.CSV:
            return to_csv(report)
        case OutputFormat.TEXT:
            return to_text(report)
