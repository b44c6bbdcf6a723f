"""CSV emission for experiment results.

Files use a header line, LF endings, ``.`` decimals and ``repr`` floats so a
parse of the emitted text reproduces every value bit for bit.
"""

from __future__ import annotations

import csv
import math
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence


@dataclass(frozen=True)
class MetricRow:
    epoch: int
    train_nll: float
    test_nll: float
    test_error: float
    wall_time_seconds: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.test_error <= 1.0:
            raise ValueError(f"error rate {self.test_error} outside [0, 1]")


METRIC_HEADER = [f.name for f in fields(MetricRow)]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_rows(header: Sequence[str], rows: Iterable[Sequence]) -> list[list[str]]:
    return [list(header)] + [[_fmt(v) for v in row] for row in rows]


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """Write ``rows`` under ``header``; raises ``OSError`` naming the path."""
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(format_rows(header, rows))
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


class MetricWriter:
    """Appends metric rows as they are produced, flushing after each."""

    def __init__(self, path):
        self.path = Path(path)
        try:
            self._fh = open(self.path, "w", newline="")
        except OSError as exc:
            raise OSError(f"cannot write {self.path}: {exc.strerror or exc}") from exc
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(METRIC_HEADER)
        self._fh.flush()

    def write(self, row: MetricRow) -> None:
        self._w.writerow([_fmt(v) for v in astuple(row)])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def emit_plotdata(rows: Sequence[MetricRow], path) -> Path:
    if not rows:
        raise ValueError("no metric rows to write")
    return write_csv(path, METRIC_HEADER, (astuple(r) for r in rows))


def parse_plotdata(path) -> list[MetricRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != METRIC_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        out = []
        for rec in reader:
            wall = float(rec[4]) if rec[4] else None
            out.append(MetricRow(int(rec[0]), float(rec[1]), float(rec[2]), float(rec[3]), wall))
    return out


def finite(*values: float) -> bool:
    return all(math.isfinite(v) for v in values)
