"""Flat benchmark records and their CSV form.

Columns, in order:

``scenario``
    config name (sanity rows use ``<name>/ns=<n_s>/nf=<n_f>``).
``step``
    scenario step, or repetition-summary index for sanity rows.
``method``
    ``STD`` (batch), ``ISAM`` (this package's incremental update), ``OTM``,
    ``OTM_OO``, ``DU``, ``DU_OO`` or ``UD_OTM_OO`` (the carried-forward
    ``OTM_OO`` step including association repair).
``phase``
    ``rhs_update``, ``da_update`` or ``total``.
``time_ns``
    median over the timed repetitions; sanity rows carry the mean in a
    second row with ``phase=total_mean``.
``n_state``, ``n_new_factor_rows``, ``n_reeliminations``, ``da_rmv``, ``da_add``
    problem size and work counters.
``max_est_diff_vs_baseline``
    largest absolute difference from the ``ISAM`` result over the square-root
    factor, right-hand side and estimate (empty for the baseline itself).
"""
from __future__ import annotations

import csv
import io
from dataclasses import astuple, dataclass, fields

from ..errors import ParseError

METHODS = ("STD", "ISAM", "OTM", "OTM_OO", "DU", "DU_OO", "UD_OTM_OO")
PHASES = ("da_update", "rhs_update", "total", "total_mean")


@dataclass(frozen=True)
class BenchRecord:
    scenario: str
    step: int
    method: str
    phase: str
    time_ns: int
    n_state: int
    n_new_factor_rows: int
    n_reeliminations: int
    da_rmv: int
    da_add: int
    max_est_diff_vs_baseline: float | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.phase not in PHASES:
            raise ValueError(f"unknown phase {self.phase!r}")
        if self.time_ns < 0:
            raise ValueError("time_ns must be non-negative")


FIELDS = tuple(f.name for f in fields(BenchRecord))


def write_csv(records, stream=None) -> str:
    """Write ``records`` with a header row; returns the text when ``stream`` is None."""
    out = stream if stream is not None else io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(FIELDS)
    for r in records:
        row = list(astuple(r))
        row[-1] = "" if row[-1] is None else repr(float(row[-1]))
        w.writerow(row)
    return out.getvalue() if stream is None else ""


def read_csv(text: str) -> list[BenchRecord]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ParseError("empty CSV (no header)")
    if tuple(rows[0]) != FIELDS:
        raise ParseError(f"unexpected header {rows[0]!r}")
    out = []
    for n, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(FIELDS):
            raise ParseError(f"line {n}: expected {len(FIELDS)} columns, got {len(row)}")
        try:
            out.append(BenchRecord(row[0], int(row[1]), row[2], row[3], int(row[4]),
                                   *(int(v) for v in row[5:10]),
                                   float(row[10]) if row[10] else None))
        except ValueError as exc:
            raise ParseError(f"line {n}: {exc}") from exc
    return out
