"""Wall-clock prediction latency across dataset sizes.

The report is a CSV with one row per (method, size): the number of rows
predicted, total seconds and seconds per row. Row counts are fixed by the
inputs, timings are whatever the machine gives.
"""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from ._io import atomic_write_text
from .exceptions import ValidationError

DEFAULT_SIZES = (20, 40, 60, 80, 100)
COLUMNS = ("method", "n_rows", "total_seconds", "seconds_per_row")


@dataclass(frozen=True)
class TimingRow:
    method: str
    n_rows: int
    total_seconds: float
    seconds_per_row: float


def time_predictions(predictors: Mapping[str, Callable[[np.ndarray], object]], X,
                     sizes: Sequence[int] = DEFAULT_SIZES, repeats: int = 1) -> list[TimingRow]:
    """Time each predictor on the first ``n`` rows of ``X`` for every ``n`` in ``sizes``.

    Parameters
    ----------
    predictors : mapping of name -> callable
        Each callable takes an ``(n, d)`` array. Put the quantum model and
        any classical baselines side by side here.
    repeats : int
        The fastest of ``repeats`` runs is reported.
    """
    X = np.asarray(X, dtype=float)
    if not predictors:
        raise ValidationError("no predictors given")
    if repeats < 1:
        raise ValidationError("repeats must be >= 1")
    bad = [n for n in sizes if not 1 <= int(n) <= len(X)]
    if bad:
        raise ValidationError(f"sizes {bad} out of range for {len(X)} available rows")
    rows = []
    for name, fn in predictors.items():
        for n in sizes:
            chunk = X[: int(n)]
            best = float("inf")
            for _ in range(repeats):
                t0 = time.perf_counter()
                fn(chunk)
                best = min(best, time.perf_counter() - t0)
            rows.append(TimingRow(name, int(n), best, best / int(n)))
    return rows


def dumps_timing(rows: Sequence[TimingRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow([r.method, r.n_rows, f"{r.total_seconds:.6e}", f"{r.seconds_per_row:.6e}"])
    return buf.getvalue()


def write_timing_csv(rows: Sequence[TimingRow], path):
    return atomic_write_text(path, dumps_timing(rows))
