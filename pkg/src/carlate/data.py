"""Observed-experiment data container, validation, and strata bookkeeping."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


class DataError(ValueError):
    """Raised when raw inputs fail validation."""


@dataclass(frozen=True)
class ExperimentData:
    """Validated experiment sample.

    Stratum labels are canonicalized to dense indices 0..S-1 (sorted label
    order); ``s_labels[j]`` recovers the original label of index j.  The
    covariate matrix ``x`` carries no constant column and may be empty
    (shape ``(n, 0)``).
    """

    y: np.ndarray
    d: np.ndarray
    a: np.ndarray
    s: np.ndarray
    x: np.ndarray
    s_labels: tuple = field(default=())

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def k(self) -> int:
        return self.x.shape[1]

    @property
    def n_strata(self) -> int:
        return len(self.s_labels)


@dataclass(frozen=True)
class StrataIndex:
    """Per-stratum counts, index sets, and assignment frequencies."""

    strata: np.ndarray           # dense stratum ids, 0..S-1
    n_of: np.ndarray             # units per stratum
    n1_of: np.ndarray            # assigned-to-treatment count per stratum
    n0_of: np.ndarray            # assigned-to-control count per stratum
    i1_of: list                  # index arrays, treated units per stratum
    i0_of: list                  # index arrays, control units per stratum
    pi_hat: np.ndarray           # n1(s) / n(s)
    p_hat: np.ndarray            # n(s) / n


def _as_binary(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise DataError(f"{name} must be one-dimensional")
    if not np.all(np.isin(arr, (0.0, 1.0))):
        raise DataError(f"non-binary {name}")
    return arr.astype(np.int8)


def build_dataset(y, d, a, s, x=None) -> ExperimentData:
    """Validate raw columns and return an :class:`ExperimentData`.

    ``d`` and ``a`` must be coded {0,1} ("a" holds the assignment, "d" the
    treatment actually received); ``s`` may be arbitrary hashable labels;
    ``x`` is an n-by-k matrix of finite reals with no constant column
    (pass None or an empty matrix for a covariate-free sample).
    """
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.size == 0:
        raise DataError("empty input")
    n = y.shape[0]
    d = _as_binary(d, "treatment")
    a = _as_binary(a, "assignment")
    s_raw = np.asarray(s)
    if x is None:
        x = np.empty((n, 0))
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    for name, col in (("y", y), ("d", d), ("a", a), ("s", s_raw)):
        if col.shape[0] != n:
            raise DataError(f"length mismatch: column {name} has {col.shape[0]} rows, expected {n}")
    if x.shape[0] != n:
        raise DataError(f"length mismatch: x has {x.shape[0]} rows, expected {n}")
    if not np.all(np.isfinite(y)):
        raise DataError("non-finite outcome value")
    if x.size and not np.all(np.isfinite(x)):
        raise DataError("non-finite covariate value")
    for j in range(x.shape[1]):
        if np.ptp(x[:, j]) == 0.0:
            raise DataError(f"covariate column {j + 1} is constant; drop it "
                            "(intercepts are added internally where needed)")
    labels, dense = np.unique(s_raw, return_inverse=True)
    return ExperimentData(y=y, d=d, a=a, s=dense.astype(np.intp), x=x,
                          s_labels=tuple(labels.tolist()))


def index_strata(data: ExperimentData) -> StrataIndex:
    """Compute counts, index sets, and pi_hat per stratum.

    Empty arms are legal here (pi_hat of 0 or 1); estimators check for them
    at entry.
    """
    n_s = data.n_strata
    n_of = np.bincount(data.s, minlength=n_s)
    n1_of = np.bincount(data.s, weights=data.a, minlength=n_s).astype(np.intp)
    n0_of = n_of - n1_of
    i1_of = []
    i0_of = []
    for s in range(n_s):
        in_s = np.flatnonzero(data.s == s)
        treated = data.a[in_s] == 1
        i1_of.append(in_s[treated])
        i0_of.append(in_s[~treated])
    with np.errstate(invalid="ignore"):
        pi_hat = np.where(n_of > 0, n1_of / np.maximum(n_of, 1), np.nan)
    return StrataIndex(strata=np.arange(n_s), n_of=n_of, n1_of=n1_of, n0_of=n0_of,
                       i1_of=i1_of, i0_of=i0_of, pi_hat=pi_hat, p_hat=n_of / data.n)


CSV_BASE_COLUMNS = ("y", "d", "a", "s")


def read_csv(path) -> ExperimentData:
    """Read a dataset from CSV with header ``y,d,a,s,x1,...,xk`` (k >= 0)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("empty input") from None
        header = [h.strip() for h in header]
        for col in CSV_BASE_COLUMNS:
            if col not in header:
                raise DataError(f"missing column '{col}' in header {header}")
        x_cols = [h for h in header if h not in CSV_BASE_COLUMNS]
        expected_x = [f"x{j + 1}" for j in range(len(x_cols))]
        if x_cols != expected_x:
            raise DataError(f"covariate columns must be named x1..x{len(x_cols)}, got {x_cols}")
        pos = {name: header.index(name) for name in header}
        y, d, a, s, rows_x = [], [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise DataError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                y.append(float(row[pos["y"]]))
                d.append(float(row[pos["d"]]))
                a.append(float(row[pos["a"]]))
                rows_x.append([float(row[pos[c]]) for c in x_cols])
            except ValueError as exc:
                raise DataError(f"line {lineno}: {exc}") from None
            s.append(row[pos["s"]].strip())
        if not y:
            raise DataError("empty input")
        try:
            return build_dataset(y, d, a, s, np.asarray(rows_x) if x_cols else None)
        except DataError as exc:
            raise DataError(f"{path}: {exc}") from None


def write_csv(data: ExperimentData, path) -> None:
    """Write a dataset back out in the ingestion schema (round-trips read_csv)."""
    header = list(CSV_BASE_COLUMNS) + [f"x{j + 1}" for j in range(data.k)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(data.n):
            row = [repr(float(data.y[i])), int(data.d[i]), int(data.a[i]),
                   data.s_labels[data.s[i]]]
            row += [repr(float(v)) for v in data.x[i]]
            writer.writerow(row)
