"""Observational survival dataset: schema, validation, delimited-text I/O.

A dataset holds covariates ``X``, a binary treatment ``A``, the observed
follow-up time ``U = min(event time, censoring time)`` and the event
indicator ``delta``. Datasets are immutable after construction and can be
shared freely across worker processes.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptyArmError,
    InvalidIndicatorError,
    MissingColumnError,
    NegativeTimeError,
    NonNumericCellError,
)


@dataclass(frozen=True)
class ObservationalDataset:
    """Right-censored observational data with a binary treatment."""

    X: np.ndarray
    A: np.ndarray
    U: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        if X.size == 0:
            X = X.reshape(len(self.A), 0)
        A = np.asarray(self.A)
        U = np.asarray(self.U, dtype=float)
        delta = np.asarray(self.delta)
        n = len(U)
        if X.shape[0] != n or len(A) != n or len(delta) != n:
            raise InvalidIndicatorError("X, A, U, delta must have matching lengths")

        if not np.all(np.isfinite(U)) or np.any(U < 0):
            raise NegativeTimeError("follow-up times must be finite and nonnegative")
        if not np.all(np.isfinite(X)):
            raise NonNumericCellError(int(np.argwhere(~np.isfinite(X))[0][0]), "X", "non-finite")
        for name, vec in (("A", A), ("delta", delta)):
            if not np.all(np.isin(vec, (0, 1))):
                raise InvalidIndicatorError(f"{name} must contain only 0 and 1")
        A = A.astype(np.int8)
        delta = delta.astype(np.int8)
        if A.sum() == 0 or A.sum() == n:
            raise EmptyArmError("both treatment arms must be non-empty")

        if X.shape[1] and n > 1:
            flat = np.ptp(X, axis=0) == 0
            if np.any(flat):
                cols = ", ".join(str(j) for j in np.flatnonzero(flat))
                warnings.warn(f"covariate column(s) {cols} have zero variance", stacklevel=3)

        for name, arr in (("X", X), ("A", A), ("U", U), ("delta", delta)):
            arr = np.ascontiguousarray(arr)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return len(self.U)

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def subset(self, mask) -> "ObservationalDataset":
        """Row subset; re-validates, so an emptied arm raises EmptyArmError."""
        mask = np.asarray(mask, dtype=bool)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return ObservationalDataset(self.X[mask], self.A[mask], self.U[mask], self.delta[mask])


@dataclass(frozen=True)
class StepFunction:
    """Right-continuous step function with optional left-limit evaluation.

    ``knots`` must be strictly increasing; ``values[k]`` is the level on
    ``[knots[k], knots[k+1])`` and ``value_before`` the level before the
    first knot.
    """

    knots: np.ndarray
    values: np.ndarray
    value_before: float = 0.0

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if knots.shape != values.shape or knots.ndim != 1:
            raise ValueError("knots and values must be 1-d arrays of equal length")
        if knots.size and np.any(np.diff(knots) <= 0):
            raise ValueError("knots must be strictly increasing")
        for name, arr in (("knots", knots), ("values", values)):
            arr = np.ascontiguousarray(arr)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    def __call__(self, t, side: str = "right"):
        """Evaluate at ``t``. side="right" includes a jump located exactly
        at ``t``; side="left" is the limit from below."""
        if side not in ("right", "left"):
            raise ValueError("side must be 'right' or 'left'")
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.knots, t, side=side) - 1
        out = np.where(idx >= 0, self.values[np.clip(idx, 0, None)], self.value_before)
        return float(out) if out.ndim == 0 else out


def eval_step(f: StepFunction, t, side: str = "right"):
    return f(t, side=side)


@dataclass(frozen=True)
class ColumnSchema:
    """Maps dataset roles to column names of a delimited text file.

    When ``covariates`` is None, every header column not claimed by
    treat/time/event is used as a covariate, in header order.
    """

    treat: str = "treat"
    time: str = "time"
    event: str = "event"
    covariates: tuple[str, ...] | None = None


def _sniff_delimiter(header_line: str) -> str:
    return "\t" if "\t" in header_line else ","


def load_dataset(path, schema: ColumnSchema | None = None) -> ObservationalDataset:
    """Read a comma- or tab-delimited file (UTF-8, header row) into a dataset."""
    schema = schema or ColumnSchema()
    with open(path, encoding="utf-8", newline="") as fh:
        first = fh.readline()
        if not first:
            raise MissingColumnError("file is empty")
        delim = _sniff_delimiter(first)
        header = next(csv.reader([first], delimiter=delim))
        header = [h.strip() for h in header]
        for col in (schema.treat, schema.time, schema.event):
            if col not in header:
                raise MissingColumnError(f"column {col!r} not found in header {header}")
        if schema.covariates is None:
            cov_cols = [h for h in header if h not in (schema.treat, schema.time, schema.event)]
        else:
            cov_cols = list(schema.covariates)
            for col in cov_cols:
                if col not in header:
                    raise MissingColumnError(f"covariate column {col!r} not found")
        pos = {name: header.index(name) for name in [schema.treat, schema.time, schema.event] + cov_cols}

        rows = []
        for r, rec in enumerate(csv.reader(fh, delimiter=delim)):
            if not rec or (len(rec) == 1 and not rec[0].strip()):
                continue
            parsed = []
            for name in [schema.treat, schema.time, schema.event] + cov_cols:
                cell = rec[pos[name]].strip() if pos[name] < len(rec) else ""
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise NonNumericCellError(r, name, cell) from None
            rows.append(parsed)

    if not rows:
        raise EmptyArmError("file contains no data rows")
    table = np.asarray(rows, dtype=float)
    A, U, event = table[:, 0], table[:, 1], table[:, 2]
    X = table[:, 3:]
    if np.any(U < 0) or not np.all(np.isfinite(U)):
        raise NegativeTimeError("follow-up times must be finite and nonnegative")
    for name, vec in (("treat", A), ("event", event)):
        if not np.all(np.isin(vec, (0.0, 1.0))):
            raise InvalidIndicatorError(f"column {name!r} must contain only 0 and 1")
    return ObservationalDataset(X=X, A=A.astype(int), U=U, delta=event.astype(int))


def save_dataset(path, data: ObservationalDataset, schema: ColumnSchema | None = None) -> None:
    """Write a dataset as comma-delimited text; floats use shortest
    round-trip formatting so load(save(d)) is bit-identical."""
    schema = schema or ColumnSchema()
    if schema.covariates is not None:
        cov_cols = list(schema.covariates)
    else:
        cov_cols = [f"x{j + 1}" for j in range(data.p)]
    if len(cov_cols) != data.p:
        raise MissingColumnError("schema covariate count does not match dataset")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join([schema.treat, schema.time, schema.event] + cov_cols) + "\n")
        for i in range(data.n):
            cells = [str(int(data.A[i])), repr(float(data.U[i])), str(int(data.delta[i]))]
            cells += [repr(float(v)) for v in data.X[i]]
            fh.write(",".join(cells) + "\n")


def save_survival_curve(path, times, survival) -> None:
    """Two-column (time, survival) tab-delimited export for external plotting."""
    times = np.asarray(times, dtype=float)
    survival = np.asarray(survival, dtype=float)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("time\tsurvival\n")
        for t, s in zip(times, survival):
            fh.write(f"{repr(float(t))}\t{repr(float(s))}\n")
