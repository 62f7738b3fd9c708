"""Domain types, dataset I/O and design-matrix construction.

Every regression in the package predicts only the time points
``t = p_max + 1, ..., T`` (1-based), whatever the order of the model doing
the predicting.  That keeps residual counts, likelihoods and objective
values comparable across models of different order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class VarclustError(Exception):
    """Base class for all errors raised by varclust."""


class InvalidArgument(VarclustError, ValueError):
    pass


class InsufficientData(VarclustError, ValueError):
    pass


class InvalidCovariance(VarclustError, np.linalg.LinAlgError):
    pass


class NumericFailure(VarclustError, FloatingPointError):
    def __init__(self, message, where=None):
        super().__init__(message)
        self.where = where


class InitFailure(VarclustError, RuntimeError):
    pass


class FitFailure(VarclustError, RuntimeError):
    pass


class SimulationFailure(VarclustError, FloatingPointError):
    pass


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class TimeSeries:
    """One vector time series; rows are time points, columns variables."""

    values: np.ndarray
    id: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2:
            raise InvalidArgument(f"series values must be T x m, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidArgument(f"series {self.id!r} contains non-finite values")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class TimeSeriesSet:
    """N series sharing the same length T and dimension m."""

    series: tuple

    def __post_init__(self):
        items = tuple(s if isinstance(s, TimeSeries) else TimeSeries(s) for s in self.series)
        if not items:
            raise InvalidArgument("a dataset needs at least one series")
        T, m = items[0].T, items[0].m
        for s in items:
            if s.T != T or s.m != m:
                raise InvalidArgument(
                    f"series {s.id!r} has shape {s.values.shape}, expected ({T}, {m})"
                )
        object.__setattr__(self, "series", items)
        object.__setattr__(self, "_stack", _frozen(np.stack([s.values for s in items])))

    @classmethod
    def from_array(cls, values, ids=None) -> "TimeSeriesSet":
        values = np.asarray(values, dtype=float)
        if values.ndim == 2:
            values = values[:, :, None]
        if ids is None:
            width = max(4, len(str(len(values))))
            ids = [f"s{n + 1:0{width}d}" for n in range(len(values))]
        return cls(tuple(TimeSeries(v, i) for v, i in zip(values, ids)))

    @property
    def n_series(self) -> int:
        return len(self.series)

    N = n_series

    @property
    def T(self) -> int:
        return self.series[0].T

    @property
    def m(self) -> int:
        return self.series[0].m

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.series]

    @property
    def values(self) -> np.ndarray:
        """Stacked read-only array of shape (N, T, m)."""
        return self._stack

    def __len__(self):
        return len(self.series)

    def __getitem__(self, n) -> TimeSeries:
        return self.series[n]

    def __iter__(self):
        return iter(self.series)


@dataclass(frozen=True)
class VarComponent:
    """A VAR(p) model: intercept, p lag matrices and innovation covariance.

    ``flags`` carries diagnostics such as ``"rank-deficient"`` or
    ``"singular-covariance"``; positive definiteness of the covariance is
    enforced where the component is consumed as a model, not here.
    """

    intercept: np.ndarray
    lag_matrices: tuple
    covariance: np.ndarray
    flags: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        c = _frozen(np.ravel(self.intercept))
        m = c.shape[0]
        lags = tuple(_frozen(np.reshape(a, (m, m))) for a in self.lag_matrices)
        cov = np.array(self.covariance, dtype=float).reshape(m, m)
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
            raise InvalidArgument("covariance must be symmetric")
        cov = 0.5 * (cov + cov.T)
        object.__setattr__(self, "intercept", c)
        object.__setattr__(self, "lag_matrices", lags)
        object.__setattr__(self, "covariance", _frozen(cov))
        object.__setattr__(self, "flags", frozenset(self.flags))

    @property
    def m(self) -> int:
        return self.intercept.shape[0]

    @property
    def order(self) -> int:
        return len(self.lag_matrices)

    @property
    def stacked(self) -> np.ndarray:
        """Theta-tilde, the m x (1 + m p) matrix [c, A_1, ..., A_p]."""
        return np.hstack([self.intercept[:, None], *self.lag_matrices])

    @property
    def coef(self) -> np.ndarray:
        """Regression coefficients laid out like ``X``'s columns: (1 + m p) x m."""
        return self.stacked.T

    @classmethod
    def from_coef(cls, coef, covariance, flags=()) -> "VarComponent":
        coef = np.asarray(coef, dtype=float)
        m = coef.shape[1]
        p = (coef.shape[0] - 1) // m
        if coef.shape[0] != 1 + m * p:
            raise InvalidArgument(f"coefficient block of shape {coef.shape} is not (1 + m p) x m")
        lags = [coef[1 + i * m: 1 + (i + 1) * m].T for i in range(p)]
        return cls(coef[0], tuple(lags), covariance, frozenset(flags))

    def with_flags(self, *extra) -> "VarComponent":
        return VarComponent(self.intercept, self.lag_matrices, self.covariance,
                            self.flags | frozenset(extra))

    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "intercept": self.intercept.tolist(),
            "lag_matrices": [a.tolist() for a in self.lag_matrices],
            "covariance": self.covariance.tolist(),
            "flags": sorted(self.flags),
        }

    @classmethod
    def from_dict(cls, d) -> "VarComponent":
        return cls(d["intercept"], tuple(np.asarray(a) for a in d["lag_matrices"]),
                   d["covariance"], frozenset(d.get("flags", ())))


@dataclass(frozen=True)
class MixtureParams:
    components: tuple
    weights: np.ndarray | None = None

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise InvalidArgument("need at least one component")
        object.__setattr__(self, "components", comps)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (len(comps),):
                raise InvalidArgument("one weight per component required")
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
                raise InvalidArgument(f"weights must lie on the simplex, got {w}")
            object.__setattr__(self, "weights", _frozen(w))

    @property
    def K(self) -> int:
        return len(self.components)

    @property
    def orders(self) -> list[int]:
        return [c.order for c in self.components]

    def __len__(self):
        return len(self.components)

    def __getitem__(self, k) -> VarComponent:
        return self.components[k]

    def to_dict(self) -> dict:
        return {
            "components": [c.to_dict() for c in self.components],
            "weights": None if self.weights is None else self.weights.tolist(),
        }


@dataclass(frozen=True)
class Assignment:
    """N x K membership matrix; hard assignments are one-hot rows."""

    tau: np.ndarray

    def __post_init__(self):
        tau = np.array(self.tau, dtype=float)
        if tau.ndim != 2:
            raise InvalidArgument("tau must be N x K")
        if np.any(tau < 0) or np.any(tau > 1) or np.any(np.abs(tau.sum(axis=1) - 1) > 1e-12):
            raise InvalidArgument("tau rows must be probability vectors")
        object.__setattr__(self, "tau", _frozen(tau))

    @classmethod
    def from_labels(cls, labels, K: int) -> "Assignment":
        labels = np.asarray(labels, dtype=int)
        tau = np.zeros((labels.size, K))
        tau[np.arange(labels.size), labels] = 1.0
        return cls(tau)

    @property
    def labels(self) -> np.ndarray:
        """Row-argmax (0-based); ties go to the lowest index."""
        return np.argmax(self.tau, axis=1)

    @property
    def is_hard(self) -> bool:
        return bool(np.all((self.tau == 0) | (self.tau == 1)))

    def index_sets(self) -> list[np.ndarray]:
        lab = self.labels
        return [np.flatnonzero(lab == k) for k in range(self.tau.shape[1])]


def build_design(series: TimeSeries, order: int, p_max: int):
    """Regressor and response matrices for a VAR(order) on t = p_max+1..T.

    Row r of ``X`` is ``[1, Y_{t-1}, ..., Y_{t-order}]`` and row r of ``Y``
    is ``Y_t`` with ``t = p_max + 1 + r`` (1-based time).
    """
    if order < 0 or order > p_max:
        raise InvalidArgument(f"order {order} must lie in [0, p_max={p_max}]")
    v = series.values if isinstance(series, TimeSeries) else np.asarray(series, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    T = v.shape[0]
    if T <= p_max:
        raise InsufficientData(f"T={T} leaves no rows to predict with p_max={p_max}")
    rows = T - p_max
    X = np.empty((rows, 1 + v.shape[1] * order))
    X[:, 0] = 1.0
    m = v.shape[1]
    for i in range(1, order + 1):
        X[:, 1 + (i - 1) * m: 1 + i * m] = v[p_max - i: T - i]
    return X, v[p_max:].copy()


def residual_matrix(series: TimeSeries, comp: VarComponent, p_max: int) -> np.ndarray:
    """Innovations ``Y - X Theta^T`` of ``comp`` on ``series`` over t > p_max."""
    if series.m != comp.m:
        raise InvalidArgument(f"series has m={series.m}, component has m={comp.m}")
    X, Y = build_design(series, comp.order, p_max)
    return Y - X @ comp.coef


# -- dataset files -----------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def save_dataset_csv(data: TimeSeriesSet, path) -> None:
    """Write ``series_id,t,y1..ym`` rows sorted by (series_id, t)."""
    path = Path(path)
    order = sorted(range(data.N), key=lambda n: data[n].id)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["series_id", "t", *[f"y{j + 1}" for j in range(data.m)]])
        for n in order:
            s = data[n]
            for t, row in enumerate(s.values, start=1):
                w.writerow([s.id, t, *map(_fmt, row)])


def load_dataset_csv(path) -> TimeSeriesSet:
    """Read the dataset CSV format, validating ordering and equal T and m."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InvalidArgument(f"{path}: empty file") from None
        if header[:2] != ["series_id", "t"] or len(header) < 3:
            raise InvalidArgument(f"{path}: header must be series_id,t,y1,...,ym")
        m = len(header) - 2
        if header[2:] != [f"y{j + 1}" for j in range(m)]:
            raise InvalidArgument(f"{path}: value columns must be named y1..y{m}")
        blocks: dict[str, list] = {}
        ids: list[str] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != m + 2:
                raise InvalidArgument(f"{path}:{lineno}: expected {m + 2} fields")
            sid, t = row[0], int(row[1])
            if sid not in blocks:
                if ids and sid < ids[-1]:
                    raise InvalidArgument(f"{path}:{lineno}: rows not sorted by series_id")
                blocks[sid] = []
                ids.append(sid)
            elif sid != ids[-1]:
                raise InvalidArgument(f"{path}:{lineno}: series {sid!r} is not contiguous")
            if t != len(blocks[sid]) + 1:
                raise InvalidArgument(f"{path}:{lineno}: t must be consecutive from 1")
            blocks[sid].append([float(x) for x in row[2:]])
    if not ids:
        raise InvalidArgument(f"{path}: no data rows")
    return TimeSeriesSet(tuple(TimeSeries(np.array(blocks[i]), i) for i in ids))


def write_labels_csv(path, ids: Sequence[str], labels: Iterable[int]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["series_id", "label"])
        for sid, lab in zip(ids, labels):
            w.writerow([sid, int(lab)])


def read_labels_csv(path) -> dict[str, int]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or list(reader.fieldnames[:2]) != ["series_id", "label"]:
            raise InvalidArgument(f"{path}: header must be series_id,label")
        return {row["series_id"]: int(row["label"]) for row in reader}


def n_rows(T: int, p_max: int) -> int:
    if T <= p_max:
        raise InsufficientData(f"T={T} leaves no rows to predict with p_max={p_max}")
    return T - p_max


LOG_2PI = math.log(2.0 * math.pi)
