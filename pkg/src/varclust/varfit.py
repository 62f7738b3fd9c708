"""Least-squares VAR fitting and the cached QR layer behind every fast path.

For a design ``X = Q R`` (thin QR) and response ``Y`` the residual Gram
matrix of any coefficient block ``B`` splits exactly into two orthogonal
pieces::

    (Y - X B)^T (Y - X B) = S + (Q^T Y - R B)^T (Q^T Y - R B),
    S = (Y - Q Q^T Y)^T (Y - Q Q^T Y).

The cache keeps ``R``, ``Q^T Y`` and ``S`` per (series, order); ``Q`` is
dropped.  Pooled fits, residual covariances and psi values then cost
O(q^2 m) per series instead of O(T q m).
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import linalg

from . import kernels
from .core import (
    InvalidArgument,
    InvalidCovariance,
    TimeSeries,
    TimeSeriesSet,
    VarComponent,
    build_design,
)

DEGENERATE_RTOL = 1e-10
RIDGE_SCALE = 1e-8


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("VARCLUST_THREADS", "1")))
    except ValueError:
        return 1


class CacheEntry(NamedTuple):
    R: np.ndarray
    yq: np.ndarray
    S: np.ndarray
    degenerate: bool
    rows_used: int


@dataclass(frozen=True)
class OrderBlock:
    """Stacked QR products of all N series for one model order."""

    order: int
    R: np.ndarray  # (N, q, q)
    yq: np.ndarray  # (N, q, m)
    S: np.ndarray  # (N, m, m)
    degenerate: np.ndarray  # (N,) bool


@dataclass(frozen=True)
class QrCache:
    p_max: int
    rows_used: int
    blocks: dict

    def __len__(self):
        return sum(b.R.shape[0] for b in self.blocks.values())

    def __contains__(self, order):
        return order in self.blocks

    @property
    def orders(self) -> list[int]:
        return sorted(self.blocks)

    def block(self, order: int) -> OrderBlock:
        try:
            return self.blocks[order]
        except KeyError:
            raise InvalidArgument(f"order {order} was not cached (have {self.orders})") from None

    def entry(self, n: int, order: int) -> CacheEntry:
        b = self.block(order)
        return CacheEntry(b.R[n], b.yq[n], b.S[n], bool(b.degenerate[n]), self.rows_used)

    @property
    def any_degenerate(self) -> bool:
        return any(bool(b.degenerate.any()) for b in self.blocks.values())


def _is_degenerate(R) -> bool:
    d = np.abs(np.diag(R))
    return bool(d.max() == 0 or np.any(d < DEGENERATE_RTOL * d.max()))


def _qr_one(series, order, p_max):
    X, Y = build_design(series, order, p_max)
    Q, R = np.linalg.qr(X)
    yq = Q.T @ Y
    V = Y - Q @ yq
    return R, yq, V.T @ V, _is_degenerate(R)


def build_qr_cache(data: TimeSeriesSet, orders, p_max: int | None = None,
                   threads: int | None = None) -> QrCache:
    """QR-factorise every series' design once per distinct order."""
    orders = sorted({int(p) for p in orders})
    if not orders:
        raise InvalidArgument("need at least one order")
    if p_max is None:
        p_max = orders[-1]
    if orders[-1] > p_max or orders[0] < 0:
        raise InvalidArgument(f"orders {orders} must lie in [0, p_max={p_max}]")
    threads = threads or default_threads()
    jobs = [(n, p) for p in orders for n in range(data.N)]

    def work(job):
        n, p = job
        return _qr_one(data[n], p, p_max)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(work, jobs))
    else:
        results = [work(j) for j in jobs]

    blocks = {}
    for i, p in enumerate(orders):
        chunk = results[i * data.N:(i + 1) * data.N]
        blocks[p] = OrderBlock(
            order=p,
            R=np.stack([r[0] for r in chunk]),
            yq=np.stack([r[1] for r in chunk]),
            S=np.stack([r[2] for r in chunk]),
            degenerate=np.array([r[3] for r in chunk]),
        )
    return QrCache(p_max=p_max, rows_used=data.T - p_max, blocks=blocks)


def solve_normal(A, b, degenerate=False):
    """Solve ``A x = b`` for symmetric PSD ``A``, with ridge jitter if needed.

    Returns ``(x, jittered)``.
    """
    q = A.shape[0]
    if not degenerate:
        try:
            c = linalg.cho_factor(A, lower=False, check_finite=False)
            x = linalg.cho_solve(c, b, check_finite=False)
            if np.all(np.isfinite(x)):
                # Cholesky can succeed on numerically singular A; check pivots.
                d = np.diag(c[0]) ** 2
                if d.min() >= DEGENERATE_RTOL ** 2 * d.max():
                    return x, False
        except linalg.LinAlgError:
            pass
    lam = RIDGE_SCALE * np.trace(A) / q
    if lam <= 0:
        lam = RIDGE_SCALE
    x = linalg.solve(A + lam * np.eye(q), b, assume_a="pos", check_finite=False)
    return x, True


def _coef_from_qr(R, yq, degenerate):
    if not degenerate:
        return linalg.solve_triangular(R, yq, lower=False, check_finite=False), False
    return solve_normal(R.T @ R, R.T @ yq, degenerate=True)


def residual_gram(entry: CacheEntry, coef) -> np.ndarray:
    D = entry.yq - entry.R @ coef
    G = entry.S + D.T @ D
    return 0.5 * (G + G.T)


def fit_from_cache(cache: QrCache, n: int, order: int, divisor: int | None = None) -> VarComponent:
    """OLS VAR(order) fit of series ``n`` using cached QR products."""
    e = cache.entry(n, order)
    coef, jittered = _coef_from_qr(e.R, e.yq, e.degenerate)
    G = residual_gram(e, coef)
    omega = G / (divisor if divisor is not None else e.rows_used)
    flags = set()
    if jittered:
        flags.add("rank-deficient")
    scale = (np.sum(e.yq ** 2) + np.trace(e.S)) / (e.rows_used * omega.shape[0])
    if not is_pd(omega) or np.linalg.eigvalsh(omega).min() <= 1e-20 * max(scale, 1e-300):
        flags.add("singular-covariance")
    return VarComponent.from_coef(coef, omega, flags)


def fit_var_ols(series: TimeSeries, order: int, p_max: int | None = None) -> VarComponent:
    """Least-squares VAR(order) fit via QR of the design and back-substitution.

    The covariance is ``E^T E / (T - p)`` with ``E`` the fit's residuals.  A
    rank-deficient design is solved with ridge jitter and flagged; a singular
    covariance is returned as is and flagged.
    """
    if p_max is None:
        p_max = order
    if not isinstance(series, TimeSeries):
        series = TimeSeries(series)
    R, yq, S, degenerate = _qr_one(series, order, p_max)
    cache = QrCache(p_max, series.T - p_max,
                    {order: OrderBlock(order, R[None], yq[None], S[None], np.array([degenerate]))})
    return fit_from_cache(cache, 0, order)


def is_pd(omega) -> bool:
    try:
        np.linalg.cholesky(omega)
    except np.linalg.LinAlgError:
        return False
    return True


def cholesky_pd(omega) -> np.ndarray:
    """Lower Cholesky factor of the symmetrised ``omega``; raises InvalidCovariance."""
    omega = np.asarray(omega, dtype=float)
    sym = 0.5 * (omega + omega.T)
    if not np.all(np.isfinite(sym)):
        raise InvalidCovariance("covariance has non-finite entries")
    try:
        L = np.linalg.cholesky(sym)
    except np.linalg.LinAlgError:
        raise InvalidCovariance("covariance is not positive definite") from None
    if np.any(np.diag(L) <= 0):
        raise InvalidCovariance("covariance is not positive definite")
    return L


def inverse_cholesky(omega) -> np.ndarray:
    L = cholesky_pd(omega)
    return linalg.solve_triangular(L, np.eye(L.shape[0]), lower=True, check_finite=False)


def psi(E, covariance) -> float:
    """Sum over rows e_t of e_t^T Omega^{-1} e_t, by forward substitution on L."""
    E = np.atleast_2d(np.asarray(E, dtype=float))
    L = cholesky_pd(covariance)
    Z = linalg.solve_triangular(L, E.T, lower=True, check_finite=False)
    return float(np.sum(Z * Z))


def log_det_pd(omega) -> float:
    L = cholesky_pd(omega)
    return float(2.0 * np.sum(np.log(np.diag(L))))


def ensure_pd(omega, rel: float = 1e-10):
    """Return ``(omega', jittered)`` with ``omega'`` positive definite.

    A covariance that fails Cholesky gets ``eps * I`` added, with ``eps``
    growing from ``rel * trace / m`` until it factorises.
    """
    omega = 0.5 * (omega + omega.T)
    if is_pd(omega) and np.linalg.cond(omega) < 1e14:
        return omega, False
    m = omega.shape[0]
    scale = max(np.trace(omega) / m, 1e-300)
    eps = rel * scale
    if not np.isfinite(eps) or eps <= 0:
        eps = 1e-12
    for _ in range(30):
        cand = omega + eps * np.eye(m)
        if is_pd(cand) and np.linalg.cond(cand) < 1e14:
            return cand, True
        eps *= 10.0
    raise InvalidCovariance("could not regularise covariance")


def normalize_covariance(omega) -> np.ndarray:
    """Scale ``omega`` to unit determinant: omega / det(omega)^(1/m)."""
    m = omega.shape[0]
    return omega / np.exp(log_det_pd(omega) / m)


def psi_matrix(cache: QrCache, components, covariances=None, backend=None) -> np.ndarray:
    """psi[n, k] of every series under every component, from the cache.

    ``covariances`` overrides the components' own (e.g. normalised ones).
    """
    if covariances is None:
        covariances = [c.covariance for c in components]
    N = next(iter(cache.blocks.values())).R.shape[0]
    out = np.empty((N, len(components)))
    by_order: dict[int, list[int]] = {}
    for k, c in enumerate(components):
        by_order.setdefault(c.order, []).append(k)
    for p, ks in by_order.items():
        blk = cache.block(p)
        B = np.stack([components[k].coef for k in ks])
        Linv = np.stack([inverse_cholesky(covariances[k]) for k in ks])
        out[:, ks] = kernels.psi_grid(blk.R, blk.yq, blk.S, B, Linv, backend=backend)
    return out


def log_dets(covariances) -> np.ndarray:
    return np.array([log_det_pd(c) for c in covariances])


def pooled_fit(cache: QrCache, order: int, weights, prev: VarComponent | None = None,
               backend=None):
    """Weighted pooled least squares over series with weights ``w_n``.

    Returns ``(coef, gram, jittered)`` where ``gram`` is the weighted sum of
    residual Gram matrices at the pooled coefficients.
    """
    blk = cache.block(order)
    w = np.asarray(weights, dtype=float)
    A = np.einsum("n,nji,njk->ik", w, blk.R, blk.R)
    b = np.einsum("n,nji,njm->im", w, blk.R, blk.yq)
    coef, jittered = solve_normal(A, b)
    G = kernels.weighted_gram(blk.R, blk.yq, blk.S, coef, w, backend=backend)
    return coef, 0.5 * (G + G.T), jittered
