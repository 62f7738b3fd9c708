"""Choosing the number of clusters K and the VAR order p with (extended) BIC."""

from __future__ import annotations

import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import LOG_2PI, InvalidArgument, TimeSeries, TimeSeriesSet, VarclustError
from .cmvar import CmvarConfig, CmvarResult, fit_cmvar, log_likelihood
from .klmvar import KlmvarConfig, KlmvarResult, fit_klmvar
from .varfit import QrCache, build_qr_cache, default_threads, log_det_pd, psi_matrix

INT64_LIMIT = 2**63


def model_space_cardinality(n_p: int, K: int) -> int:
    """Number of order multisets of size K drawn from n_p candidates: C(n_p+K-1, K)."""
    if n_p < 1 or K < 1:
        raise InvalidArgument("n_p and K must be positive")
    num, den = 1, 1
    for i in range(1, K + 1):
        num *= n_p - 1 + i
        den *= i
    card = num // den
    if card >= INT64_LIMIT:
        raise OverflowError(f"model space of size C({n_p + K - 1}, {K}) exceeds 2^63")
    return card


def surrogate_log_likelihood(result: KlmvarResult, data: TimeSeriesSet, cache: QrCache) -> float:
    """Small-noise log likelihood of a hard clustering.

    sum_n [ -(m/2)(T - p_max) log 2 pi - D_{n,label}(Theta, Omega) / 2 ] with
    the raw (not unit-determinant) covariances.
    """
    comps = result.params.components
    lab = result.label_vector
    psi = psi_matrix(cache, comps)
    ld = np.array([log_det_pd(c.covariance) for c in comps])
    rows = cache.rows_used
    D = rows * ld[lab] + psi[np.arange(data.N), lab]
    return float(np.sum(-0.5 * data.m * rows * LOG_2PI - 0.5 * D))


def n_free_parameters(m: int, orders, eta_mix: int) -> int:
    K = len(orders)
    return m * m * sum(orders) + K * (m * m + 3 * m) // 2 + eta_mix


def extended_bic(result, data: TimeSeriesSet, K: int, orders, gamma: float, n_p: int,
                 cache: QrCache) -> float:
    """-2 log L + n_params log[N (T - p_max)] + 2 gamma log card(S_K)."""
    if not 0.0 <= gamma <= 1.0:
        raise InvalidArgument("gamma must lie in [0, 1]")
    if isinstance(orders, int):
        orders = [orders] * K
    if isinstance(result, KlmvarResult):
        logL = surrogate_log_likelihood(result, data, cache)
        eta = data.N
    elif isinstance(result, CmvarResult):
        logL = log_likelihood(data, result.params, cache)
        eta = K - 1
    else:
        raise InvalidArgument(f"unsupported result type {type(result).__name__}")
    k_par = n_free_parameters(data.m, orders, eta)
    score = -2.0 * logL + k_par * math.log(data.N * cache.rows_used)
    if gamma:
        score += 2.0 * gamma * math.log(model_space_cardinality(n_p, K))
    return score


@dataclass
class BicGrid:
    k_candidates: list
    p_candidates: list
    scores: np.ndarray
    gamma: float
    best: tuple
    converged: np.ndarray = None
    seed: int = 0
    failures: dict = field(default_factory=dict)
    label_repeats: int = 0

    def rows(self):
        for i, K in enumerate(self.k_candidates):
            for j, p in enumerate(self.p_candidates):
                yield K, p, self.gamma, float(self.scores[i, j]), bool(self.converged[i, j]), self.seed


def _best_cell(scores, k_candidates, p_candidates):
    best, best_key = None, None
    for i, K in enumerate(k_candidates):
        for j, p in enumerate(p_candidates):
            s = scores[i, j]
            if not np.isfinite(s):
                continue
            key = (s, K, p)
            if best_key is None or key < best_key:
                best_key, best = key, (K, p)
    return best


def _fit(algo, data, K, p, config, cache):
    if algo == "klmvar":
        return fit_klmvar(data, K, [p] * K, config or KlmvarConfig(restarts=3), cache=cache)
    if algo == "cmvar":
        return fit_cmvar(data, K, [p] * K, config or CmvarConfig(restarts=3), cache=cache)
    raise InvalidArgument(f"unknown algorithm {algo!r}")


def bic_surface(data: TimeSeriesSet, k_candidates, p_candidates, gamma: float = 0.5,
                algo: str = "klmvar", config=None, threads: int | None = None,
                cache: QrCache | None = None) -> BicGrid:
    """Extended BIC over the (K, p) grid with p_k = p for all k.

    Every cell predicts t > max(p_candidates) and uses the same seed.  A cell
    whose fit fails scores +inf and the sweep carries on.
    """
    ks = [int(k) for k in k_candidates]
    ps = [int(p) for p in p_candidates]
    if not ks or not ps:
        raise InvalidArgument("candidate lists must be non-empty")
    if cache is None:
        cache = build_qr_cache(data, ps, max(ps), threads=threads)
    n_p = len(ps)
    scores = np.full((len(ks), len(ps)), np.inf)
    conv = np.zeros((len(ks), len(ps)), dtype=bool)
    failures = {}

    def cell(ij):
        i, j = ij
        K, p = ks[i], ps[j]
        try:
            res = _fit(algo, data, K, p, config, cache)
            score = extended_bic(res, data, K, [p] * K, gamma, n_p, cache)
            return ij, score, res.converged, None, getattr(res, "restart_repeats", 0)
        except (VarclustError, np.linalg.LinAlgError, ValueError) as exc:
            return ij, np.inf, False, str(exc), 0

    jobs = [(i, j) for i in range(len(ks)) for j in range(len(ps))]
    threads = threads or default_threads()
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(cell, jobs))
    else:
        results = [cell(j) for j in jobs]
    repeats = 0
    for (i, j), s, c, err, rep in results:
        repeats += rep
        scores[i, j] = s
        conv[i, j] = c
        if err is not None:
            failures[(ks[i], ps[j])] = err
    seed = getattr(config, "seed", 0) if config is not None else 0
    return BicGrid(ks, ps, scores, gamma, _best_cell(scores, ks, ps), conv, seed, failures, repeats)


def var_bic(series: TimeSeries, p: int, p_max: int) -> float:
    """BIC of a single-series VAR(p) on the rows t > p_max."""
    from .varfit import fit_var_ols
    from .core import residual_matrix

    comp = fit_var_ols(series, p, p_max)
    E = residual_matrix(series, comp, p_max)
    rows, m = E.shape
    omega = E.T @ E / rows
    sign, ld = np.linalg.slogdet(omega)
    if sign <= 0:
        return -np.inf
    # with omega the ML covariance, sum_t e^T omega^{-1} e = rows * m
    logL = -0.5 * m * rows * LOG_2PI - 0.5 * (rows * ld + rows * m)
    return -2.0 * logL + (m * m * p + m * (m + 3) / 2) * math.log(rows)


def select_order_bic(series: TimeSeries, p_candidates) -> int:
    """Order with the smallest single-series BIC (ties go to the smaller order)."""
    ps = sorted(int(p) for p in p_candidates)
    if not ps:
        raise InvalidArgument("no candidate orders")
    if len(ps) == 1:
        return ps[0]
    p_max = ps[-1]
    scores = [var_bic(series, p, p_max) for p in ps]
    return ps[int(np.argmin(scores))]


def vote_order(data: TimeSeriesSet, p_candidates, max_series: int | None = None) -> int:
    """Most frequent per-series BIC order (ties go to the smaller order)."""
    series = list(data)[:max_series] if max_series else list(data)
    votes = Counter(select_order_bic(s, p_candidates) for s in series)
    top = max(votes.values())
    return min(p for p, c in votes.items() if c == top)


def adhoc_select(data: TimeSeriesSet, k_candidates, p_candidates, config=None,
                 algo: str = "klmvar", max_cycles: int = 5, threads: int | None = None):
    """Cyclic descent on BIC: vote p per series, sweep K at that p, re-pick p, repeat.

    Returns ``(K, p)``.
    """
    ks = [int(k) for k in k_candidates]
    ps = [int(p) for p in p_candidates]
    if not ks or not ps:
        raise InvalidArgument("candidate lists must be non-empty")
    cache = build_qr_cache(data, ps, max(ps), threads=threads)
    p = vote_order(data, ps)
    if len(ks) == 1:
        return ks[0], p
    K = None
    for _ in range(max_cycles):
        grid = bic_surface(data, ks, [p], 0.0, algo, config, threads, cache)
        if grid.best is None:
            break
        K_new = grid.best[0]
        if len(ps) == 1:
            p_new = ps[0]
        else:
            grid = bic_surface(data, [K_new], ps, 0.0, algo, config, threads, cache)
            p_new = grid.best[1] if grid.best is not None else p
        if (K_new, p_new) == (K, p):
            break
        K, p = K_new, p_new
    return K, p
