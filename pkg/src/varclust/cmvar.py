"""Soft clustering of vector time series with a mixture of VAR models (EM).

Each series is generated by one of K Gaussian VAR components.  The E-step
computes posterior membership probabilities; the M-step refits mixing
weights, pooled weighted least-squares coefficients and covariances.

Responsibilities are evaluated in the log domain.  The direct ratio of
``alpha_k |Omega_k|^{-(T-p)/2} exp(-psi/2)`` terms underflows once psi runs
into the thousands (large m or T); we keep count of the rows where that
happens so the failure region stays observable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .core import (
    LOG_2PI,
    Assignment,
    FitFailure,
    InvalidArgument,
    MixtureParams,
    NumericFailure,
    TimeSeriesSet,
    VarComponent,
    build_design,
)
from .datagen import make_rng
from .varfit import (
    QrCache,
    build_qr_cache,
    ensure_pd,
    inverse_cholesky,
    log_dets,
    pooled_fit,
    psi_matrix,
)

UNDERFLOW_GAP = 700.0


@dataclass
class CmvarConfig:
    max_iters: int = 500
    tol: float = 1e-8
    seed: int = 0
    init: str = "random-responsibilities"
    restarts: int = 1
    threads: int | None = None

    def __post_init__(self):
        if self.tol <= 0:
            raise InvalidArgument("tol must be positive")
        if self.max_iters < 1:
            raise InvalidArgument("max_iters must be >= 1")
        if self.init not in ("random-responsibilities", "from-components"):
            raise InvalidArgument(f"unknown init strategy {self.init!r}")
        if self.restarts < 1:
            raise InvalidArgument("restarts must be >= 1")


@dataclass
class CmvarResult:
    params: MixtureParams
    tau: Assignment
    log_likelihood: float
    iterations: int
    converged: bool
    underflow_events: int
    loglik_trace: list = field(default_factory=list)
    naive_underflow_rows: int = 0
    underflow_dominated: bool = False
    degenerate_init: bool = False
    flags: set = field(default_factory=set)
    p_max: int = 0

    @property
    def labels(self) -> np.ndarray:
        return self.tau.labels

    @property
    def marginal_log_likelihood(self) -> float:
        return self.loglik_trace[-1]


@dataclass
class EStepInfo:
    log_weights: np.ndarray  # g[n, k]
    underflow_rows: int
    naive_failed_rows: int


def _log_terms(params: MixtureParams, cache: QrCache, psi=None):
    if params.weights is None:
        raise InvalidArgument("cMVAR parameters need mixture weights")
    if psi is None:
        psi = psi_matrix(cache, params.components)
    ld = log_dets([c.covariance for c in params.components])
    rows = cache.rows_used
    with np.errstate(divide="ignore"):
        log_alpha = np.log(params.weights)
    return log_alpha[None, :] - 0.5 * rows * ld[None, :] - 0.5 * psi, psi, ld


def _naive_failures(params, psi, ld, rows) -> int:
    """Rows on which the direct (non-log) responsibility formula breaks."""
    with np.errstate(all="ignore"):
        terms = params.weights[None, :] * np.exp(-0.5 * rows * ld)[None, :] * np.exp(-0.5 * psi)
        denom = terms.sum(axis=1)
        tau = terms / denom[:, None]
    bad = ~np.isfinite(denom) | (denom == 0) | ~np.all(np.isfinite(tau), axis=1)
    return int(bad.sum())


def e_step_detailed(params: MixtureParams, cache: QrCache):
    g, psi, ld = _log_terms(params, cache)
    if np.any(np.isnan(g)):
        n, k = np.argwhere(np.isnan(g))[0]
        raise NumericFailure(f"NaN log responsibility at series {n}, component {k}", (n, k))
    lse = logsumexp(g, axis=1, keepdims=True)
    tau = np.exp(g - lse)
    tau /= tau.sum(axis=1, keepdims=True)
    finite = np.where(np.isfinite(g), g, np.nan)
    spread = np.nanmax(finite, axis=1) - np.nanmin(finite, axis=1)
    info = EStepInfo(
        log_weights=g,
        underflow_rows=int(np.sum(spread > UNDERFLOW_GAP)) if g.shape[1] > 1 else 0,
        naive_failed_rows=_naive_failures(params, psi, ld, cache.rows_used),
    )
    return Assignment(tau), info


def e_step(data: TimeSeriesSet, params: MixtureParams, cache: QrCache) -> Assignment:
    """Posterior responsibilities tau[n, k], normalised with log-sum-exp."""
    return e_step_detailed(params, cache)[0]


def m_step(data: TimeSeriesSet, tau, cache: QrCache, orders, prev: MixtureParams | None = None):
    """Weighted M-step; returns ``(params, flags)``.

    A component whose responsibility mass is too small to estimate a
    covariance keeps its previous parameters and is flagged ``frozen``.
    """
    tau = tau.tau if isinstance(tau, Assignment) else np.asarray(tau, dtype=float)
    N, K = tau.shape
    rows = cache.rows_used
    m = data.m
    mass = tau.sum(axis=0)
    alpha = mass / N
    alpha = alpha / alpha.sum()
    comps = []
    flags = set()
    for k in range(K):
        if mass[k] * rows <= m:
            if prev is None:
                raise FitFailure(f"component {k} has no responsibility mass")
            comps.append(prev.components[k].with_flags("frozen"))
            flags.add(f"frozen:{k}")
            continue
        coef, G, jittered = pooled_fit(cache, orders[k], tau[:, k])
        omega, jit2 = ensure_pd(G / (rows * mass[k]))
        cflags = set()
        if jittered:
            cflags.add("rank-deficient")
        if jit2:
            cflags.add("covariance-jitter")
        flags |= {f"{f}:{k}" for f in cflags}
        comps.append(VarComponent.from_coef(coef, omega, cflags))
    return MixtureParams(tuple(comps), alpha), flags


def marginal_log_likelihood(params: MixtureParams, cache: QrCache, m: int) -> float:
    """sum_n log sum_k alpha_k prod_t f_k(e_nkt): the quantity EM increases."""
    g, _, _ = _log_terms(params, cache)
    const = -0.5 * cache.rows_used * m * LOG_2PI
    return float(np.sum(logsumexp(g, axis=1)) + g.shape[0] * const)


def log_likelihood(data: TimeSeriesSet, params: MixtureParams, cache: QrCache) -> float:
    """Per-time-point mixture log likelihood over t = p_max+1..T.

    log L = sum_n sum_t log sum_k alpha_k N(e_nkt; 0, Omega_k).
    """
    if params.weights is None:
        raise InvalidArgument("log likelihood needs mixture weights")
    p_max = cache.p_max
    m = data.m
    with np.errstate(divide="ignore"):
        log_alpha = np.log(params.weights)
    designs = {}
    Y = data.values[:, p_max:, :]
    terms = []
    for k, comp in enumerate(params.components):
        if comp.order not in designs:
            designs[comp.order] = np.stack([build_design(s, comp.order, p_max)[0] for s in data])
        E = Y - designs[comp.order] @ comp.coef
        Z = E @ inverse_cholesky(comp.covariance).T
        qf = np.sum(Z * Z, axis=2)
        ld = log_dets([comp.covariance])[0]
        terms.append(log_alpha[k] - 0.5 * m * LOG_2PI - 0.5 * ld - 0.5 * qf)
    total = logsumexp(np.stack(terms), axis=0)
    val = float(np.sum(total))
    if np.isnan(val):
        raise NumericFailure("log likelihood is NaN")
    return val


def _sort_by_weight(params: MixtureParams, tau: np.ndarray):
    order = np.argsort(-params.weights, kind="stable")
    w = params.weights[order]
    comps = tuple(params.components[k] for k in order)
    return MixtureParams(comps, w / w.sum()), tau[:, order]


def _same_components(components) -> bool:
    c0 = components[0]
    for c in components[1:]:
        if c.order != c0.order:
            return False
        if np.max(np.abs(c.coef - c0.coef)) > 1e-12 or np.max(np.abs(c.covariance - c0.covariance)) > 1e-12:
            return False
    return True


def _fit_once(data, K, orders, config, cache, init_params, seed):
    rng = make_rng(seed)
    flags: set = set()
    degenerate_init = False
    if config.init == "from-components" or init_params is not None:
        if init_params is None:
            raise InvalidArgument("from-components init needs initial components")
        if init_params.K != K:
            raise InvalidArgument("initial components do not match K")
        start = init_params
        if start.weights is None:
            start = MixtureParams(start.components, np.full(K, 1.0 / K))
        degenerate_init = K > 1 and _same_components(start.components)
        tau, info = e_step_detailed(start, cache)
        tau = tau.tau
        prev = start
        underflow, naive = info.underflow_rows, info.naive_failed_rows
        first_rows = [info]
    else:
        tau = rng.dirichlet(np.ones(K), size=data.N)
        prev = None
        underflow = naive = 0
        first_rows = []

    trace: list[float] = []
    converged = False
    params = prev
    it = 0
    for it in range(1, config.max_iters + 1):
        params, mflags = m_step(data, tau, cache, orders, prev)
        flags |= mflags
        if it == 1 and prev is None and K > 1:
            degenerate_init = _same_components(params.components)
        ll = marginal_log_likelihood(params, cache, data.m)
        trace.append(ll)
        assignment, info = e_step_detailed(params, cache)
        tau = assignment.tau
        underflow += info.underflow_rows
        naive += info.naive_failed_rows
        first_rows.append(info)
        prev = params
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < config.tol * (1.0 + abs(trace[-1])):
            converged = True
            break

    first = first_rows[0]
    dominated = (first.naive_failed_rows == data.N) or (
        K > 1 and first.underflow_rows == data.N
    )
    params, tau = _sort_by_weight(params, tau)
    result = CmvarResult(
        params=params,
        tau=Assignment(tau),
        log_likelihood=log_likelihood(data, params, cache),
        iterations=it,
        converged=converged,
        underflow_events=underflow,
        loglik_trace=trace,
        naive_underflow_rows=naive,
        underflow_dominated=bool(dominated),
        degenerate_init=bool(degenerate_init),
        flags=flags,
        p_max=cache.p_max,
    )
    return result


def fit_cmvar(data: TimeSeriesSet, K: int, orders, config: CmvarConfig | None = None,
              p_max: int | None = None, cache: QrCache | None = None,
              init_params: MixtureParams | None = None) -> CmvarResult:
    """Run EM to convergence of the marginal log likelihood.

    Final weights are sorted in descending order with components and
    responsibility columns permuted to match.
    """
    config = config or CmvarConfig()
    if isinstance(orders, int):
        orders = [orders] * K
    orders = [int(p) for p in orders]
    if K < 1 or len(orders) != K:
        raise InvalidArgument("need K >= 1 and one order per component")
    if cache is None:
        cache = build_qr_cache(data, set(orders), p_max, threads=config.threads)
    best = None
    seeds = np.random.SeedSequence(config.seed).spawn(config.restarts)
    for r in range(config.restarts):
        seed = config.seed if config.restarts == 1 else seeds[r]
        res = _fit_once(data, K, orders, config, cache, init_params, seed)
        if best is None or res.loglik_trace[-1] > best.loglik_trace[-1]:
            best = res
        if init_params is not None:
            break
    return best
