"""Hard clustering of vector time series: the small-noise limit of the EM.

Alternates two exact partial minimisations of

    f(labels, Theta, Omega~) = sum_n D_{n, label(n)},
    D_{n,k} = (T - p) log|Omega~_k| + sum_t e_nkt^T Omega~_k^{-1} e_nkt,

subject to det(Omega~_k) = 1:

* label step: each series goes to the component with the smallest psi;
* parameter step: pooled least squares per cluster, and the pooled residual
  covariance rescaled to unit determinant.

Both steps can only lower f, so the objective trace is non-increasing and
no label configuration is visited twice.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .core import (
    Assignment,
    FitFailure,
    InitFailure,
    InvalidArgument,
    MixtureParams,
    TimeSeriesSet,
    VarComponent,
)
from .datagen import make_rng
from .varfit import (
    QrCache,
    build_qr_cache,
    ensure_pd,
    fit_from_cache,
    log_dets,
    normalize_covariance,
    pooled_fit,
    psi_matrix,
)

INIT_STRATEGIES = ("random-labels", "naive-2step", "given-components")


@dataclass
class KlmvarConfig:
    max_iters: int = 500
    tol: float = 1e-8
    seed: int = 0
    init: str = "random-labels"
    restarts: int = 10
    normalized: bool = True
    empty_policy: str = "reseed"
    threads: int | None = None

    def __post_init__(self):
        if self.tol <= 0:
            raise InvalidArgument("tol must be positive")
        if self.max_iters < 1:
            raise InvalidArgument("max_iters must be >= 1")
        if self.init not in INIT_STRATEGIES:
            raise InvalidArgument(f"unknown init strategy {self.init!r}")
        if self.empty_policy not in ("reseed", "freeze"):
            raise InvalidArgument(f"unknown empty-cluster policy {self.empty_policy!r}")
        if self.restarts < 1:
            raise InvalidArgument("restarts must be >= 1")


@dataclass
class KlmvarResult:
    params: MixtureParams
    normalized_covariances: list
    labels: Assignment
    objective: float
    objective_trace: list
    iterations: int
    converged: bool
    cluster_sizes: list
    label_repeat: bool = False
    label_configs: int = 0
    flags: set = field(default_factory=set)
    p_max: int = 0
    restart_repeats: int = 0  # restarts that revisited a label configuration

    @property
    def label_vector(self) -> np.ndarray:
        return self.labels.labels


def _covariances(params: MixtureParams, normalized: bool):
    if normalized:
        return [normalize_covariance(c.covariance) for c in params.components]
    return [c.covariance for c in params.components]


def dissimilarities(params: MixtureParams, cache: QrCache, normalized: bool = True):
    """``(D, psi)`` for every (series, component) pair."""
    covs = _covariances(params, normalized)
    psi = psi_matrix(cache, params.components, covs)
    D = cache.rows_used * log_dets(covs)[None, :] + psi
    return D, psi


def assign_labels(data: TimeSeriesSet, params: MixtureParams, cache: QrCache,
                  normalized: bool = True) -> Assignment:
    """Send each series to the component with the smallest psi (lowest index on ties)."""
    _, psi = dissimilarities(params, cache, normalized)
    return Assignment.from_labels(np.argmin(psi, axis=1), params.K)


def objective(data: TimeSeriesSet, labels, params: MixtureParams, cache: QrCache,
              normalized: bool = True) -> float:
    lab = labels.labels if isinstance(labels, Assignment) else np.asarray(labels, dtype=int)
    D, _ = dissimilarities(params, cache, normalized)
    return float(np.sum(D[np.arange(len(lab)), lab]))


def _label_hash(lab) -> str:
    return hashlib.sha1(np.asarray(lab, dtype=np.int64).tobytes()).hexdigest()


def update_parameters(data: TimeSeriesSet, labels, cache: QrCache, orders,
                      prev: MixtureParams | None = None, psi=None,
                      empty_policy: str = "reseed"):
    """Pooled per-cluster refit; returns ``(params, flags)``.

    Empty clusters are reseeded with the OLS fit of the worst-fitting series
    (largest ``psi`` under its current label) or, with ``empty_policy="freeze"``,
    keep their previous parameters.
    """
    lab = labels.labels if isinstance(labels, Assignment) else np.asarray(labels, dtype=int)
    K = len(orders)
    rows = cache.rows_used
    comps: list = [None] * K
    flags: set = set()
    empty = []
    for k in range(K):
        members = lab == k
        size = int(members.sum())
        if size == 0:
            empty.append(k)
            continue
        coef, G, jittered = pooled_fit(cache, orders[k], members.astype(float))
        omega, jit2 = ensure_pd(G / (rows * size))
        cflags = set()
        if jittered:
            cflags.add("rank-deficient")
        if jit2:
            cflags.add("covariance-jitter")
        flags |= {f"{f}:{k}" for f in cflags}
        comps[k] = VarComponent.from_coef(coef, omega, cflags)
    if empty:
        if empty_policy == "reseed" and psi is None:
            filled = [k for k in range(K) if comps[k] is not None]
            P = psi_matrix(cache, [comps[k] for k in filled],
                           [normalize_covariance(comps[k].covariance) for k in filled])
            psi = np.zeros((len(lab), K))
            psi[:, filled] = P
        if empty_policy == "freeze":
            if prev is None:
                raise FitFailure(f"clusters {empty} are empty and have no previous value")
            for k in empty:
                comps[k] = prev.components[k].with_flags("frozen")
                flags.add(f"frozen:{k}")
        else:
            current = psi[np.arange(len(lab)), lab]
            sizes = np.bincount(lab, minlength=K)
            candidates = [n for n in np.argsort(-current, kind="stable") if sizes[lab[n]] > 1]
            for k in empty:
                if not candidates:
                    if prev is None:
                        raise FitFailure(f"cannot reseed empty cluster {k}")
                    comps[k] = prev.components[k].with_flags("frozen")
                    flags.add(f"frozen:{k}")
                    continue
                n = candidates.pop(0)
                c = fit_from_cache(cache, int(n), orders[k])
                omega, _ = ensure_pd(c.covariance)
                comps[k] = VarComponent(c.intercept, c.lag_matrices, omega, c.flags | {"reseeded"})
                flags.add(f"reseeded:{k}")
    return MixtureParams(tuple(comps)), flags


def ols_features(cache: QrCache, order: int) -> np.ndarray:
    """Per-series OLS coefficient vectors (N x (1 + m p)*m)."""
    N = cache.block(order).R.shape[0]
    return np.stack([fit_from_cache(cache, n, order).coef.ravel() for n in range(N)])


def naive_two_step(data: TimeSeriesSet, K: int, order: int, seed: int = 0,
                   cache: QrCache | None = None, n_init: int = 10):
    """Baseline: per-series OLS, then k-means (k-means++ seeding) on the coefficients.

    Returns ``(labels, features, kmeans)`` with 0-based labels.
    """
    from sklearn.cluster import KMeans

    if cache is None:
        cache = build_qr_cache(data, [order], order)
    feats = ols_features(cache, order)
    km = KMeans(n_clusters=K, init="k-means++", n_init=n_init, random_state=seed % (2**32))
    lab = km.fit_predict(feats)
    return lab, feats, km


def _distinct(components) -> bool:
    for i in range(len(components)):
        for j in range(i):
            a, b = components[i].coef, components[j].coef
            if a.shape == b.shape and np.max(np.abs(a - b)) <= 1e-10:
                return False
    return True


def _random_labels(N, K, rng):
    lab = rng.integers(0, K, size=N)
    lab[rng.permutation(N)[:K]] = np.arange(K)
    return lab


def initialize(data: TimeSeriesSet, K: int, orders, strategy: str, seed, cache: QrCache,
               components: MixtureParams | None = None) -> MixtureParams:
    """Pick K pairwise distinct starting components."""
    if K > data.N:
        raise InvalidArgument(f"K={K} exceeds the number of series N={data.N}")
    if strategy not in INIT_STRATEGIES:
        raise InvalidArgument(f"unknown init strategy {strategy!r}")
    if strategy == "given-components":
        if components is None or components.K != K:
            raise InvalidArgument("given-components init needs K components")
        return MixtureParams(components.components)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    attempts = ss.spawn(20)
    for child in attempts:
        rng = make_rng(child)
        if strategy == "random-labels":
            lab = _random_labels(data.N, K, rng)
            params, _ = update_parameters(data, lab, cache, orders)
        else:
            p_feat = max(orders)
            feats = ols_features(cache, p_feat)
            reps = _kmeans_representatives(feats, K, int(rng.integers(2**31)))
            comps = []
            for k, n in enumerate(reps):
                c = fit_from_cache(cache, int(n), orders[k])
                omega, _ = ensure_pd(c.covariance)
                comps.append(VarComponent(c.intercept, c.lag_matrices, omega, c.flags))
            params = MixtureParams(tuple(comps))
        if _distinct(params.components):
            return params
    raise InitFailure(f"could not find {K} distinct initial components in 20 attempts")


def _kmeans_representatives(feats, K, seed):
    from sklearn.cluster import KMeans

    km = KMeans(n_clusters=K, init="k-means++", n_init=1, random_state=seed).fit(feats)
    reps = []
    for k in range(K):
        members = np.flatnonzero(km.labels_ == k)
        if members.size == 0:
            members = np.arange(len(feats))
        d = np.sum((feats[members] - km.cluster_centers_[k]) ** 2, axis=1)
        reps.append(int(members[np.argmin(d)]))
    return reps


def _run(data, K, orders, config, cache, params, seed_label):
    normalized = config.normalized
    D, psi = dissimilarities(params, cache, normalized)
    lab = np.argmin(psi, axis=1)
    f = float(np.sum(D[np.arange(data.N), lab]))
    trace = [f]
    seen = {_label_hash(lab)}
    flags: set = set()
    converged = False
    repeat = False
    it = 0
    for it in range(1, config.max_iters + 1):
        f_prev = f
        params, uflags = update_parameters(data, lab, cache, orders, params, psi, config.empty_policy)
        flags |= uflags
        D, psi = dissimilarities(params, cache, normalized)
        trace.append(float(np.sum(D[np.arange(data.N), lab])))
        new = np.argmin(psi, axis=1)
        f = float(np.sum(D[np.arange(data.N), new]))
        trace.append(f)
        if np.array_equal(new, lab):
            converged = True
            break
        h = _label_hash(new)
        lab = new
        if h in seen:
            repeat = True
            break
        seen.add(h)
        if abs(f - f_prev) < config.tol * (1.0 + abs(f)):
            params, uflags = update_parameters(data, lab, cache, orders, params, psi,
                                               config.empty_policy)
            flags |= uflags
            D, psi = dissimilarities(params, cache, normalized)
            f = float(np.sum(D[np.arange(data.N), lab]))
            trace.append(f)
            converged = True
            break
    covs = _covariances(params, True)
    return KlmvarResult(
        params=params,
        normalized_covariances=covs,
        labels=Assignment.from_labels(lab, K),
        objective=f,
        objective_trace=trace,
        iterations=it,
        converged=converged,
        cluster_sizes=np.bincount(lab, minlength=K).tolist(),
        label_repeat=repeat,
        label_configs=len(seen),
        flags=flags,
        p_max=cache.p_max,
    )


def fit_klmvar(data: TimeSeriesSet, K: int, orders, config: KlmvarConfig | None = None,
               p_max: int | None = None, cache: QrCache | None = None,
               init_params: MixtureParams | None = None) -> KlmvarResult:
    """Coordinate descent from ``config.restarts`` initialisations; keeps the lowest objective."""
    config = config or KlmvarConfig()
    if isinstance(orders, (int, np.integer)):
        orders = [int(orders)] * K
    orders = [int(p) for p in orders]
    if K < 1 or len(orders) != K:
        raise InvalidArgument("need K >= 1 and one order per component")
    if cache is None:
        cache = build_qr_cache(data, set(orders), p_max, threads=config.threads)
    strategy = "given-components" if init_params is not None else config.init
    best = None
    repeats = 0
    for child in np.random.SeedSequence(config.seed).spawn(config.restarts):
        params = initialize(data, K, orders, strategy, child, cache, init_params)
        res = _run(data, K, orders, config, cache, params, child)
        repeats += res.label_repeat
        if best is None or res.objective < best.objective:
            best = res
        if strategy == "given-components":
            break
    best.restart_repeats = repeats
    return best


def soft_limit_probe(data: TimeSeriesSet, params: MixtureParams, gamma_list,
                     cache: QrCache | None = None) -> list:
    """EM responsibilities with Omega_k replaced by gamma * Omega~_k, per gamma.

    As gamma shrinks the rows approach the one-hot labels of ``assign_labels``.
    """
    gammas = [float(g) for g in gamma_list]
    if any(g <= 0 for g in gammas) or any(b >= a for a, b in zip(gammas, gammas[1:])):
        raise InvalidArgument("gamma_list must be positive and strictly decreasing")
    if cache is None:
        cache = build_qr_cache(data, set(params.orders))
    from scipy.special import logsumexp

    covs = _covariances(params, True)
    psi = psi_matrix(cache, params.components, covs)
    ld = log_dets(covs)
    K = params.K
    weights = params.weights if params.weights is not None else np.full(K, 1.0 / K)
    with np.errstate(divide="ignore"):
        log_alpha = np.log(weights)
    m, rows = data.m, cache.rows_used
    out = []
    for g in gammas:
        logits = log_alpha[None, :] - 0.5 * rows * (m * np.log(g) + ld)[None, :] - psi / (2.0 * g)
        tau = np.exp(logits - logsumexp(logits, axis=1, keepdims=True))
        out.append(Assignment(tau / tau.sum(axis=1, keepdims=True)))
    return out
