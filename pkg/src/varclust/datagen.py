"""Random stable VAR models, SPD covariances and labelled synthetic datasets.

Stable lag matrices are built from a shared eigenbasis: each of the m
channels gets a scalar AR polynomial ``g_j(z) = prod_r (1 - z / z_r)`` with
real roots ``|z_r| > 1``, and ``A_i = U^T diag(lambda_i) U`` for a random
orthogonal ``U``.  The companion matrix then has eigenvalues ``1 / z_r``,
so the model is stable by construction.  Every ``A_i`` shares the basis
``U``, so generated lag matrices commute; that is a property of this
family, not of stable VARs in general.

Randomness comes from numpy's Philox counter-based generator.  A dataset
seed feeds a ``SeedSequence`` whose spawned children give one independent
stream per model and per series, so results do not depend on generation
order or on the platform.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .core import (
    InvalidArgument,
    SimulationFailure,
    TimeSeries,
    TimeSeriesSet,
    VarComponent,
    save_dataset_csv,
)


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(seed))


@dataclass(frozen=True)
class DatasetSpec:
    m: int
    p: int
    T: int
    K: int
    n_per_cluster: int
    seed: int = 0
    burn_in: int = 200
    root_min_abs: float = 1.1
    root_max_abs: float = 5.0

    def __post_init__(self):
        if self.root_min_abs <= 1:
            raise InvalidArgument("root_min_abs must exceed 1 for stability")
        if self.root_max_abs < self.root_min_abs:
            raise InvalidArgument("root_max_abs must be >= root_min_abs")
        if min(self.m, self.p, self.K, self.n_per_cluster) < 1:
            raise InvalidArgument("m, p, K and n_per_cluster must be positive")
        if self.T < self.p + 2:
            raise InvalidArgument(f"T={self.T} must be at least p + 2")
        if self.burn_in < 0:
            raise InvalidArgument("burn_in must be non-negative")


def poly_from_roots(roots) -> np.ndarray:
    """Coefficients ``lambda_1..lambda_p`` with prod(1 - z/z_r) = 1 - sum lambda_i z^i."""
    c = np.array([1.0])
    for z in roots:
        c = np.convolve(c, [1.0, -1.0 / z])
    return -c[1:]


def companion(lags) -> np.ndarray:
    p = len(lags)
    m = lags[0].shape[0]
    C = np.zeros((m * p, m * p))
    C[:m] = np.hstack(lags)
    C[m:, :-m] = np.eye(m * (p - 1))
    return C


def spectral_radius(lags) -> float:
    if not len(lags):
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(companion(lags)))))


def var_from_roots(roots, U) -> list[np.ndarray]:
    """Lag matrices ``U^T diag(lambda_i) U`` from per-channel roots (m x p)."""
    roots = np.atleast_2d(np.asarray(roots, dtype=float))
    lam = np.array([poly_from_roots(r) for r in roots])  # (m, p)
    U = np.asarray(U, dtype=float)
    return [U.T @ np.diag(lam[:, i]) @ U for i in range(roots.shape[1])]


def random_orthogonal(m, rng) -> np.ndarray:
    Q, R = np.linalg.qr(rng.standard_normal((m, m)))
    return Q * np.sign(np.diag(R))


def generate_spd(m, rng, max_cond=1e6) -> np.ndarray:
    """``L^T L`` for a Gaussian L, redrawn until well conditioned."""
    rng = make_rng(rng)
    while True:
        L = rng.standard_normal((m, m))
        omega = L.T @ L
        omega = 0.5 * (omega + omega.T)
        if np.linalg.cond(omega) <= max_cond:
            return omega


def generate_stable_var(m, p, rng, root_min_abs=1.1, root_max_abs=5.0) -> VarComponent:
    rng = make_rng(rng)
    mags = rng.uniform(root_min_abs, root_max_abs, size=(m, p))
    signs = rng.choice([-1.0, 1.0], size=(m, p))
    U = random_orthogonal(m, rng)
    lags = var_from_roots(mags * signs, U)
    intercept = rng.uniform(-1.0, 1.0, size=m)
    cov = generate_spd(m, rng)
    rho = spectral_radius(lags)
    if rho > 1.0 / root_min_abs + 1e-8:
        raise SimulationFailure(f"generated model has spectral radius {rho}")
    return VarComponent(intercept, tuple(lags), cov)


def simulate_var(comp: VarComponent, T: int, burn_in: int, rng, series_id: str = "") -> TimeSeries:
    """Simulate T points after ``burn_in`` discarded ones, from zero initial state."""
    rng = make_rng(rng)
    m = comp.m
    L = np.linalg.cholesky(comp.covariance)
    noise = rng.standard_normal((T + burn_in, m)) @ L.T
    lags = np.array(comp.lag_matrices).reshape(comp.order, m, m)
    with np.errstate(over="ignore", invalid="ignore"):
        Y = kernels.var_recursion(comp.intercept, lags, noise)
    Y = Y[burn_in:]
    if not np.all(np.isfinite(Y)):
        raise SimulationFailure("simulation diverged; is the model stable?")
    return TimeSeries(Y, series_id)


def generate_dataset(spec: DatasetSpec):
    """Simulate ``n_per_cluster`` series from each of K random stable models.

    Returns ``(data, truth, models)``; truth labels are 1-based and aligned
    with the (shuffled) series order.
    """
    root = np.random.SeedSequence(spec.seed)
    model_ss, series_ss, perm_ss = root.spawn(3)
    models = [
        generate_stable_var(spec.m, spec.p, make_rng(s), spec.root_min_abs, spec.root_max_abs)
        for s in model_ss.spawn(spec.K)
    ]
    N = spec.K * spec.n_per_cluster
    labels = np.repeat(np.arange(1, spec.K + 1), spec.n_per_cluster)
    streams = series_ss.spawn(N)
    values = [
        simulate_var(models[lab - 1], spec.T, spec.burn_in, make_rng(s)).values
        for lab, s in zip(labels, streams)
    ]
    perm = make_rng(perm_ss).permutation(N)
    width = max(4, len(str(N)))
    ids = [f"s{n + 1:0{width}d}" for n in range(N)]
    data = TimeSeriesSet(tuple(TimeSeries(values[i], sid) for sid, i in zip(ids, perm)))
    return data, labels[perm], models


def write_dataset(spec: DatasetSpec, outdir) -> tuple[Path, Path]:
    """Generate and write ``data.csv`` plus a ``truth.json`` sidecar."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    data, truth, models = generate_dataset(spec)
    csv_path = outdir / "data.csv"
    json_path = outdir / "truth.json"
    save_dataset_csv(data, csv_path)
    sidecar = {
        "spec": asdict(spec),
        "seed": spec.seed,
        "rng": "numpy Philox via SeedSequence(seed).spawn",
        "truth": {sid: int(lab) for sid, lab in zip(data.ids, truth)},
        "models": [mdl.to_dict() for mdl in models],
    }
    json_path.write_text(json.dumps(sidecar, indent=1, sort_keys=True))
    return csv_path, json_path
