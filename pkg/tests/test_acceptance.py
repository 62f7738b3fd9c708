"""Acceptance checks, one test per criterion.

Each check returns ``(passed, detail)``; the outcome is recorded so that a
one-line PASS/FAIL summary per criterion is printed at the end of the
pytest run (see ``conftest.py``) or when this file is run as a script.
"""

import math
import time

import numpy as np
import pytest

from varclust.cli import benchmark_rows, suite_grid
from varclust.cmvar import CmvarConfig, fit_cmvar
from varclust.core import TimeSeries, build_design
from varclust.datagen import (
    DatasetSpec,
    generate_dataset,
    generate_stable_var,
    make_rng,
    simulate_var,
    spectral_radius,
)
from varclust.klmvar import KlmvarConfig, assign_labels, dissimilarities, fit_klmvar, initialize, soft_limit_probe
from varclust.metrics import nmi, rand_index
from varclust.modelsel import bic_surface
from varclust.varfit import build_qr_cache, fit_var_ols, psi

RESULTS: dict[int, tuple[bool, str]] = {}
LABEL_REPEATS: list[int] = []  # restart repeat counts of every k-LMVAR fit run here

BENCH_CFG = dict(tol=1e-8, max_iters=500, restarts=None, threads=1)


def record(num, ok, detail):
    RESULTS[num] = (bool(ok), detail)
    print(f"criterion {num}: {'PASS' if ok else 'FAIL'} - {detail}")
    return ok


def _desk_instance(rng):
    m = int(rng.integers(1, 4))
    p = int(rng.integers(1, 3))
    K = int(rng.integers(2, 5))
    seed = int(rng.integers(2**31))
    return DatasetSpec(m=m, p=p, T=100, K=K, n_per_cluster=10, seed=seed)


def criterion_1():
    """k-LMVAR objective traces are non-increasing and stop before max_iters."""
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst, capped = -np.inf, 0
    for i in range(50):
        spec = _desk_instance(rng)
        data, _, _ = generate_dataset(spec)
        res = fit_klmvar(data, spec.K, spec.p, KlmvarConfig(seed=i, restarts=1))
        LABEL_REPEATS.append(res.restart_repeats)
        worst = max(worst, float(np.max(np.diff(res.objective_trace), initial=-np.inf)))
        capped += (not res.converged) or res.iterations >= 500
    secs = time.perf_counter() - t0
    ok = worst <= 1e-9 and capped == 0 and secs < 60
    return ok, f"50 runs, max objective increase {worst:.3g}, {capped} hit max_iters, {secs:.1f}s"


def criterion_2():
    """cMVAR log likelihood is non-decreasing outside the underflow regime."""
    rng = np.random.default_rng(202)
    worst, used, tries = -np.inf, 0, 0
    while used < 20 and tries < 60:
        tries += 1
        spec = _desk_instance(rng)
        data, _, _ = generate_dataset(spec)
        res = fit_cmvar(data, spec.K, spec.p, CmvarConfig(seed=tries))
        if res.underflow_dominated:
            continue
        used += 1
        worst = max(worst, float(-np.min(np.diff(res.loglik_trace), initial=np.inf)))
    ok = used == 20 and worst <= 1e-9
    return ok, f"{used} runs ({tries - used} skipped as underflow-dominated), max logL decrease {max(worst, 0.0):.3g}"


def criterion_3():
    """Small-gamma responsibilities reproduce the hard label rule."""
    rng = np.random.default_rng(303)
    rows = agree = 0
    min_top = 1.0
    for i in range(50):
        spec = _desk_instance(rng)
        data, _, _ = generate_dataset(spec)
        cache = build_qr_cache(data, [spec.p])
        params = initialize(data, spec.K, [spec.p] * spec.K, "random-labels", i, cache)
        tau = soft_limit_probe(data, params, [1e-6], cache)[0].tau
        hard = assign_labels(data, params, cache).labels
        _, P = dissimilarities(params, cache)
        srt = np.sort(P, axis=1)
        mask = (srt[:, 1] - srt[:, 0]) > 1e-6 if spec.K > 1 else np.ones(data.N, bool)
        rows += int(mask.sum())
        agree += int(np.sum(np.argmax(tau, axis=1)[mask] == hard[mask]))
        if mask.any():
            min_top = min(min_top, float(tau[mask].max(axis=1).min()))
    ok = rows > 0 and agree == rows and min_top > 1 - 1e-5
    return ok, f"{agree}/{rows} rows agree, smallest max responsibility 1-{1 - min_top:.2g}"


def criterion_4():
    """QR coefficients match normal equations; Cholesky psi matches the quadratic form."""
    rng = np.random.default_rng(404)
    worst_coef = worst_psi = 0.0
    for _ in range(100):
        m, p = int(rng.integers(1, 5)), int(rng.integers(1, 4))
        T = int(rng.integers(3 * (1 + m * p), 200))
        s = TimeSeries(rng.standard_normal((T, m)))
        X, Y = build_design(s, p, p)
        direct = np.linalg.solve(X.T @ X, X.T @ Y)
        fit = fit_var_ols(s, p)
        worst_coef = max(worst_coef, np.abs(fit.coef - direct).max() / np.abs(direct).max())
    for _ in range(100):
        m = int(rng.integers(1, 8))
        E = rng.standard_normal((int(rng.integers(1, 100)), m))
        A = rng.standard_normal((m, m))
        om = A @ A.T + 0.1 * np.eye(m)
        direct = float(np.einsum("ti,ij,tj->", E, np.linalg.inv(om), E))
        worst_psi = max(worst_psi, abs(psi(E, om) - direct) / direct)
    ok = worst_coef <= 1e-8 and worst_psi <= 1e-10
    return ok, f"coef rel err {worst_coef:.2g} (<=1e-8), psi rel err {worst_psi:.2g} (<=1e-10)"


def criterion_5():
    """Desk-scale precision benchmark."""
    t0 = time.perf_counter()
    cell = dict(m=3, p=2, T=100, K=4, Nc=20)
    rows = list(benchmark_rows("precision", [cell], ["klmvar", "cmvar", "naive2step"], range(10), BENCH_CFG))
    secs = time.perf_counter() - t0
    med = {}
    for algo in ("klmvar", "cmvar", "naive2step"):
        sel = [r for r in rows if r["algo"] == algo]
        med[algo] = (float(np.median([r["nmi"] for r in sel])), float(np.median([r["ri"] for r in sel])))
        if algo == "klmvar":
            LABEL_REPEATS.extend(r["result"]["restart_repeats"] for r in sel if "result" in r)
    ok = (med["klmvar"][0] >= 0.9 and med["klmvar"][1] >= 0.9
          and med["klmvar"][0] > med["naive2step"][0] and med["cmvar"][0] > med["naive2step"][0]
          and secs < 300)
    detail = ", ".join(f"{a} NMI {v[0]:.3f} RI {v[1]:.3f}" for a, v in med.items())
    return ok, f"medians: {detail}; {secs:.1f}s"


def criterion_6():
    """BIC surface minimum at the planted K."""
    t0 = time.perf_counter()
    hits = []
    for seed in range(10):
        data, _, _ = generate_dataset(DatasetSpec(m=3, p=2, T=100, K=4, n_per_cluster=20, seed=seed))
        grid = bic_surface(data, [2, 4, 6, 8], [1, 2, 3], gamma=0.5, algo="klmvar",
                           config=KlmvarConfig(seed=seed, restarts=3))
        LABEL_REPEATS.append(grid.label_repeats)
        hits.append(grid.best)
    secs = time.perf_counter() - t0
    n = sum(b is not None and b[0] == 4 for b in hits)
    return n >= 7 and secs < 600, f"best K=4 in {n}/10 seeds (best cells {hits}); {secs:.1f}s"


def criterion_7():
    """k-LMVAR survives the large setting; cMVAR fails at least as often on the T sweep."""
    data, truth, _ = generate_dataset(DatasetSpec(m=20, p=2, T=1200, K=5, n_per_cluster=20, seed=0))
    cache = build_qr_cache(data, [2])
    failures = 0
    try:
        res = fit_klmvar(data, 5, 2, cache=cache)
        LABEL_REPEATS.append(res.restart_repeats)
        finite = np.isfinite(res.objective) and all(np.all(np.isfinite(c.coef)) for c in res.params.components)
        failures += not finite
        big_nmi = nmi(truth, res.label_vector)
    except Exception:  # any error is a numeric failure here
        failures += 1
        big_nmi = float("nan")
    try:
        cm = fit_cmvar(data, 5, 2, cache=cache)
        cm_state = "underflow diagnostic" if cm.underflow_dominated else "completed"
    except Exception as exc:
        cm_state = f"crashed: {exc}"

    rows = list(benchmark_rows("scale-T", suite_grid("scale-T", 1.0), ["klmvar", "cmvar"], range(2), BENCH_CFG))
    frac = {a: float(np.mean([r["failed"] for r in rows if r["algo"] == a])) for a in ("klmvar", "cmvar")}
    LABEL_REPEATS.extend(r["result"]["restart_repeats"] for r in rows if r["algo"] == "klmvar" and "result" in r)
    ok = failures == 0 and not cm_state.startswith("crashed") and frac["cmvar"] >= frac["klmvar"]
    return ok, (f"k-LMVAR m=20,T=1200: {failures} failures (NMI {big_nmi:.3f}); cMVAR {cm_state}; "
                f"scale-T failure fraction cMVAR {frac['cmvar']:.2f} vs k-LMVAR {frac['klmvar']:.2f}")


def criterion_8():
    """Metrics match hand values and brute-force oracles."""
    import itertools

    exact = rand_index([1, 1, 2, 2], [1, 2, 1, 2]) == 1 / 3 and nmi([1, 1, 2, 2], [1, 2, 1, 2]) == 0.0
    rng = np.random.default_rng(808)
    worst = 0.0
    for _ in range(200):
        N = int(rng.integers(2, 201))
        a = rng.integers(1, 6, size=N)
        b = rng.integers(1, 6, size=N)
        same = sum((a[i] == a[j]) == (b[i] == b[j]) for i, j in itertools.combinations(range(N), 2))
        worst = max(worst, abs(rand_index(a, b) - same / math.comb(N, 2)))
        ua, ub = np.unique(a), np.unique(b)
        num = 0.0
        for x in ua:
            for y in ub:
                nij = np.sum((a == x) & (b == y))
                if nij:
                    num += nij * math.log(N * nij / (np.sum(a == x) * np.sum(b == y)))
        ha = sum(np.sum(a == x) * math.log(np.sum(a == x) / N) for x in ua)
        hb = sum(np.sum(b == y) * math.log(np.sum(b == y) / N) for y in ub)
        ref = 0.0 if ha == 0 or hb == 0 else num / math.sqrt(ha * hb)
        worst = max(worst, abs(nmi(a, b) - ref))
    ok = exact and worst <= 1e-12
    return ok, f"hand examples exact: {exact}; max deviation on 200 random partitions {worst:.2g}"


def criterion_9():
    """Generated models are stable with PD covariances; AR(1) variance is right."""
    rng = make_rng(909)
    bad = 0
    for _ in range(1000):
        m, p = int(rng.integers(1, 7)), int(rng.integers(1, 6))
        c = generate_stable_var(m, p, rng)
        try:
            np.linalg.cholesky(c.covariance)
        except np.linalg.LinAlgError:
            bad += 1
            continue
        bad += spectral_radius(c.lag_matrices) >= 1
    from varclust.core import VarComponent

    ar = VarComponent([0.0], (np.array([[0.5]]),), [[1.0]])
    y = simulate_var(ar, 100_000, 200, make_rng(9)).values[:, 0]
    rel = abs(y.var() / (4 / 3) - 1)
    return bad == 0 and rel < 0.05, f"{bad}/1000 models failed; AR(1) variance {y.var():.4f} vs 4/3 ({rel:.2%})"


def criterion_10():
    """No label configuration repeats within any k-LMVAR run."""
    rng = np.random.default_rng(1010)
    for i in range(20):
        spec = _desk_instance(rng)
        data, _, _ = generate_dataset(spec)
        LABEL_REPEATS.append(fit_klmvar(data, spec.K, spec.p, KlmvarConfig(seed=i)).restart_repeats)
    total = sum(LABEL_REPEATS)
    return total == 0, f"{total} repeats over {len(LABEL_REPEATS)} recorded k-LMVAR fits"


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9, criterion_10]


@pytest.mark.parametrize("num", range(1, 11))
def test_criterion(num):
    ok, detail = CRITERIA[num - 1]()
    record(num, ok, detail)
    assert ok, detail


if __name__ == "__main__":
    for i, fn in enumerate(CRITERIA, 1):
        record(i, *fn())
