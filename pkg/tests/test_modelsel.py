import itertools
import math

import numpy as np
import pytest

from varclust.cmvar import fit_cmvar, log_likelihood
from varclust.core import LOG_2PI, InvalidArgument, MixtureParams, TimeSeries, TimeSeriesSet, VarComponent
from varclust.datagen import DatasetSpec, generate_dataset, make_rng, simulate_var
from varclust.klmvar import KlmvarConfig, KlmvarResult, fit_klmvar
from varclust.modelsel import (
    adhoc_select,
    bic_surface,
    extended_bic,
    model_space_cardinality,
    n_free_parameters,
    select_order_bic,
    surrogate_log_likelihood,
    vote_order,
)
from varclust.varfit import build_qr_cache
from varclust.core import Assignment, residual_matrix
from scipy.stats import multivariate_normal


class TestCardinality:
    def test_examples(self):
        assert model_space_cardinality(1, 5) == 1
        assert model_space_cardinality(2, 2) == 3
        assert model_space_cardinality(7, 3) == 84

    def test_enumeration(self):
        for n_p in range(1, 7):
            for K in range(1, 6):
                brute = sum(1 for _ in itertools.combinations_with_replacement(range(n_p), K))
                assert model_space_cardinality(n_p, K) == brute

    def test_overflow(self):
        assert model_space_cardinality(30, 20) == math.comb(49, 20)
        with pytest.raises(OverflowError):
            model_space_cardinality(100, 60)

    def test_invalid(self):
        with pytest.raises(InvalidArgument):
            model_space_cardinality(0, 2)


@pytest.fixture(scope="module")
def planted():
    data, truth, models = generate_dataset(DatasetSpec(m=2, p=1, T=60, K=2, n_per_cluster=6, seed=2))
    cache = build_qr_cache(data, [1, 2], 2)
    return data, truth, models, cache


class TestSurrogate:
    def test_single_cluster_equals_loglik(self, planted):
        data, _, _, cache = planted
        res = fit_klmvar(data, 1, [1], cache=cache)
        exact = log_likelihood(data, MixtureParams(res.params.components, [1.0]), cache)
        assert surrogate_log_likelihood(res, data, cache) == pytest.approx(exact, abs=1e-9 * abs(exact))

    def test_zero_residuals(self):
        y = np.arange(10, dtype=float)[:, None]
        data = TimeSeriesSet((TimeSeries(y, "a"), TimeSeries(y, "b")))
        cache = build_qr_cache(data, [1], 2)
        c = VarComponent([1.0], (np.array([[1.0]]),), [[1.0]])
        res = KlmvarResult(MixtureParams((c,)), [np.eye(1)], Assignment.from_labels([0, 0], 1),
                           0.0, [0.0], 1, True, [2])
        expect = 0.5 * 1 * (2 - 10) * 2 * LOG_2PI
        assert surrogate_log_likelihood(res, data, cache) == pytest.approx(expect, abs=1e-12)

    def test_density_sum_oracle(self, planted):
        data, _, _, cache = planted
        res = fit_klmvar(data, 2, [1, 1], cache=cache)
        total = 0.0
        for n in range(data.N):
            c = res.params.components[res.label_vector[n]]
            E = residual_matrix(data[n], c, 2)
            total += multivariate_normal(np.zeros(2), c.covariance).logpdf(E).sum()
        assert surrogate_log_likelihood(res, data, cache) == pytest.approx(total, rel=1e-10)


class TestExtendedBic:
    def test_penalty_count(self):
        assert n_free_parameters(2, [1, 1], 10) == 28

    def test_penalty_example(self):
        data, _, _ = generate_dataset(DatasetSpec(m=2, p=1, T=50, K=2, n_per_cluster=5, seed=0))
        cache = build_qr_cache(data, [1], 1)
        res = fit_klmvar(data, 2, [1, 1], cache=cache)
        score = extended_bic(res, data, 2, [1, 1], 0.0, 1, cache)
        ll = surrogate_log_likelihood(res, data, cache)
        assert score == pytest.approx(-2 * ll + 28 * math.log(490), rel=1e-12)

    def test_gamma_zero_is_plain_and_gamma_monotone(self, planted):
        data, _, _, cache = planted
        res = fit_klmvar(data, 2, [1, 1], cache=cache)
        scores = [extended_bic(res, data, 2, [1, 1], g, 3, cache) for g in (0.0, 0.5, 1.0)]
        assert scores[0] < scores[1] < scores[2]
        assert scores[1] - scores[0] == pytest.approx(math.log(6), rel=1e-9)
        # card = 1 leaves the score unchanged
        assert extended_bic(res, data, 2, [1, 1], 1.0, 1, cache) == scores[0]

    def test_cmvar_uses_eq1(self, planted):
        data, _, _, cache = planted
        res = fit_cmvar(data, 2, [1, 1], cache=cache)
        k = n_free_parameters(2, [1, 1], 1)
        expect = -2 * log_likelihood(data, res.params, cache) + k * math.log(data.N * cache.rows_used)
        assert extended_bic(res, data, 2, [1, 1], 0.0, 2, cache) == pytest.approx(expect)

    def test_gamma_range(self, planted):
        data, _, _, cache = planted
        res = fit_klmvar(data, 1, [1], cache=cache)
        with pytest.raises(InvalidArgument):
            extended_bic(res, data, 1, [1], 1.5, 2, cache)


class TestSurface:
    def test_singleton(self, planted):
        data = planted[0]
        grid = bic_surface(data, [2], [1])
        assert grid.scores.shape == (1, 1) and grid.best == (2, 1)

    def test_gamma_zero_columns(self, planted):
        data = planted[0]
        a = bic_surface(data, [1, 2, 3], [1, 2], gamma=0.0)
        b = bic_surface(data, [1, 2, 3], [1, 2], gamma=0.5)
        card = np.array([[math.log(model_space_cardinality(2, K))] for K in (1, 2, 3)])
        np.testing.assert_allclose(b.scores - a.scores, np.broadcast_to(card, a.scores.shape), rtol=1e-9)
        assert np.all(np.isfinite(a.scores))
        rows = list(a.rows())
        assert len(rows) == 6 and rows[0][:3] == (1, 1, 0.0)

    def test_failed_cells_are_infinite(self, planted):
        data = planted[0]
        grid = bic_surface(data, [2, data.N + 5], [1])
        assert np.isinf(grid.scores[1, 0]) and (data.N + 5, 1) in grid.failures
        assert grid.best == (2, 1)

    def test_tie_breaking(self):
        from varclust.modelsel import _best_cell

        s = np.array([[2.0, 1.0], [1.0, 1.0]])
        assert _best_cell(s, [2, 4], [1, 2]) == (2, 2)
        s = np.array([[np.inf, 1.0], [1.0, 3.0]])
        assert _best_cell(s, [4, 2], [1, 2]) == (2, 1)

    def test_threads_same_result(self, planted):
        data = planted[0]
        a = bic_surface(data, [1, 2], [1, 2], threads=1)
        b = bic_surface(data, [1, 2], [1, 2], threads=3)
        np.testing.assert_array_equal(a.scores, b.scores)


class TestOrderSelection:
    def test_var1_selected(self):
        hits = 0
        for seed in range(10):
            comp = VarComponent([0.0, 0.0], (np.array([[0.7, 0.2], [-0.2, 0.6]]),), np.eye(2))
            s = simulate_var(comp, 500, 100, make_rng(seed))
            hits += select_order_bic(s, [1, 2, 3, 4, 5]) == 1
        assert hits >= 9

    def test_white_noise(self):
        hits = sum(select_order_bic(TimeSeries(make_rng(s).standard_normal((200, 2))), [1, 2, 3]) == 1
                   for s in range(10))
        assert hits >= 8

    def test_singleton(self):
        assert select_order_bic(TimeSeries(np.zeros((5, 1))), [4]) == 4

    def test_vote_ties_to_smaller(self, monkeypatch):
        import varclust.modelsel as ms

        data = TimeSeriesSet.from_array(np.random.default_rng(0).standard_normal((4, 30, 1)))
        picks = iter([3, 1, 3, 1])
        monkeypatch.setattr(ms, "select_order_bic", lambda s, ps: next(picks))
        assert vote_order(data, [1, 2, 3]) == 1


class TestAdhoc:
    def test_singletons(self, planted):
        data = planted[0]
        assert adhoc_select(data, [3], [1, 2]) == (3, vote_order(data, [1, 2]))
        K, p = adhoc_select(data, [1, 2, 3], [2])
        assert p == 2 and K in (1, 2, 3)

    def test_planted(self):
        hits = 0
        for seed in range(5):
            data, _, _ = generate_dataset(DatasetSpec(m=2, p=2, T=100, K=3, n_per_cluster=10, seed=seed))
            hits += adhoc_select(data, [2, 3, 4], [1, 2, 3], KlmvarConfig(seed=seed, restarts=3)) == (3, 2)
        assert hits >= 3
