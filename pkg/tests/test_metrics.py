import numpy as np
import pytest
from hypothesis import given, strategies as st

from factsurv.coxph import breslow_baseline, survival_at, survival_curve
from factsurv.errors import DegenerateWeights, InvalidArgument, UndefinedMetric
from factsurv.metrics import (EvalReport, c_index, c_index_truncated, censoring_km, concordance, evaluate,
                              follow_up_percentiles, ibs_grid, integrated_brier, ipcw_brier)
from factsurv.survival import StepFunction

from oracles import brier_naive, cindex_naive


def _instance(seed, n=None, tied=True):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(2, 101))
    t = rng.integers(1, 15, n).astype(float) if tied else rng.exponential(5.0, n)
    e = (rng.random(n) < 0.6).astype(int)
    r = np.round(rng.normal(size=n), 1) if tied else rng.normal(size=n)
    return r, t, e


class TestCIndex:
    def test_perfect_and_anti(self):
        assert c_index([3, 2, 1], [1, 2, 3], [1, 1, 1]) == 1.0
        assert c_index([1, 2, 3], [1, 2, 3], [1, 1, 1]) == 0.0

    def test_ties_count_half(self):
        assert c_index([1, 1], [1, 2], [1, 1]) == 0.5

    def test_null_is_half(self):
        rng = np.random.default_rng(0)
        assert abs(c_index(rng.normal(size=10_000), rng.exponential(size=10_000), np.ones(10_000)) - 0.5) < 0.02

    def test_no_usable_pairs(self):
        with pytest.raises(UndefinedMetric):
            c_index([1, 2], [1, 2], [0, 0])
        with pytest.raises(UndefinedMetric):
            c_index_truncated([1, 2, 3], [2, 3, 4], [1, 1, 1], horizon=1.0)

    def test_truncation_beyond_max_is_identity(self):
        r, t, e = _instance(3)
        assert c_index_truncated(r, t, e, t.max()) == c_index(r, t, e)

    def test_pair_count(self):
        assert concordance([0, 0, 0], [1, 2, 3], [1, 0, 1])[1] == 2

    def test_matches_naive_oracle_200_instances(self):
        for seed in range(200):
            r, t, e = _instance(seed)
            if not e.any() or len(set(t[e == 1])) == 0:
                continue
            try:
                fast = c_index(r, t, e)
            except UndefinedMetric:
                continue
            assert fast == cindex_naive(r.tolist(), t.tolist(), e.tolist())
            h = float(np.median(t))
            try:
                trunc = c_index_truncated(r, t, e, h)
            except UndefinedMetric:
                continue
            assert trunc == cindex_naive(r.tolist(), t.tolist(), e.tolist(), horizon=h)

    @given(st.integers(0, 10_000))
    def test_rank_invariance_and_reflection(self, seed):
        r, t, e = _instance(seed, tied=False)
        e[0] = 1
        try:
            c = c_index(r, t, e)
        except UndefinedMetric:
            return
        assert c_index(np.exp(r) * 3 + 1, t, e) == pytest.approx(c, abs=1e-15)
        assert c_index(-r, t, e) == pytest.approx(1 - c, abs=1e-12)


class TestBrier:
    def test_perfect_predictor(self):
        t = np.array([1.0, 2.0, 3.0, 4.0])
        e = np.ones(4, int)
        horizon = 2.5
        s = (t > horizon).astype(float)
        assert ipcw_brier(s, t, e, horizon, censoring_km(t, e)) == 0.0

    def test_constant_half(self):
        t = np.array([1.0, 2.0, 3.0])
        e = np.ones(3, int)
        assert ipcw_brier(np.full(3, 0.5), t, e, 10.0, censoring_km(t, e)) == pytest.approx(0.25)

    def test_accepts_step_functions(self):
        base = breslow_baseline([1, 2, 3], [1, 1, 0], [0, 0, 0])
        curves = [survival_curve(base, r) for r in (0.0, 0.5, -0.5)]
        vals = survival_at(base, [0.0, 0.5, -0.5], 2.0)
        km = censoring_km([1, 2, 3], [1, 1, 0])
        assert ipcw_brier(curves, [1, 2, 3], [1, 1, 0], 2.0, km) == pytest.approx(
            ipcw_brier(vals, [1, 2, 3], [1, 1, 0], 2.0, km), abs=1e-15)

    def test_degenerate_weights(self):
        # everyone censored by time 2, so G(3) = 0
        t = np.array([1.0, 2.0, 5.0])
        e = np.array([0, 0, 1])
        with pytest.raises(DegenerateWeights):
            ipcw_brier(np.full(3, 0.5), t, e, 3.0, StepFunction([1.0, 2.0], [0.5, 0.0]))

    @given(st.integers(0, 10_000))
    def test_no_censoring_is_plain_mse(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 60))
        t = rng.exponential(size=n)
        e = np.ones(n, int)
        s = rng.random(n)
        h = float(np.quantile(t, 0.5))
        expected = np.mean(((t > h).astype(float) - s) ** 2)
        assert ipcw_brier(s, t, e, h, censoring_km(t, e)) == pytest.approx(expected, abs=1e-14)

    def test_matches_naive_oracle_200_instances(self):
        for seed in range(200):
            rng = np.random.default_rng(seed)
            n = int(rng.integers(2, 60))
            t = rng.integers(1, 20, n).astype(float)
            e = (rng.random(n) < 0.6).astype(int)
            s = rng.random(n)
            h = float(rng.choice(t))
            try:
                fast = ipcw_brier(s, t, e, h, censoring_km(t, e))
            except DegenerateWeights:
                continue
            assert fast == pytest.approx(brier_naive(s.tolist(), t.tolist(), e.tolist(), h), abs=1e-10)


class TestIntegratedBrier:
    def test_constant(self):
        assert integrated_brier(np.linspace(0, 4, 50), np.full(50, 0.13), 4.0) == pytest.approx(0.13)

    def test_linear_ramp(self):
        ts = np.linspace(0, 7, 101)
        assert integrated_brier(ts, ts / 7, 7.0) == pytest.approx(0.5, abs=1e-14)

    def test_bad_tau(self):
        with pytest.raises(InvalidArgument):
            integrated_brier([0, 1], [0.1, 0.2], 0.0)

    def test_grid_refinement(self):
        f = lambda t: 0.2 * np.sin(t) ** 2 + 0.05 * t
        coarse = integrated_brier(np.linspace(0, 3, 100), f(np.linspace(0, 3, 100)), 3.0)
        fine = integrated_brier(np.linspace(0, 3, 1000), f(np.linspace(0, 3, 1000)), 3.0)
        assert abs(coarse - fine) < 1e-3

    def test_grid_starts_at_first_event(self):
        grid = ibs_grid([4.0, 2.0, 1.0, 9.0], [1, 1, 0, 1], tau=8.0, n_points=100)
        assert grid[0] == 2.0 and grid[-1] == 8.0 and grid.size == 100


class TestPercentiles:
    def test_one_to_hundred(self):
        np.testing.assert_allclose(follow_up_percentiles(np.arange(1, 101)), [25.75, 50.5, 75.25])

    def test_equal_and_single(self):
        np.testing.assert_array_equal(follow_up_percentiles([3.0, 3.0, 3.0]), [3.0] * 3)
        np.testing.assert_array_equal(follow_up_percentiles([7.0]), [7.0] * 3)


def test_evaluate_and_report_roundtrip():
    rng = np.random.default_rng(0)
    n = 400
    x = rng.normal(size=n)
    t = rng.exponential(np.exp(-x))
    c = rng.exponential(2.0, n)
    d, e = np.minimum(t, c), (t <= c).astype(int)
    base = breslow_baseline(d, e, x)
    report = evaluate(x, d, e, lambda h: survival_at(base, x, h), seed=3, config={"a": 1})
    assert 0.6 < report.c_index_integrated <= 1.0
    assert list(report.c_index_at) == ["25%", "50%", "75%"]
    assert all(0 <= v <= 1 for v in list(report.c_index_at.values()) + list(report.brier_at.values()))
    assert np.all(np.diff(report.horizons) > 0)
    assert 0 < report.ibs < 0.25
    again = EvalReport.from_text(report.to_text())
    assert again == report
    assert report.to_text().startswith("format_version = 1\n")
    assert evaluate(x, d, e, lambda h: survival_at(base, x, h), seed=3, config={"a": 1}).to_text() == report.to_text()
