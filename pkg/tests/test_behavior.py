import math

import numpy as np
import pytest
from scipy import stats as sstats
from hypothesis import given, settings
from hypothesis import strategies as st

from repscope.behavior import (
    AccuracyTable,
    accuracy_summary,
    kendall_tau_b,
    learning_onset,
    smooth_curve,
    t_test_one_sided,
)
from repscope.errors import DegenerateDataError, ValidationError


def t_sf_oracle(t, df):
    """Upper-tail Student-t probability by mpmath quadrature (independent of
    the scipy implementation path)."""
    import mpmath

    mpmath.mp.dps = 30
    c = mpmath.gamma((df + 1) / 2) / (mpmath.sqrt(df * mpmath.pi) * mpmath.gamma(df / 2))
    dens = lambda u: c * (1 + u * u / df) ** (-(df + 1) / 2)
    return float(mpmath.quad(dens, [t, mpmath.inf]))


class TestTTest:
    def test_hand_example(self):
        res = t_test_one_sided([0.6, 0.55, 0.65], 0.5)
        assert res.t == pytest.approx(3.464, abs=1e-3)
        assert res.df == 2
        assert res.p == pytest.approx(0.0371, abs=1e-3)
        assert res.p == pytest.approx(t_sf_oracle(res.t, res.df), abs=1e-10)

    def test_mean_at_null(self):
        res = t_test_one_sided([0.4, 0.6], 0.5)
        assert res.t == 0.0 and res.p == 0.5

    def test_zero_variance_above_null(self):
        res = t_test_one_sided([0.7, 0.7, 0.7], 0.5)
        assert res.p == 0.0 and res.degenerate

    def test_zero_variance_at_null(self):
        res = t_test_one_sided([0.5, 0.5], 0.5)
        assert res.p == 0.5 and res.degenerate

    def test_scipy_matches_quadrature_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            vals = rng.normal(0.55, 0.1, size=int(rng.integers(3, 30)))
            res = t_test_one_sided(vals, 0.5)
            assert res.p == pytest.approx(t_sf_oracle(res.t, res.df), abs=1e-10)

    def test_monotone_in_mean(self):
        rng = np.random.default_rng(2)
        vals = rng.normal(0.5, 0.1, size=20)
        a = t_test_one_sided(vals, 0.5)
        b = t_test_one_sided(vals + 0.05, 0.5)
        assert b.t > a.t and b.p < a.p


class TestLearningOnset:
    def test_all_correct_onsets_at_zero(self):
        table = AccuracyTable(
            tuple(f"p{i}" for i in range(5)), ("c",) * 5, np.ones((5, 10))
        )
        assert learning_onset(table, 0.5, 0.05) == 0

    def test_chance_tables_rarely_onset(self):
        # Monte Carlo oracle: 24 binary participants at chance, alpha 0.001;
        # the exact per-trial size is 7.7e-4, so >= 90% of runs find nothing
        none_found = 0
        runs = 40
        for seed in range(runs):
            rng = np.random.default_rng(5000 + seed)
            vals = (rng.random((24, 60)) < 0.5).astype(float)
            table = AccuracyTable(
                tuple(f"p{i}" for i in range(24)), ("c",) * 24, vals
            )
            if learning_onset(table, 0.5, 0.001) is None:
                none_found += 1
        assert none_found >= 0.9 * runs

    def test_never_significant_returns_none(self):
        table = AccuracyTable(
            ("a", "b", "c"), ("c",) * 3, np.array([[0.0, 1], [1, 0], [0, 1]])
        )
        assert learning_onset(table, 0.5, 1e-6) is None


def tau_b_oracle(x, y):
    """O(n^2) pair counting with the published tie-adjusted variance."""
    n = len(x)
    P = Q = 0
    for i in range(n):
        for j in range(i + 1, n):
            s = np.sign(x[i] - x[j]) * np.sign(y[i] - y[j])
            if s > 0:
                P += 1
            elif s < 0:
                Q += 1
    n0 = n * (n - 1) // 2

    def tie_groups(v):
        _, counts = np.unique(v, return_counts=True)
        return counts[counts > 1]

    tx, ty = tie_groups(x), tie_groups(y)
    n1 = int(sum(t * (t - 1) // 2 for t in tx))
    n2 = int(sum(u * (u - 1) // 2 for u in ty))
    tau = (P - Q) / np.sqrt((n0 - n1) * (n0 - n2))
    v0 = n * (n - 1) * (2 * n + 5)
    vt = sum(t * (t - 1) * (2 * t + 5) for t in tx)
    vu = sum(u * (u - 1) * (2 * u + 5) for u in ty)
    v1 = (
        sum(t * (t - 1) for t in tx) * sum(u * (u - 1) for u in ty)
        / (2 * n * (n - 1))
    )
    v2 = (
        sum(t * (t - 1) * (t - 2) for t in tx)
        * sum(u * (u - 1) * (u - 2) for u in ty)
        / (9 * n * (n - 1) * (n - 2))
    )
    var = (v0 - vt - vu) / 18 + v1 + v2
    z = (P - Q) / np.sqrt(var)
    p = math.erfc(abs(z) / math.sqrt(2))
    return tau, p


class TestKendallTauB:
    def test_perfectly_concordant(self):
        tau, _ = kendall_tau_b([1, 2, 3, 4], [1, 2, 3, 4])
        assert tau == 1.0

    def test_reversed(self):
        tau, _ = kendall_tau_b([1, 2, 3, 4], [4, 3, 2, 1])
        assert tau == -1.0

    def test_matches_pair_count_oracle_exactly(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            n = int(rng.integers(5, 25))
            x = rng.integers(0, 8, size=n).astype(float)  # ties guaranteed
            y = (x + rng.integers(-2, 3, size=n)).astype(float)
            if np.all(x == x[0]) or np.all(y == y[0]):
                continue
            tau, p = kendall_tau_b(x, y)
            tau_o, p_o = tau_b_oracle(x, y)
            assert tau == tau_o
            assert p == pytest.approx(p_o, abs=1e-12)
            ref = sstats.kendalltau(x, y, variant="b", method="asymptotic")
            assert tau == pytest.approx(ref.statistic, abs=1e-12)
            assert p == pytest.approx(ref.pvalue, abs=1e-12)

    def test_permutation_symmetry(self):
        rng = np.random.default_rng(4)
        x = rng.integers(0, 5, 20).astype(float)
        y = rng.integers(0, 5, 20).astype(float)
        perm = rng.permutation(20)
        assert kendall_tau_b(x, y) == kendall_tau_b(x[perm], y[perm])

    def test_all_tied_rejected(self):
        with pytest.raises(DegenerateDataError):
            kendall_tau_b([1.0, 1.0, 1.0], [1, 2, 3])


class TestSmoothCurve:
    def test_constant(self):
        assert smooth_curve([1.0, 1, 1, 1], 2).tolist() == [1.0, 1.0]

    def test_alternating(self):
        assert smooth_curve([0.0, 1, 0, 1], 2).tolist() == [0.5, 0.5]

    def test_matches_block_oracle(self):
        rng = np.random.default_rng(5)
        vals = rng.random(120)
        out = smooth_curve(vals, 10)
        oracle = [vals[i * 10 : (i + 1) * 10].mean() for i in range(12)]
        assert np.allclose(out, oracle, atol=0)

    def test_trailing_partial_block(self):
        out = smooth_curve([1.0, 1, 1, 4], 3)
        assert out.tolist() == [1.0, 4.0]

    @given(st.integers(min_value=1, max_value=12), st.integers(min_value=0, max_value=2**31))
    @settings(max_examples=30, deadline=None)
    def test_mean_preserved_when_window_divides(self, blocks, seed):
        rng = np.random.default_rng(seed)
        window = 5
        vals = rng.random(window * blocks)
        out = smooth_curve(vals, window)
        assert out.mean() == pytest.approx(vals.mean(), abs=1e-12)

    def test_window_too_large(self):
        with pytest.raises(ValidationError):
            smooth_curve([1.0, 2.0], 3)


class TestAccuracySummary:
    def test_summary_shape_and_values(self):
        rng = np.random.default_rng(6)
        vals = (rng.random((10, 20)) < 0.7).astype(float)
        table = AccuracyTable(
            tuple(f"p{i}" for i in range(10)), ("c",) * 10, vals
        )
        frame = accuracy_summary(table, 0.5)
        assert list(frame.columns) == ["trial", "mean_accuracy", "ci_low", "ci_high", "t", "p"]
        assert len(frame) == 20
        assert np.allclose(frame["mean_accuracy"], vals.mean(axis=0))
