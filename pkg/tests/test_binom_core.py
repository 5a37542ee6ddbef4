import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from oracles import exact_conv_pmf, exact_tail
from sarr.binom_core import (
    MAX_TRIALS,
    BinConvDist,
    binom_logsf,
    binom_tail_inverse,
    conv_cdf,
    conv_pmf,
    conv_tail,
)
from sarr.errors import DomainError


class TestExactOracle:
    @pytest.mark.parametrize("p", [Fraction(3, 4), Fraction(3, 5), Fraction(9, 10), Fraction(51, 100)])
    @pytest.mark.parametrize("n", [1, 3, 7, 15, 30])
    def test_pmf_matches_rationals(self, n, p):
        for i in sorted({0, 1, n // 2, n}):
            exact = exact_conv_pmf(i, n, p)
            dist = BinConvDist(i, n, float(p))
            got = np.exp(dist.logpmf())
            want = np.array([float(v) for v in exact])
            np.testing.assert_allclose(got, want, rtol=1e-12, atol=0)

    @pytest.mark.parametrize("n,i,x", [(5, 0, 2), (5, 1, 2), (13, 7, 6), (29, 0, 28), (29, 29, 0)])
    def test_tail_matches_rationals(self, n, i, x):
        p = Fraction(3, 4)
        got = conv_tail(BinConvDist(i, n, 0.75), x)
        assert got == pytest.approx(math.log(exact_tail(i, n, p, x)), rel=1e-12)

    def test_extreme_tail_stays_finite(self):
        # P(B_0 > n - 1) = (1 - p)^n, far below the smallest double for n = 4001
        got = conv_tail(BinConvDist(0, 4001, 0.9), 4000)
        assert got == pytest.approx(4001 * math.log(0.1), rel=1e-12)


class TestDistribution:
    def test_sums_to_one(self):
        dist = BinConvDist(17, 41, 0.8)
        assert np.logaddexp.reduce(dist.logpmf()) == pytest.approx(0.0, abs=1e-13)

    def test_edges(self):
        dist = BinConvDist(2, 5, 0.7)
        assert conv_tail(dist, -1) == 0.0
        assert conv_tail(dist, 5) == -math.inf
        assert conv_cdf(dist, -1) == -math.inf
        assert conv_cdf(dist, 5) == pytest.approx(0.0, abs=1e-15)

    def test_cdf_and_tail_complement(self):
        dist = BinConvDist(4, 11, 0.65)
        for x in range(11):
            total = math.exp(conv_cdf(dist, x)) + math.exp(conv_tail(dist, x))
            assert total == pytest.approx(1.0, abs=1e-14)

    def test_pure_binomial_cases(self):
        n, p = 9, 0.7
        np.testing.assert_allclose(np.exp(BinConvDist(n, n, p).logpmf()), stats.binom.pmf(range(n + 1), n, p), rtol=1e-12)
        np.testing.assert_allclose(np.exp(BinConvDist(0, n, p).logpmf()), stats.binom.pmf(range(n + 1), n, 1 - p), rtol=1e-12)

    def test_arrays_are_read_only(self):
        arr = BinConvDist(1, 3, 0.6).logpmf()
        with pytest.raises(ValueError):
            arr[0] = 0.0

    @pytest.mark.parametrize("args", [(0, 3, 0.0), (0, 3, 1.0), (4, 3, 0.6), (-1, 3, 0.6), (0, MAX_TRIALS + 1, 0.6)])
    def test_rejects_bad_parameters(self, args):
        with pytest.raises(DomainError):
            BinConvDist(*args)

    def test_rejects_bad_support_point(self):
        dist = BinConvDist(1, 3, 0.6)
        with pytest.raises(DomainError):
            conv_pmf(dist, 4)
        with pytest.raises(DomainError):
            conv_tail(dist, -2)

    @settings(max_examples=60, deadline=None)
    @given(n=st.integers(1, 60), data=st.data(), p=st.floats(0.501, 0.999))
    def test_more_ones_means_stochastically_larger(self, n, data, p):
        i = data.draw(st.integers(0, n - 1))
        x = data.draw(st.integers(0, n - 1))
        assert conv_tail(BinConvDist(i + 1, n, p), x) >= conv_tail(BinConvDist(i, n, p), x) - 1e-12


class TestBinomialTail:
    @pytest.mark.parametrize("n,q,x", [(5, 0.3, 2), (21, 0.05, 10), (1, 0.4, 0), (100, 0.999, 98)])
    def test_matches_scipy(self, n, q, x):
        assert math.exp(binom_logsf(n, q, x)) == pytest.approx(stats.binom.sf(x, n, q), rel=1e-12)

    def test_closed_interval_edges(self):
        assert binom_logsf(5, 0.0, 2) == -math.inf
        assert binom_logsf(5, 1.0, 2) == 0.0
        assert binom_logsf(5, 0.4, -1) == 0.0

    @pytest.mark.parametrize("n,x,alpha", [(1, 0, 0.05), (5, 2, 0.05), (27, 13, 0.005), (21, 10, 0.9)])
    def test_inverse_round_trip(self, n, x, alpha):
        q = binom_tail_inverse(n, x, alpha)
        assert math.exp(binom_logsf(n, q, x)) == pytest.approx(alpha, abs=1e-11)

    def test_inverse_rejects_degenerate_targets(self):
        with pytest.raises(DomainError):
            binom_tail_inverse(5, 5, 0.1)
        with pytest.raises(DomainError):
            binom_tail_inverse(5, 2, 1.0)
