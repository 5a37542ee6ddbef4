import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sarr.binom_core import binom_logsf
from sarr.calibration import (
    EPS_TOL,
    CalibrationTarget,
    calibrate,
    min_k,
    power_curve,
    solve_alpha0,
    solve_p,
    table_min_k,
)
from sarr.errors import CappedSearchError, DomainError, InfeasibleError
from sarr.mechanism import epsilon_of, min_alpha, rejection_prob

TABLE1 = np.array([
    [13, 8, 6, 4, 3],
    [11, 7, 5, 4, 3],
    [6, 4, 3, 2, 1],
    [4, 2, 2, 1, 1],
])


class TestSolveP:
    @settings(max_examples=40, deadline=None)
    @given(k=st.integers(0, 60), eps=st.floats(0.05, 4.0))
    def test_privacy_is_exact(self, k, eps):
        p = solve_p(k, eps)
        assert abs(epsilon_of(k, k, p) - eps) <= EPS_TOL

    def test_k0_is_logistic(self):
        assert solve_p(0, 1.0) == pytest.approx(1 / (1 + math.exp(-1.0)), abs=1e-10)

    def test_increasing_in_k(self):
        ps = [solve_p(k, 1.0) for k in range(6)]
        assert all(a < b for a, b in zip(ps, ps[1:]))

    def test_rejects_nonpositive_epsilon(self):
        with pytest.raises(DomainError):
            solve_p(2, 0.0)


class TestSolveAlpha0:
    @pytest.mark.parametrize("k", [1, 2, 5, 10])
    def test_type_one_error_is_exact(self, k):
        p = solve_p(k, 1.5)
        a0 = solve_alpha0(k, p, 0.05)
        assert rejection_prob(a0, k, p) == pytest.approx(0.05, abs=1e-10)

    def test_example_values(self):
        assert calibrate(CalibrationTarget(1.5, 0.05), 1).alpha0 == pytest.approx(0.0025, abs=2e-4)
        assert calibrate(CalibrationTarget(1.5, 0.05), 2).alpha0 == pytest.approx(0.089, abs=1e-3)
        assert calibrate(CalibrationTarget(1.5, 0.05), 10).alpha0 == pytest.approx(0.281, abs=1e-3)

    def test_floor_is_infeasible(self):
        with pytest.raises(InfeasibleError, match="increase k or epsilon"):
            calibrate(CalibrationTarget(1.0, 0.05), 0)

    def test_floor_matches_min_alpha(self):
        k, eps = 3, 0.75
        floor = min_alpha(k, eps)
        p = solve_p(k, eps)
        assert math.exp(binom_logsf(2 * k + 1, 1 - p, k)) == pytest.approx(floor)
        with pytest.raises(InfeasibleError):
            solve_alpha0(k, p, floor * 0.99)
        assert solve_alpha0(k, p, floor * 1.01) >= 0


class TestMinK:
    def test_table(self):
        np.testing.assert_array_equal(table_min_k(), TABLE1)

    def test_floor_on_alpha0_moves_choice(self):
        assert min_k(CalibrationTarget(1.5, 0.05, 0.0))[0] == 1
        assert min_k(CalibrationTarget(1.5, 0.05, 0.003))[0] == 2

    def test_returned_config_meets_targets(self):
        k, cfg = min_k(CalibrationTarget(0.75, 0.01, 0.01))
        assert cfg.k == k
        assert cfg.epsilon == pytest.approx(0.75, abs=1e-9)
        assert cfg.alpha == pytest.approx(0.01, abs=1e-9)
        assert cfg.alpha0 >= 0.01

    def test_cap(self):
        with pytest.raises(CappedSearchError):
            min_k(CalibrationTarget(0.1, 0.001), cap=3)

    @settings(max_examples=25, deadline=None)
    @given(alpha=st.floats(0.005, 0.2), eps=st.floats(0.3, 2.0))
    def test_smaller_k_infeasible(self, alpha, eps):
        k, _ = min_k(CalibrationTarget(eps, alpha))
        for j in range(k):
            with pytest.raises(InfeasibleError):
                calibrate(CalibrationTarget(eps, alpha), j)

    def test_monotone_in_target(self):
        # stricter targets never need fewer subsets
        assert np.all(np.diff(TABLE1, axis=0) <= 0)
        assert np.all(np.diff(TABLE1, axis=1) <= 0)


class TestPowerCurve:
    def test_gamma_grid(self):
        curve = power_curve(2, CalibrationTarget(1.5, 0.05), [0.0, curve_a0(), 1.0])
        assert curve.power[1] == pytest.approx(0.05, abs=1e-10)
        assert np.all(np.diff(curve.power) > 0)

    def test_effect_grid(self):
        curve = power_curve(2, CalibrationTarget(1.5, 0.05), effects=[0.0, 0.5, 1.0], b=21)
        assert curve.abscissa == "effect"
        assert curve.power[0] == pytest.approx(0.05, abs=1e-10)
        assert np.all(np.diff(curve.power) > 0)

    def test_needs_grid(self):
        with pytest.raises(DomainError):
            power_curve(2, CalibrationTarget(1.5, 0.05))
        with pytest.raises(DomainError):
            power_curve(2, CalibrationTarget(1.5, 0.05), effects=[0.1])


def curve_a0():
    return calibrate(CalibrationTarget(1.5, 0.05), 2).alpha0


class TestTarget:
    @pytest.mark.parametrize("args", [(0.0, 0.05), (1.0, 0.0), (1.0, 1.0), (1.0, 0.05, 1.0)])
    def test_validation(self, args):
        with pytest.raises(DomainError):
            CalibrationTarget(*args)
