import numpy as np
import pytest

from gaussctm.flux import DaganzoFlux, DaganzoParams
from gaussctm.gaussian import (
    cross_covariance,
    solve_cumulative_moments,
    solve_fluid,
    solve_moments,
)
from gaussctm.model import SegmentSpec
from gaussctm.stationary import stationary_fixed_point

F = DaganzoFlux(DaganzoParams(v_f=80.0, w=16.0, rho_max=108.0, q_max=1800.0))

# A segment whose rates stay on a single linear branch everywhere:
# arrivals = w (rho_max - rho), departures = v_f rho, so the density is
# an Ornstein-Uhlenbeck process with
#   a = -(v_f + w),  rho* = w rho_max / (v_f + w),
#   sigma^2 = 2 v_f w rho_max / (v_f + w)   (at the stationary point)
OU_P = DaganzoParams(v_f=40.0, w=30.0, rho_max=50.0, q_max=1e9)
OU_A = -(OU_P.v_f + OU_P.w)
OU_RHO = OU_P.w * OU_P.rho_max / (OU_P.v_f + OU_P.w)
OU_SIG2 = 2.0 * OU_P.v_f * OU_P.w * OU_P.rho_max / (OU_P.v_f + OU_P.w)


def ou_spec():
    return SegmentSpec.uniform(1, 1.0, DaganzoFlux(OU_P), 1e9, 1e9)


class TestSolveFluid:
    def test_stationary_start_stays_put(self):
        spec = SegmentSpec.uniform(3, 1.0, F, 800.0, 1800.0)
        _, rho = solve_fluid(spec, np.full(3, 10.0), horizon=0.5)
        np.testing.assert_allclose(rho, 10.0, atol=1e-9)

    def test_no_arrivals_drains_to_zero(self):
        spec = SegmentSpec.uniform(2, 1.0, F, 0.0, 1800.0)
        _, rho = solve_fluid(spec, np.full(2, 10.0), horizon=1.0)
        np.testing.assert_allclose(rho[-1], 0.0, atol=1e-6)

    def test_relaxes_to_free_flow_level(self):
        spec = SegmentSpec.uniform(3, 1.0, F, 800.0, 1800.0)
        _, rho = solve_fluid(spec, np.zeros(3), horizon=1.0)
        np.testing.assert_allclose(rho[-1], 10.0, atol=1e-3)

    def test_step_validation(self):
        spec = SegmentSpec.uniform(2, 1.0, F, 800.0, 1800.0)
        with pytest.raises(ValueError):
            solve_fluid(spec, np.zeros(2), horizon=1.0, step=0.0)


class TestSolveMoments:
    def test_covariance_symmetric_and_psd(self):
        spec = SegmentSpec.uniform(3, 1.0, F, 800.0, 1800.0)
        tl = solve_moments(spec, np.full(3, 10.0), np.zeros(3),
                           np.zeros((3, 3)), horizon=0.5)
        for V in tl.V[:: len(tl.V) // 10]:
            np.testing.assert_array_equal(V, V.T)
            w = np.linalg.eigvalsh(V)
            assert w.min() > -1e-9 * max(np.trace(V), 1.0)

    def test_rejects_bad_initial_covariance(self):
        spec = SegmentSpec.uniform(2, 1.0, F, 800.0, 1800.0)
        with pytest.raises(ValueError):
            solve_moments(spec, np.zeros(2), np.zeros(2),
                          np.array([[1.0, 2.0], [0.0, 1.0]]), horizon=0.1)
        with pytest.raises(ValueError):
            solve_moments(spec, np.zeros(2), np.zeros(2),
                          -np.eye(2), horizon=0.1)

    def test_ou_mean_and_variance(self):
        tl = solve_moments(ou_spec(), np.array([OU_RHO]), np.zeros(1),
                           np.zeros((1, 1)), horizon=0.05, step=1e-4)
        t = tl.times
        exact = OU_SIG2 / (2.0 * abs(OU_A)) * (1.0 - np.exp(2.0 * OU_A * t))
        np.testing.assert_allclose(tl.V[:, 0, 0], exact, atol=1e-6)
        np.testing.assert_allclose(tl.mean[:, 0], OU_RHO, atol=1e-9)

    def test_ou_fundamental_solution(self):
        tl = solve_moments(ou_spec(), np.array([OU_RHO]), np.zeros(1),
                           np.zeros((1, 1)), horizon=0.05, step=1e-4)
        np.testing.assert_allclose(tl.phi[:, 0, 0], np.exp(OU_A * tl.times),
                                   rtol=1e-8)

    def test_mean_shift_decays_through_linearization(self):
        tl = solve_moments(ou_spec(), np.array([OU_RHO]), np.array([0.5]),
                           np.zeros((1, 1)), horizon=0.05, step=1e-4)
        np.testing.assert_allclose(tl.M[:, 0], 0.5 * np.exp(OU_A * tl.times),
                                   rtol=1e-8)

    def test_long_run_matches_fixed_point(self):
        spec = SegmentSpec.uniform(5, 11.0 / 108.0, F, 1400.0, 1200.0)
        fp = stationary_fixed_point(spec)
        tl = solve_moments(spec, fp.mu, np.zeros(5), np.zeros((5, 5)),
                           horizon=6.0, step=1e-3)
        assert np.linalg.norm(tl.V[-1] - fp.V) < 1e-4
        np.testing.assert_allclose(tl.mean[-1], fp.mu, atol=1e-6)


class TestCrossCovariance:
    def test_equal_times_reduce_to_variance(self):
        tl = solve_moments(ou_spec(), np.array([OU_RHO]), np.zeros(1),
                           np.zeros((1, 1)), horizon=0.05, step=1e-4)
        t = tl.times[200]
        np.testing.assert_allclose(cross_covariance(tl, t, t), tl.V[200])

    def test_ou_exponential_decay(self):
        tl = solve_moments(ou_spec(), np.array([OU_RHO]), np.zeros(1),
                           np.zeros((1, 1)), horizon=0.05, step=1e-4)
        s, t = tl.times[100], tl.times[400]
        exact = tl.V[100, 0, 0] * np.exp(OU_A * (t - s))
        np.testing.assert_allclose(cross_covariance(tl, s, t)[0, 0], exact,
                                   atol=1e-7)

    def test_order_and_grid_validation(self):
        tl = solve_moments(ou_spec(), np.array([OU_RHO]), np.zeros(1),
                           np.zeros((1, 1)), horizon=0.05, step=1e-4)
        with pytest.raises(ValueError):
            cross_covariance(tl, tl.times[10], tl.times[5])
        with pytest.raises(ValueError):
            tl.index_of(0.05 + 1.0)


class TestCumulativeMoments:
    def test_pure_poisson_arrivals(self):
        # huge supply, zero departures: Y_0(t) is Poisson(lam * t)
        p = DaganzoParams(v_f=1e-9, w=1e9, rho_max=1e9, q_max=1e9)
        spec = SegmentSpec.uniform(1, 1.0, DaganzoFlux(p), 500.0, 0.0)
        ct = solve_cumulative_moments(spec, np.zeros(1), [0.0, 1.0], step=1e-2)
        np.testing.assert_allclose(ct.y_mean[-1][0], 500.0, rtol=1e-9)
        np.testing.assert_allclose(ct.cov[-1][1, 1], 500.0, rtol=1e-9)

    def test_initial_point_is_zero(self):
        spec = SegmentSpec.uniform(2, 1.0, F, 800.0, 1800.0)
        ct = solve_cumulative_moments(spec, np.full(2, 10.0), [0.0, 0.1])
        np.testing.assert_array_equal(ct.y_mean[0], 0.0)
        np.testing.assert_array_equal(ct.cov[0], 0.0)

    def test_x0_block_stays_constant(self):
        spec = SegmentSpec.uniform(2, 1.0, F, 800.0, 1800.0)
        x0_cov = np.diag([4.0, 9.0])
        ct = solve_cumulative_moments(spec, np.full(2, 10.0), [0.0, 0.1, 0.2],
                                      x0_cov=x0_cov, x0_feedback=False)
        for k in range(3):
            np.testing.assert_allclose(ct.cov[k][:2, :2], x0_cov, atol=1e-9)

    def test_cross_consistency(self):
        spec = SegmentSpec.uniform(2, 1.0, F, 800.0, 1800.0)
        ct = solve_cumulative_moments(spec, np.full(2, 10.0),
                                      [0.0, 0.05, 0.1])
        np.testing.assert_allclose(ct.cross(1, 1), ct.cov[1])
        with pytest.raises(ValueError):
            ct.cross(2, 1)

    def test_grid_validation(self):
        spec = SegmentSpec.uniform(2, 1.0, F, 800.0, 1800.0)
        with pytest.raises(ValueError):
            solve_cumulative_moments(spec, np.full(2, 10.0), [0.0, 0.1, 0.1])

    def test_mean_counts_match_fluid_flow(self):
        # stationary free flow: every boundary carries lam, so the mean
        # cumulative count over t hours is lam * t
        spec = SegmentSpec.uniform(3, 1.0, F, 800.0, 1800.0)
        ct = solve_cumulative_moments(spec, np.full(3, 10.0), [0.0, 0.25])
        np.testing.assert_allclose(ct.y_mean[-1], 200.0, rtol=1e-9)
