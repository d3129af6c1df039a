"""Travel-time survival curves and moments from the Gaussian
approximation of the cumulative-arrival process.

A vehicle entering cell i at time t with X0 vehicles ahead of it in
cells i..i+k exits cell i+k once the cumulative outflow of cell i+k
(counted from t) reaches X0, overtaking within a class being neglected.
The tail P(T > x) is therefore the probability that the Gaussian
variable D = Y_out(x) - X0 is still negative at lag x; its mean,
variance, and the Cov(X0, Y) cross term are read off the augmented
cumulative-moment solution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .gaussian import solve_cumulative_moments, solve_moments

__all__ = ["TailCurve", "GridCoverageError", "travel_time_tail",
           "travel_time_moments", "default_grid"]

HOURS_PER_SECOND = 1.0 / 3600.0


class GridCoverageError(ValueError):
    pass


@dataclass
class TailCurve:
    i: int  # 1-based origin cell
    k: int  # span: exit from cell i+k
    j: int  # 1-based vehicle class
    t: float  # reference time (h)
    grid: np.ndarray  # seconds
    values: np.ndarray  # P(T > x), nonincreasing in x


def default_grid(x_max_s, n=1001):
    """n equidistant lags in [0, x_max] seconds."""
    return np.linspace(0.0, x_max_s, n)


def travel_time_tail(spec, state0, i, k, j, t, grid, x0_cov=None,
                     step=1e-3) -> TailCurve:
    """Survival curve of the travel time through cells i..i+k for class
    j, for a vehicle entering at time t with the system started in
    state0 (densities; optional Gaussian covariance x0_cov).

    `grid` holds the lags x in seconds, nonnegative ascending."""
    sys = spec.system() if not hasattr(spec, "rates") else spec
    m = sys.m
    d = sys.n_cells
    if not (1 <= i and i + k <= d):
        raise ValueError("cell span out of range")
    if not 1 <= j <= m:
        raise ValueError("class index out of range")
    grid = np.asarray(grid, dtype=float)
    if np.any(grid < 0) or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be nonnegative ascending")

    rho_t = np.asarray(state0, dtype=float)
    cov_t = x0_cov
    if t > 0:
        tl = solve_moments(sys, rho_t, np.zeros(sys.n_state),
                           np.zeros((sys.n_state, sys.n_state)) if x0_cov is None
                           else x0_cov, t, step)
        rho_t, cov_t = tl.mean[-1], tl.V[-1]

    grid_h = grid * HOURS_PER_SECOND
    solve_grid = grid_h if grid_h[0] == 0.0 else np.concatenate([[0.0], grid_h])
    offset = len(solve_grid) - len(grid_h)
    cum = solve_cumulative_moments(sys, rho_t, solve_grid, x0_cov=cov_t,
                                   step=step, x0_feedback=False)

    ns, K = cum.n, cum.K
    w = np.zeros(ns + K)
    for c in range(i, i + k + 1):  # vehicles initially ahead, cells i..i+k
        w[(c - 1) * m + (j - 1)] = -1.0
    w[ns + (i + k) * m + (j - 1)] = 1.0  # cumulative outflow of cell i+k

    values = np.empty(len(grid))
    for g in range(len(grid)):
        gg = g + offset
        mean = float(w @ cum.z_mean(gg))
        var = float(w @ cum.cov[gg] @ w)
        if var <= 1e-18:
            values[g] = 1.0 if mean < 0 else 0.0
        else:
            values[g] = ndtr(-mean / np.sqrt(var))
    np.clip(values, 0.0, 1.0, out=values)
    values = np.minimum.accumulate(values)  # enforce a proper tail
    return TailCurve(i, k, j, t, grid, values)


def travel_time_moments(curve: TailCurve):
    """(mean, std) in seconds by tail integration: the curve is
    restricted to x >= 0, renormalized to the positive-mass part, and
    integrated by the trapezoid rule."""
    x, S = curve.grid, curve.values
    if S[-1] >= 1e-3:
        raise GridCoverageError(
            f"grid too short: residual tail mass {S[-1]:.3e} at "
            f"x = {x[-1]:.1f} s")
    if S[0] <= 0:
        return 0.0, 0.0
    St = S / S[0]
    mean = float(np.trapezoid(St, x))
    ex2 = float(np.trapezoid(2.0 * x * St, x))
    return mean, float(np.sqrt(max(ex2 - mean * mean, 0.0)))
