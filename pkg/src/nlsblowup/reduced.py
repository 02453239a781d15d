"""Reduced modulation ODE system for the scale/phase parameters.

The renormalized evolution drives (lambda, b) through the autonomous pair

    lambda' = -b * lambda,    b' = -b^2 + theta(lambda, b),

where the phase correction theta comes from a ProfileExpansion.  This
module integrates that system, provides the closed-form approximate
solutions used for initialization and benchmarking, the energy-matched
initial data (lambda1, b1), and the diagnostic comparing rescaled time s
against physical time t via dt = lambda^2 ds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .groundstate import GroundState
from .profile import ProfileExpansion, profile_energy

__all__ = [
    "ReducedTrajectory",
    "integrate_reduced",
    "app_solutions",
    "alpha_lt1_solutions",
    "init_params",
    "s_t_conversion",
]


@dataclass
class ReducedTrajectory:
    """Numerical solution of the reduced (lambda, b) system.

    ``t_grid`` holds physical time reconstructed from dt = lambda^2 ds with
    t(s_grid[0]) = 0.  ``ode_residual`` is the measured re-substitution
    residual of the returned solution (finite differences of the dense
    output against the right-hand side), normalized per equation.
    """

    s_grid: np.ndarray
    lam: np.ndarray
    b: np.ndarray
    theta_source: Optional[ProfileExpansion]
    E0: Optional[float] = None
    truncated: bool = False
    t_grid: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ode_residual: float = 0.0

    def __post_init__(self) -> None:
        if np.any(np.diff(self.s_grid) <= 0):
            raise ValueError("s_grid must be strictly increasing")
        if np.any(self.lam <= 0):
            raise ValueError("lambda must stay positive along the trajectory")


def _theta_function(
    expansion: Optional[ProfileExpansion],
    theta: Optional[Callable[[float, float], float]],
) -> Callable[[float, float], float]:
    if theta is not None:
        return theta
    if expansion is None:
        return lambda lam, b: 0.0
    return expansion.theta


def _resubstitution_residual(
    sol,
    theta_fn: Callable[[float, float], float],
    s_lo: float,
    s_hi: float,
    *,
    probes: int = 101,
) -> float:
    """Max normalized ODE residual of the dense output.

    Derivatives are taken with a 6th-order central stencil on the
    continuous interpolant.  The half-width scales with the local s (the
    solution varies on scale s), keeping stencil truncation and dense-
    output noise both well below 1e-8.
    """

    span = s_hi - s_lo
    if span <= 0.0:
        return 0.0
    worst = 0.0
    for s in np.linspace(s_lo, s_hi, probes):
        h = min(0.02 * max(abs(s), 0.5), span / 8.0,
                (s - s_lo) / 3.0, (s_hi - s) / 3.0)
        if h <= 0.0:
            continue
        f = sol(np.array([s - 3 * h, s - 2 * h, s - h, s, s + h, s + 2 * h, s + 3 * h]))
        d = (45.0 * (f[:, 4] - f[:, 2]) - 9.0 * (f[:, 5] - f[:, 1])
             + (f[:, 6] - f[:, 0])) / (60.0 * h)
        lam, b = f[0, 3], f[1, 3]
        th = theta_fn(max(lam, 0.0), b)
        r_lam = abs(d[0] + b * lam) / max(1.0, abs(b * lam))
        r_b = abs(d[1] + b * b - th) / max(1.0, abs(b * b) + abs(th))
        worst = max(worst, r_lam, r_b)
    return worst


def integrate_reduced(
    expansion: Optional[ProfileExpansion],
    s_range: Sequence[float],
    lambda_init: float,
    b_init: float,
    *,
    theta: Optional[Callable[[float, float], float]] = None,
    E0: Optional[float] = None,
    n_points: int = 400,
    rtol: float = 1e-10,
    atol: float = 1e-13,
    lambda_floor: Optional[float] = None,
) -> ReducedTrajectory:
    """Integrate lambda' = -b lambda, b' = -b^2 + theta(lambda, b).

    ``s_range`` is either (s0, s1) or a full increasing array of output
    points.  ``theta`` overrides the expansion's phase-correction law
    (useful for benchmarking against closed forms); with both omitted the
    system is the free Riccati pair theta = 0.  If lambda decays to the
    floor (default max(1e-12, 1e-9 * lambda_init)) integration stops and
    the trajectory is returned truncated with ``truncated=True``.
    """

    s_arr = np.asarray(s_range, dtype=float)
    if s_arr.ndim != 1 or s_arr.size < 2:
        raise ValueError("s_range needs at least (s0, s1)")
    if np.any(np.diff(s_arr) <= 0):
        raise ValueError("s_range must be increasing")
    if lambda_init <= 0.0:
        raise ValueError("lambda_init must be positive")
    s_eval = np.linspace(s_arr[0], s_arr[-1], n_points) if s_arr.size == 2 else s_arr

    theta_fn = _theta_function(expansion, theta)
    floor = lambda_floor if lambda_floor is not None else max(1e-12, 1e-9 * lambda_init)

    def rhs(s: float, y: np.ndarray) -> list[float]:
        lam, b = y[0], y[1]
        th = theta_fn(max(lam, 0.0), b)
        return [-b * lam, -b * b + th, lam * lam]

    def hit_floor(s: float, y: np.ndarray) -> float:
        return y[0] - floor

    hit_floor.terminal = True  # type: ignore[attr-defined]
    hit_floor.direction = -1  # type: ignore[attr-defined]

    sol = solve_ivp(
        rhs,
        (s_eval[0], s_eval[-1]),
        [lambda_init, b_init, 0.0],
        method="DOP853",
        t_eval=s_eval,
        rtol=rtol,
        atol=atol,
        dense_output=True,
        events=hit_floor,
    )
    if sol.status < 0:
        raise RuntimeError(f"reduced ODE integration failed: {sol.message}")
    truncated = sol.status == 1

    s_grid = sol.t
    lam = sol.y[0]
    b = sol.y[1]
    t_grid = sol.y[2]
    if s_grid.size < 2:
        raise RuntimeError("reduced ODE stopped before producing a trajectory")
    lam = np.maximum(lam, floor)
    residual = _resubstitution_residual(sol.sol, theta_fn, s_grid[0], s_grid[-1])
    return ReducedTrajectory(
        s_grid=s_grid,
        lam=lam,
        b=b,
        theta_source=expansion,
        E0=E0,
        truncated=truncated,
        t_grid=t_grid,
        ode_residual=residual,
    )


def app_solutions(groundstate: GroundState, E0: float, s):
    """Leading-order balanced solution (lambda_app, b_app) at rescaled time s.

    lambda_app(s) = sqrt(||y Q||_2^2 / (8 E0)) / s and b_app(s) = 1/s; the
    quotient b_app/lambda_app matches the leading energy balance
    8 E0 = ||y Q||_2^2 b^2 / lambda^2.  Requires E0 > 0.
    """

    if E0 <= 0.0:
        raise ValueError("balanced approximate solutions require E0 > 0")
    s = np.asarray(s, dtype=float)
    coeff = math.sqrt(groundstate.norms["virial"] / (8.0 * E0))
    lam_app = coeff / s
    b_app = 1.0 / s
    return lam_app, b_app


def alpha_lt1_solutions(beta01: float, alpha: float, s):
    """Exact power-law solution of b' + b^2 = beta01 * lambda^(2 alpha).

    For 0 < alpha < 1 and beta01 > 0,

        lambda_app(s) = (alpha * sqrt(beta01/(1-alpha)))^(-1/alpha) * s^(-1/alpha),
        b_app(s)      = 1 / (alpha * s),

    satisfy both reduced equations identically: lambda'/lambda = -b forces
    the s-exponent of lambda to be -1/alpha once b = 1/(alpha s), and the
    b-equation then fixes the prefactor.
    """

    if not (0.0 < alpha < 1.0):
        raise ValueError("alpha_lt1_solutions requires 0 < alpha < 1")
    if beta01 <= 0.0:
        raise ValueError("alpha_lt1_solutions requires beta01 > 0")
    s = np.asarray(s, dtype=float)
    A = (alpha * math.sqrt(beta01 / (1.0 - alpha))) ** (-1.0 / alpha)
    lam_app = A * s ** (-1.0 / alpha)
    b_app = 1.0 / (alpha * s)
    return lam_app, b_app


def init_params(
    expansion: ProfileExpansion,
    groundstate: GroundState,
    E0: float,
    s1: float,
    *,
    rel_tol: float = 1e-10,
) -> tuple[float, float]:
    """Energy-matched initial data (lambda1, b1) at rescaled time s1.

    lambda1 = sqrt(||y Q||_2^2/(8 E0))/s1; b1 > 0 is the root of
    E(P_{lambda1, b, 0}) = E0, located by bisection in the bracket
    [b_app/4, 4 b_app] followed by a secant polish.  A missing sign change
    in the bracket means s1 is too small for the energy balance to hold.
    """

    lam_app, b_app = app_solutions(groundstate, E0, s1)
    lam1 = float(lam_app)
    b_lo, b_hi = float(b_app) / 4.0, 4.0 * float(b_app)

    def f(b: float) -> float:
        return profile_energy(expansion, lam1, b) - E0

    f_lo, f_hi = f(b_lo), f(b_hi)
    if f_lo == 0.0:
        return lam1, b_lo
    if f_hi == 0.0:
        return lam1, b_hi
    if f_lo * f_hi > 0.0:
        raise ValueError(
            "init_params: energy residual has no sign change in "
            f"[{b_lo:.3e}, {b_hi:.3e}] (s1={s1} too small for E0={E0})"
        )
    # bisection to shrink the bracket far enough for a safe secant start
    for _ in range(40):
        b_mid = 0.5 * (b_lo + b_hi)
        f_mid = f(b_mid)
        if f_mid == 0.0:
            return lam1, b_mid
        if f_lo * f_mid < 0.0:
            b_hi, f_hi = b_mid, f_mid
        else:
            b_lo, f_lo = b_mid, f_mid
    b0, b1 = b_lo, b_hi
    f0, f1 = f_lo, f_hi
    for _ in range(20):
        if f1 == f0:
            break
        b2 = b1 - f1 * (b1 - b0) / (f1 - f0)
        if not (0.0 < b2 < 10.0 * b_app):
            b2 = 0.5 * (b0 + b1)
        f2 = f(b2)
        b0, f0, b1, f1 = b1, f1, b2, f2
        if abs(f1) <= rel_tol * abs(E0):
            break
    if abs(f1) > 1e-8 * abs(E0):
        raise RuntimeError(
            f"init_params: root polish stalled, |E - E0| = {abs(f1):.3e}"
        )
    return lam1, float(b1)


def s_t_conversion(
    trajectory: ReducedTrajectory,
    *,
    C: Optional[float] = None,
    M: Optional[float] = None,
    E0: Optional[float] = None,
) -> float:
    """Max over the run of |C/s - |t|| / |t|^(M+1).

    Physical time is reconstructed from the stored t_grid (dt = lambda^2 ds)
    and anchored at the estimated blow-up time T = t_end + C/s_end, so that
    |t| = T - t(s) decreases to C/s_end.  C defaults to
    ||y Q||_2^2 / (8 E0); M defaults to 0.9 * min(1, 2 (alpha - 1)).
    A single-point trajectory gives 0 by convention.
    """

    if trajectory.s_grid.size < 2:
        return 0.0
    if C is None:
        e0 = E0 if E0 is not None else trajectory.E0
        if e0 is None or trajectory.theta_source is None:
            raise ValueError("s_t_conversion needs C, or an expansion plus E0")
        virial = trajectory.theta_source.gs.norms["virial"]
        C = virial / (8.0 * e0)
    if M is None:
        alpha = None
        if trajectory.theta_source is not None:
            alpha = trajectory.theta_source.params.alpha
        if alpha is None or alpha <= 1.0:
            raise ValueError("s_t_conversion: provide M explicitly when alpha <= 1")
        M = 0.9 * min(1.0, 2.0 * (alpha - 1.0))
    s = trajectory.s_grid
    t = trajectory.t_grid
    T_est = t[-1] + C / s[-1]
    tau = T_est - t
    tau = np.maximum(tau, 1e-300)
    dev = np.abs(C / s - tau) / tau ** (M + 1.0)
    return float(np.max(dev))
