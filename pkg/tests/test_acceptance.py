"""Acceptance battery: exact identities, oracle agreement, rate reproduction.

Each criterion prints one ``[PASS]``/``[FAIL]`` line with its measured
values (written past pytest's capture so the lines appear in plain runs).
The two long criteria share one balanced and one unbalanced blow-up run
at the validated production configuration: n = 8192 with 64 gradient
lengths of domain (128 points per bubble width), dt = 8.5e-4 * lambda^2,
one decade of scale decrease from s1 = 10.
"""

from __future__ import annotations

import math
import sys
import time

import numpy as np
import pytest

from nlsblowup.core import RadialField, make_grid, make_params, norm_H1, norm_L2
from nlsblowup.groundstate import (
    compute_omega,
    refine_longdouble,
    solve_ground_state,
)
from nlsblowup.linops import (
    beta_closed_form,
    branch_forcing,
    coercivity_spectrum,
    lplus_unconstrained_min,
    operator_identity_residuals,
    solve_bordered,
    solve_rho,
)
from nlsblowup.modulation import decompose, hat_epsilon, reconstruct
from nlsblowup.profile import (
    build_profile,
    eval_profile,
    fit_loglog_slope,
    psi_slope_sweep,
    rescale_to_physical,
)
from nlsblowup.sim import (
    SimConfig,
    energy_positivity_check,
    fit_blowup_rate,
    initial_datum,
    lower_bound_check,
    propagate,
    pseudo_conformal_reference,
    simulate_blowup,
)

Q0_EXACT = 3.0 ** 0.25
MASS_EXACT = math.sqrt(3.0) * math.pi / 2.0

# shared state for the amortized criteria (9 reuses the run from 7)
RUNS: dict = {}


def _emit(num: int, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {detail}"
    print(line, file=sys.__stdout__, flush=True)
    print(line)
    assert ok, line


# --------------------------------------------------------------------------
# Shared fixtures
# --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def crit_params():
    return make_params(1, None, 0.2, 0.0, "critical", 1.0)


@pytest.fixture(scope="module")
def gs_fine_n1(crit_params):
    gs = solve_ground_state(crit_params, make_grid(1, 131072, 30.0))
    refine_longdouble(gs)
    return gs


@pytest.fixture(scope="module")
def gs_fine_n2():
    params = make_params(2, None, 0.2, 0.0, "critical", 1.0)
    gs = solve_ground_state(params, make_grid(2, 131072, 25.0))
    refine_longdouble(gs)
    return gs


@pytest.fixture(scope="module")
def gs_profile(crit_params):
    """Production profile grid used by the expansion-based criteria."""
    return solve_ground_state(crit_params, make_grid(1, 8192, 20.0))


@pytest.fixture(scope="module")
def omega(gs_profile, crit_params):
    return compute_omega(gs_profile, crit_params)


@pytest.fixture(scope="module")
def params_balanced(omega):
    params = make_params(1, None, 0.2, omega, "plusminus", 1.0)
    params.omega = omega
    return params


@pytest.fixture(scope="module")
def params_unbalanced(omega):
    params = make_params(1, None, 0.2, 2.0 * omega, "plusminus", 1.0)
    params.omega = omega
    return params


@pytest.fixture(scope="module")
def expansion_balanced(gs_profile, params_balanced):
    return build_profile(gs_profile, params_balanced, order=2)


@pytest.fixture(scope="module")
def expansion_unbalanced(gs_profile, params_unbalanced):
    return build_profile(gs_profile, params_unbalanced, order=2)


def _sim_config(params) -> SimConfig:
    # validated production configuration; lambda_floor None = one decade
    return SimConfig(params=params, n=8192, rmax_factor=64.0, c_dt=8.5e-4)


# --------------------------------------------------------------------------
# Criteria
# --------------------------------------------------------------------------

def test_criterion_01_ground_state_exactness(crit_params):
    t0 = time.time()
    gs = solve_ground_state(crit_params, make_grid(1, 32768, 30.0))
    q0_rel = abs(gs.Q0 / Q0_EXACT - 1.0)
    mass_rel = abs(gs.norms["mass"] / MASS_EXACT - 1.0)
    wall = time.time() - t0
    ok = q0_rel <= 1e-6 and mass_rel <= 1e-6 and gs.residual_inf < 1e-9 and wall < 5.0
    _emit(1, ok,
          f"Q(0) rel err={q0_rel:.2e}<=1e-6, mass rel err={mass_rel:.2e}<=1e-6, "
          f"residual={gs.residual_inf:.2e}<1e-9, wall={wall:.2f}s<5s")


def test_criterion_02_operator_identities(gs_fine_n1, gs_fine_n2):
    t0 = time.time()
    worst: dict = {}
    for label, gs in (("N=1", gs_fine_n1), ("N=2", gs_fine_n2)):
        res = operator_identity_residuals(gs)
        worst[label] = max(res.values())
    wall = time.time() - t0
    ok = all(v < 1e-6 for v in worst.values()) and wall < 10.0
    _emit(2, ok,
          f"identity residuals N=1 max={worst['N=1']:.2e}, "
          f"N=2 max={worst['N=2']:.2e}, all<1e-6, wall={wall:.2f}s<10s")


def test_criterion_03_threshold_coefficient(gs_fine_n1, crit_params):
    t0 = time.time()
    omega_fine = compute_omega(gs_fine_n1, crit_params)
    diffs = []
    for ratio in (0.5, 1.0, 2.0):
        pr = make_params(1, None, 0.2, ratio * omega_fine, "plusminus", 1.0)
        closed = beta_closed_form(gs_fine_n1, pr)
        bordered = solve_bordered(gs_fine_n1, branch_forcing(gs_fine_n1, pr)).beta
        diffs.append(abs(bordered - closed))
    pr_bal = make_params(1, None, 0.2, omega_fine, "plusminus", 1.0)
    beta_at_omega = solve_bordered(gs_fine_n1,
                                   branch_forcing(gs_fine_n1, pr_bal)).beta
    pr_2 = make_params(1, None, 0.2, 2.0 * omega_fine, "plusminus", 1.0)
    beta_plus = solve_bordered(gs_fine_n1, branch_forcing(gs_fine_n1, pr_2)).beta
    wall = time.time() - t0
    ok = (max(diffs) < 1e-6 and abs(beta_at_omega) < 1e-6
          and beta_plus > 0.0 and wall < 10.0)
    _emit(3, ok,
          f"|bordered-closed| max={max(diffs):.2e}<1e-6 over C0 in "
          f"{{w/2,w,2w}}, beta(w)={beta_at_omega:.2e} (|.|<1e-6), "
          f"beta(2w)={beta_plus:.4f}>0, wall={wall:.2f}s<10s")


def test_criterion_04_discrete_coercivity(crit_params):
    t0 = time.time()
    gs = solve_ground_state(crit_params, make_grid(1, 4096, 20.0))
    rho = solve_rho(gs)
    constrained_min = coercivity_spectrum(gs, rho)
    free_min = lplus_unconstrained_min(gs)
    wall = time.time() - t0
    ok = constrained_min > 0.0 and free_min < 0.0 and wall < 30.0
    _emit(4, ok,
          f"constrained min eig={constrained_min:.4f}>0, unconstrained "
          f"Lplus min={free_min:.4f}<0, wall={wall:.2f}s<30s")


def test_criterion_05_profile_residual_scaling(gs_profile, params_balanced):
    t0 = time.time()
    slopes = {}
    for J in (0, 1):
        expansion = build_profile(gs_profile, params_balanced, order=J)
        rows = psi_slope_sweep(expansion)
        slopes[J] = fit_loglog_slope([r["x"] for r in rows],
                                     [r["weighted_norm"] for r in rows])
    wall = time.time() - t0
    ok = (slopes[0] >= 2.0 - 0.1 and slopes[1] >= 3.0 - 0.1 and wall < 60.0)
    _emit(5, ok,
          f"residual slopes J=0: {slopes[0]:.3f}>=1.9, J=1: {slopes[1]:.3f}>=2.9, "
          f"wall={wall:.2f}s<60s")


def test_criterion_06_pseudo_conformal_validation(crit_params):
    t0 = time.time()
    grid = make_grid(1, 8192, 15.0)          # default resolution n
    gs = solve_ground_state(crit_params, grid)
    u0 = pseudo_conformal_reference(-1.0, grid, gs)
    exact = pseudo_conformal_reference(-0.5, grid, gs)
    errs = []
    for dt in (4e-3, 2e-3, 1e-3):
        u = propagate(u0, dt, round(0.5 / dt), crit_params)
        errs.append(norm_L2(RadialField(grid, u.values - exact.values)))
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    wall = time.time() - t0
    ok = (all(3.0 <= r <= 5.0 for r in ratios) and errs[-1] < 1e-3
          and wall < 120.0)
    _emit(6, ok,
          f"S(-1)->S(-0.5) self-convergence ratios={ratios[0]:.2f},"
          f"{ratios[1]:.2f} (2nd order: in [3,5]), finest L2 err="
          f"{errs[-1]:.2e}<1e-3, wall={wall:.2f}s<120s")


def test_criterion_07_balanced_rate(expansion_balanced, params_balanced,
                                    gs_profile):
    t0 = time.time()
    config = _sim_config(params_balanced)
    series = simulate_blowup(config, expansion_balanced, 1.0, 10.0)
    fit = fit_blowup_rate(series)
    wall = time.time() - t0
    RUNS["balanced"] = (series, fit)

    coeff_target = math.sqrt(8.0 * 1.0 / gs_profile.norms["virial"])
    coeff_rel = abs(fit.coefficient / coeff_target - 1.0)
    drift_max = float(series.column("drift").max())
    eps_max = float(series.column("eps_H1").max())
    ok = (not series.truncated
          and abs(fit.exponent - 1.0) <= 0.05
          and coeff_rel <= 0.10
          and drift_max < 1e-6
          and eps_max <= 0.1
          and wall < 600.0)
    _emit(7, ok,
          f"balanced exponent={fit.exponent:.4f} (|d|<=0.05), coeff="
          f"{fit.coefficient:.4f} vs {coeff_target:.4f} (rel {coeff_rel:.3f}"
          f"<=0.10), drift max={drift_max:.2e}<1e-6, eps_H1 max="
          f"{eps_max:.2e}<=0.1, wall={wall:.1f}s<600s")


def test_criterion_08_unbalanced_rate(expansion_unbalanced, params_unbalanced):
    t0 = time.time()
    config = _sim_config(params_unbalanced)
    series = simulate_blowup(config, expansion_unbalanced, 1.0, 10.0)
    fit = fit_blowup_rate(series)
    wall = time.time() - t0
    RUNS["unbalanced"] = (series, fit)

    alpha = params_unbalanced.alpha
    target = 2.0 / (4.0 - alpha)
    ok = abs(fit.exponent - target) <= 0.05 and wall < 600.0
    _emit(8, ok,
          f"unbalanced exponent={fit.exponent:.4f} vs 2/(4-alpha)="
          f"{target:.4f} (|d|={abs(fit.exponent - target):.4f}<=0.05), "
          f"wall={wall:.1f}s<600s")


def test_criterion_09_lower_bound_and_positivity(expansion_balanced,
                                                 params_balanced):
    if "balanced" not in RUNS:
        pytest.skip("balanced run unavailable (criterion 7 failed hard)")
    series, fit = RUNS["balanced"]
    bound = lower_bound_check(series, fit, params_balanced)

    energies = []
    for s1 in (10.0, 15.0, 20.0, 30.0):
        cfg = SimConfig(params=params_balanced, n=2048, rmax_factor=64.0)
        u0, _, _ = initial_datum(cfg, expansion_balanced, 1.0, s1)
        E, positive = energy_positivity_check(u0, params_balanced)
        energies.append((s1, E, positive))
    ok = bound > 0.0 and all(p for _, _, p in energies)
    detail_e = ", ".join(f"E(s1={s1:g})={E:.4f}" for s1, E, _ in energies)
    _emit(9, ok,
          f"inf ||grad u||*(T-t)^q = {bound:.4f}>0 over fit window; "
          f"balanced data all E>0: {detail_e}")


def test_criterion_10_modulation_round_trip(expansion_balanced):
    t0 = time.time()
    rng = np.random.default_rng(0)
    # resample error between frames scales as (h/lam)^4; this grid keeps
    # it below the 1e-8 target across the sampled lambda range
    grid = make_grid(1, 16384, 12.0)
    worst_recon = worst_param = worst_guess = worst_gauge = 0.0
    n_states = 200
    for k in range(n_states):
        lam = float(rng.uniform(0.15, 0.35))
        b = float(rng.uniform(-0.1, 0.1))
        gamma = float(rng.uniform(-math.pi, math.pi))
        P_field, _ = eval_profile(expansion_balanced, lam, b)
        u = rescale_to_physical(P_field, lam, b, gamma, grid)

        state = decompose(u, expansion_balanced, (lam, b, gamma))
        err = max(abs(state.lam / lam - 1.0), abs(state.b - b),
                  abs((state.gamma - gamma + math.pi) % (2 * math.pi) - math.pi))
        worst_param = max(worst_param, err)

        back = reconstruct(state, grid)
        worst_recon = max(worst_recon,
                          norm_H1(RadialField(grid, back.values - u.values)))

        if k % 4 == 0:
            # guess independence: a second, biased seed
            state2 = decompose(u, expansion_balanced,
                               (lam * 1.05, b + 0.01, gamma + 0.1))
            worst_guess = max(worst_guess,
                              abs(state2.lam - state.lam),
                              abs(state2.b - state.b))
            # gauge coherence: a constant phase moves only gamma
            shift = float(rng.uniform(0.1, 1.0))
            state3 = decompose(RadialField(grid, u.values * np.exp(1j * shift)),
                               expansion_balanced, (lam, b, gamma + shift))
            eps_ref = hat_epsilon(state)
            gauge_err = max(
                abs(state3.lam - state.lam), abs(state3.b - state.b),
                abs((state3.gamma - state.gamma - shift + math.pi)
                    % (2 * math.pi) - math.pi),
                norm_L2(RadialField(eps_ref.grid,
                                    hat_epsilon(state3).values
                                    - eps_ref.values)))
            worst_gauge = max(worst_gauge, gauge_err)
    wall = time.time() - t0
    ok = (worst_recon <= 1e-8 and worst_param <= 1e-8
          and worst_guess <= 1e-8 and worst_gauge <= 1e-7 and wall < 120.0)
    _emit(10, ok,
          f"{n_states} tube states: reconstruct defect max={worst_recon:.2e}"
          f"<=1e-8, param recovery max={worst_param:.2e}<=1e-8, guess "
          f"independence max={worst_guess:.2e}<=1e-8, gauge coherence max="
          f"{worst_gauge:.2e}<=1e-7, wall={wall:.1f}s<120s")
