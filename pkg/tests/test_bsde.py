import math

import numpy as np
import pytest

from defaultrisk.bsde import (
    SolverOptions,
    ThetaGrid,
    antithetic_ensemble,
    apriori_gap,
    entropic_driver,
    linear_driver,
    reconstruct_bsdej,
    regression_step,
    snap_tau,
    solve_bsde0,
    solve_bsde1_family,
    solve_coupled,
    zero_driver,
)
from defaultrisk.claims import DecomposedClaim, claim_default_fraction, claim_terminal_brownian
from defaultrisk.entropic import RiskToleranceProfile, closed_form_surface
from defaultrisk.errors import ConfigurationError, SolverError
from defaultrisk.paths import (
    DefaultScenario,
    TimeGrid,
    sample_defaults,
    simulate_brownian,
    simulate_intensity,
)

PROFILE = RiskToleranceProfile()
AFFINE = SolverOptions(basis_order=1)  # exact for claims affine in W_T


def constant_claim(maturity: float, c: float, bound: float = 10.0) -> DecomposedClaim:
    return DecomposedClaim(
        name="constant", maturity=maturity,
        xi0=lambda path: c, xi1=lambda path, theta, e: c, bound=bound,
        xi0_terminal=lambda w: np.full_like(np.asarray(w, dtype=float), c),
        xi1_terminal=lambda w, theta, e: np.full_like(np.asarray(w, dtype=float), c),
    )


def quadratic_bump_claim(maturity: float) -> DecomposedClaim:
    # W_T + 0.1*W_T^2 >= W_T pathwise; entropic solutions stay polynomial in W
    def val(w):
        w = np.asarray(w, dtype=float)
        return w + 0.1 * w * w

    return DecomposedClaim(
        name="quadbump", maturity=maturity,
        xi0=lambda path: float(val(path.w_terminal)),
        xi1=lambda path, theta, e: float(val(path.w_terminal)), bound=12.0,
        xi0_terminal=val,
        xi1_terminal=lambda w, theta, e: val(w),
    )


@pytest.fixture(scope="module")
def ensemble():
    return simulate_brownian(TimeGrid(0.0, 1.0, 50), 20_000, seed=101)


# ---------------------------------------------------------------- regression


def test_regression_constant_target(ensemble):
    w = ensemble.w[:, 25]
    coeffs, fitted, _ = regression_step(3, w, np.full(ensemble.n_paths, 0.7))
    assert np.allclose(fitted, 0.7, atol=1e-10)
    assert np.allclose(coeffs, [0.7, 0.0, 0.0, 0.0], atol=1e-10)


def test_regression_martingale_slope(ensemble):
    # E[W_T | W_t] = W_t: slope-1 coefficient
    w_t = ensemble.w[:, 25]
    w_term = ensemble.w[:, -1]
    coeffs, _, _ = regression_step(1, w_t, w_term)
    assert abs(coeffs[0]) < 0.02
    assert abs(coeffs[1] - 1.0) < 0.02


def test_regression_second_moment(ensemble):
    # E[W_T^2 | W_t] = W_t^2 + (T - t)
    w_t = ensemble.w[:, 25]
    w_term = ensemble.w[:, -1]
    _, fitted, _ = regression_step(2, w_t, w_term ** 2)
    expected = w_t ** 2 + 0.5
    bulk = np.abs(w_t) < 2.0  # compare on the bulk of the state distribution
    assert np.max(np.abs(fitted[bulk] - expected[bulk])) < 0.05


def test_regression_sample_count_guard():
    with pytest.raises(ConfigurationError):
        regression_step(3, np.zeros(20), np.zeros(20))


def test_regression_rank_deficiency():
    state = np.zeros(200)  # constant state: columns w, w^2, w^3 vanish
    with pytest.raises(SolverError):
        regression_step(3, state, np.ones(200))


# ------------------------------------------------------------------- solves


def test_family_constant_claim_exact(ensemble):
    claim = constant_claim(1.0, 0.4)
    theta_grid = ThetaGrid(ensemble.grid, theta_indices=(0, 25), e_values=(0.0,))
    fam = solve_bsde1_family(zero_driver(), claim, theta_grid, ensemble,
                             risk_orientation=False)
    for surf in fam.y_full.values():
        assert np.allclose(surf, 0.4, atol=1e-12)


def test_family_entropic_terminal_brownian(ensemble):
    # closed form: Y at theta=0 with terminal -W_T is T/(2*gamma(0)) - W_0 = 5.0
    claim = claim_terminal_brownian(1.0)
    ens = antithetic_ensemble(ensemble)
    theta_grid = ThetaGrid(ens.grid, theta_indices=(0,))
    fam = solve_bsde1_family(entropic_driver(PROFILE), claim, theta_grid, ens,
                             options=AFFINE)
    y0_vals = fam.y_full[(0, 0)][:, 0]
    assert abs(float(y0_vals.mean()) - 5.0) < 0.02
    assert float(y0_vals.std()) < 0.02  # F_0-measurable up to regression noise


def test_family_linear_driver_benchmark(ensemble):
    # analytic solution Y_t = W_t + (T - t), Z = 1
    claim = claim_terminal_brownian(1.0)
    theta_grid = ThetaGrid(ensemble.grid, theta_indices=(0,))
    fam = solve_bsde1_family(linear_driver(), claim, theta_grid, ensemble,
                             risk_orientation=False)
    assert abs(float(fam.y_full[(0, 0)][:, 0].mean()) - 1.0) < 0.02
    mid = fam.z_full[(0, 0)][:, 25]
    assert abs(float(mid.mean()) - 1.0) < 0.02


def test_bsde0_entropic_value(ensemble):
    claim = claim_terminal_brownian(1.0)
    theta_grid = ThetaGrid.all_nodes(ensemble.grid, stride=5)
    sol = solve_coupled(entropic_driver(PROFILE), claim, theta_grid, ensemble)
    assert abs(float(sol.y0[:, 0].mean()) - 0.5) < 0.02


def test_bsde0_zero_driver_constant(ensemble):
    claim = constant_claim(1.0, 0.3)
    theta_grid = ThetaGrid(ensemble.grid, theta_indices=(0,))
    sol = solve_coupled(zero_driver(), claim, theta_grid, ensemble,
                        risk_orientation=False)
    assert np.allclose(sol.y0, 0.3, atol=1e-12)


def test_bsde0_linear_driver(ensemble):
    claim = claim_terminal_brownian(1.0)
    theta_grid = ThetaGrid(ensemble.grid, theta_indices=(0,))
    sol = solve_coupled(linear_driver(), claim, theta_grid, ensemble,
                        risk_orientation=False)
    assert abs(float(sol.y0[:, 0].mean()) - 1.0) < 0.02


def test_terminal_exactness(ensemble):
    claim = claim_default_fraction(1.0)
    theta_grid = ThetaGrid(ensemble.grid, theta_indices=(0, 10, 25))
    sol = solve_coupled(entropic_driver(PROFILE), claim, theta_grid, ensemble,
                        options=AFFINE)
    w_term = ensemble.w_terminal
    assert np.array_equal(sol.y0[:, -1], claim.truncate(-claim.xi0_terminal(w_term)))
    theta = float(ensemble.grid.nodes[10])
    assert np.array_equal(sol.y1[(10, 0)][:, -1],
                          claim.truncate(-claim.xi1_terminal(w_term, theta, 0.0)))


# ------------------------------------------------------------ reconstruction


@pytest.fixture(scope="module")
def solved(ensemble):
    claim = claim_default_fraction(1.0)
    ens = antithetic_ensemble(ensemble)
    theta_grid = ThetaGrid.all_nodes(ens.grid)
    return ens, solve_coupled(entropic_driver(PROFILE), claim, theta_grid, ens,
                              options=AFFINE)


def test_snap_tau():
    grid = TimeGrid(0.0, 1.0, 10)
    assert snap_tau(grid, 0.51) == 6
    assert snap_tau(grid, 0.5) == 5
    assert snap_tau(grid, 1.2) is None


def test_reconstruct_no_default(solved):
    _, sol = solved
    scen = DefaultScenario(path_index=3, tau=math.inf, eta=9.0, zeta=None,
                           survived_horizon=True)
    y, z, u = reconstruct_bsdej(sol, scen)
    assert np.array_equal(y, sol.y0[3])
    assert np.array_equal(z, sol.z0[3])


def test_reconstruct_switch_left_closed(solved):
    _, sol = solved
    scen = DefaultScenario(path_index=5, tau=0.5, eta=0.2, zeta=0.0, survived_horizon=False)
    k = sol.grid.index_of(0.5)
    y, _, u = reconstruct_bsdej(sol, scen)
    assert y[k] == sol.y1[(k, 0)][5, 0]
    assert y[k - 1] == sol.y0[5, k - 1]
    assert np.all(u[k:] == 0.0)


def test_reconstruct_diagonal_identity(solved):
    # U_t + Y0_t = Y1_t(t, .) exactly: both read the same family surface
    _, sol = solved
    scen = DefaultScenario(path_index=2, tau=0.7, eta=0.2, zeta=0.0, survived_horizon=False)
    k = snap_tau(sol.grid, 0.7)
    y, _, u = reconstruct_bsdej(sol, scen)
    for node in range(k):
        diag = sol.y1[(node, 0)][2, 0]
        assert u[node, 0] + sol.y0[2, node] == pytest.approx(diag, abs=1e-14)


def test_reconstruct_requires_theta_node(ensemble):
    claim = claim_default_fraction(1.0)
    theta_grid = ThetaGrid(ensemble.grid, theta_indices=(0, 10))
    sol = solve_coupled(entropic_driver(PROFILE), claim, theta_grid, ensemble,
                        options=AFFINE)
    scen = DefaultScenario(path_index=0, tau=0.5, eta=0.1, zeta=0.0, survived_horizon=False)
    with pytest.raises(ConfigurationError):
        reconstruct_bsdej(sol, scen)


def test_reconstruction_matches_closed_form(solved):
    # solver vs closed forms for the default-fraction claim, snapped taus
    ens, sol = solved
    intens = simulate_intensity(ens, 1.0, 0.1, 1.0)
    scens = sample_defaults(intens, seed=55)[:100]
    surf = closed_form_surface(ens, scens, "default_fraction", PROFILE,
                               snap_tau_to_grid=True)
    worst = 0.0
    for scen in scens:
        y, _, _ = reconstruct_bsdej(sol, scen)
        worst = max(worst, float(np.max(np.abs(y - surf.rho[scen.path_index]))))
    assert worst <= 0.03


def test_row_mode_matches_full_mode(ensemble):
    claim = claim_default_fraction(1.0)
    theta_grid = ThetaGrid(ensemble.grid, theta_indices=(0, 10, 30))
    fam_full = solve_bsde1_family(entropic_driver(PROFILE), claim, theta_grid,
                                  ensemble, options=AFFINE)
    fam_rows = solve_bsde1_family(entropic_driver(PROFILE), claim, theta_grid,
                                  ensemble, options=AFFINE, keep_rows=[4, 17])
    for key in fam_full.y_full:
        assert np.array_equal(fam_full.y_full[key][17], fam_rows.y_rows[key][1])
    assert np.array_equal(fam_full.y_diag, fam_rows.y_diag, equal_nan=True)


def test_comparison_ordering(ensemble):
    # xi_hat >= xi_bar pathwise implies rho-orientation Y_hat <= Y_bar + tol
    theta_grid = ThetaGrid(ensemble.grid, theta_indices=(0,))
    lower = solve_coupled(entropic_driver(PROFILE), claim_terminal_brownian(1.0),
                          theta_grid, ensemble)
    upper = solve_coupled(entropic_driver(PROFILE), quadratic_bump_claim(1.0),
                          theta_grid, ensemble)
    assert float(np.max(upper.y0 - lower.y0)) <= 0.02


def test_convergence_trend():
    # quadrupling paths and halving dt shrinks |Y0_0 - 0.5| over three levels
    errors = []
    for n_paths, n_steps in ((2_000, 12), (8_000, 25), (32_000, 50)):
        ens = simulate_brownian(TimeGrid(0.0, 1.0, n_steps), n_paths, seed=7)
        theta_grid = ThetaGrid(ens.grid, theta_indices=(0,))
        sol = solve_coupled(entropic_driver(PROFILE), claim_terminal_brownian(1.0),
                            theta_grid, ens)
        errors.append(abs(float(sol.y0[:, 0].mean()) - 0.5))
    assert errors[0] > errors[1] > errors[2]


def test_diagnostics_collected(ensemble):
    claim = claim_terminal_brownian(1.0)
    theta_grid = ThetaGrid(ensemble.grid, theta_indices=(0,))
    sol = solve_coupled(entropic_driver(PROFILE), claim, theta_grid, ensemble,
                        options=SolverOptions(collect_diagnostics=True))
    assert len(sol.diagnostics) == 2 * ensemble.grid.n_steps
    assert all(rec.condition >= 1.0 for rec in sol.diagnostics)


# ----------------------------------------------------------------- a priori


def test_apriori_identical():
    y = np.random.default_rng(0).normal(size=(5, 11))
    rep = apriori_gap(y, y, 0.0, 0.0)
    assert rep.m == 0.0 and rep.observed_sup_gap == 0.0 and not rep.violated


def test_apriori_constant_shift_closed_form():
    # translation invariance makes the observed gap exactly epsilon <= 2M
    grid = TimeGrid(0.0, 1.0, 20)
    ens = simulate_brownian(grid, 30, seed=3)
    intens = simulate_intensity(ens, 1.0, 0.1, 1.0)
    scens = sample_defaults(intens, seed=4)
    base = closed_form_surface(ens, scens, "terminal_brownian", PROFILE)
    eps = 0.1
    shifted = base.rho - eps  # rho(xi + eps) = rho(xi) - eps exactly
    rep = apriori_gap(base.rho, shifted, eps, eps, k0=1.0, k1=1.0)
    assert rep.m == pytest.approx(0.1)
    assert rep.observed_sup_gap == pytest.approx(0.1)
    assert not rep.violated


def test_apriori_shape_guard():
    with pytest.raises(ConfigurationError):
        apriori_gap(np.zeros((2, 3)), np.zeros((3, 2)), 0.1, 0.1)
