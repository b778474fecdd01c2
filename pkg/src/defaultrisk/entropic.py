"""Closed-form entropic risk measures of the worked example, and a nested
Monte-Carlo oracle for the conditional-expectation definitions.

Both example claims share the no-default part xi0 = W_T, so the pre-default
measure is rho0_t = (T-t)/2 - W_t for either claim id.  The post-default
formulas differ per claim.  The nested oracle estimates
gamma * log E[exp(-xi/gamma) | W_t] by resimulating W_T from (t, W_t), which
is valid here because both claims are functions of W_T alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DomainError, IncompleteInputError
from .paths import DefaultScenario, PathEnsemble, TimeGrid


@dataclass(frozen=True)
class RiskToleranceProfile:
    """Risk tolerance: 1 before default, gamma(theta) = 1 - a*exp(-b*theta) after."""

    a: float = 0.9
    b: float = 1.0
    pre_default_tolerance: float = 1.0

    def __post_init__(self) -> None:
        if not (0.0 < self.a < 1.0):
            raise ConfigurationError("a must lie in (0,1) so gamma stays in (0,1)")
        if self.b <= 0.0:
            raise ConfigurationError("b must be positive")
        if self.pre_default_tolerance != 1.0:
            raise ConfigurationError("pre-default tolerance is the conventional value 1")

    def gamma(self, theta: float) -> float:
        return 1.0 - self.a * math.exp(-self.b * theta)


def rho0_closed(claim_id: str, t: float, w_t: float, maturity: float) -> float:
    """Pre-default entropic value of xi0 = W_T: (T-t)/2 - W_t."""
    _check_claim_id(claim_id)
    if t < 0.0 or t > maturity:
        raise DomainError(f"t={t} outside [0, {maturity}]")
    return 0.5 * (maturity - t) - w_t


def rho1_closed(claim_id: str, t: float, w_t: float, tau: float, maturity: float,
                profile: RiskToleranceProfile) -> float:
    """Post-default entropic value on {t >= tau}, claim-specific formula."""
    _check_claim_id(claim_id)
    if t < tau:
        raise DomainError(f"rho1 is defined on t >= tau; got t={t} < tau={tau}")
    if t > maturity:
        raise DomainError(f"t={t} beyond maturity {maturity}")
    g = profile.gamma(tau)
    if claim_id == "default_fraction":
        frac = (maturity - tau) / maturity
        return 1.0 + frac * frac * (maturity - t) / (2.0 * g) - frac * w_t
    return 0.5 * (maturity - t) / g - w_t


def rho_reconstruct(t: float, scenario: DefaultScenario, rho0_value: float,
                    rho1_value: float | None) -> float:
    """Assemble rho_t = rho0_t on {t < tau} and rho1_t on {t >= tau}."""
    if t < scenario.tau:
        return rho0_value
    if rho1_value is None:
        raise IncompleteInputError("rho1 value required on {t >= tau}")
    return rho1_value


def entropic_nested_mc(claim_part, t: float, w_t: float, maturity: float,
                       gamma: float, n_inner: int, seed: int,
                       antithetic: bool = True) -> tuple[float, float]:
    """Monte-Carlo estimate of gamma*log E[exp(-xi/gamma) | W_t = w_t].

    claim_part maps an array of W_T values to payoff values.  Returns the
    estimate and its standard error (delta method on the log).  Antithetic
    inner pairs roughly halve the oracle cost at a given tolerance.
    """
    if n_inner < 100:
        raise ConfigurationError("n_inner must be at least 100")
    if gamma <= 0.0:
        raise ConfigurationError("gamma must be positive")
    rng = np.random.Generator(np.random.Philox(
        key=np.random.SeedSequence((seed, 0xE57)).generate_state(2, np.uint64)))
    horizon = maturity - t
    if antithetic:
        z = rng.standard_normal(n_inner // 2)
        z = np.concatenate([z, -z])
    else:
        z = rng.standard_normal(n_inner)
    w_term = w_t + math.sqrt(max(horizon, 0.0)) * z
    vals = np.exp(-np.asarray(claim_part(w_term), dtype=float) / gamma)
    m = float(vals.mean())
    se_m = float(vals.std(ddof=1)) / math.sqrt(len(vals))
    return gamma * math.log(m), gamma * se_m / m


@dataclass
class RiskSurface:
    """Per-path grids of rho0, rho1 and the reconstructed rho.

    rho1 is reported as 0 before the default time (the output convention);
    internally it is undefined there and never consumed by the math core.
    """

    grid: TimeGrid
    claim_id: str
    scenarios: list[DefaultScenario]
    rho: np.ndarray   # (n_paths, n_nodes)
    rho0: np.ndarray  # (n_paths, n_nodes)
    rho1: np.ndarray  # (n_paths, n_nodes), display convention before tau
    taus: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.taus = np.array([s.tau for s in self.scenarios])


def closed_form_surface(ensemble: PathEnsemble, scenarios: list[DefaultScenario],
                        claim_id: str, profile: RiskToleranceProfile,
                        snap_tau_to_grid: bool = False) -> RiskSurface:
    """Evaluate the closed forms along simulated paths.

    snap_tau_to_grid replaces tau by the first grid node >= tau, matching the
    solver's reconstruction convention when surfaces are compared.
    """
    _check_claim_id(claim_id)
    grid = ensemble.grid
    maturity = grid.t_end
    nodes = grid.nodes
    n_paths, n_nodes = ensemble.w.shape
    rho0 = 0.5 * (maturity - nodes)[np.newaxis, :] - ensemble.w
    rho1 = np.zeros_like(rho0)
    rho = rho0.copy()
    for i, scen in enumerate(scenarios):
        tau = scen.tau
        if snap_tau_to_grid and math.isfinite(tau):
            tau = float(nodes[int(np.searchsorted(nodes, tau - 1e-12))])
        if tau > maturity:
            continue
        on = nodes >= tau
        vals = np.array([rho1_closed(claim_id, float(nodes[k]), float(ensemble.w[i, k]),
                                     tau, maturity, profile)
                         for k in np.nonzero(on)[0]])
        rho1[i, on] = vals
        rho[i, on] = vals
    return RiskSurface(grid=grid, claim_id=claim_id, scenarios=scenarios,
                       rho=rho, rho0=rho0, rho1=rho1)


def _check_claim_id(claim_id: str) -> None:
    if claim_id not in ("default_fraction", "terminal_brownian"):
        raise ConfigurationError(f"unknown claim id {claim_id!r}")
