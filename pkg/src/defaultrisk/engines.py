"""Risk-engine adapters for the axiom harness.

Three engines expose conditional risk evaluation on frozen states: exact
closed forms (entropic, quadrature over the terminal Brownian value), the
finite-tree recursion, and the regression BSDE solver.  Claims live in a
small algebra closed under scaling, constant shifts and convex combination:

    xi = sum_i a_i tanh(b_i W_T) + sum_j c_j 1{tau <= d_j} + const

which is bounded and exercises both branches of the default decomposition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .bsde import SolverOptions, ThetaGrid, reconstruct_bsdej, snap_tau, solve_coupled
from .bsde import entropic_driver
from .claims import DecomposedClaim
from .dual import FiniteTreeModel, ToleranceSchedule, discrete_g_expectation
from .entropic import RiskToleranceProfile
from .errors import CapabilityError, ConfigurationError
from .paths import DefaultScenario, PathEnsemble

# ------------------------------------------------------------------- claims


@dataclass(frozen=True)
class TermClaim:
    """Bounded claim built from tanh terms of W_T and default-time indicators."""

    tanh_terms: tuple[tuple[float, float], ...] = ()
    indicator_terms: tuple[tuple[float, float], ...] = ()
    const: float = 0.0

    def xi0(self, w_term: np.ndarray) -> np.ndarray:
        """No-default branch; indicator cutoffs are at or before maturity, so
        they vanish when tau exceeds the horizon."""
        out = np.full_like(np.asarray(w_term, dtype=float), self.const)
        for a, b in self.tanh_terms:
            out = out + a * np.tanh(b * np.asarray(w_term, dtype=float))
        return out

    def xi1(self, w_term: np.ndarray, theta: float) -> np.ndarray:
        out = self.xi0(w_term)
        for c, d in self.indicator_terms:
            if theta <= d:
                out = out + c
        return out

    def sup_bound(self) -> float:
        return (sum(abs(a) for a, _ in self.tanh_terms)
                + sum(abs(c) for c, _ in self.indicator_terms) + abs(self.const))

    def scale(self, lam: float) -> "TermClaim":
        return TermClaim(
            tanh_terms=tuple((lam * a, b) for a, b in self.tanh_terms),
            indicator_terms=tuple((lam * c, d) for c, d in self.indicator_terms),
            const=lam * self.const)

    def shift(self, c: float) -> "TermClaim":
        return replace(self, const=self.const + c)


def combine(alpha: float, first: TermClaim, second: TermClaim) -> TermClaim:
    a, b = first.scale(alpha), second.scale(1.0 - alpha)
    return TermClaim(tanh_terms=a.tanh_terms + b.tanh_terms,
                     indicator_terms=a.indicator_terms + b.indicator_terms,
                     const=a.const + b.const)


ZERO_CLAIM = TermClaim()


@dataclass(frozen=True)
class AffineClaim:
    """F_T-measurable claim slope*W_T + const with exact entropic algebra."""

    slope: float
    const: float = 0.0


@dataclass(frozen=True)
class EvalState:
    """Frozen conditional state: time, Brownian value and default scenario."""

    t: float
    w_t: float
    tau: float            # math.inf when no default in sight
    zeta: float | None = None

    @property
    def defaulted(self) -> bool:
        return self.t >= self.tau


# ----------------------------------------------------------- closed forms


class ClosedFormEngine:
    """Entropic risk measure evaluated by Gauss-Hermite quadrature on W_T.

    All axiom identities that hold for the continuous measure hold exactly on
    the shared quadrature nodes, so analytic properties are testable at
    float-roundoff tolerances.
    """

    engine_id = "closed_form"

    def __init__(self, maturity: float = 1.0,
                 profile: RiskToleranceProfile = RiskToleranceProfile(),
                 quad_points: int = 96):
        self.maturity = maturity
        self.profile = profile
        nodes, weights = np.polynomial.hermite_e.hermegauss(quad_points)
        self.nodes = nodes
        self.weights = weights / weights.sum()
        self.continuity_constant = 1.0

    # -- claim / state generation ---------------------------------------

    def random_claim(self, rng: np.random.Generator) -> TermClaim:
        tanh_terms = tuple(
            (float(rng.uniform(-2.0, 2.0)), float(rng.uniform(0.3, 2.0)))
            for _ in range(int(rng.integers(1, 3))))
        indicator_terms = tuple(
            (float(rng.uniform(-1.0, 1.0)), float(rng.uniform(0.1, self.maturity)))
            for _ in range(int(rng.integers(0, 3))))
        return TermClaim(tanh_terms, indicator_terms, float(rng.uniform(-1.0, 1.0)))

    def nonneg_claim(self, rng: np.random.Generator) -> TermClaim:
        a = float(rng.uniform(0.05, 1.0))
        b = float(rng.uniform(0.3, 2.0))
        return TermClaim(tanh_terms=((a, b),), const=a)  # a*(1 + tanh(b W)) >= 0

    def random_state(self, rng: np.random.Generator) -> EvalState:
        t = float(rng.uniform(0.0, self.maturity))
        w_t = float(rng.normal(0.0, math.sqrt(max(t, 1e-12))))
        if rng.random() < 0.5 and t > 0.0:
            tau = float(rng.uniform(0.0, t))  # defaulted before t
        else:
            tau = math.inf if rng.random() < 0.5 else float(rng.uniform(t, 2.0 * self.maturity)) + 1e-9
        return EvalState(t=t, w_t=w_t, tau=tau, zeta=0.0 if math.isfinite(tau) else None)

    def mask_claim(self, claim: TermClaim, state: EvalState, rng: np.random.Generator
                   ) -> tuple[TermClaim, float]:
        """A G_t-event evaluated at the state: {W_t > cut} or {t >= tau}."""
        if rng.random() < 0.5:
            cut = float(rng.normal(0.0, 1.0))
            ind = 1.0 if state.w_t > cut else 0.0
        else:
            ind = 1.0 if state.defaulted else 0.0
        return claim.scale(ind), ind

    # -- evaluation ------------------------------------------------------

    def rho(self, claim: TermClaim, state: EvalState) -> float:
        """Conditional entropic value at the state's branch and tolerance."""
        horizon = self.maturity - state.t
        if horizon < 0:
            raise CapabilityError("evaluation time beyond maturity")
        w_term = state.w_t + math.sqrt(max(horizon, 0.0)) * self.nodes
        if state.defaulted:
            gam = self.profile.gamma(state.tau)
            payoff = claim.xi1(w_term, state.tau)
        else:
            gam = 1.0
            payoff = claim.xi0(w_term)
        # log-sum-exp with max shift for stability
        vals = -payoff / gam
        m = float(vals.max())
        return gam * (math.log(float(self.weights @ np.exp(vals - m))) + m)

    # -- exact affine algebra (flow checks) ------------------------------

    def rho_affine(self, claim: AffineClaim, state: EvalState,
                   horizon_end: float | None = None) -> float:
        end = self.maturity if horizon_end is None else horizon_end
        if end < state.t:
            raise CapabilityError("horizon before evaluation time")
        gam = self.profile.gamma(state.tau) if state.defaulted else 1.0
        span = end - state.t
        return (-claim.const - claim.slope * state.w_t
                + claim.slope ** 2 * span / (2.0 * gam))

    def flow_gap(self, claim: AffineClaim, sigma: float, state: EvalState) -> float:
        """|rho_t(xi) - rho_t(-rho_sigma(xi))| for a deterministic sigma."""
        if not state.t <= sigma <= self.maturity:
            raise ConfigurationError("sigma must lie in [t, maturity]")
        direct = self.rho_affine(claim, state)
        gam_sigma = self.profile.gamma(state.tau) if state.defaulted else 1.0
        inner_value_const = -claim.const + claim.slope ** 2 * (self.maturity - sigma) \
            / (2.0 * gam_sigma)
        # -rho_sigma(xi) as an affine claim in W_sigma
        inner = AffineClaim(slope=claim.slope, const=-inner_value_const)
        composed = self.rho_affine(inner, state, horizon_end=sigma)
        return abs(direct - composed)


# ------------------------------------------------------------------ tree


class TreeEngine:
    """Finite-tree recursion; states are (time index, outcome index)."""

    engine_id = "finite_tree"

    def __init__(self, tree: FiniteTreeModel | None = None,
                 tolerances: ToleranceSchedule = ToleranceSchedule(),
                 driver: str = "entropic"):
        self.tree = tree or FiniteTreeModel()
        self.tolerances = tolerances
        self.driver = driver
        self.continuity_constant = 1.0

    def random_claim(self, rng: np.random.Generator) -> np.ndarray:
        tree = self.tree
        a = rng.uniform(-2.0, 2.0)
        b = rng.uniform(0.3, 1.5)
        c = rng.uniform(-1.0, 1.0)
        d = rng.uniform(0.5, tree.n_periods)
        e = rng.uniform(-1.0, 1.0)
        xi = a * np.tanh(b * tree.walk_values[:, -1]) + c * (tree.tau <= d) + e
        if rng.random() < 0.3:
            xi = xi + rng.uniform(-0.5, 0.5, tree.n_outcomes)
        return xi

    def nonneg_claim(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(0.0, 1.0, self.tree.n_outcomes)

    def random_state(self, rng: np.random.Generator) -> tuple[int, int]:
        t = int(rng.integers(0, self.tree.n_periods + 1))
        outcome = int(rng.integers(0, self.tree.n_outcomes))
        return (t, outcome)

    def mask_claim(self, claim: np.ndarray, state: tuple[int, int],
                   rng: np.random.Generator) -> tuple[np.ndarray, float]:
        t, outcome = state
        tree = self.tree
        if rng.random() < 0.5:
            cut = float(rng.uniform(-1.5, 1.5))
            event = tree.walk_values[:, t] > cut
        else:
            event = tree.tau <= t
        if rng.random() < 0.3:
            event = ~event
        ind = float(event[outcome])
        return claim * event, ind

    def rho(self, claim: np.ndarray, state: tuple[int, int]) -> float:
        t, outcome = state
        if not 0 <= t <= self.tree.n_periods:
            raise CapabilityError(f"tree engine has no time level {t}")
        rho = discrete_g_expectation(self.tree, self.driver, claim, self.tolerances)
        return float(rho[t, outcome])

    def flow_gap(self, claim: np.ndarray, sigma, t: int) -> float:
        """max over outcomes with t <= sigma of the composition defect.

        sigma is a deterministic time index or the string "default" for the
        first grid time at or after tau (capped at the horizon).
        """
        tree = self.tree
        rho = discrete_g_expectation(tree, self.driver, claim, self.tolerances)
        if sigma == "default":
            sigma_idx = np.minimum(np.where(np.isfinite(tree.tau),
                                            np.ceil(tree.tau), tree.n_periods),
                                   tree.n_periods).astype(int)
        else:
            sigma_idx = np.full(tree.n_outcomes, int(sigma))
        stopped = -rho[sigma_idx, np.arange(tree.n_outcomes)]
        composed = discrete_g_expectation(tree, self.driver, stopped, self.tolerances)
        live = sigma_idx >= t
        return float(np.max(np.abs(composed[t][live] - rho[t][live])))


# ------------------------------------------------------------------ solver


class BsdeEngine:
    """Regression-solver engine: claims are solved on demand and evaluated on
    the solved surfaces at (node, path) states."""

    engine_id = "bsde_lsmc"

    def __init__(self, ensemble: PathEnsemble,
                 profile: RiskToleranceProfile = RiskToleranceProfile(),
                 options: SolverOptions = SolverOptions(),
                 theta_stride: int = 1):
        self.ensemble = ensemble
        self.profile = profile
        self.options = options
        self.driver = entropic_driver(profile)
        self.theta_grid = ThetaGrid.all_nodes(ensemble.grid, stride=theta_stride)
        self.continuity_constant = 1.0
        self._cache: dict = {}

    def _decomposed(self, claim: TermClaim) -> DecomposedClaim:
        bound = claim.sup_bound() + 1.0
        return DecomposedClaim(
            name="term_claim", maturity=self.ensemble.grid.t_end,
            xi0=lambda path: float(claim.xi0(np.asarray([path.w_terminal]))[0]),
            xi1=lambda path, theta, e: float(claim.xi1(np.asarray([path.w_terminal]), theta)[0]),
            bound=bound,
            xi0_terminal=lambda w: claim.xi0(w),
            xi1_terminal=lambda w, theta, e: claim.xi1(w, theta),
        )

    def _solve(self, claim: TermClaim):
        if claim not in self._cache:
            self._cache[claim] = solve_coupled(self.driver, self._decomposed(claim),
                                               self.theta_grid, self.ensemble,
                                               options=self.options)
        return self._cache[claim]

    def rho(self, claim: TermClaim, state: DefaultScenario | tuple) -> np.ndarray:
        """Trajectory of rho along the scenario's path (all grid nodes)."""
        scenario = state
        sol = self._solve(claim)
        y, _, _ = reconstruct_bsdej(sol, scenario)
        return y
