"""Exact finite-probability laboratory for the duality statements.

A finite tree carries a +/-1 walk (reference filtration F), a default time
with mark built by a discrete Cox recipe (conditionally independent of the
walk given F-adapted hazards, so immersion holds by construction), and the
three filtrations F within G within H as explicit partitions.  Risk measures
are one-step certainty-equivalent recursions on the G-partitions; penalties,
conditional-expectation decompositions and the dilation factor k_t(Q) are
computed by full enumeration, with convex-duality closed forms validated
against independent ascent oracles.

Conventions.  Measure changes are represented by a strictly positive density
d with E[d] = 1.  Conditional expectations under Q are Bayes quotients
E[dX|atom]/E[d|atom], which makes every quantity well defined for arbitrary
equivalent Q.  The penalty at time t is finite only when Q agrees with the
reference measure on G_t (constants drive the supremum to infinity
otherwise), so the measure-change sampler renormalizes its perturbations to
live after the evaluation time.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Sequence

import numpy as np
from scipy import optimize

from .errors import (
    CapabilityError,
    ConfigurationError,
    ModelDegeneracyError,
    NumericError,
    PreconditionError,
)

NO_DEFAULT = -1  # sentinel scenario index for "no default up to the horizon"


# --------------------------------------------------------------------- model


@dataclass(frozen=True)
class TreeSpec:
    """Size and law parameters of the finite model.

    Hazards and mark weights may depend on the walk prefix through the
    supplied callables (prefix = tuple of +/-1 steps observed strictly before
    the default epoch), which makes the conditional density of (tau, zeta)
    given F_t genuinely stochastic.
    """

    n_periods: int = 3
    default_epochs: tuple[int, ...] = (1, 2)
    marks: tuple[float, ...] = (-1.0, 1.0)
    up_probability: float = 0.5
    hazard: Callable[[int, tuple[int, ...]], float] | None = None
    mark_weights: Callable[[int, tuple[int, ...]], tuple[float, ...]] | None = None


def _default_hazard(epoch: int, prefix: tuple[int, ...]) -> float:
    ups = sum(1 for s in prefix if s > 0)
    return 0.22 + 0.05 * epoch + 0.08 * ups / max(len(prefix), 1) if prefix \
        else 0.25 + 0.05 * epoch


def _make_default_mark_weights(n_marks: int):
    def weights(epoch: int, prefix: tuple[int, ...]) -> tuple[float, ...]:
        if n_marks == 1:
            return (1.0,)
        ups = sum(1 for s in prefix if s > 0)
        w1 = 0.55 + 0.1 * (ups - len(prefix) / 2.0) / max(len(prefix), 1) if prefix else 0.6
        rest = (1.0 - w1) / (n_marks - 1)
        return (w1,) + (rest,) * (n_marks - 1)
    return weights


class FiniteTreeModel:
    """Explicit outcome space: (walk path, default scenario) pairs.

    Outcomes are indexed 0..n-1; all partitions are lists of index arrays.
    Scenario NO_DEFAULT means tau = infinity (survival past the horizon).
    """

    def __init__(self, spec: TreeSpec = TreeSpec()):
        self.spec = spec
        n = spec.n_periods
        if n < 1:
            raise ConfigurationError("need at least one period")
        if any(e < 1 or e > n for e in spec.default_epochs):
            raise ConfigurationError("default epochs must lie in 1..n_periods")
        if not 0.0 < spec.up_probability < 1.0:
            raise ConfigurationError("up probability must be in (0,1)")
        hazard = spec.hazard or _default_hazard
        mark_w = spec.mark_weights or _make_default_mark_weights(len(spec.marks))

        self.n_periods = n
        self.walks: list[tuple[int, ...]] = [tuple(w) for w in product((1, -1), repeat=n)]
        self.scenarios: list[tuple[int, int]] = [
            (epoch, m) for epoch in spec.default_epochs for m in range(len(spec.marks))
        ] + [(NO_DEFAULT, 0)]
        self.outcomes: list[tuple[int, int]] = [
            (wi, si) for wi in range(len(self.walks)) for si in range(len(self.scenarios))
        ]
        self.n_outcomes = len(self.outcomes)

        p = np.empty(self.n_outcomes)
        for oi, (wi, si) in enumerate(self.outcomes):
            walk = self.walks[wi]
            p_walk = 1.0
            for step in walk:
                p_walk *= spec.up_probability if step > 0 else 1.0 - spec.up_probability
            p[oi] = p_walk * self._scenario_prob(walk, si, hazard, mark_w)
        if not np.all(p > 0.0):
            raise ModelDegeneracyError("zero-probability outcome; density hypothesis fails")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ModelDegeneracyError("tree probabilities do not sum to one")
        self.p = p

        # per-outcome walk values and default data
        self.walk_steps = np.array([self.walks[wi] for wi, _ in self.outcomes])
        self.walk_values = np.hstack([np.zeros((self.n_outcomes, 1)),
                                      np.cumsum(self.walk_steps, axis=1)])
        self.tau = np.array([math.inf if self.scenarios[si][0] == NO_DEFAULT
                             else float(self.scenarios[si][0]) for _, si in self.outcomes])
        self.zeta = np.array([math.nan if self.scenarios[si][0] == NO_DEFAULT
                              else spec.marks[self.scenarios[si][1]]
                              for _, si in self.outcomes])
        self._hazard = hazard
        self._mark_w = mark_w
        self._build_partitions()

    def _scenario_prob(self, walk, si, hazard, mark_w) -> float:
        epoch, mark = self.scenarios[si]
        prob = 1.0
        for e in self.spec.default_epochs:
            prefix = walk[: e - 1]
            h = hazard(e, prefix)
            if not 0.0 < h < 1.0:
                raise ConfigurationError(f"hazard at epoch {e} must be in (0,1)")
            if epoch == e:
                weights = mark_w(e, prefix)
                if len(weights) != len(self.spec.marks) or min(weights) <= 0.0:
                    raise ConfigurationError("mark weights must be positive, one per mark")
                return prob * h * weights[mark] / sum(weights)
            prob *= 1.0 - h
        return prob  # survived every epoch: no default

    def _build_partitions(self) -> None:
        n = self.n_periods
        self.f_atoms: list[list[np.ndarray]] = []
        self.g_atoms: list[list[np.ndarray]] = []
        self.h_atoms: list[list[np.ndarray]] = []
        for t in range(n + 1):
            f_groups: dict = {}
            g_groups: dict = {}
            h_groups: dict = {}
            for oi, (wi, si) in enumerate(self.outcomes):
                prefix = self.walks[wi][:t]
                epoch, mark = self.scenarios[si]
                default_info = (epoch, mark) if epoch != NO_DEFAULT and epoch <= t \
                    else ("alive",)
                f_groups.setdefault(prefix, []).append(oi)
                g_groups.setdefault((prefix, default_info), []).append(oi)
                h_groups.setdefault((prefix, (epoch, mark)), []).append(oi)
            self.f_atoms.append([np.array(v) for v in f_groups.values()])
            self.g_atoms.append([np.array(v) for v in g_groups.values()])
            self.h_atoms.append([np.array(v) for v in h_groups.values()])

    # ------------------------------------------------------------ queries

    def atom_of(self, partition: list[np.ndarray], outcome: int) -> np.ndarray:
        for atom in partition:
            if outcome in atom:
                return atom
        raise KeyError(outcome)

    def is_pre_default(self, atom: np.ndarray, t: int) -> bool:
        taus = self.tau[atom]
        if np.all(taus > t):
            return True
        if np.all(taus <= t):
            return False
        raise ModelDegeneracyError("G-atom mixes pre- and post-default outcomes")

    def gamma_density(self, t: int) -> dict[tuple[int, int], np.ndarray]:
        """Conditional law of (tau, zeta) given F_t, per scenario, as a vector
        of per-outcome values (constant on each F_t atom)."""
        out = {}
        for si, scen in enumerate(self.scenarios):
            vals = np.empty(self.n_outcomes)
            member = np.array([s == si for _, s in self.outcomes])
            for atom in self.f_atoms[t]:
                mass = self.p[atom].sum()
                vals[atom] = self.p[atom[member[atom]]].sum() / mass
            out[scen] = vals
        return out

    def azema_from_gamma(self, t: int) -> np.ndarray:
        """Survival P(tau > t | F_t) assembled from the conditional density."""
        gamma = self.gamma_density(t)
        z = np.zeros(self.n_outcomes)
        for (epoch, mark), vals in gamma.items():
            if epoch != NO_DEFAULT and epoch <= t:
                z += vals
        return 1.0 - z

    def azema_direct(self, t: int) -> np.ndarray:
        z = np.empty(self.n_outcomes)
        alive = self.tau > t
        for atom in self.f_atoms[t]:
            mass = self.p[atom].sum()
            z[atom] = self.p[atom[alive[atom]]].sum() / mass
        return z

    def serialize(self) -> str:
        """Structured text dump for golden-file tests."""
        buf = io.StringIO()
        buf.write("# finite tree model\n")
        buf.write(f"periods {self.n_periods}\n")
        buf.write(f"epochs {','.join(str(e) for e in self.spec.default_epochs)}\n")
        buf.write(f"marks {','.join(f'{m:.17g}' for m in self.spec.marks)}\n")
        buf.write("# outcome walk tau zeta prob\n")
        for oi, (wi, si) in enumerate(self.outcomes):
            walk = "".join("+" if s > 0 else "-" for s in self.walks[wi])
            tau = self.tau[oi]
            tau_s = "inf" if math.isinf(tau) else f"{int(tau)}"
            zeta = self.zeta[oi]
            zeta_s = "none" if math.isnan(zeta) else f"{zeta:.17g}"
            buf.write(f"{oi} {walk} {tau_s} {zeta_s} {self.p[oi]:.17g}\n")
        return buf.getvalue()


# ------------------------------------------------------------ risk measures


@dataclass(frozen=True)
class ToleranceSchedule:
    """Branch tolerance: 1 before default, gamma(tau) after, defaults matching
    the continuous-model profile gamma(theta) = 1 - a*exp(-b*theta)."""

    a: float = 0.9
    b: float = 1.0

    def gamma(self, theta: float) -> float:
        return 1.0 - self.a * math.exp(-self.b * theta)

    def for_atom(self, tree: FiniteTreeModel, atom: np.ndarray, t: int) -> float:
        if tree.is_pre_default(atom, t):
            return 1.0
        theta = float(tree.tau[atom[0]])
        return self.gamma(theta)


def discrete_g_expectation(tree: FiniteTreeModel, driver: str, xi: np.ndarray,
                           tolerances: ToleranceSchedule = ToleranceSchedule(),
                           weights: np.ndarray | None = None) -> np.ndarray:
    """Backward recursion on the G-partitions; returns rho[t, outcome].

    driver "zero" is the linear conditional expectation of -xi; "entropic" is
    the certainty-equivalent recursion with the branch tolerance (1 before
    default, gamma(tau) after).  weights replaces the reference probabilities
    (used to evaluate the same recursion under a changed measure).
    """
    if driver not in ("zero", "entropic"):
        raise CapabilityError(f"driver preset {driver!r} not supported on trees")
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (tree.n_outcomes,):
        raise ConfigurationError("terminal claim must assign a value to every outcome")
    p = tree.p if weights is None else weights
    n = tree.n_periods
    rho = np.empty((n + 1, tree.n_outcomes))
    rho[n] = -xi
    for t in range(n - 1, -1, -1):
        for atom in tree.g_atoms[t]:
            mass = p[atom].sum()
            vals = rho[t + 1][atom]
            probs = p[atom] / mass
            if driver == "zero":
                rho[t][atom] = probs @ vals
            else:
                gam = tolerances.for_atom(tree, atom, t)
                m = vals.max()
                rho[t][atom] = gam * (math.log(probs @ np.exp((vals - m) / gam)) + m / gam)
    return rho


# ------------------------------------------------------------ measure change


class MeasureChange:
    """Equivalent measure given by a strictly positive density with E[d] = 1."""

    def __init__(self, tree: FiniteTreeModel, density: np.ndarray):
        density = np.asarray(density, dtype=float)
        if density.shape != (tree.n_outcomes,):
            raise ConfigurationError("density must assign a value to every outcome")
        if not np.all(density > 0.0):
            raise PreconditionError("density must be strictly positive (Q ~ P)")
        total = float(tree.p @ density)
        if abs(total - 1.0) > 1e-10:
            raise PreconditionError(f"density must integrate to one, got {total}")
        self.tree = tree
        self.d = density
        self.q = tree.p * density  # outcome probabilities under Q

    # -- decomposition pieces -------------------------------------------

    def d_components(self) -> tuple[np.ndarray, dict[tuple[int, int], np.ndarray]]:
        """The no-default slice and the per-scenario slices of the density,
        each as an F_N-measurable vector (function of the walk alone)."""
        tree = self.tree
        d0 = np.empty(tree.n_outcomes)
        d1: dict[tuple[int, int], np.ndarray] = {}
        by_walk: dict[int, dict[int, float]] = {}
        for oi, (wi, si) in enumerate(tree.outcomes):
            by_walk.setdefault(wi, {})[si] = self.d[oi]
        for scen_idx, scen in enumerate(tree.scenarios):
            vals = np.empty(tree.n_outcomes)
            for oi, (wi, _) in enumerate(tree.outcomes):
                vals[oi] = by_walk[wi][scen_idx]
            if scen[0] == NO_DEFAULT:
                d0 = vals
            else:
                d1[scen] = vals
        return d0, d1

    def f_marginal_density(self) -> np.ndarray:
        """E[d | F_N]: the walk-marginal density defining Q0 on F_N."""
        tree = self.tree
        out = np.empty(tree.n_outcomes)
        for atom in tree.f_atoms[tree.n_periods]:
            out[atom] = (tree.p[atom] @ self.d[atom]) / tree.p[atom].sum()
        return out

    def conditional_expectation(self, x: np.ndarray, partition: list[np.ndarray]
                                ) -> np.ndarray:
        """Bayes conditional E_Q[x | partition] as a per-outcome vector."""
        out = np.empty(self.tree.n_outcomes)
        for atom in partition:
            out[atom] = (self.q[atom] @ x[atom]) / self.q[atom].sum()
        return out

    def azema(self, t: int) -> np.ndarray:
        """Q(tau > t | F_t) per outcome (constant on F_t atoms)."""
        alive = (self.tree.tau > t).astype(float)
        return self.conditional_expectation(alive, self.tree.f_atoms[t])

    def is_f_measurable(self, atol: float = 1e-12) -> bool:
        d0, d1 = self.d_components()
        return all(np.allclose(d0, v, atol=atol) for v in d1.values())

    def is_immersion_preserving(self, atol: float = 1e-10) -> bool:
        """Survival given the full walk must match survival given the prefix,
        for every horizon: the discrete immersion property under Q."""
        tree = self.tree
        for t in range(tree.n_periods + 1):
            alive = (tree.tau > t).astype(float)
            fine = self.conditional_expectation(alive, tree.f_atoms[tree.n_periods])
            coarse = self.conditional_expectation(alive, tree.f_atoms[t])
            if not np.allclose(fine, coarse, atol=atol):
                return False
        return True

    def agrees_with_reference_on_g(self, t: int, atol: float = 1e-10) -> bool:
        """Q restricted to G_t equals P: E[d | G_t] = 1 on every atom."""
        for atom in self.tree.g_atoms[t]:
            cond = (self.tree.p[atom] @ self.d[atom]) / self.tree.p[atom].sum()
            if abs(cond - 1.0) > atol:
                return False
        return True


def dilation_factor(tree: FiniteTreeModel, change: MeasureChange, t: int) -> np.ndarray:
    """k_t(Q) = (Z^Q/Z^P - 1) 1{Z^Q/Z^P >= 1} + 1, per outcome."""
    zq = change.azema(t)
    zp = tree.azema_direct(t)
    ratio = zq / zp
    return np.where(ratio >= 1.0, ratio, 1.0)


# --------------------------------------------- conditional-expectation split


def decompose_conditional_expectation(tree: FiniteTreeModel, change: MeasureChange,
                                      xi: np.ndarray, t: int,
                                      ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Before/after-default split of E_Q[-xi | G_t] via the density formulas.

    Returns (phi0, phi1, direct) per outcome, where phi0 is populated on
    pre-default outcomes, phi1 on post-default ones, and direct is the
    enumeration answer they are verified against.  The formulas divide by the
    reference survival, hence require Q = P on G_t.
    """
    xi = np.asarray(xi, dtype=float)
    if not change.agrees_with_reference_on_g(t):
        raise PreconditionError(
            "the split formulas need Q to agree with the reference measure on G_t")
    n = tree.n_periods
    d0, d1 = change.d_components()
    gamma_t = tree.gamma_density(t)
    gamma_term = tree.gamma_density(n)
    z_p = tree.azema_direct(t)
    if np.any(z_p <= 0.0):
        raise ModelDegeneracyError("vanishing survival on a reached pre-default atom")

    # claim slices as walk functions
    xi_slices: dict[tuple[int, int], np.ndarray] = {}
    by_walk: dict[int, dict[int, float]] = {}
    for oi, (wi, si) in enumerate(tree.outcomes):
        by_walk.setdefault(wi, {})[si] = xi[oi]
    for scen_idx, scen in enumerate(tree.scenarios):
        vals = np.empty(tree.n_outcomes)
        for oi, (wi, _) in enumerate(tree.outcomes):
            vals[oi] = by_walk[wi][scen_idx]
        xi_slices[scen] = vals

    no_default = (NO_DEFAULT, 0)
    integrand = -xi_slices[no_default] * d0 * gamma_term[no_default]
    for scen, d1_vals in d1.items():
        epoch = scen[0]
        if t < epoch <= n:
            integrand -= xi_slices[scen] * d1_vals * gamma_term[scen]
    phi0 = _p_conditional(tree, integrand, tree.f_atoms[t]) / z_p

    phi1 = np.zeros(tree.n_outcomes)
    for scen, d1_vals in d1.items():
        if scen[0] <= t:
            num = _p_conditional(tree, -xi_slices[scen] * d1_vals * gamma_term[scen],
                                 tree.f_atoms[t])
            phi1_scen = num / gamma_t[scen]
            on = np.array([tree.scenarios[si] == scen for _, si in tree.outcomes])
            phi1[on] = phi1_scen[on]

    direct = change.conditional_expectation(-xi, tree.g_atoms[t])
    return phi0, phi1, direct


def _p_conditional(tree: FiniteTreeModel, x: np.ndarray, partition) -> np.ndarray:
    out = np.empty(tree.n_outcomes)
    for atom in partition:
        out[atom] = (tree.p[atom] @ x[atom]) / tree.p[atom].sum()
    return out


# ----------------------------------------------------------------- penalties


@dataclass
class PenaltyValue:
    """Closed-form penalty with its ascent-oracle bracket, per atom."""

    closed_form: float
    oracle_lower: float
    maximizer: np.ndarray


def penalty_recursion(tree: FiniteTreeModel, change: MeasureChange, t: int,
                      tolerances: ToleranceSchedule = ToleranceSchedule(),
                      partition_family: str = "g") -> np.ndarray:
    """Closed-form penalty alpha_t(Q) per outcome: the backward cocycle
    accumulating tolerance-scaled one-step relative entropies under Q.

    With partition_family="h" the recursion runs on the H-partitions with the
    post-default tolerance everywhere it applies, which is the penalty of the
    post-default family under Q1 (equal to the G-version on post-default
    atoms, where the partitions coincide).
    """
    atoms_by_t = tree.g_atoms if partition_family == "g" else tree.h_atoms
    n = tree.n_periods
    alpha = np.zeros((n + 1, tree.n_outcomes))
    for t_step in range(n - 1, t - 1, -1):
        for atom in atoms_by_t[t_step]:
            children = _children(atoms_by_t[t_step + 1], atom)
            q_mass = np.array([change.q[c].sum() for c in children])
            p_mass = np.array([tree.p[c].sum() for c in children])
            q_cond = q_mass / q_mass.sum()
            p_cond = p_mass / p_mass.sum()
            if partition_family == "g":
                gam = tolerances.for_atom(tree, atom, t_step)
            else:
                taus = tree.tau[atom]
                gam = tolerances.gamma(float(taus[0])) if np.all(np.isfinite(taus)) \
                    and taus.max() <= t_step else 1.0
            kl = float(np.sum(q_cond * np.log(q_cond / p_cond)))
            cont = sum(qc * alpha[t_step + 1][c[0]] for qc, c in zip(q_cond, children))
            alpha[t_step][atom] = gam * kl + cont
    return alpha[t]


def _children(next_atoms: list[np.ndarray], atom: np.ndarray) -> list[np.ndarray]:
    atom_set = set(atom.tolist())
    return [c for c in next_atoms if c[0] in atom_set]


def _rho_and_gradient(tree: FiniteTreeModel, xi: np.ndarray, atom: np.ndarray, t: int,
                      tolerances: ToleranceSchedule) -> tuple[float, np.ndarray]:
    """Entropic recursion value on one atom and its gradient in xi.

    The gradient is minus the Gibbs path measure of the recursion, computed
    by propagating one-step Gibbs weights down the subtree.
    """
    n = tree.n_periods
    rho = np.empty((n + 1, tree.n_outcomes))
    rho[n] = -xi
    weights: dict[int, np.ndarray] = {}
    for t_step in range(n - 1, t - 1, -1):
        for a in tree.g_atoms[t_step]:
            if t_step > t and not set(a.tolist()) <= set(atom.tolist()):
                continue
            if t_step == t and a[0] != atom[0]:
                continue
            gam = tolerances.for_atom(tree, a, t_step)
            children = _children(tree.g_atoms[t_step + 1], a)
            p_mass = np.array([tree.p[c].sum() for c in children])
            vals = np.array([rho[t_step + 1][c[0]] for c in children])
            p_cond = p_mass / p_mass.sum()
            m = vals.max()
            expw = p_cond * np.exp((vals - m) / gam)
            total = expw.sum()
            rho[t_step][a] = gam * (math.log(total) + m / gam)
            gibbs = expw / total
            weights[(t_step, a[0])] = (children, gibbs)
    # propagate Gibbs weights from the root atom
    grad = np.zeros(tree.n_outcomes)
    stack = [(t, atom, 1.0)]
    while stack:
        t_step, a, w = stack.pop()
        if t_step == n:
            grad[a[0]] = w  # terminal atoms are single outcomes
            continue
        children, gibbs = weights[(t_step, a[0])]
        for gw, c in zip(gibbs, children):
            stack.append((t_step + 1, c, w * gw))
    return float(rho[t][atom[0]]), -grad


def entropic_penalty(tree: FiniteTreeModel, change: MeasureChange, t: int,
                     tolerances: ToleranceSchedule = ToleranceSchedule(),
                     bound: float = 10.0, gap_tol: float = 1e-6,
                     ) -> dict[int, PenaltyValue]:
    """Penalty alpha_t(Q) per G_t-atom: closed-form recursion plus the ascent
    oracle over bounded claims, bracket-asserted.

    Returns a map from atom-representative outcome index to PenaltyValue.
    The supremum is attained in the interior for entropic recursions, which
    the boundary-activity assertion checks.
    """
    closed = penalty_recursion(tree, change, t, tolerances)
    out: dict[int, PenaltyValue] = {}
    for atom in tree.g_atoms[t]:
        value, xi_star = _penalty_ascent(tree, change, atom, t, tolerances, bound)
        cf = float(closed[atom[0]])
        if not (value <= cf + 1e-9):
            raise NumericError(
                f"ascent exceeded the closed form: {value} > {cf}")
        if not (cf <= value + gap_tol):
            raise NumericError(
                f"closed form not matched by the oracle within {gap_tol}: "
                f"{cf} vs {value}")
        out[int(atom[0])] = PenaltyValue(closed_form=cf, oracle_lower=value,
                                         maximizer=xi_star)
    return out


def _penalty_ascent(tree: FiniteTreeModel, change: MeasureChange, atom: np.ndarray,
                    t: int, tolerances: ToleranceSchedule, bound: float,
                    ) -> tuple[float, np.ndarray]:
    """Maximize E_Q[-xi | atom] - rho_t(xi)(atom) over xi in [-B, B]^atom."""
    idx = atom
    q_cond = change.q[idx] / change.q[idx].sum()

    def negated(x: np.ndarray) -> tuple[float, np.ndarray]:
        xi = np.zeros(tree.n_outcomes)
        xi[idx] = x
        rho_val, rho_grad = _rho_and_gradient(tree, xi, atom, t, tolerances)
        value = float(q_cond @ (-x)) - rho_val
        grad = -q_cond - rho_grad[idx]
        return -value, -grad

    x0 = np.zeros(len(idx))
    res = optimize.minimize(negated, x0, jac=True, method="L-BFGS-B",
                            bounds=[(-bound, bound)] * len(idx),
                            options={"maxiter": 500, "ftol": 1e-16, "gtol": 1e-12})
    if not np.all(np.isfinite(res.x)):
        raise NumericError("penalty ascent diverged")
    if np.any(np.abs(res.x) > bound - 1e-6):
        raise NumericError("penalty maximizer hit the claim bound; enlarge it")
    # exact objective at the returned point: a true lower bound
    value = -negated(res.x)[0]
    return float(value), res.x


def _pre_default_penalty_bracket(tree: FiniteTreeModel, change: MeasureChange,
                                 f_atom_indices: np.ndarray, g_atom: np.ndarray, t: int,
                                 tolerances: ToleranceSchedule, bound: float,
                                 ) -> tuple[float, float]:
    """Penalty of the pre-default measure over walk-measurable claims.

    Primal: ascent over claims that are functions of the terminal walk atom.
    Dual certificate: the Gibbs measure of the maximizer, re-channelled to
    match the walk marginal exactly, evaluated in the penalty cocycle; by
    weak duality it upper-bounds the supremum.
    """
    d0_walk = change.f_marginal_density()
    walk_atoms = [a for a in tree.f_atoms[tree.n_periods]
                  if a[0] in set(f_atom_indices.tolist())]
    q0_masses = np.array([tree.p[a] @ d0_walk[a] for a in walk_atoms])
    q0_cond = q0_masses / q0_masses.sum()

    def lift(x: np.ndarray) -> np.ndarray:
        xi = np.zeros(tree.n_outcomes)
        for val, a in zip(x, walk_atoms):
            xi[a] = val
        return xi

    def negated(x: np.ndarray) -> tuple[float, np.ndarray]:
        rho_val, rho_grad = _rho_and_gradient(tree, lift(x), g_atom, t, tolerances)
        value = float(q0_cond @ (-x)) - rho_val
        grad = np.empty_like(x)
        for j, a in enumerate(walk_atoms):
            grad[j] = -q0_cond[j] - rho_grad[a].sum()
        return -value, -grad

    res = optimize.minimize(negated, np.zeros(len(walk_atoms)), jac=True,
                            method="L-BFGS-B",
                            bounds=[(-bound, bound)] * len(walk_atoms),
                            options={"maxiter": 500, "ftol": 1e-16, "gtol": 1e-12})
    if not np.all(np.isfinite(res.x)):
        raise NumericError("pre-default penalty ascent diverged")
    primal = float(-negated(res.x)[0])

    # dual certificate: Gibbs measure of the maximizer with the walk-channel
    # re-matched to Q0, evaluated in the exact penalty cocycle
    _, rho_grad = _rho_and_gradient(tree, lift(res.x), g_atom, t, tolerances)
    gibbs = -rho_grad
    gibbs = np.maximum(gibbs, 0.0)
    q_tilde = np.zeros(tree.n_outcomes)
    for target_mass, a in zip(q0_cond, walk_atoms):
        sub = gibbs[a]
        total = sub.sum()
        if total <= 0.0:  # unreachable under strict positivity
            sub = tree.p[a] / tree.p[a].sum()
            total = 1.0
        q_tilde[a] = target_mass * sub / total
    dual = _penalty_cocycle_of_measure(tree, q_tilde, g_atom, t, tolerances)
    return primal, dual


def _penalty_cocycle_of_measure(tree: FiniteTreeModel, q_path: np.ndarray,
                                atom: np.ndarray, t: int,
                                tolerances: ToleranceSchedule) -> float:
    """Exact penalty cocycle of an arbitrary path measure on one subtree."""
    n = tree.n_periods
    alpha: dict[int, float] = {}
    for t_step in range(n - 1, t - 1, -1):
        for a in tree.g_atoms[t_step]:
            if t_step == t:
                if a[0] != atom[0]:
                    continue
            elif not set(a.tolist()) <= set(atom.tolist()):
                continue
            children = _children(tree.g_atoms[t_step + 1], a)
            q_mass = np.array([q_path[c].sum() for c in children])
            p_mass = np.array([tree.p[c].sum() for c in children])
            total = q_mass.sum()
            if total <= 0.0:
                alpha[a[0]] = 0.0
                continue
            q_cond = q_mass / total
            p_cond = p_mass / p_mass.sum()
            gam = tolerances.for_atom(tree, a, t_step)
            kl = float(np.sum(np.where(q_cond > 0.0,
                                       q_cond * np.log(np.maximum(q_cond, 1e-300) / p_cond),
                                       0.0)))
            cont = sum(qc * alpha.get(c[0], 0.0) for qc, c in zip(q_cond, children))
            alpha[a[0]] = gam * kl + cont
    return float(alpha[atom[0]])


# --------------------------------------------------------- theorem check


@dataclass
class PenaltyInequalityReport:
    t: int
    k_values: dict[int, float]
    alpha: dict[int, float]
    alpha0: dict[int, tuple[float, float]]   # pre-default atoms: (primal, dual)
    alpha1: dict[int, float]                 # post-default atoms
    pre_default_slack: dict[int, float]
    post_default_defect: dict[int, float]

    @property
    def min_slack(self) -> float:
        return min(self.pre_default_slack.values()) if self.pre_default_slack else 0.0

    @property
    def max_defect(self) -> float:
        return max(self.post_default_defect.values()) if self.post_default_defect else 0.0


def penalty_inequality_check(tree: FiniteTreeModel, change: MeasureChange, t: int,
                             tolerances: ToleranceSchedule = ToleranceSchedule(),
                             bound: float = 10.0) -> PenaltyInequalityReport:
    """Verify the penalty inequality and post-default equality at time t.

    Pre-default atoms: alpha_t(Q) >= k_t(Q) * alpha0_t(Q0), with alpha0 the
    penalty of the walk-marginal measure over walk-measurable claims (primal
    ascent value; the dual certificate is reported alongside).  Post-default
    atoms: alpha_t(Q) equals the H-side penalty of Q1 exactly.
    """
    if not change.is_immersion_preserving():
        raise PreconditionError("the theorem requires an immersion-preserving Q")
    if not change.agrees_with_reference_on_g(t):
        raise PreconditionError(
            "the penalty at t is finite only for Q = P on G_t; renormalize the density")
    alpha_g = penalty_recursion(tree, change, t, tolerances, "g")
    alpha_h = penalty_recursion(tree, change, t, tolerances, "h")
    k_all = dilation_factor(tree, change, t)

    k_values: dict[int, float] = {}
    alpha: dict[int, float] = {}
    alpha0: dict[int, tuple[float, float]] = {}
    alpha1: dict[int, float] = {}
    slack: dict[int, float] = {}
    defect: dict[int, float] = {}
    for atom in tree.g_atoms[t]:
        rep = int(atom[0])
        alpha[rep] = float(alpha_g[rep])
        k_values[rep] = float(k_all[rep])
        if tree.is_pre_default(atom, t):
            f_atom = tree.atom_of(tree.f_atoms[t], rep)
            primal, dual = _pre_default_penalty_bracket(
                tree, change, f_atom, atom, t, tolerances, bound)
            alpha0[rep] = (primal, dual)
            slack[rep] = alpha[rep] - k_values[rep] * primal
        else:
            alpha1[rep] = float(alpha_h[rep])
            defect[rep] = abs(alpha[rep] - alpha1[rep])
    return PenaltyInequalityReport(t=t, k_values=k_values, alpha=alpha,
                                   alpha0=alpha0, alpha1=alpha1,
                                   pre_default_slack=slack,
                                   post_default_defect=defect)


# ------------------------------------------------------------------ sampling


def sample_measure_change(tree: FiniteTreeModel, t: int, rng: np.random.Generator,
                          magnitude: float = 0.6) -> MeasureChange:
    """Random immersion-preserving Q agreeing with P on G_t.

    Built as a product perturbation: tilted walk-step probabilities after t
    and perturbed hazards/mark weights at epochs after t; both channels stay
    conditionally independent given the walk, so immersion holds under Q by
    the same Cox argument as under P.
    """
    spec = tree.spec
    hazard = spec.hazard or _default_hazard
    mark_w = spec.mark_weights or _make_default_mark_weights(len(spec.marks))

    step_tilt: dict[tuple[int, tuple[int, ...]], float] = {}

    def up_prob(step_index: int, prefix: tuple[int, ...]) -> float:
        if step_index <= t:
            return spec.up_probability
        key = (step_index, prefix)
        if key not in step_tilt:
            lo = spec.up_probability * (1.0 - magnitude)
            hi = spec.up_probability + (1.0 - spec.up_probability) * magnitude
            step_tilt[key] = float(rng.uniform(lo, hi))
        return step_tilt[key]

    hazard_tilt: dict[tuple[int, tuple[int, ...]], float] = {}

    def q_hazard(epoch: int, prefix: tuple[int, ...]) -> float:
        if epoch <= t:
            return hazard(epoch, prefix)
        key = (epoch, prefix)
        if key not in hazard_tilt:
            base = hazard(epoch, prefix)
            factor = float(rng.uniform(1.0 - magnitude, 1.0 + magnitude))
            hazard_tilt[key] = min(max(base * factor, 0.02), 0.95)
        return hazard_tilt[key]

    mark_tilt: dict[tuple[int, tuple[int, ...]], tuple[float, ...]] = {}

    def q_marks(epoch: int, prefix: tuple[int, ...]) -> tuple[float, ...]:
        if epoch <= t:
            w = mark_w(epoch, prefix)
            s = sum(w)
            return tuple(x / s for x in w)
        key = (epoch, prefix)
        if key not in mark_tilt:
            w = np.array(mark_w(epoch, prefix), dtype=float)
            w = w * rng.uniform(1.0 - magnitude, 1.0 + magnitude, size=len(w))
            mark_tilt[key] = tuple(float(x) for x in (w / w.sum()))
        return mark_tilt[key]

    density = np.empty(tree.n_outcomes)
    for oi, (wi, si) in enumerate(tree.outcomes):
        walk = tree.walks[wi]
        q_walk = 1.0
        p_walk = 1.0
        for j, step in enumerate(walk, start=1):
            pu = up_prob(j, walk[: j - 1])
            q_walk *= pu if step > 0 else 1.0 - pu
            p_walk *= spec.up_probability if step > 0 else 1.0 - spec.up_probability
        epoch, mark = tree.scenarios[si]
        q_def = 1.0
        p_def = 1.0
        for e in spec.default_epochs:
            prefix = walk[: e - 1]
            if epoch == e:
                q_def *= q_hazard(e, prefix) * q_marks(e, prefix)[mark]
                wts = mark_w(e, prefix)
                p_def *= hazard(e, prefix) * wts[mark] / sum(wts)
                break
            q_def *= 1.0 - q_hazard(e, prefix)
            p_def *= 1.0 - hazard(e, prefix)
        density[oi] = (q_walk * q_def) / (p_walk * p_def)
    return MeasureChange(tree, density)


def sample_f_measurable_change(tree: FiniteTreeModel, rng: np.random.Generator,
                               magnitude: float = 0.6) -> MeasureChange:
    """Random walk-only density (F_N-measurable), E[d] = 1 by construction."""
    spec = tree.spec
    tilts: dict[tuple[int, tuple[int, ...]], float] = {}

    def up_prob(step_index: int, prefix: tuple[int, ...]) -> float:
        key = (step_index, prefix)
        if key not in tilts:
            lo = spec.up_probability * (1.0 - magnitude)
            hi = spec.up_probability + (1.0 - spec.up_probability) * magnitude
            tilts[key] = float(rng.uniform(lo, hi))
        return tilts[key]

    density = np.empty(tree.n_outcomes)
    for oi, (wi, _) in enumerate(tree.outcomes):
        walk = tree.walks[wi]
        q_walk = 1.0
        p_walk = 1.0
        for j, step in enumerate(walk, start=1):
            pu = up_prob(j, walk[: j - 1])
            q_walk *= pu if step > 0 else 1.0 - pu
            p_walk *= spec.up_probability if step > 0 else 1.0 - spec.up_probability
        density[oi] = q_walk / p_walk
    return MeasureChange(tree, density)


# ----------------------------------------------------------------- relevance


def relevance_check(tree: FiniteTreeModel, xi: np.ndarray, driver: str = "entropic",
                    tolerances: ToleranceSchedule = ToleranceSchedule(),
                    max_doublings: int = 60) -> float:
    """Witness lambda > 0 with rho_0(-lambda * xi) > 0, by doubling search."""
    xi = np.asarray(xi, dtype=float)
    if np.any(xi < 0.0) or not np.any(xi > 0.0):
        raise PreconditionError("xi must be nonnegative and not identically zero")
    lam = 1.0
    for _ in range(max_doublings):
        rho0 = discrete_g_expectation(tree, driver, -lam * xi, tolerances)[0, 0]
        if rho0 > 0.0:
            return lam
        lam *= 2.0
    raise NumericError("doubling search failed to find a relevance witness")
