"""Reference-filtration simulation: Brownian paths, GBM intensity state, Cox default times.

The default time is canonical: tau = inf{t : integral of nu(L_s) ds >= eta}
with nu(x) = exp(-x) and eta a unit exponential drawn from a stream
independent of the Brownian one.  The Azema survival process is then
exp(-Lambda_t) path by path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, GridAlignmentError

# Purpose tags for the counter-based substreams; Brownian increments and
# exponential/mark draws must never share a stream.
_TAG_BROWNIAN = 0
_TAG_ETA = 1
_TAG_MARK = 2


def _stream(seed: int, tag: int, index: int) -> np.random.Generator:
    """Counter-based generator keyed by (seed, purpose, path index).

    Pure function of its arguments, so any parallel schedule that assigns
    paths to workers reproduces the same draws bit for bit.
    """
    key = np.random.SeedSequence((seed, tag, index)).generate_state(2, np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [t_start, t_end] with both endpoints included."""

    t_start: float
    t_end: float
    n_steps: int

    def __post_init__(self) -> None:
        if self.n_steps < 1:
            raise ConfigurationError("n_steps must be >= 1")
        if not self.t_end > self.t_start:
            raise ConfigurationError("t_end must exceed t_start")

    @property
    def dt(self) -> float:
        return (self.t_end - self.t_start) / self.n_steps

    @property
    def n_nodes(self) -> int:
        return self.n_steps + 1

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.t_start, self.t_end, self.n_nodes)

    def index_of(self, t: float, atol: float = 1e-12) -> int:
        """Node index of t; raises GridAlignmentError if t is off the grid."""
        pos = (t - self.t_start) / self.dt
        k = int(round(pos))
        if k < 0 or k > self.n_steps or abs(pos - k) * self.dt > atol:
            raise GridAlignmentError(f"t={t} is not a node of the grid")
        return k


@dataclass(frozen=True)
class PathEnsemble:
    """Brownian paths W on a shared grid, one row per path, W=0 at t_start."""

    grid: TimeGrid
    n_paths: int
    w: np.ndarray  # shape (n_paths, n_nodes)
    seed: int

    @property
    def w_terminal(self) -> np.ndarray:
        return self.w[:, -1]

    def path_slice(self, i: int) -> "PathSlice":
        return PathSlice(grid=self.grid, w=self.w[i])


@dataclass(frozen=True)
class PathSlice:
    """A single path's view, the argument claims are evaluated on."""

    grid: TimeGrid
    w: np.ndarray  # shape (n_nodes,)

    @property
    def w_terminal(self) -> float:
        return float(self.w[-1])


@dataclass(frozen=True)
class IntensityPath:
    """GBM state L, intensity exp(-L) and integrated hazard, per path."""

    grid: TimeGrid
    l: np.ndarray        # (n_paths, n_nodes)
    lambda0: np.ndarray  # (n_paths, n_nodes), rate in 1/years
    hazard: np.ndarray   # (n_paths, n_nodes), nondecreasing, 0 at t_start
    mu: float
    sigma: float
    l0: float

    @property
    def n_paths(self) -> int:
        return self.l.shape[0]


@dataclass(frozen=True)
class DefaultScenario:
    """Sampled (tau, zeta) for one path; tau=inf flags survival past the horizon."""

    path_index: int
    tau: float
    eta: float
    zeta: float | None
    survived_horizon: bool


def simulate_brownian(grid: TimeGrid, n_paths: int, seed: int) -> PathEnsemble:
    """Simulate standard Brownian paths with per-path deterministic streams."""
    if n_paths < 1:
        raise ConfigurationError("n_paths must be >= 1")
    sqrt_dt = math.sqrt(grid.dt)
    w = np.empty((n_paths, grid.n_nodes))
    w[:, 0] = 0.0
    for i in range(n_paths):
        dw = _stream(seed, _TAG_BROWNIAN, i).standard_normal(grid.n_steps)
        np.cumsum(dw, out=w[i, 1:])
    w[:, 1:] *= sqrt_dt
    return PathEnsemble(grid=grid, n_paths=n_paths, w=w, seed=seed)


def simulate_intensity(paths: PathEnsemble, mu: float, sigma: float, l0: float) -> IntensityPath:
    """Evaluate the exact lognormal GBM solution on grid nodes and accumulate the hazard.

    L_t = l0 * exp((mu - sigma^2/2) t + sigma W_t); Lambda by the trapezoidal
    rule, which keeps the default-time inversion at O(dt^2) accuracy.
    """
    if l0 <= 0:
        raise ConfigurationError("l0 must be positive")
    t = paths.grid.nodes[np.newaxis, :]
    l = l0 * np.exp((mu - 0.5 * sigma * sigma) * t + sigma * paths.w)
    lam = np.exp(-l)
    dt = paths.grid.dt
    hazard = np.zeros_like(lam)
    np.cumsum(0.5 * dt * (lam[:, 1:] + lam[:, :-1]), axis=1, out=hazard[:, 1:])
    return IntensityPath(grid=paths.grid, l=l, lambda0=lam, hazard=hazard,
                         mu=mu, sigma=sigma, l0=l0)


def invert_hazard(grid: TimeGrid, hazard_row: np.ndarray, eta: float) -> float:
    """First time the integrated hazard reaches eta, by linear inversion.

    Returns math.inf when the hazard never reaches eta on the grid.
    """
    if hazard_row[-1] < eta:
        return math.inf
    k = int(np.searchsorted(hazard_row, eta))
    if k == 0:
        return float(grid.nodes[0])
    h0, h1 = hazard_row[k - 1], hazard_row[k]
    t0, t1 = grid.nodes[k - 1], grid.nodes[k]
    return float(t0 + (eta - h0) / (h1 - h0) * (t1 - t0))


def sample_default(intensity: IntensityPath, path_index: int, eta: float,
                   marks: Sequence[float] = (0.0,), mark_u: float = 0.0) -> DefaultScenario:
    """Default scenario for one path given its exponential level eta.

    mark_u is a uniform in [0,1) selecting the mark from the finite set E;
    with the singleton default the mark is deterministic.
    """
    tau = invert_hazard(intensity.grid, intensity.hazard[path_index], eta)
    survived = not math.isfinite(tau)
    zeta = None if survived else float(marks[min(int(mark_u * len(marks)), len(marks) - 1)])
    return DefaultScenario(path_index=path_index, tau=tau, eta=eta,
                           zeta=zeta, survived_horizon=survived)


def sample_defaults(intensity: IntensityPath, seed: int,
                    marks: Sequence[float] = (0.0,)) -> list[DefaultScenario]:
    """Sample one scenario per path; eta and mark draws use their own substreams."""
    out = []
    for i in range(intensity.n_paths):
        eta = float(_stream(seed, _TAG_ETA, i).exponential(1.0))
        mark_u = float(_stream(seed, _TAG_MARK, i).random()) if len(marks) > 1 else 0.0
        out.append(sample_default(intensity, i, eta, marks=marks, mark_u=mark_u))
    return out


def azema_survival(intensity: IntensityPath, t: float) -> np.ndarray:
    """Conditional survival P(tau > t | F_t) = exp(-Lambda_t), per path, t on grid."""
    k = intensity.grid.index_of(t)
    return np.exp(-intensity.hazard[:, k])
