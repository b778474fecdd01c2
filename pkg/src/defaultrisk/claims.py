"""Terminal claims decomposed into a no-default part and an at-default family.

A claim pays xi0(path) when the default time exceeds the horizon T and
xi1(path, theta, e) when default happened at theta <= T with mark e.  Both
example contracts from the entropic study are provided; each declares an
essential bound the solver uses to truncate payoffs (the closed-form
evaluators use the untruncated formulas).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigurationError
from .paths import DefaultScenario, PathSlice

DEFAULT_BOUND_MULTIPLE = 6.0  # bound B = 6*sqrt(T) covers W_T up to ~1e-9 tail mass


@dataclass(frozen=True)
class DecomposedClaim:
    name: str
    maturity: float
    xi0: Callable[[PathSlice], float]
    xi1: Callable[[PathSlice, float, float | None], float]
    bound: float
    # Vectorized forms over arrays of W_T, used by the Monte-Carlo solver.
    xi0_terminal: Callable[[np.ndarray], np.ndarray]
    xi1_terminal: Callable[[np.ndarray, float, float | None], np.ndarray]

    def truncate(self, values: np.ndarray) -> np.ndarray:
        """Clip payoffs to the declared essential bound [-B, B]."""
        return np.clip(values, -self.bound, self.bound)


def evaluate_claim(claim: DecomposedClaim, path: PathSlice, scenario: DefaultScenario) -> float:
    """Realized payoff: xi0 if no default up to maturity, else xi1 at (tau, zeta)."""
    if scenario.tau > claim.maturity:
        return claim.xi0(path)
    return claim.xi1(path, scenario.tau, scenario.zeta)


def claim_default_fraction(maturity: float, bound: float | None = None) -> DecomposedClaim:
    """Contract paying W_T if no default, and the fraction W_T*(T-tau)/T minus
    the unit premium if default occurred at tau <= T."""
    t_mat = float(maturity)

    def xi0(path: PathSlice) -> float:
        return path.w_terminal

    def xi1(path: PathSlice, theta: float, e: float | None) -> float:
        return path.w_terminal * (t_mat - theta) / t_mat - 1.0

    return DecomposedClaim(
        name="default_fraction",
        maturity=t_mat,
        xi0=xi0,
        xi1=xi1,
        bound=bound if bound is not None else DEFAULT_BOUND_MULTIPLE * math.sqrt(t_mat),
        xi0_terminal=lambda w_t: np.asarray(w_t, dtype=float),
        xi1_terminal=lambda w_t, theta, e: np.asarray(w_t, dtype=float) * (t_mat - theta) / t_mat - 1.0,
    )


def claim_terminal_brownian(maturity: float, bound: float | None = None) -> DecomposedClaim:
    """F_T-measurable position xi = W_T; the default only matters through the
    risk-tolerance update, not through the payoff."""
    t_mat = float(maturity)

    def xi0(path: PathSlice) -> float:
        return path.w_terminal

    def xi1(path: PathSlice, theta: float, e: float | None) -> float:
        return path.w_terminal

    return DecomposedClaim(
        name="terminal_brownian",
        maturity=t_mat,
        xi0=xi0,
        xi1=xi1,
        bound=bound if bound is not None else DEFAULT_BOUND_MULTIPLE * math.sqrt(t_mat),
        xi0_terminal=lambda w_t: np.asarray(w_t, dtype=float),
        xi1_terminal=lambda w_t, theta, e: np.asarray(w_t, dtype=float),
    )


_CLAIM_BUILDERS = {
    "default_fraction": claim_default_fraction,
    "terminal_brownian": claim_terminal_brownian,
}


def get_claim(name: str, maturity: float, bound: float | None = None) -> DecomposedClaim:
    try:
        builder = _CLAIM_BUILDERS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown claim {name!r}; expected one of {sorted(_CLAIM_BUILDERS)}") from None
    return builder(maturity, bound=bound)
