"""Dynamic risk measures on a Brownian filtration enlarged by a default time.

The package simulates the default model (Cox construction on top of a GBM
intensity state), evaluates the before/after-default decomposition of the
entropic risk measure in closed form, solves the coupled Brownian BSDE system
by least-squares Monte Carlo, property-tests the risk-measure axioms, and
verifies the duality/penalty statements exactly on a finite tree.
"""

__version__ = "0.1.0"
