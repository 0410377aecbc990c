"""wavetail: frequency-domain machinery for late-time wave decay.

Numerical and symbolic tooling for stationary, asymptotically flat model
backgrounds: mode-reduced resolvents with outgoing boundary conditions,
zero-energy Mellin/residue expansions, Neumann expansion of the twisted
resolvent, frequency-split time synthesis, norm evaluators for weighted
b-Sobolev / local-energy spaces, and an exact-arithmetic function-space
rule engine.
"""

from .grids import GridFunction, radial_grid
from .operators import (
    RadialModeOperator,
    ReducedOperator,
    SphericalMetric,
    build_operator,
    mode_reduce,
)
from .profiles import RadialProfile, symbol_order_check

__version__ = "0.1.0"

__all__ = [
    "GridFunction",
    "RadialModeOperator",
    "RadialProfile",
    "ReducedOperator",
    "SphericalMetric",
    "build_operator",
    "mode_reduce",
    "radial_grid",
    "symbol_order_check",
    "__version__",
]
