"""Spin-flip laser model under optical injection.

Time-domain simulation, equilibrium branches for weak and strong injection,
linear stability, and a complex-valued network built on the injection-locking
activation.
"""

from spinflip.model import (
    LaserParams,
    LaserState,
    PhaseData,
    ToleranceSet,
    REFERENCE_PARAMS,
)

__version__ = "0.1.0"

__all__ = [
    "LaserParams",
    "LaserState",
    "PhaseData",
    "ToleranceSet",
    "REFERENCE_PARAMS",
    "__version__",
]
