"""Simulation and verification laboratory for regime-switching processes.

Subpackages cover the finite-state environment chain, exact
piecewise-exponential path functionals, the perpetuity fixed-point
engine, the switching Ornstein-Uhlenbeck model with its stationary
scale-mixture sampler, sqrt(t)-scaled limit experiments for the
divergent regimes, and the CIR / SIS applications.
"""

from . import appmodels, chain, limits, ou, pathfunc, sre, stats, streams  # noqa: F401
from .chain import (  # noqa: F401
    ChainPath,
    RateMatrix,
    RenewalCycles,
    decompose_cycles,
    sample_cycles,
    simulate_path,
    stationary_distribution,
    validate_rates,
)
from .ou import OUModel, simulate, stationary_sampler  # noqa: F401

__version__ = "0.1.0"
