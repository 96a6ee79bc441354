"""Neumann p(x)-Laplacian with p = infinity on a subdomain: truncated energy
minimisation, k -> infinity continuation and certification of the limit."""

__version__ = "0.1.0"

from .domain import DomainSpec, Grid, RegionLabel, build_grid  # noqa: E402
from .exponent import truncate, validate  # noqa: E402
from .functional import boundary_trace, energy_Iinf, energy_Ik  # noqa: E402
from .solver import (ContinuationSchedule, SolverConfig, extract_limit,  # noqa: E402
                     minimize_Ik, run_continuation)

__all__ = ["DomainSpec", "Grid", "RegionLabel", "build_grid", "validate", "truncate",
           "boundary_trace", "energy_Ik", "energy_Iinf", "SolverConfig",
           "ContinuationSchedule", "minimize_Ik", "run_continuation", "extract_limit"]
