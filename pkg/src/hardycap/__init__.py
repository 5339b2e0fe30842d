"""Weighted capacities, Whitney covers and Hardy-Sobolev experiments on uniform grids."""

__version__ = "0.1.0"

from .capacity import CapacityProblem, SolverConfig, radial_condenser_capacity, solve_capacity
from .geometry import Annulus, Ball, Box, GridDomain, build_domain, l_shape
from .hardy_sobolev import HSParams, hs_lhs, hs_rhs
from .whitney import build_cover, build_partition, verify_cover

__all__ = [
    "Annulus", "Ball", "Box", "CapacityProblem", "GridDomain", "HSParams", "SolverConfig",
    "build_cover", "build_domain", "build_partition", "hs_lhs", "hs_rhs", "l_shape",
    "radial_condenser_capacity", "solve_capacity", "verify_cover",
]
