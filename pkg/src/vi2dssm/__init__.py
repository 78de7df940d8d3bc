"""Permutation-equivariant two-axis state space models for multivariate series."""

from .aggregation import AggregatorSpec, compute_psi, pool
from .branches import BranchConfig, GateParams, fuse, run_branch, spectral_transform
from .coupling import CanonicalCoupling, build_canonical, decompose_to_canonical, mode_spectrum
from .errors import DimensionError, DomainError, NumericalError, ParseError, SizeError, VI2DError
from .numerics import Rng
from .scan import ScanOutput, ScanState, ordered_forward, vi_forward
from .ssm_core import ContinuousSystem, DiscreteSystem, discretize_zoh, random_system

__version__ = "0.1.0"

__all__ = [
    "AggregatorSpec",
    "BranchConfig",
    "CanonicalCoupling",
    "ContinuousSystem",
    "DimensionError",
    "DiscreteSystem",
    "DomainError",
    "GateParams",
    "NumericalError",
    "ParseError",
    "Rng",
    "ScanOutput",
    "ScanState",
    "SizeError",
    "VI2DError",
    "build_canonical",
    "compute_psi",
    "decompose_to_canonical",
    "discretize_zoh",
    "fuse",
    "mode_spectrum",
    "ordered_forward",
    "pool",
    "random_system",
    "run_branch",
    "spectral_transform",
    "vi_forward",
]
