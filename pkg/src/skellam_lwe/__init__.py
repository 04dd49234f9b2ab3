"""LWE with Skellam errors: samplers, private stream aggregation, DP planning and a lossy-code lab."""

from .dp import DpBudget, ParameterPlan, QuerySpec, plan_parameters
from .ring import Modulus, Residue, ZqMatrix, ZqVector
from .samplers import GaussianParams, SkellamParams, sample_discrete_gaussian, sample_skellam

__all__ = [
    "DpBudget",
    "GaussianParams",
    "Modulus",
    "ParameterPlan",
    "QuerySpec",
    "Residue",
    "SkellamParams",
    "ZqMatrix",
    "ZqVector",
    "plan_parameters",
    "sample_discrete_gaussian",
    "sample_skellam",
]

__version__ = "0.1.0"
