"""Spectral analysis of random block operators on substitution-type trees."""

from .model import (
    AssumptionReport,
    DisorderModel,
    ModelError,
    ProblemConfig,
    SubstitutionModel,
    TruncatedStrip,
    VerticalOperator,
    build_truncated_strip,
    check_assumptions,
)

__version__ = "0.1.0"

__all__ = [
    "AssumptionReport",
    "DisorderModel",
    "ModelError",
    "ProblemConfig",
    "SubstitutionModel",
    "TruncatedStrip",
    "VerticalOperator",
    "build_truncated_strip",
    "check_assumptions",
]
