"""Simulation, exact oracles and statistical checks for the metric coalescent."""
from .model import (
    Constant,
    CoordinateProjection,
    DiscreteMeasure,
    Euclidean,
    FiniteSpace,
    Interval,
    InversePower,
    PiecewiseLinear,
    Tabulated,
    UniformBox,
)
from .stats import TestConfig

__version__ = "0.1.0"

__all__ = [
    "Constant",
    "CoordinateProjection",
    "DiscreteMeasure",
    "Euclidean",
    "FiniteSpace",
    "Interval",
    "InversePower",
    "PiecewiseLinear",
    "Tabulated",
    "TestConfig",
    "UniformBox",
]
