"""Numerical toolkit for classical Liouville integrable systems on
cotangent bundles: Poisson-commutation checks, minimax critical values and
critical sets, singleton tests for the image of the critical set under the
moment map, and numerically certified graph-shift displacement
constructions."""

__version__ = "0.1.0"

from .geometry import (
    ConfigurationSpace,
    PhasePoint,
    ScalarField,
    SpaceKind,
    circle,
    graph_shift,
    inverse_legendre,
    legendre,
    make_point,
    rotation_group,
    sphere2,
)

__all__ = [
    "ConfigurationSpace",
    "PhasePoint",
    "ScalarField",
    "SpaceKind",
    "circle",
    "sphere2",
    "rotation_group",
    "make_point",
    "legendre",
    "inverse_legendre",
    "graph_shift",
]
