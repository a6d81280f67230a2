"""Gradient flows, evanescent orbits of the squared-gradient system, and
Eikonal reconstruction of convex potentials."""

from ._evanflow import (
    Field,
    InputError,
    NumericDomainError,
    PotentialPair,
    Trajectory,
    convexity_criterion_check,
    cross_validate,
    determination_check,
    evanescence_measures,
    f_field,
    gradient_flow,
    grid_points,
    minimize_action,
    monotone_gradient,
    potential,
    probe_points,
    quadratic,
    reconstruct,
    run_cli,
    second_order_flow,
    shoot_evanescent,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
