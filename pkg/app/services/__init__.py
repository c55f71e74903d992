"""Numerical services: observation model, prior, SC-VBI, support inference, grid refinement and harness."""

from __future__ import annotations

from app.services.ae import AlternatingEstimator, omp_initial_support, orthogonal_matching_pursuit, solve

__all__ = (
    "AlternatingEstimator",
    "omp_initial_support",
    "orthogonal_matching_pursuit",
    "solve",
)
