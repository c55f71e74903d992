"""Experiment harness schemas."""

from __future__ import annotations

from typing import Literal

import msgspec

from app.schemas.base import BaseStruct
from app.schemas.solver import Algorithm, SolverConfig

__all__ = ("RESULTS_SCHEMA_VERSION", "BenchmarkRecord", "ExperimentSpec", "MetricRecord", "SelfTestCheck")

RESULTS_SCHEMA_VERSION = 1

Scenario = Literal["convergence", "compression", "snr", "paths", "prior", "grid"]


class ExperimentSpec(BaseStruct, kw_only=True, forbid_unknown_fields=True):
    """A grid of experiment cells, one per (seed, snr, algorithm, compression, paths, refinement)."""

    scenario: Scenario = "convergence"
    nx: int = 8
    ny: int = 8
    compression_ratios: list[int] = msgspec.field(default_factory=lambda: [4])
    n1: int = 16
    n2: int = 8
    k_paths: list[int] = msgspec.field(default_factory=lambda: [3])
    snr_db: list[float] = msgspec.field(default_factory=lambda: [10.0])
    seeds: list[int] = msgspec.field(default_factory=lambda: list(range(20)))
    algorithms: list[Algorithm] = msgspec.field(default_factory=lambda: ["sc_vbi"])
    prior: Literal["iid", "markov2d"] = "markov2d"
    grid_refinement: list[bool] = msgspec.field(default_factory=lambda: [True])
    off_grid: bool = True
    clustered_truth: bool = False
    """Sample the true support from the Markov prior instead of drawing isolated paths."""
    mean_run: float = 3.0
    noise_free: bool = False
    solver: SolverConfig | None = None
    output: str | None = None

    @property
    def nr(self) -> int:
        return self.nx * self.ny


class MetricRecord(BaseStruct, kw_only=True):
    """One CSV row. Field order is the column order."""

    schema_version: int = RESULTS_SCHEMA_VERSION
    scenario: str
    kind: Literal["iteration", "final"]
    seed: int
    iteration: int
    nmse_db: float
    free_energy: float
    support_size: int
    wall_ms: float
    algorithm: str
    snr_db: float
    compression_ratio: int
    k_paths: int
    prior: str
    grid_refinement: bool


class BenchmarkRecord(BaseStruct, kw_only=True):
    algorithm: str
    n: int
    m: int
    support_size: int
    median_ms: float
    repeats: int


class SelfTestCheck(BaseStruct, kw_only=True):
    name: str
    value: float
    tolerance: float
    passed: bool
