"""Alternating-estimator configuration and result schemas."""

from __future__ import annotations

from typing import Literal

import msgspec
import numpy as np

from app.lib.exceptions import ConfigurationError
from app.schemas.base import ArrayStruct, BaseStruct
from app.schemas.inference import SupportEstimate, SupportPolicy, VariationalState
from app.schemas.model import DynamicGrid

__all__ = ("IterationRecord", "OmpPath", "SolveResult", "SolverConfig")

Algorithm = Literal["sc_vbi", "ic_vbi_oracle"]


class SolverConfig(BaseStruct, kw_only=True, omit_defaults=True):
    """Knobs of the alternating estimator.

    Defaults mirror ``SolverSettings``; use :meth:`from_settings` to pick up environment
    overrides.
    """

    max_iters: int = 50
    b_x: int = 3
    b_theta: int = 2
    ssi_sweeps: int = 5
    ssi_damping: float = 0.3
    support_policy: SupportPolicy = msgspec.field(default_factory=SupportPolicy)
    first_round_scvbi_repeats: int = 5
    stop_tol: float = 1e-6
    grid_refinement_enabled: bool = True
    rng_seed: int = 0
    algorithm: Algorithm = "sc_vbi"
    initial_support: list[int] | None = None
    """Known support used instead of the OMP initialization."""
    omp_k_max: int | None = None

    @classmethod
    def from_settings(cls, **overrides: object) -> SolverConfig:
        from app.lib.settings import get_settings

        solver = get_settings().solver
        config = cls(
            max_iters=solver.MAX_ITERS,
            b_x=solver.B_X,
            b_theta=solver.B_THETA,
            ssi_sweeps=solver.SSI_SWEEPS,
            ssi_damping=solver.SSI_DAMPING,
            support_policy=SupportPolicy(multiple=solver.SUPPORT_MULTIPLE),
            first_round_scvbi_repeats=solver.FIRST_ROUND_REPEATS,
            stop_tol=solver.STOP_TOL,
            grid_refinement_enabled=solver.GRID_REFINEMENT,
        )
        return msgspec.structs.replace(config, **overrides)

    def validate(self) -> SolverConfig:
        """Check the invariants and return ``self``.

        Raises:
            ConfigurationError: If any count or tolerance is out of range.
        """
        if self.max_iters < 1:
            msg = f"max_iters must be >= 1, got {self.max_iters}"
            raise ConfigurationError(msg)
        counts = {
            "b_x": self.b_x,
            "b_theta": self.b_theta,
            "ssi_sweeps": self.ssi_sweeps,
            "first_round_scvbi_repeats": self.first_round_scvbi_repeats,
        }
        for name, value in counts.items():
            if value < 0:
                msg = f"{name} must be >= 0, got {value}"
                raise ConfigurationError(msg)
        if self.stop_tol <= 0:
            msg = f"stop_tol must be > 0, got {self.stop_tol}"
            raise ConfigurationError(msg)
        if not 0.0 <= self.ssi_damping < 1.0:
            msg = f"ssi_damping must lie in [0, 1), got {self.ssi_damping}"
            raise ConfigurationError(msg)
        if self.support_policy.kind == "energy" and not 0.0 < self.support_policy.energy_fraction <= 1.0:
            msg = "energy_fraction must lie in (0, 1]"
            raise ConfigurationError(msg)
        if self.support_policy.kind == "threshold" and self.support_policy.multiple <= 0:
            msg = "support threshold multiple must be positive"
            raise ConfigurationError(msg)
        return self


class IterationRecord(BaseStruct, kw_only=True):
    iteration: int
    free_energy: float
    phase_free_energy: list[float]
    """Free energy after each SC-VBI round of this iteration, preceded by its value on entry."""
    grad_norm: float
    support_size: int
    grid_likelihood: float | None = None
    nmse_db: float | None = None
    wall_ms: float = 0.0
    xi_change: float = float("inf")


class SolveResult(ArrayStruct):
    x_hat: np.ndarray
    support: SupportEstimate
    grid_hat: DynamicGrid | None
    kappa_hat: float
    trace: list[IterationRecord]
    state: VariationalState
    converged: bool
    iterations: int
    h_hat: np.ndarray | None = None


class OmpPath(ArrayStruct):
    """Greedy selection order, least-squares coefficients and residual norms (one per step, plus the start)."""

    selected: list[int]
    coefficients: np.ndarray
    residual_norms: list[float]
    residual: np.ndarray
