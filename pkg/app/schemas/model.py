"""Observation-model schemas: angular grids, hybrid combiners and synthetic channels."""

from __future__ import annotations

import msgspec
import numpy as np

from app.schemas.base import ArrayStruct

__all__ = (
    "ChannelTruth",
    "DynamicGrid",
    "GridAscentResult",
    "GridGradient",
    "GridLikelihoodContext",
    "HybridCombiner",
    "ObservationModel",
)


class DynamicGrid(ArrayStruct):
    """2D angular grid; index ``q = i2 * n1 + i1`` with azimuth running fastest."""

    azimuth: np.ndarray
    elevation: np.ndarray
    n1: int
    n2: int
    az_step: float
    el_step: float
    az_anchor: np.ndarray
    el_anchor: np.ndarray

    @property
    def q(self) -> int:
        return self.n1 * self.n2

    def copy(self) -> DynamicGrid:
        return msgspec.structs.replace(self, azimuth=self.azimuth.copy(), elevation=self.elevation.copy())


class HybridCombiner(ArrayStruct):
    """Partially connected hybrid combiner ``u * F_d @ F_a``."""

    analog: np.ndarray
    digital: np.ndarray
    pilot: complex

    @property
    def nr(self) -> int:
        return int(self.analog.shape[1])

    @property
    def nrf(self) -> int:
        return int(self.analog.shape[0])

    @property
    def matrix(self) -> np.ndarray:
        """Effective ``u * F`` applied to the antenna-domain signal."""
        return self.pilot * (self.digital @ self.analog)


class ObservationModel(ArrayStruct):
    """Linear model ``y = A x + w``.

    ``grid``, ``combiner`` and ``array_shape`` are only present for the MIMO model; a bare
    sensing matrix is a plain compressive-sensing instance without grid refinement.
    """

    sensing: np.ndarray
    y: np.ndarray
    grid: DynamicGrid | None = None
    combiner: HybridCombiner | None = None
    array_shape: tuple[int, int] | None = None

    @property
    def m(self) -> int:
        return int(self.sensing.shape[0])

    @property
    def n(self) -> int:
        return int(self.sensing.shape[1])

    @property
    def refinable(self) -> bool:
        return self.grid is not None and self.combiner is not None and self.array_shape is not None


class ChannelTruth(ArrayStruct):
    gains: np.ndarray
    az_true: np.ndarray
    el_true: np.ndarray
    h: np.ndarray
    x_true: np.ndarray
    support_true: np.ndarray
    array_shape: tuple[int, int]
    kappa: float | None = None
    """Noise precision the measurements were drawn with; None until observed."""


class GridLikelihoodContext(ArrayStruct):
    """Quantities held fixed while the grid is refined over the estimated support."""

    x_hat_s: np.ndarray
    kappa_hat: float
    y: np.ndarray
    support: np.ndarray
    combiner: HybridCombiner
    array_shape: tuple[int, int]


class GridGradient(ArrayStruct):
    indices: np.ndarray
    d_azimuth: np.ndarray
    d_elevation: np.ndarray

    def max_abs(self) -> float:
        if self.indices.size == 0:
            return 0.0
        return float(max(np.max(np.abs(self.d_azimuth)), np.max(np.abs(self.d_elevation))))


class GridAscentResult(ArrayStruct):
    grid: DynamicGrid
    likelihood: list[float]
    stalled: bool = False
