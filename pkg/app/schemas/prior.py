"""Sparse prior schemas."""

from __future__ import annotations

from typing import TypeAlias

import numpy as np

from app.schemas.base import ArrayStruct, BaseStruct

__all__ = ("IIDSupportPrior", "Markov2DSupportPrior", "PriorHyperParams", "SupportPrior")


class PriorHyperParams(ArrayStruct):
    """Gamma hyperparameters of the three-layer prior and the noise precision.

    ``a/b`` governs the precision of active coefficients, ``a_bar/b_bar`` that of inactive
    ones; ``c, d`` is the Gamma prior on the noise precision.
    """

    a: np.ndarray
    b: np.ndarray
    a_bar: np.ndarray
    b_bar: np.ndarray
    c: float
    d: float

    @property
    def n(self) -> int:
        return int(self.a.shape[0])


class IIDSupportPrior(ArrayStruct, tag="iid"):
    lam: np.ndarray


class Markov2DSupportPrior(BaseStruct, kw_only=True, tag="markov2d"):
    """Support prior with one Markov chain along each grid axis.

    Row transitions act along the elevation index ``i2``, column transitions along the
    azimuth index ``i1``. ``p11 = 1 - p10`` and ``p00 = 1 - p01`` in both directions.
    """

    p01_row: float
    p10_row: float
    p01_col: float
    p10_col: float
    lam: float
    n1: int
    n2: int

    @property
    def n(self) -> int:
        return self.n1 * self.n2


SupportPrior: TypeAlias = IIDSupportPrior | Markov2DSupportPrior
