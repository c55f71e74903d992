"""Variational-inference and message-passing schemas."""

from __future__ import annotations

from typing import Literal

import msgspec
import numpy as np

from app.schemas.base import ArrayStruct, BaseStruct

__all__ = (
    "BernoulliMessage",
    "MessageGrid",
    "Moments",
    "RefineResult",
    "SupportEstimate",
    "SupportPolicy",
    "VariationalState",
)


class VariationalState(ArrayStruct):
    """Parameters of the factorized posterior q(x) q(rho) q(s) q(kappa)."""

    mu: np.ndarray
    sigma2: np.ndarray
    a_tilde: np.ndarray
    b_tilde: np.ndarray
    lambda_tilde: np.ndarray
    c_tilde: float
    d_tilde: float

    def flatten(self) -> np.ndarray:
        """All parameters as one real vector, used for the convergence criterion."""
        return np.concatenate(
            [
                self.mu.real,
                self.mu.imag,
                self.sigma2,
                self.a_tilde,
                self.b_tilde,
                self.lambda_tilde,
                [self.c_tilde, self.d_tilde],
            ],
        )


class Moments(ArrayStruct):
    rho_mean: np.ndarray
    kappa_mean: float
    s_mean: np.ndarray
    ln_rho_mean: np.ndarray
    x2_mean: np.ndarray
    ln_kappa_mean: float


class SupportPolicy(BaseStruct, kw_only=True, omit_defaults=True):
    """How the support is read off the posterior mean."""

    kind: Literal["threshold", "energy"] = "threshold"
    multiple: float = 2.5
    """Noise-power multiple for the threshold policy, normally within [2, 3]."""
    energy_fraction: float = 0.95
    energy_floor: bool = True
    """Threshold policy also keeps the smallest set of largest entries holding ``energy_fraction``."""


class SupportEstimate(ArrayStruct):
    indices: np.ndarray
    threshold: float
    policy: SupportPolicy | None = None
    fallback: bool = False

    @property
    def size(self) -> int:
        return int(self.indices.size)


class BernoulliMessage(ArrayStruct):
    """Per-element probability that the support variable is active."""

    active_prob: np.ndarray
    flagged: bool = False

    @property
    def n(self) -> int:
        return int(self.active_prob.shape[0])


class MessageGrid(ArrayStruct):
    gamma_l: np.ndarray
    gamma_r: np.ndarray
    gamma_t: np.ndarray
    gamma_b: np.ndarray
    residual: float = msgspec.field(default=float("inf"))
    rounds: int = 0


class RefineResult(ArrayStruct):
    mu: np.ndarray
    objective: list[float]
    stalled: bool = False
