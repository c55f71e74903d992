from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np
import pytest

from app.lib import settings as app_settings
from app.schemas import BernoulliMessage, ObservationModel
from app.services.prior import default_hyperparams
from app.services.scvbi import initial_state

if TYPE_CHECKING:
    from collections.abc import Callable

    from pytest import MonkeyPatch

    from app.schemas import PriorHyperParams, VariationalState


@pytest.fixture(autouse=True)
def _patch_settings(monkeypatch: MonkeyPatch) -> None:
    """Path the settings."""

    settings = app_settings.Settings.from_env(".env.testing")

    def get_settings(dotenv_filename: str = ".env.testing") -> app_settings.Settings:
        return settings

    monkeypatch.setattr(app_settings, "get_settings", get_settings)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240607)


def complex_gaussian(rng: np.random.Generator, *shape: int) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


@pytest.fixture
def make_problem() -> Callable[..., tuple[ObservationModel, np.ndarray]]:
    """Random compressive-sensing instance with unit-norm-on-average columns."""

    def _make(m: int = 16, n: int = 64, k: int = 3, noise: float = 0.05, seed: int = 0) -> tuple[ObservationModel, np.ndarray]:
        gen = np.random.default_rng(seed)
        sensing = complex_gaussian(gen, m, n) / np.sqrt(m)
        x = np.zeros(n, dtype=np.complex128)
        x[gen.choice(n, size=k, replace=False)] = complex_gaussian(gen, k)
        y = sensing @ x + noise * complex_gaussian(gen, m)
        return ObservationModel(sensing=sensing, y=y), x

    return _make


@pytest.fixture
def make_state() -> Callable[..., tuple[VariationalState, PriorHyperParams, BernoulliMessage]]:
    """Initial variational state, default hyperparameters and a flat prior message for a model."""

    def _make(model: ObservationModel, lam: float = 0.05) -> tuple[VariationalState, PriorHyperParams, BernoulliMessage]:
        hyper = default_hyperparams(model.n)
        prior_msg = BernoulliMessage(active_prob=np.full(model.n, lam))
        return initial_state(model, hyper, prior_msg), hyper, prior_msg

    return _make
