from __future__ import annotations

import numpy as np
import structlog

from app.lib.log import add_solver_context
from app.schemas import PriorHyperParams, SupportEstimate, SupportPolicy, VariationalState
from app.services.prior import default_hyperparams
from app.utils.serialization import from_json, to_json


def test_complex_state_round_trip() -> None:
    state = VariationalState(
        mu=np.array([1.0 + 2.0j, -0.5j, 0.0]),
        sigma2=np.array([0.1, 0.2, 0.3]),
        a_tilde=np.ones(3),
        b_tilde=np.array([1.0, 2.0, 1e-5]),
        lambda_tilde=np.array([0.9, 0.1, 0.5]),
        c_tilde=17.0,
        d_tilde=3.5,
    )
    decoded = from_json(to_json(state), VariationalState)
    np.testing.assert_array_equal(decoded.mu, state.mu)
    np.testing.assert_array_equal(decoded.b_tilde, state.b_tilde)
    assert decoded.c_tilde == state.c_tilde


def test_hyperparameters_round_trip() -> None:
    hyper = default_hyperparams(4)
    decoded = from_json(to_json(hyper), PriorHyperParams)
    np.testing.assert_array_equal(decoded.b_bar, hyper.b_bar)
    assert decoded.d == hyper.d


def test_integer_indices_keep_their_dtype() -> None:
    support = SupportEstimate(indices=np.array([2, 5], dtype=np.intp), threshold=0.25, policy=SupportPolicy(kind="energy"))
    decoded = from_json(to_json(support), SupportEstimate)
    assert np.issubdtype(decoded.indices.dtype, np.integer)
    np.testing.assert_array_equal(decoded.indices, [2, 5])
    assert decoded.policy == SupportPolicy(kind="energy")


def test_numpy_scalars_encode_as_numbers() -> None:
    assert from_json(to_json({"x": np.float64(1.5), "z": np.complex128(1 - 2j)})) == {
        "x": 1.5,
        "z": {"real": 1.0, "imag": -2.0},
    }


def test_log_processor_unwraps_numpy_scalars() -> None:
    event = add_solver_context(structlog.get_logger(), "info", {"event": "x", "n": np.int64(3), "v": np.ones(2)})
    assert type(event["n"]) is int
    assert isinstance(event["v"], np.ndarray)
