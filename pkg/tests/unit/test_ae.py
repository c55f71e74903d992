from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np
import pytest

from app.lib.exceptions import ConfigurationError, InputError, NumericalError, SolveAborted
from app.schemas import BernoulliMessage, IIDSupportPrior, ObservationModel, SolverConfig
from app.services import ae
from app.services.ae import AlternatingEstimator, default_omp_k_max, omp_initial_support, orthogonal_matching_pursuit, solve
from app.services.harness import build_instance, build_support_prior
from app.services.prior import default_hyperparams
from app.services.scvbi import QuadraticSurrogate, compute_moments, exact_icvbi_mean, initial_state, scvbi_round

if TYPE_CHECKING:
    from collections.abc import Callable

    from pytest_mock import MockerFixture


def _iid(n: int, lam: float = 0.05) -> IIDSupportPrior:
    return IIDSupportPrior(lam=np.full(n, lam))


def test_omp_uses_normalized_correlation() -> None:
    sensing = np.array([[2.0, 0.0], [0.0, 1.0]], dtype=np.complex128)
    path = orthogonal_matching_pursuit(sensing, np.array([1.0, 1.1], dtype=np.complex128), 1)
    assert path.selected == [1]


def test_omp_recovers_one_sparse_vector(make_problem: Callable[..., tuple[ObservationModel, np.ndarray]]) -> None:
    model, _ = make_problem(m=16, n=64)
    y = (1.5 - 0.5j) * model.sensing[:, 23]
    path = orthogonal_matching_pursuit(model.sensing, y, 4)
    assert path.selected == [23]
    assert path.coefficients[23] == pytest.approx(1.5 - 0.5j)
    assert path.residual_norms[-1] < 1e-10


def test_omp_residuals_are_non_increasing(make_problem: Callable[..., tuple[ObservationModel, np.ndarray]]) -> None:
    model, _ = make_problem(m=16, n=64, k=5, noise=0.1)
    path = orthogonal_matching_pursuit(model.sensing, model.y, 8)
    assert len(path.selected) == 8
    assert len(set(path.selected)) == 8
    assert np.all(np.diff(path.residual_norms) <= 1e-12)
    support = omp_initial_support(model.sensing, model.y, 8)
    np.testing.assert_array_equal(support.indices, sorted(path.selected))


@pytest.mark.parametrize("k_max", [-1, 17])
def test_omp_rejects_bad_pick_counts(k_max: int, make_problem: Callable[..., tuple[ObservationModel, np.ndarray]]) -> None:
    model, _ = make_problem(m=16)
    with pytest.raises(InputError):
        orthogonal_matching_pursuit(model.sensing, model.y, k_max)


@pytest.mark.parametrize(("m", "expected", "k_max"), [(32, 3.0, 6), (8, 3.0, 4), (2, 0.1, 1), (32, 2.4, 6)])
def test_default_omp_k_max(m: int, expected: float, k_max: int) -> None:
    assert default_omp_k_max(m, expected) == k_max


def test_solve_keeps_phase_free_energy_monotone(make_problem: Callable[..., tuple[ObservationModel, np.ndarray]]) -> None:
    model, x = make_problem(m=32, n=128, k=4, noise=0.1)
    config = SolverConfig(max_iters=10, grid_refinement_enabled=False)
    result = solve(model, default_hyperparams(model.n), _iid(model.n, 4 / 128), config)
    assert result.iterations == len(result.trace) >= 1
    for record in result.trace:
        phase = np.asarray(record.phase_free_energy)
        assert np.all(np.diff(phase) <= 1e-9)
        assert record.free_energy == phase[-1]
        assert record.grid_likelihood is None
        assert record.nmse_db is None
    assert len(result.trace[0].phase_free_energy) == config.first_round_scvbi_repeats + 1
    assert result.h_hat is None
    assert result.x_hat.shape == x.shape


def test_converged_solve_is_stationary(make_problem: Callable[..., tuple[ObservationModel, np.ndarray]]) -> None:
    model, _ = make_problem(m=32, n=128, k=5, noise=0.1, seed=7)
    hyper = default_hyperparams(model.n)
    prior = _iid(model.n, 5 / 128)
    config = SolverConfig(max_iters=200, grid_refinement_enabled=False, stop_tol=1e-10)
    result = solve(model, hyper, prior, config)
    assert result.trace[-1].grad_norm < 1e-6
    state, _, _ = scvbi_round(
        result.state, model, hyper, BernoulliMessage(active_prob=prior.lam), config.b_x, config.support_policy, result.support
    )
    assert np.linalg.norm(state.mu - result.state.mu) / np.linalg.norm(result.state.mu) < 1e-6


def test_solve_is_deterministic(make_problem: Callable[..., tuple[ObservationModel, np.ndarray]]) -> None:
    model, _ = make_problem(m=24, n=96, k=3)
    config = SolverConfig(max_iters=6, grid_refinement_enabled=False)
    runs = [solve(model, default_hyperparams(model.n), _iid(model.n), config) for _ in range(2)]
    np.testing.assert_array_equal(runs[0].x_hat, runs[1].x_hat)
    np.testing.assert_array_equal(runs[0].support.indices, runs[1].support.indices)
    assert [r.free_energy for r in runs[0].trace] == [r.free_energy for r in runs[1].trace]


def test_noise_free_one_sparse_recovery(make_problem: Callable[..., tuple[ObservationModel, np.ndarray]]) -> None:
    model, _ = make_problem(m=16, n=64)
    single = ObservationModel(sensing=model.sensing, y=2.0 * model.sensing[:, 11])
    config = SolverConfig(initial_support=[11], grid_refinement_enabled=False, max_iters=30)
    result = AlternatingEstimator(default_hyperparams(64), _iid(64), config).solve(single)
    x_true = np.zeros(64, dtype=np.complex128)
    x_true[11] = 2.0
    assert np.linalg.norm(result.x_hat - x_true) / 2.0 < 1e-2
    assert 11 in result.support.indices


def test_oracle_runs_the_exact_mean(make_problem: Callable[..., tuple[ObservationModel, np.ndarray]]) -> None:
    model, _ = make_problem()
    hyper = default_hyperparams(model.n)
    prior = _iid(model.n)
    config = SolverConfig(algorithm="ic_vbi_oracle", max_iters=1, first_round_scvbi_repeats=1, ssi_sweeps=0)
    result = solve(model, hyper, prior, config)
    state = initial_state(model, hyper, BernoulliMessage(active_prob=prior.lam))
    expected = exact_icvbi_mean(QuadraticSurrogate.from_moments(model, compute_moments(state)), model.y)
    np.testing.assert_allclose(result.x_hat, expected, atol=1e-12)


def test_solve_refines_the_grid_for_mimo_models() -> None:
    model, truth = build_instance(nx=4, ny=4, n1=8, n2=4, compression_ratio=2, k_paths=2, snr_db=20.0, seed=1)
    config = SolverConfig(max_iters=4)
    prior = build_support_prior("markov2d", 8, 4, 2)
    result = solve(model, default_hyperparams(model.n), prior, config, truth)
    grid = result.grid_hat
    assert grid is not None
    assert np.any(grid.azimuth != grid.az_anchor) or np.any(grid.elevation != grid.el_anchor)
    assert np.all(np.abs(grid.azimuth - grid.az_anchor) <= grid.az_step + 1e-12)
    assert np.all(np.abs(grid.elevation - grid.el_anchor) <= grid.el_step + 1e-12)
    assert result.h_hat is not None
    assert result.h_hat.shape == truth.h.shape
    assert all(r.grid_likelihood is not None and r.nmse_db is not None for r in result.trace)
    # the input model keeps its grid
    np.testing.assert_array_equal(model.grid.azimuth, model.grid.az_anchor)


def test_solve_aborts_with_partial_trace(
    mocker: MockerFixture, make_problem: Callable[..., tuple[ObservationModel, np.ndarray]]
) -> None:
    model, _ = make_problem()
    original = ae.scvbi_round
    calls = {"n": 0}

    def failing_round(*args: object, **kwargs: object) -> object:
        calls["n"] += 1
        if calls["n"] == 2:
            msg = "injected failure"
            raise NumericalError(msg)
        return original(*args, **kwargs)

    mocker.patch.object(ae, "scvbi_round", side_effect=failing_round)
    config = SolverConfig(max_iters=5, first_round_scvbi_repeats=1, stop_tol=1e-300, grid_refinement_enabled=False)
    with pytest.raises(SolveAborted) as exc_info:
        solve(model, default_hyperparams(model.n), _iid(model.n), config)
    assert len(exc_info.value.partial_trace) == 1
    assert exc_info.value.partial_trace[0].iteration == 1
    assert isinstance(exc_info.value.__cause__, NumericalError)


@pytest.mark.parametrize(
    "overrides",
    [{"max_iters": 0}, {"b_x": -1}, {"ssi_damping": 1.0}, {"stop_tol": 0.0}],
)
def test_solve_rejects_invalid_config(
    overrides: dict[str, object], make_problem: Callable[..., tuple[ObservationModel, np.ndarray]]
) -> None:
    model, _ = make_problem()
    with pytest.raises(ConfigurationError):
        solve(model, default_hyperparams(model.n), _iid(model.n), SolverConfig(**overrides))  # type: ignore[arg-type]


def test_solve_rejects_mismatched_prior(make_problem: Callable[..., tuple[ObservationModel, np.ndarray]]) -> None:
    model, _ = make_problem(n=64)
    with pytest.raises(InputError):
        solve(model, default_hyperparams(64), _iid(32), SolverConfig())
    with pytest.raises(InputError):
        solve(model, default_hyperparams(64), _iid(64), SolverConfig(initial_support=[70]))
