"""Alternating estimation: SC-VBI, structured sparse inference and grid refinement in turn."""

from __future__ import annotations

import math
import time
from typing import TYPE_CHECKING

import numpy as np
import structlog

from app.lib.exceptions import ApplicationError, InputError, SolveAborted
from app.schemas import (
    BernoulliMessage,
    GridLikelihoodContext,
    IterationRecord,
    OmpPath,
    SolveResult,
    SupportEstimate,
)
from app.services.grid import grid_ascent
from app.services.model import channel_from_grid, nmse_db, refresh_columns
from app.services.prior import prior_marginal, support_size, validate_support_prior
from app.services.scvbi import column_norms2, free_energy, initial_state, relative_gradient_norm, scvbi_round
from app.services.ssi import structured_prior_message

if TYPE_CHECKING:
    from app.schemas import (
        ChannelTruth,
        ObservationModel,
        PriorHyperParams,
        SolverConfig,
        SupportPrior,
        VariationalState,
    )

logger = structlog.get_logger()

OMP_RESIDUAL_TOL = 1e-12


def orthogonal_matching_pursuit(sensing: np.ndarray, y: np.ndarray, k_max: int) -> OmpPath:
    """Greedy selection by normalized correlation with a least-squares refit after each pick.

    Stops after ``k_max`` picks or once the residual vanishes.

    Raises:
        InputError: If ``k_max`` is negative or exceeds the number of measurements.
    """
    m, n = sensing.shape
    if not 0 <= k_max <= m:
        msg = f"k_max={k_max} must lie in [0, M={m}]"
        raise InputError(msg)
    norms = np.sqrt(column_norms2(sensing))
    usable = norms > 0
    y_norm = float(np.linalg.norm(y))
    residual = np.asarray(y, dtype=np.complex128).copy()
    selected: list[int] = []
    residual_norms = [y_norm]
    coef = np.zeros(0, dtype=np.complex128)
    for _ in range(k_max):
        if residual_norms[-1] <= OMP_RESIDUAL_TOL * max(y_norm, 1.0):
            break
        corr = np.zeros(n)
        corr[usable] = np.abs(sensing[:, usable].conj().T @ residual) / norms[usable]
        corr[selected] = -np.inf
        best = int(np.argmax(corr))
        if not corr[best] > 0:
            break
        selected.append(best)
        a_s = sensing[:, selected]
        coef, *_ = np.linalg.lstsq(a_s, y, rcond=None)
        residual = y - a_s @ coef
        residual_norms.append(float(np.linalg.norm(residual)))
    coefficients = np.zeros(n, dtype=np.complex128)
    coefficients[selected] = coef
    return OmpPath(selected=selected, coefficients=coefficients, residual_norms=residual_norms, residual=residual)


def omp_initial_support(sensing: np.ndarray, y: np.ndarray, k_max: int) -> SupportEstimate:
    path = orthogonal_matching_pursuit(sensing, y, k_max)
    return SupportEstimate(indices=np.sort(np.asarray(path.selected, dtype=np.intp)), threshold=0.0)


def default_omp_k_max(m: int, expected_sparsity: float) -> int:
    """``min(M // 2, 2 * ceil(expected sparsity))``, at least 1."""
    return max(1, min(m // 2, 2 * math.ceil(expected_sparsity)))


def _initial_support(model: ObservationModel, config: SolverConfig, prior_msg: BernoulliMessage) -> SupportEstimate:
    if config.initial_support is not None:
        indices = np.unique(np.asarray(config.initial_support, dtype=np.intp))
        if indices.size and (indices[0] < 0 or indices[-1] >= model.n):
            msg = f"initial support indices must lie in [0, {model.n})"
            raise InputError(msg)
        return SupportEstimate(indices=indices, threshold=0.0)
    k_max = config.omp_k_max
    if k_max is None:
        k_max = default_omp_k_max(model.m, float(np.sum(prior_msg.active_prob)))
    return omp_initial_support(model.sensing, model.y, k_max)


def _relative_change(new: np.ndarray, old: np.ndarray) -> float:
    scale = float(np.linalg.norm(old))
    return float(np.linalg.norm(new - old)) / scale if scale > 0 else float("inf")


def _estimate_error(
    state: VariationalState, model: ObservationModel, truth: ChannelTruth | None
) -> tuple[float | None, np.ndarray | None]:
    h_hat = None
    if model.grid is not None and model.array_shape is not None:
        h_hat = channel_from_grid(model.grid, state.mu, *model.array_shape)
    if truth is None:
        return None, h_hat
    if h_hat is not None:
        return nmse_db(h_hat, truth.h), h_hat
    return nmse_db(state.mu, truth.x_true), h_hat


def solve(
    model: ObservationModel,
    hyper: PriorHyperParams,
    support_prior: SupportPrior,
    config: SolverConfig,
    truth: ChannelTruth | None = None,
) -> SolveResult:
    """Alternate SC-VBI, support message passing and grid refinement until the state settles.

    Each outer iteration runs SC-VBI (repeated ``first_round_scvbi_repeats`` times on the
    first iteration), turns its extrinsic activity message into a new prior message via the
    support prior and, for MIMO models, moves the supported grid points uphill in likelihood.
    The loop stops when the relative change of all variational parameters drops below
    ``stop_tol`` or after ``max_iters`` iterations.

    Args:
        model: Observation model; only MIMO models carry a refinable grid.
        hyper: Gamma hyperparameters of the prior.
        support_prior: I.i.d. or 2D Markov support prior.
        config: Solver configuration.
        truth: Ground truth; when given every iteration records its NMSE.

    Returns:
        The final estimate together with the per-iteration trace.

    Raises:
        InputError: If the configuration, prior and model disagree before the first iteration.
        ConfigurationError: If the configuration is invalid.
        SolveAborted: If a module fails mid-solve; ``partial_trace`` holds the finished iterations.
    """
    config.validate()
    validate_support_prior(support_prior)
    if hyper.n != model.n or support_size(support_prior) != model.n:
        msg = f"model has {model.n} unknowns, hyperparameters {hyper.n}, support prior {support_size(support_prior)}"
        raise InputError(msg)
    if model.y.shape != (model.m,):
        msg = f"measurements must have shape ({model.m},), got {model.y.shape}"
        raise InputError(msg)

    mean_solver = "exact" if config.algorithm == "ic_vbi_oracle" else "subspace"
    prior_msg = BernoulliMessage(active_prob=prior_marginal(support_prior))
    support = _initial_support(model, config, prior_msg)
    state = initial_state(model, hyper, prior_msg)
    refine = config.grid_refinement_enabled and model.refinable and config.b_theta > 0
    trace: list[IterationRecord] = []
    converged = False
    log = logger.bind(algorithm=config.algorithm, n=model.n, m=model.m)
    log.debug("Solve started", initial_support=support.size, grid_refinement=refine)

    try:
        for iteration in range(1, config.max_iters + 1):
            started = time.perf_counter()
            previous = state.flatten()
            repeats = max(1, config.first_round_scvbi_repeats) if iteration == 1 else 1
            phase = [free_energy(state, model, hyper, prior_msg)]
            for _ in range(repeats):
                state, support, extrinsic = scvbi_round(
                    state, model, hyper, prior_msg, config.b_x, config.support_policy, support, mean_solver
                )
                phase.append(free_energy(state, model, hyper, prior_msg))
            grad_norm = relative_gradient_norm(state, model)

            if config.ssi_sweeps > 0:
                prior_msg = structured_prior_message(extrinsic, support_prior, config.ssi_sweeps, config.ssi_damping)

            likelihood = None
            if refine and model.grid is not None and model.combiner is not None and model.array_shape is not None:
                ctx = GridLikelihoodContext(
                    x_hat_s=state.mu[support.indices],
                    kappa_hat=state.c_tilde / state.d_tilde,
                    y=model.y,
                    support=support.indices,
                    combiner=model.combiner,
                    array_shape=model.array_shape,
                )
                ascent = grid_ascent(model.grid, ctx, config.b_theta)
                model = refresh_columns(model, ascent.grid, support.indices)
                likelihood = ascent.likelihood[-1]

            xi_change = _relative_change(state.flatten(), previous)
            error, _ = _estimate_error(state, model, truth)
            record = IterationRecord(
                iteration=iteration,
                free_energy=phase[-1],
                phase_free_energy=phase,
                grad_norm=grad_norm,
                support_size=support.size,
                grid_likelihood=likelihood,
                nmse_db=error,
                wall_ms=(time.perf_counter() - started) * 1000.0,
                xi_change=xi_change,
            )
            trace.append(record)
            log.debug(
                "Iteration complete",
                iteration=iteration,
                free_energy=record.free_energy,
                support_size=record.support_size,
                xi_change=xi_change,
                nmse_db=error,
            )
            if xi_change < config.stop_tol:
                converged = True
                break
    except ApplicationError as e:
        log.warning("Solve aborted", iteration=len(trace) + 1, error=e.detail)
        msg = f"solve aborted at iteration {len(trace) + 1}: {e.detail}"
        raise SolveAborted(msg, partial_trace=trace) from e

    _, h_hat = _estimate_error(state, model, None)
    log.info("Solve finished", iterations=len(trace), converged=converged, support_size=support.size)
    return SolveResult(
        x_hat=state.mu,
        support=support,
        grid_hat=model.grid,
        kappa_hat=state.c_tilde / state.d_tilde,
        trace=trace,
        state=state,
        converged=converged,
        iterations=len(trace),
        h_hat=h_hat,
    )


class AlternatingEstimator:
    """Binds prior and configuration so repeated solves only pass the model."""

    def __init__(self, hyper: PriorHyperParams, support_prior: SupportPrior, config: SolverConfig) -> None:
        """Initialize the estimator.

        Args:
            hyper: Gamma hyperparameters of the prior.
            support_prior: I.i.d. or 2D Markov support prior.
            config: Solver configuration, validated here.
        """
        self.hyper = hyper
        self.support_prior = validate_support_prior(support_prior)
        self.config = config.validate()

    def solve(self, model: ObservationModel, truth: ChannelTruth | None = None) -> SolveResult:
        return solve(model, self.hyper, self.support_prior, self.config, truth)
