"""Dynamic grid refinement over the estimated support.

The grid likelihood is ``-kappa * ||y - A_S(theta_S) x_S||^2`` with everything but the
supported angles held fixed, so it only ever touches ``|S|`` sensing columns.
"""

from __future__ import annotations

import numpy as np
import structlog

from app.lib.exceptions import InputError, NumericalError
from app.schemas import DynamicGrid, GridAscentResult, GridGradient, GridLikelihoodContext
from app.services.model import steering_matrix, steering_matrix_derivatives

logger = structlog.get_logger()

INITIAL_STEP_FRACTION = 0.1
ARMIJO_BACKTRACK = 0.5
ARMIJO_SUFFICIENT_INCREASE = 1e-4
ARMIJO_MAX_HALVINGS = 50


def _residual(grid: DynamicGrid, ctx: GridLikelihoodContext) -> np.ndarray:
    idx = ctx.support
    if idx.size == 0:
        return np.asarray(ctx.y, dtype=np.complex128)
    nx, ny = ctx.array_shape
    columns = ctx.combiner.matrix @ steering_matrix(grid.azimuth[idx], grid.elevation[idx], nx, ny)
    return ctx.y - columns @ ctx.x_hat_s


def grid_likelihood(grid: DynamicGrid, ctx: GridLikelihoodContext) -> float:
    """Log-likelihood of the grid up to a constant."""
    r = _residual(grid, ctx)
    value = -ctx.kappa_hat * float(np.vdot(r, r).real)
    if not np.isfinite(value):
        msg = "grid likelihood is not finite"
        raise NumericalError(msg)
    return value


def grid_gradient(grid: DynamicGrid, ctx: GridLikelihoodContext) -> GridGradient:
    """Partial derivatives of :func:`grid_likelihood` in the supported azimuths and elevations."""
    idx = ctx.support
    if idx.size == 0:
        empty = np.zeros(0)
        return GridGradient(indices=idx, d_azimuth=empty, d_elevation=empty.copy())
    nx, ny = ctx.array_shape
    phi = ctx.combiner.matrix
    r = _residual(grid, ctx)
    d_az, d_el = steering_matrix_derivatives(grid.azimuth[idx], grid.elevation[idx], nx, ny)
    proj_r = phi.conj().T @ r
    scale = 2.0 * ctx.kappa_hat * np.conj(ctx.x_hat_s)
    return GridGradient(
        indices=idx,
        d_azimuth=np.real(scale * (d_az.conj().T @ proj_r)),
        d_elevation=np.real(scale * (d_el.conj().T @ proj_r)),
    )


def _project_step(grid: DynamicGrid, gradient: GridGradient, step: float) -> DynamicGrid:
    """Move ``step`` along the gradient in cell units, clamped to one cell around the anchors."""
    idx = gradient.indices
    trial = grid.copy()
    trial.azimuth[idx] = np.clip(
        grid.azimuth[idx] + step * grid.az_step**2 * gradient.d_azimuth,
        grid.az_anchor[idx] - grid.az_step,
        grid.az_anchor[idx] + grid.az_step,
    )
    trial.elevation[idx] = np.clip(
        grid.elevation[idx] + step * grid.el_step**2 * gradient.d_elevation,
        grid.el_anchor[idx] - grid.el_step,
        grid.el_anchor[idx] + grid.el_step,
    )
    return trial


def grid_ascent(grid: DynamicGrid, ctx: GridLikelihoodContext, b_theta: int) -> GridAscentResult:
    """Up to ``b_theta`` projected gradient-ascent steps with Armijo backtracking.

    Angles are measured in units of their own cell, so the first trial step moves the
    steepest coordinate by a tenth of its cell whatever the azimuth and elevation spacings.
    Supported angles stay within one cell of their anchors and every other grid entry is
    untouched. The returned likelihood history starts with the entry value and is
    non-decreasing.

    Raises:
        InputError: If ``b_theta < 1``.
    """
    if b_theta < 1:
        msg = f"b_theta must be >= 1, got {b_theta}"
        raise InputError(msg)
    current = grid.copy()
    value = grid_likelihood(current, ctx)
    history = [value]
    stalled = False
    idx = ctx.support
    for _ in range(b_theta):
        gradient = grid_gradient(current, ctx)
        g_max = max(
            float(np.max(np.abs(gradient.d_azimuth), initial=0.0)) * current.az_step,
            float(np.max(np.abs(gradient.d_elevation), initial=0.0)) * current.el_step,
        )
        if g_max == 0.0:
            break
        step = INITIAL_STEP_FRACTION / g_max
        for _ in range(ARMIJO_MAX_HALVINGS + 1):
            trial = _project_step(current, gradient, step)
            trial_value = grid_likelihood(trial, ctx)
            ascent = float(
                gradient.d_azimuth @ (trial.azimuth[idx] - current.azimuth[idx])
                + gradient.d_elevation @ (trial.elevation[idx] - current.elevation[idx])
            )
            if trial_value >= value + ARMIJO_SUFFICIENT_INCREASE * ascent:
                break
            step *= ARMIJO_BACKTRACK
        else:
            stalled = True
            logger.warning("Grid line search stalled", support_size=int(idx.size), gradient=g_max)
            break
        current, value = trial, trial_value
        history.append(value)
    return GridAscentResult(grid=current, likelihood=history, stalled=stalled)
