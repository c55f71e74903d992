"""Linear observation model with a dynamic angular grid under partially connected hybrid combining.

The array is a half-wavelength uniform planar array with ``nx`` horizontal and ``ny``
vertical elements. Element ``(ix, iy)`` sits at flat index ``ix + nx * iy``; its phase is
``pi * (ix * sin(az) * cos(el) + iy * sin(el))`` relative to the first element.
"""

from __future__ import annotations

from typing import TYPE_CHECKING

import msgspec
import numpy as np
import structlog

from app.lib.exceptions import InputError
from app.schemas import ChannelTruth, DynamicGrid, HybridCombiner, ObservationModel

if TYPE_CHECKING:
    from collections.abc import Sequence

    from app.schemas import Markov2DSupportPrior

logger = structlog.get_logger()

DEFAULT_AZIMUTH_RANGE = (-np.pi / 2, np.pi / 2)
DEFAULT_ELEVATION_RANGE = (-np.pi / 6, 0.0)


def _element_indices(nx: int, ny: int) -> tuple[np.ndarray, np.ndarray]:
    if nx < 1 or ny < 1:
        msg = f"array dimensions must be positive, got nx={nx}, ny={ny}"
        raise InputError(msg)
    return np.tile(np.arange(nx), ny), np.repeat(np.arange(ny), nx)


def _check_angles(*angles: float | np.ndarray) -> None:
    for angle in angles:
        if not np.all(np.isfinite(angle)):
            msg = "steering angles must be finite"
            raise InputError(msg)


def upa_steering(az: float, el: float, nx: int, ny: int) -> np.ndarray:
    """Array response of the planar array towards ``(az, el)``.

    Raises:
        InputError: On non-finite angles or empty arrays.
    """
    _check_angles(az, el)
    ix, iy = _element_indices(nx, ny)
    return np.exp(1j * np.pi * (ix * np.sin(az) * np.cos(el) + iy * np.sin(el)))


def steering_derivative(az: float, el: float, nx: int, ny: int) -> tuple[np.ndarray, np.ndarray]:
    """Analytic ``(da/daz, da/del)`` of :func:`upa_steering`."""
    _check_angles(az, el)
    ix, iy = _element_indices(nx, ny)
    a = np.exp(1j * np.pi * (ix * np.sin(az) * np.cos(el) + iy * np.sin(el)))
    d_az = 1j * np.pi * ix * np.cos(az) * np.cos(el) * a
    d_el = 1j * np.pi * (iy * np.cos(el) - ix * np.sin(az) * np.sin(el)) * a
    return d_az, d_el


def steering_matrix(azimuth: np.ndarray, elevation: np.ndarray, nx: int, ny: int) -> np.ndarray:
    """Column-stacked steering vectors, ``N_r x len(azimuth)``."""
    _check_angles(azimuth, elevation)
    ix, iy = _element_indices(nx, ny)
    az = np.asarray(azimuth, dtype=np.float64)
    el = np.asarray(elevation, dtype=np.float64)
    phase = np.outer(ix, np.sin(az) * np.cos(el)) + np.outer(iy, np.sin(el))
    return np.exp(1j * np.pi * phase)


def steering_matrix_derivatives(
    azimuth: np.ndarray, elevation: np.ndarray, nx: int, ny: int
) -> tuple[np.ndarray, np.ndarray]:
    """Column-wise derivatives of :func:`steering_matrix` in azimuth and elevation."""
    ix, iy = _element_indices(nx, ny)
    az = np.asarray(azimuth, dtype=np.float64)
    el = np.asarray(elevation, dtype=np.float64)
    a = steering_matrix(az, el, nx, ny)
    d_az = 1j * np.pi * np.outer(ix, np.cos(az) * np.cos(el)) * a
    d_el = 1j * np.pi * (np.outer(iy, np.cos(el)) - np.outer(ix, np.sin(az) * np.sin(el))) * a
    return d_az, d_el


def uniform_grid(
    n1: int,
    n2: int,
    az_range: tuple[float, float] = DEFAULT_AZIMUTH_RANGE,
    el_range: tuple[float, float] = DEFAULT_ELEVATION_RANGE,
) -> DynamicGrid:
    """Cell-centred ``n1 x n2`` grid over the azimuth and elevation ranges."""
    if n1 < 1 or n2 < 1:
        msg = f"grid dimensions must be positive, got n1={n1}, n2={n2}"
        raise InputError(msg)
    az_step = (az_range[1] - az_range[0]) / n1
    el_step = (el_range[1] - el_range[0]) / n2
    az_centres = az_range[0] + (np.arange(n1) + 0.5) * az_step
    el_centres = el_range[0] + (np.arange(n2) + 0.5) * el_step
    azimuth = np.tile(az_centres, n2)
    elevation = np.repeat(el_centres, n1)
    return DynamicGrid(
        azimuth=azimuth,
        elevation=elevation,
        n1=n1,
        n2=n2,
        az_step=float(az_step),
        el_step=float(el_step),
        az_anchor=azimuth.copy(),
        el_anchor=elevation.copy(),
    )


def build_sensing_matrix(grid: DynamicGrid, combiner: HybridCombiner, nx: int, ny: int) -> np.ndarray:
    """``u * F @ A(theta, phi)``; column ``q`` depends only on grid entry ``q``.

    Raises:
        InputError: If the combiner does not match the ``nx * ny`` array.
    """
    if combiner.nr != nx * ny:
        msg = f"combiner expects {combiner.nr} antennas, array has {nx * ny}"
        raise InputError(msg)
    return combiner.matrix @ steering_matrix(grid.azimuth, grid.elevation, nx, ny)


def generate_combiner(nr: int, nrf: int, seed: int) -> HybridCombiner:
    """Random partially connected combiner.

    Analog phases are i.i.d. uniform on ``[0, 2 pi)``; the digital stage is a Haar-random
    unitary; the pilot has a random phase.

    Raises:
        InputError: If ``nrf`` does not divide ``nr``.
    """
    if nrf < 1 or nr < 1 or nr % nrf:
        msg = f"nrf={nrf} must divide nr={nr}"
        raise InputError(msg)
    rng = np.random.default_rng(seed)
    block = nr // nrf
    phases = rng.uniform(0.0, 2 * np.pi, size=nr)
    analog = np.zeros((nrf, nr), dtype=np.complex128)
    for r in range(nrf):
        analog[r, r * block : (r + 1) * block] = np.exp(1j * phases[r * block : (r + 1) * block])
    z = (rng.standard_normal((nrf, nrf)) + 1j * rng.standard_normal((nrf, nrf))) / np.sqrt(2)
    q, r_factor = np.linalg.qr(z)
    diag = np.diag(r_factor)
    digital = q * (diag / np.abs(diag))
    pilot = complex(np.exp(1j * rng.uniform(0.0, 2 * np.pi)))
    return HybridCombiner(analog=analog, digital=digital, pilot=pilot)


def mimo_observation_model(
    grid: DynamicGrid,
    combiner: HybridCombiner,
    nx: int,
    ny: int,
    y: np.ndarray | None = None,
) -> ObservationModel:
    sensing = build_sensing_matrix(grid, combiner, nx, ny)
    return ObservationModel(
        sensing=sensing,
        y=np.zeros(sensing.shape[0], dtype=np.complex128) if y is None else np.asarray(y, dtype=np.complex128),
        grid=grid,
        combiner=combiner,
        array_shape=(nx, ny),
    )


def refresh_columns(model: ObservationModel, grid: DynamicGrid, indices: Sequence[int] | np.ndarray) -> ObservationModel:
    """Model with ``grid`` and only the listed sensing columns rebuilt."""
    if model.combiner is None or model.array_shape is None:
        msg = "grid refresh requires a MIMO observation model"
        raise InputError(msg)
    idx = np.asarray(indices, dtype=np.intp)
    sensing = model.sensing.copy()
    if idx.size:
        nx, ny = model.array_shape
        sensing[:, idx] = model.combiner.matrix @ steering_matrix(grid.azimuth[idx], grid.elevation[idx], nx, ny)
    return msgspec.structs.replace(model, sensing=sensing, grid=grid)


def _gaussian_gains(k: int, rng: np.random.Generator) -> np.ndarray:
    return (rng.standard_normal(k) + 1j * rng.standard_normal(k)) / np.sqrt(2)


def _truth(
    support: np.ndarray, grid: DynamicGrid, off_grid: bool, rng: np.random.Generator, nx: int, ny: int
) -> ChannelTruth:
    k = support.size
    az = grid.azimuth[support].copy()
    el = grid.elevation[support].copy()
    if off_grid:
        az += rng.uniform(-0.5, 0.5, size=k) * grid.az_step
        el += rng.uniform(-0.5, 0.5, size=k) * grid.el_step
    gains = _gaussian_gains(k, rng)
    x_true = np.zeros(grid.q, dtype=np.complex128)
    x_true[support] = gains
    h = steering_matrix(az, el, nx, ny) @ gains
    return ChannelTruth(
        gains=gains,
        az_true=az,
        el_true=el,
        h=h,
        x_true=x_true,
        support_true=support,
        array_shape=(nx, ny),
    )


def generate_channel(
    k_paths: int, grid: DynamicGrid, off_grid: bool, rng: np.random.Generator, nx: int, ny: int
) -> ChannelTruth:
    """Synthetic multipath channel on (or within half a cell of) distinct grid points.

    Raises:
        InputError: If ``k_paths`` is not within ``[1, Q]``.
    """
    if not 1 <= k_paths <= grid.q:
        msg = f"k_paths={k_paths} must lie in [1, {grid.q}]"
        raise InputError(msg)
    support = np.sort(rng.choice(grid.q, size=k_paths, replace=False))
    return _truth(support, grid, off_grid, rng, nx, ny)


def generate_clustered_channel(
    support_prior: Markov2DSupportPrior,
    grid: DynamicGrid,
    off_grid: bool,
    rng: np.random.Generator,
    nx: int,
    ny: int,
) -> ChannelTruth:
    """Channel whose support is a draw from the 2D Markov support prior (at least one path)."""
    from app.services.prior import sample_support

    if support_prior.n != grid.q:
        msg = f"support prior covers {support_prior.n} sites, grid has {grid.q}"
        raise InputError(msg)
    s = sample_support(support_prior, rng)
    support = np.flatnonzero(s)
    if support.size == 0:
        support = np.array([rng.integers(grid.q)])
    return _truth(support, grid, off_grid, rng, nx, ny)


def grid_with_truth(grid: DynamicGrid, truth: ChannelTruth) -> DynamicGrid:
    """Copy of ``grid`` whose supported points sit at the true angles."""
    refined = grid.copy()
    refined.azimuth[truth.support_true] = truth.az_true
    refined.elevation[truth.support_true] = truth.el_true
    return refined


def channel_from_grid(
    grid: DynamicGrid, x: np.ndarray, nx: int, ny: int, indices: np.ndarray | None = None
) -> np.ndarray:
    """Antenna-domain channel ``sum_q x_q a(theta_q, phi_q)`` over ``indices`` (default: nonzeros of ``x``)."""
    idx = np.flatnonzero(x) if indices is None else np.asarray(indices, dtype=np.intp)
    if idx.size == 0:
        return np.zeros(nx * ny, dtype=np.complex128)
    return steering_matrix(grid.azimuth[idx], grid.elevation[idx], nx, ny) @ x[idx]


def noise_precision_from_snr(clean: np.ndarray, snr_db: float) -> float:
    """Noise precision giving per-measurement ``SNR = ||A x||^2 / (M sigma^2)``."""
    power = float(np.vdot(clean, clean).real) / clean.size
    if power <= 0:
        msg = "cannot set an SNR for a zero signal"
        raise InputError(msg)
    return 10.0 ** (snr_db / 10.0) / power


def observe(
    model: ObservationModel,
    x_true: np.ndarray,
    kappa: float,
    rng: np.random.Generator,
    noise_free: bool = False,
) -> np.ndarray:
    """Measurements ``y = A x_true + w`` with ``w ~ CN(0, I / kappa)``.

    Raises:
        InputError: If ``kappa <= 0`` or ``x_true`` has the wrong length.
    """
    if x_true.shape != (model.n,):
        msg = f"x_true must have shape ({model.n},), got {x_true.shape}"
        raise InputError(msg)
    if not kappa > 0:
        msg = f"noise precision must be positive, got {kappa}"
        raise InputError(msg)
    clean = model.sensing @ x_true
    if noise_free or np.isinf(kappa):
        return clean
    noise = (rng.standard_normal(model.m) + 1j * rng.standard_normal(model.m)) * np.sqrt(0.5 / kappa)
    return clean + noise


def nmse_db(h_hat: np.ndarray, h_true: np.ndarray, floor: float = -300.0) -> float:
    """``10 log10(||h_hat - h||^2 / ||h||^2)``, floored at ``floor`` for exact recovery.

    Raises:
        InputError: If ``h_true`` is zero.
    """
    ref = float(np.vdot(h_true, h_true).real)
    if ref <= 0:
        msg = "NMSE is undefined for a zero reference"
        raise InputError(msg)
    diff = np.asarray(h_hat) - np.asarray(h_true)
    err = float(np.vdot(diff, diff).real)
    if err <= 0:
        return floor
    return max(floor, 10.0 * float(np.log10(err / ref)))
