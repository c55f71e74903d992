"""Three-layer sparse prior: support, precision and coefficient distributions."""

from __future__ import annotations

import numpy as np
import structlog
from scipy.special import gammaln, xlogy

from app.lib.exceptions import InputError
from app.schemas import IIDSupportPrior, Markov2DSupportPrior, PriorHyperParams, SupportPrior

logger = structlog.get_logger()

STATIONARITY_TOL = 1e-12


def default_hyperparams(n: int) -> PriorHyperParams:
    """Active precision mean 1, inactive precision mean 1e5, near-noninformative noise prior."""
    if n < 1:
        msg = f"signal dimension must be positive, got {n}"
        raise InputError(msg)
    return PriorHyperParams(
        a=np.ones(n),
        b=np.ones(n),
        a_bar=np.ones(n),
        b_bar=np.full(n, 1e-5),
        c=1e-6,
        d=1e-6,
    )


def validate_support_prior(support: SupportPrior) -> SupportPrior:
    """Check probability ranges and, for the Markov prior, per-direction stationarity.

    Raises:
        InputError: If any invariant fails.
    """
    if isinstance(support, IIDSupportPrior):
        if np.any(support.lam < 0) or np.any(support.lam > 1):
            msg = "activity probabilities must lie in [0, 1]"
            raise InputError(msg)
        return support
    probs = (support.p01_row, support.p10_row, support.p01_col, support.p10_col, support.lam)
    if any(not 0.0 <= p <= 1.0 for p in probs):
        msg = f"Markov transition probabilities must lie in [0, 1], got {probs}"
        raise InputError(msg)
    if support.n1 < 1 or support.n2 < 1:
        msg = f"grid shape must be positive, got {support.n1}x{support.n2}"
        raise InputError(msg)
    for direction, p01, p10 in (
        ("row", support.p01_row, support.p10_row),
        ("col", support.p01_col, support.p10_col),
    ):
        if p01 + p10 > 0 and abs(p01 / (p01 + p10) - support.lam) > STATIONARITY_TOL:
            msg = f"{direction} chain is not stationary at lambda={support.lam}"
            raise InputError(msg)
    return support


def markov2d_from_sparsity(lam: float, mean_run: float, n1: int, n2: int) -> Markov2DSupportPrior:
    """Stationary 2D Markov prior with mean active-run length ``mean_run`` along both axes.

    Raises:
        InputError: If ``lam`` is outside ``(0, 1)``, ``mean_run < 1`` or ``p01`` exceeds 1.
    """
    if not 0.0 < lam < 1.0:
        msg = f"lambda must lie in (0, 1), got {lam}"
        raise InputError(msg)
    if mean_run < 1:
        msg = f"mean_run must be >= 1, got {mean_run}"
        raise InputError(msg)
    p10 = 1.0 / mean_run
    p01 = p10 * lam / (1.0 - lam)
    if p01 > 1.0:
        msg = f"lambda={lam} with mean_run={mean_run} gives p01={p01:.4f} > 1"
        raise InputError(msg)
    prior = Markov2DSupportPrior(p01_row=p01, p10_row=p10, p01_col=p01, p10_col=p10, lam=lam, n1=n1, n2=n2)
    validate_support_prior(prior)
    return prior


def support_size(support: SupportPrior) -> int:
    return int(support.lam.shape[0]) if isinstance(support, IIDSupportPrior) else support.n


def prior_marginal(support: SupportPrior) -> np.ndarray:
    """Per-element activity probability used as the first prior message."""
    if isinstance(support, IIDSupportPrior):
        return np.asarray(support.lam, dtype=np.float64).copy()
    return np.full(support.n, support.lam)


def _transition_prob(prev: np.ndarray, cur: np.ndarray, p01: float, p10: float) -> np.ndarray:
    """``p(cur | prev)`` elementwise for binary arrays."""
    return np.where(prev, np.where(cur, 1.0 - p10, p10), np.where(cur, p01, 1.0 - p01))


def log_support_prob(support: SupportPrior, s: np.ndarray) -> np.ndarray:
    """Log-probability of support configurations ``s`` of shape ``(..., N)``.

    ``s`` is in grid order (azimuth fastest). The Markov prior is a normalized chain rule:
    ``p(s_11)``, row conditionals on the sites with ``i1 == 0``, column conditionals on
    the sites with ``i2 == 0``, and an equal mixture of the two conditionals at every other site.
    """
    s = np.asarray(s, dtype=bool)
    with np.errstate(divide="ignore"):
        if isinstance(support, IIDSupportPrior):
            return np.sum(xlogy(s, support.lam) + xlogy(~s, 1.0 - support.lam), axis=-1)
        # grid[..., i2, i1]
        grid = s.reshape(*s.shape[:-1], support.n2, support.n1)
        row = (support.p01_row, support.p10_row)
        col = (support.p01_col, support.p10_col)
        total = np.log(np.where(grid[..., 0, 0], support.lam, 1.0 - support.lam))
        edge_row = _transition_prob(grid[..., :-1, 0], grid[..., 1:, 0], *row)
        edge_col = _transition_prob(grid[..., 0, :-1], grid[..., 0, 1:], *col)
        inner = 0.5 * _transition_prob(grid[..., :-1, 1:], grid[..., 1:, 1:], *row) + 0.5 * _transition_prob(
            grid[..., 1:, :-1], grid[..., 1:, 1:], *col
        )
        total = total + np.sum(np.log(edge_row), axis=-1) + np.sum(np.log(edge_col), axis=-1)
        total = total + np.sum(np.log(inner), axis=(-2, -1))
    return total


def sample_support(support: SupportPrior, rng: np.random.Generator) -> np.ndarray:
    """Draw a support vector; Markov grids are sampled ancestrally in the order of ``log_support_prob``."""
    if isinstance(support, IIDSupportPrior):
        return rng.random(support.lam.shape[0]) < support.lam
    n1, n2 = support.n1, support.n2
    on_row = (support.p01_row, 1.0 - support.p10_row)
    on_col = (support.p01_col, 1.0 - support.p10_col)
    s = np.zeros((n1, n2), dtype=bool)
    u = rng.random((n1, n2))
    for i1 in range(n1):
        for i2 in range(n2):
            if i1 == 0 and i2 == 0:
                p = support.lam
            elif i1 == 0:
                p = on_row[int(s[i1, i2 - 1])]
            elif i2 == 0:
                p = on_col[int(s[i1 - 1, i2])]
            else:
                p = 0.5 * (on_row[int(s[i1, i2 - 1])] + on_col[int(s[i1 - 1, i2])])
            s[i1, i2] = u[i1, i2] < p
    return s.reshape(-1, order="F")


def sample_prior(
    hyper: PriorHyperParams, support: SupportPrior, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Draw ``(s, rho, x)`` from the hierarchical prior.

    Raises:
        InputError: If the hyperparameters and support prior disagree on N.
    """
    n = support_size(support)
    if hyper.n != n:
        msg = f"hyperparameters cover {hyper.n} elements, support prior {n}"
        raise InputError(msg)
    s = sample_support(support, rng)
    shape = np.where(s, hyper.a, hyper.a_bar)
    rate = np.where(s, hyper.b, hyper.b_bar)
    rho = rng.gamma(shape, 1.0 / rate)
    x = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) * np.sqrt(0.5 / rho)
    return s.astype(np.int8), rho, x


def log_joint(
    hyper: PriorHyperParams, support: SupportPrior, s: np.ndarray, rho: np.ndarray, x: np.ndarray
) -> float:
    """``ln p(s) + ln p(rho | s) + ln p(x | rho)``."""
    active = np.asarray(s, dtype=bool)
    shape = np.where(active, hyper.a, hyper.a_bar)
    rate = np.where(active, hyper.b, hyper.b_bar)
    ln_rho = np.log(rho)
    ln_gamma = shape * np.log(rate) - gammaln(shape) + (shape - 1.0) * ln_rho - rate * rho
    ln_gauss = ln_rho - np.log(np.pi) - rho * np.abs(x) ** 2
    return float(log_support_prob(support, active) + np.sum(ln_gamma) + np.sum(ln_gauss))
