"""Subspace-constrained variational Bayesian inference (SC-VBI).

The posterior is factorized as ``q(x) q(rho) q(s) q(kappa)`` with ``q(x)`` a complex
Gaussian with diagonal covariance. The posterior mean minimizes the quadratic

    phi(u) = u^H W u - 2 Re{u^H b},  W = diag(<rho>) + <kappa> A^H A,  b = <kappa> A^H y,

which SC-VBI solves on the estimated support only and then refines with a few matrix-free
gradient steps. Gradients use the Wirtinger convention ``grad phi = W u - b``; the real
gradient over (Re u, Im u) is twice that.
"""

from __future__ import annotations

from typing import TYPE_CHECKING, Literal

import msgspec
import numpy as np
import scipy.linalg
import structlog
from scipy.special import digamma, expit, gammaln, logit, xlogy

from app.lib.exceptions import InputError, MessageError, NumericalError, StateError
from app.schemas import (
    BernoulliMessage,
    Moments,
    RefineResult,
    SupportEstimate,
    SupportPolicy,
    VariationalState,
)

if TYPE_CHECKING:
    from app.schemas import ObservationModel, PriorHyperParams

logger = structlog.get_logger()

ARMIJO_BACKTRACK = 0.5
ARMIJO_SUFFICIENT_DECREASE = 1e-4
ARMIJO_MAX_HALVINGS = 50
POWER_ITERATIONS = 20
PROB_CLAMP = 1e-12
SUBSPACE_JITTER = 1e-10
ORACLE_JITTER = 1e-12

MeanSolver = Literal["subspace", "exact"]


class QuadraticSurrogate:
    """Matrix-free view of ``phi(u)`` for fixed ``<rho>`` and ``<kappa>``."""

    __slots__ = ("_column_norms2", "b", "kappa_mean", "rho_mean", "sensing")

    def __init__(
        self,
        sensing: np.ndarray,
        rho_mean: np.ndarray,
        kappa_mean: float,
        y: np.ndarray,
        column_norms2: np.ndarray | None = None,
    ) -> None:
        """Build the surrogate.

        Args:
            sensing: The ``M x N`` sensing matrix ``A``.
            rho_mean: Posterior mean precisions ``<rho>``.
            kappa_mean: Posterior mean noise precision ``<kappa>``.
            y: Measurements.
            column_norms2: Precomputed ``||A[:, n]||^2``; computed lazily when omitted.
        """
        self.sensing = sensing
        self.rho_mean = rho_mean
        self.kappa_mean = float(kappa_mean)
        self.b = self.kappa_mean * (sensing.conj().T @ y)
        self._column_norms2 = column_norms2

    @classmethod
    def from_moments(cls, model: ObservationModel, moments: Moments) -> QuadraticSurrogate:
        return cls(model.sensing, moments.rho_mean, moments.kappa_mean, model.y)

    @property
    def column_norms2(self) -> np.ndarray:
        if self._column_norms2 is None:
            self._column_norms2 = column_norms2(self.sensing)
        return self._column_norms2

    def diagonal(self) -> np.ndarray:
        return self.rho_mean + self.kappa_mean * self.column_norms2

    def matvec(self, u: np.ndarray) -> np.ndarray:
        return self.rho_mean * u + self.kappa_mean * (self.sensing.conj().T @ (self.sensing @ u))

    def objective(self, u: np.ndarray, wu: np.ndarray | None = None) -> float:
        if wu is None:
            wu = self.matvec(u)
        return float(np.vdot(u, wu).real - 2.0 * np.vdot(u, self.b).real)

    def gradient(self, u: np.ndarray) -> np.ndarray:
        return self.matvec(u) - self.b

    def lipschitz(self, iterations: int = POWER_ITERATIONS) -> float:
        """Largest eigenvalue of ``D^-1/2 W D^-1/2`` with ``D = diag(W)``, by power iteration.

        This bounds the curvature seen by Jacobi-preconditioned gradient steps.
        """
        scale = 1.0 / np.sqrt(self.diagonal())
        v = np.random.default_rng(0).standard_normal(self.sensing.shape[1]).astype(np.complex128)
        v /= np.linalg.norm(v)
        for _ in range(iterations):
            w = scale * self.matvec(scale * v)
            norm = np.linalg.norm(w)
            if norm == 0:
                break
            v = w / norm
        return float(np.vdot(v, scale * self.matvec(scale * v)).real)

    def restricted(self, indices: np.ndarray) -> np.ndarray:
        """Dense ``W_S`` for the columns in ``indices``."""
        a_s = self.sensing[:, indices]
        return np.diag(self.rho_mean[indices]).astype(np.complex128) + self.kappa_mean * (a_s.conj().T @ a_s)

    def dense(self) -> np.ndarray:
        return self.restricted(np.arange(self.sensing.shape[1]))


def column_norms2(sensing: np.ndarray) -> np.ndarray:
    return np.sum(np.abs(sensing) ** 2, axis=0)


def _hermitian_solve(matrix: np.ndarray, rhs: np.ndarray, jitter: float, label: str) -> np.ndarray:
    """Cholesky solve, retried once with ``jitter * trace / n`` added to the diagonal."""
    try:
        return scipy.linalg.solve(matrix, rhs, assume_a="pos")
    except (np.linalg.LinAlgError, ValueError):
        n = matrix.shape[0]
        shift = jitter * float(np.trace(matrix).real) / n
        logger.warning(
            "Hermitian solve failed, retrying with diagonal regularization",
            solver=label,
            size=n,
            shift=shift,
            condition=float(np.linalg.cond(matrix)),
        )
        try:
            return scipy.linalg.solve(matrix + shift * np.eye(n), rhs, assume_a="pos")
        except (np.linalg.LinAlgError, ValueError) as e:
            msg = f"{label} solve failed after regularization: {e}"
            raise NumericalError(msg) from e


def compute_moments(state: VariationalState) -> Moments:
    """Posterior expectations needed by every block update.

    Raises:
        StateError: If a Gamma parameter or variance is not strictly positive.
    """
    if (
        np.any(state.a_tilde <= 0)
        or np.any(state.b_tilde <= 0)
        or np.any(state.sigma2 < 0)
        or not state.c_tilde > 0
        or not state.d_tilde > 0
    ):
        msg = "variational state has nonpositive Gamma parameters or negative variances"
        raise StateError(msg)
    if np.any(state.lambda_tilde < 0) or np.any(state.lambda_tilde > 1):
        msg = "lambda_tilde must lie in [0, 1]"
        raise StateError(msg)
    return Moments(
        rho_mean=state.a_tilde / state.b_tilde,
        kappa_mean=state.c_tilde / state.d_tilde,
        s_mean=state.lambda_tilde,
        ln_rho_mean=digamma(state.a_tilde) - np.log(state.b_tilde),
        x2_mean=np.abs(state.mu) ** 2 + state.sigma2,
        ln_kappa_mean=float(digamma(state.c_tilde) - np.log(state.d_tilde)),
    )


def initial_state(model: ObservationModel, hyper: PriorHyperParams, prior_msg: BernoulliMessage) -> VariationalState:
    return VariationalState(
        mu=np.zeros(model.n, dtype=np.complex128),
        sigma2=np.ones(model.n),
        a_tilde=hyper.a + 1.0,
        b_tilde=hyper.b + 1.0,
        lambda_tilde=np.asarray(prior_msg.active_prob, dtype=np.float64).copy(),
        c_tilde=hyper.c + model.m,
        d_tilde=hyper.d + float(np.vdot(model.y, model.y).real),
    )


def subspace_init(support: SupportEstimate, surrogate: QuadraticSurrogate, y: np.ndarray) -> np.ndarray:
    """LMMSE mean restricted to the support, zero elsewhere."""
    n = surrogate.sensing.shape[1]
    m = surrogate.sensing.shape[0]
    mu0 = np.zeros(n, dtype=np.complex128)
    idx = support.indices
    if idx.size == 0:
        return mu0
    if idx.size > m:
        logger.warning("Support larger than the number of measurements", support_size=int(idx.size), m=m)
    a_s = surrogate.sensing[:, idx]
    rhs = surrogate.kappa_mean * (a_s.conj().T @ y)
    mu0[idx] = _hermitian_solve(surrogate.restricted(idx), rhs, SUBSPACE_JITTER, "subspace")
    return mu0


def robust_select_init(mu0: np.ndarray, mu_prev: np.ndarray, surrogate: QuadraticSurrogate) -> np.ndarray:
    """Start from whichever candidate has the lower ``phi``; ties keep ``mu0``."""
    if surrogate.objective(mu_prev) < surrogate.objective(mu0):
        return mu_prev
    return mu0


def refine_mean_gradient(mu_init: np.ndarray, surrogate: QuadraticSurrogate, b_x: int) -> RefineResult:
    """Run ``b_x`` Jacobi-preconditioned gradient steps on ``phi`` with Armijo backtracking.

    The direction is ``d = g / diag(W)`` and the first trial step ``1 / L`` uses the curvature
    bound of :meth:`QuadraticSurrogate.lipschitz`, so it always satisfies the Armijo test. Each
    step costs two products with ``A`` (for ``W d``); trial objective values follow from the
    quadratic expansion ``phi(u - t d) = phi(u) - 2 t Re{g^H d} + t^2 d^H W d``.

    Raises:
        InputError: If ``b_x < 1``.
    """
    if b_x < 1:
        msg = f"b_x must be >= 1, got {b_x}"
        raise InputError(msg)
    mu = np.array(mu_init, dtype=np.complex128, copy=True)
    wu = surrogate.matvec(mu)
    phi = surrogate.objective(mu, wu)
    trace = [phi]
    tol = 1e-12 * max(float(np.linalg.norm(surrogate.b)), np.finfo(float).tiny)
    inv_diag = 1.0 / surrogate.diagonal()
    step0 = 1.0 / surrogate.lipschitz()
    for _ in range(b_x):
        g = wu - surrogate.b
        if np.linalg.norm(g) <= tol:
            break
        d = inv_diag * g
        gd = float(np.vdot(g, d).real)
        wd = surrogate.matvec(d)
        dwd = float(np.vdot(d, wd).real)
        t = step0
        for _ in range(ARMIJO_MAX_HALVINGS):
            trial = phi - 2.0 * t * gd + t * t * dwd
            if trial <= phi - 2.0 * ARMIJO_SUFFICIENT_DECREASE * t * gd:
                break
            t *= ARMIJO_BACKTRACK
        else:
            logger.warning("Armijo line search stalled", grad_norm=float(np.linalg.norm(g)), objective=phi)
            return RefineResult(mu=mu, objective=trace, stalled=True)
        mu -= t * d
        wu -= t * wd
        phi = trial
        trace.append(phi)
    return RefineResult(mu=mu, objective=trace)


def update_qx_variances(surrogate: QuadraticSurrogate) -> np.ndarray:
    return 1.0 / surrogate.diagonal()


def update_q_rho(moments: Moments, hyper: PriorHyperParams) -> tuple[np.ndarray, np.ndarray]:
    s = moments.s_mean
    a_tilde = s * hyper.a + (1.0 - s) * hyper.a_bar + 1.0
    b_tilde = s * hyper.b + (1.0 - s) * hyper.b_bar + moments.x2_mean
    return a_tilde, b_tilde


def _log_gamma_normalizers(moments: Moments, hyper: PriorHyperParams) -> tuple[np.ndarray, np.ndarray]:
    """``(ln C_n, ln C_bar_n)``: expected log Gamma densities of the active and inactive branches."""
    ln_c = hyper.a * np.log(hyper.b) - gammaln(hyper.a) + (hyper.a - 1.0) * moments.ln_rho_mean
    ln_c -= hyper.b * moments.rho_mean
    ln_c_bar = hyper.a_bar * np.log(hyper.b_bar) - gammaln(hyper.a_bar) + (hyper.a_bar - 1.0) * moments.ln_rho_mean
    ln_c_bar -= hyper.b_bar * moments.rho_mean
    return ln_c, ln_c_bar


def update_q_s(moments: Moments, hyper: PriorHyperParams, prior_msg: BernoulliMessage) -> np.ndarray:
    """Posterior activity probabilities from the log-odds ``logit(lambda) + ln C - ln C_bar``."""
    lam = np.asarray(prior_msg.active_prob, dtype=np.float64)
    ln_c, ln_c_bar = _log_gamma_normalizers(moments, hyper)
    lambda_tilde = np.where(lam >= 1.0, 1.0, 0.0)
    mid = (lam > 0.0) & (lam < 1.0)
    lambda_tilde[mid] = expit(logit(lam[mid]) + ln_c[mid] - ln_c_bar[mid])
    return lambda_tilde


def update_q_kappa(
    state: VariationalState, model: ObservationModel, hyper: PriorHyperParams
) -> tuple[float, float]:
    residual = model.y - model.sensing @ state.mu
    expected = float(np.vdot(residual, residual).real) + float(np.sum(state.sigma2 * column_norms2(model.sensing)))
    return hyper.c + model.m, hyper.d + expected


def _energy_set(energy: np.ndarray, fraction: float) -> tuple[np.ndarray, float]:
    """Smallest set of largest entries holding ``fraction`` of the total, and its smallest energy."""
    total = float(np.sum(energy))
    if total <= 0:
        return np.array([], dtype=np.intp), 0.0
    order = np.argsort(-energy, kind="stable")
    cumulative = np.cumsum(energy[order])
    k = min(int(np.searchsorted(cumulative, fraction * total, side="left")), energy.size - 1)
    return np.sort(order[: k + 1]), float(energy[order[k]])


def estimate_support(mu: np.ndarray, kappa_mean: float, policy: SupportPolicy | None = None) -> SupportEstimate:
    """Indices of ``mu`` with significant energy.

    The threshold policy keeps ``|mu_n|^2 > multiple / <kappa>`` and, with ``energy_floor``,
    every entry of the energy set as well. The energy policy keeps the smallest set of largest
    entries holding ``energy_fraction`` of ``||mu||^2``. An empty result falls back to the
    single largest entry.

    Raises:
        InputError: If ``kappa_mean`` is not positive.
    """
    if not kappa_mean > 0:
        msg = f"kappa_mean must be positive, got {kappa_mean}"
        raise InputError(msg)
    policy = policy or SupportPolicy()
    energy = np.abs(mu) ** 2
    if policy.kind == "threshold":
        threshold = policy.multiple / kappa_mean
        indices = np.flatnonzero(energy > threshold)
        if policy.energy_floor:
            indices = np.union1d(indices, _energy_set(energy, policy.energy_fraction)[0])
    else:
        indices, threshold = _energy_set(energy, policy.energy_fraction)
    if indices.size == 0:
        best = int(np.argmax(energy))
        logger.warning("Empty support estimate, keeping the largest entry", index=best, policy=policy.kind)
        return SupportEstimate(
            indices=np.array([best], dtype=np.intp), threshold=float(threshold), policy=policy, fallback=True
        )
    return SupportEstimate(indices=indices.astype(np.intp), threshold=float(threshold), policy=policy)


def exact_icvbi_mean(surrogate: QuadraticSurrogate, y: np.ndarray) -> np.ndarray:
    """Full ``W^{-1} b`` with a dense Hermitian solve."""
    rhs = surrogate.kappa_mean * (surrogate.sensing.conj().T @ y)
    return _hermitian_solve(surrogate.dense(), rhs, ORACLE_JITTER, "exact")


def free_energy(
    state: VariationalState, model: ObservationModel, hyper: PriorHyperParams, prior_msg: BernoulliMessage
) -> float:
    """``<ln q(v)> - <ln p_hat(v, y)>``, the KL objective up to ``ln p(y)``."""
    mom = compute_moments(state)
    lam = np.asarray(prior_msg.active_prob, dtype=np.float64)
    lt = state.lambda_tilde
    residual = model.y - model.sensing @ state.mu
    expected_residual = float(np.vdot(residual, residual).real) + float(
        np.sum(state.sigma2 * column_norms2(model.sensing))
    )
    ln_pi = np.log(np.pi)

    ln_lik = model.m * (mom.ln_kappa_mean - ln_pi) - mom.kappa_mean * expected_residual
    ln_px = float(np.sum(mom.ln_rho_mean - ln_pi - mom.rho_mean * mom.x2_mean))
    ln_c, ln_c_bar = _log_gamma_normalizers(mom, hyper)
    ln_prho = float(np.sum(lt * ln_c + (1.0 - lt) * ln_c_bar))
    with np.errstate(divide="ignore"):
        ln_ps = float(np.sum(xlogy(lt, lam) + xlogy(1.0 - lt, 1.0 - lam)))
    ln_pkappa = (
        hyper.c * np.log(hyper.d) - gammaln(hyper.c) + (hyper.c - 1.0) * mom.ln_kappa_mean - hyper.d * mom.kappa_mean
    )

    ln_qx = float(np.sum(-np.log(np.pi * state.sigma2) - 1.0))
    a_t, b_t = state.a_tilde, state.b_tilde
    ln_qrho = float(np.sum(a_t * np.log(b_t) - gammaln(a_t) + (a_t - 1.0) * mom.ln_rho_mean - a_t))
    ln_qs = float(np.sum(xlogy(lt, lt) + xlogy(1.0 - lt, 1.0 - lt)))
    c_t, d_t = state.c_tilde, state.d_tilde
    ln_qkappa = c_t * np.log(d_t) - gammaln(c_t) + (c_t - 1.0) * mom.ln_kappa_mean - c_t

    entropy_terms = ln_qx + ln_qrho + ln_qs + ln_qkappa
    model_terms = ln_lik + ln_px + ln_prho + ln_ps + ln_pkappa
    return float(entropy_terms - model_terms)


def extrinsic_from_scvbi(lambda_tilde: np.ndarray, prior_msg: BernoulliMessage) -> BernoulliMessage:
    """Divide the incoming prior message out of ``q(s)``.

    Degenerate prior entries (0 or 1) pass ``lambda_tilde`` through and flag the message.

    Raises:
        MessageError: If posterior and prior are certain in opposite directions.
    """
    lam = np.asarray(prior_msg.active_prob, dtype=np.float64)
    lt = np.asarray(lambda_tilde, dtype=np.float64)
    low, high = lam <= 0.0, lam >= 1.0
    if np.any((low & (lt >= 1.0)) | (high & (lt <= 0.0))):
        msg = "posterior and prior activity are degenerate in conflicting directions"
        raise MessageError(msg)
    degenerate = low | high
    out = lt.copy()
    mid = ~degenerate
    lt_c = np.clip(lt[mid], PROB_CLAMP, 1.0 - PROB_CLAMP)
    lam_c = np.clip(lam[mid], PROB_CLAMP, 1.0 - PROB_CLAMP)
    out[mid] = expit(logit(lt_c) - logit(lam_c))
    return BernoulliMessage(active_prob=out, flagged=bool(np.any(degenerate)))


def relative_gradient_norm(state: VariationalState, model: ObservationModel) -> float:
    """``||grad phi(mu)|| / ||b||`` under the moments of ``state``."""
    surrogate = QuadraticSurrogate.from_moments(model, compute_moments(state))
    b_norm = float(np.linalg.norm(surrogate.b))
    return float(np.linalg.norm(surrogate.gradient(state.mu))) / b_norm if b_norm > 0 else 0.0


def scvbi_round(
    state: VariationalState,
    model: ObservationModel,
    hyper: PriorHyperParams,
    prior_msg: BernoulliMessage,
    b_x: int,
    support_policy: SupportPolicy,
    support: SupportEstimate,
    mean_solver: MeanSolver = "subspace",
) -> tuple[VariationalState, SupportEstimate, BernoulliMessage]:
    """One pass of q(x), q(rho), q(s), q(kappa) updates.

    Args:
        state: Current variational parameters.
        model: Observation model.
        hyper: Prior hyperparameters.
        prior_msg: Activity message from structured sparse inference (the ``lambda`` of q(s)).
        b_x: Gradient refinement steps after the subspace solve; 0 skips refinement.
        support_policy: How the next support estimate is read off the mean.
        support: Support estimate the subspace solve is restricted to.
        mean_solver: ``"exact"`` replaces the subspace solve by the full IC-VBI inverse.

    Returns:
        The updated state, the new support estimate and the extrinsic activity message.
    """
    moments = compute_moments(state)
    surrogate = QuadraticSurrogate.from_moments(model, moments)
    if mean_solver == "exact":
        mu = exact_icvbi_mean(surrogate, model.y)
    else:
        mu0 = subspace_init(support, surrogate, model.y)
        mu = robust_select_init(mu0, state.mu, surrogate)
        if b_x > 0:
            mu = refine_mean_gradient(mu, surrogate, b_x).mu
    state = msgspec.structs.replace(state, mu=mu, sigma2=update_qx_variances(surrogate))

    a_tilde, b_tilde = update_q_rho(compute_moments(state), hyper)
    state = msgspec.structs.replace(state, a_tilde=a_tilde, b_tilde=b_tilde)

    lambda_tilde = update_q_s(compute_moments(state), hyper, prior_msg)
    state = msgspec.structs.replace(state, lambda_tilde=lambda_tilde)

    c_tilde, d_tilde = update_q_kappa(state, model, hyper)
    state = msgspec.structs.replace(state, c_tilde=c_tilde, d_tilde=d_tilde)

    new_support = estimate_support(state.mu, c_tilde / d_tilde, support_policy)
    extrinsic = extrinsic_from_scvbi(lambda_tilde, prior_msg)
    logger.debug(
        "SC-VBI round complete",
        support_size=new_support.size,
        kappa_mean=c_tilde / d_tilde,
        mean_solver=mean_solver,
    )
    return state, new_support, extrinsic
