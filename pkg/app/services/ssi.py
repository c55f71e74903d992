"""Structured sparse inference: sum-product messages over the support prior.

Sites are indexed ``[i1, i2]`` (azimuth, elevation). Each site has one conditional factor
towards its parents: ``p(s | s[i1, i2-1])`` along ``i1 == 0``, ``p(s | s[i1-1, i2])`` along
``i2 == 0`` and the equal mixture of the two elsewhere. ``gamma_l``/``gamma_t`` hold the parts
of a site's own factor message contributed by the left/top parent; ``gamma_r``/``gamma_b`` are
the messages from the factors of the right/bottom child. Every message is stored as the
normalized probability of the active state.

Messages with no factor behind them are neutral (0.5). ``gamma_l[0, 0]`` carries the initial
distribution ``p(s_11) = lambda``.
"""

from __future__ import annotations

import numpy as np
import structlog
from scipy.special import logsumexp

from app.lib.exceptions import InputError, SizeError
from app.schemas import BernoulliMessage, IIDSupportPrior, Markov2DSupportPrior, MessageGrid, SupportPrior
from app.services.prior import log_support_prob, support_size

logger = structlog.get_logger()

NEUTRAL = 0.5
PROB_CLAMP = 1e-12
BRUTE_FORCE_MAX_SITES = 20


def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.full(np.shape(num), NEUTRAL)
    np.divide(num, den, out=out, where=den > 0)
    return out


def _forward(b1: np.ndarray, b0: np.ndarray, p01: float, p10: float) -> np.ndarray:
    """Message into the later site of a transition factor from the earlier site's belief."""
    return _ratio((1.0 - p10) * b1 + p01 * b0, b1 + b0)


def _backward(b1: np.ndarray, b0: np.ndarray, p01: float, p10: float) -> np.ndarray:
    """Message into the earlier site of a transition factor from the later site's belief."""
    p11, p00 = 1.0 - p10, 1.0 - p01
    return _ratio(p11 * b1 + p10 * b0, (p11 + p01) * b1 + (p00 + p10) * b0)


def _mixture_backward(
    b1: np.ndarray,
    b0: np.ndarray,
    o1: np.ndarray,
    o0: np.ndarray,
    own: tuple[float, float],
    other: tuple[float, float],
) -> np.ndarray:
    """Message into one parent of an interior site's mixture factor.

    ``b`` is the child's belief without that factor and ``o`` the other parent's belief towards
    it. ``own`` and ``other`` are the ``(p01, p10)`` transitions attached to each parent.
    """
    c1 = _ratio(b1, b1 + b0)
    c0 = 1.0 - c1
    t1 = _ratio(o1, o1 + o0)
    t0 = 1.0 - t1
    p01, p10 = own
    q01, q10 = other
    r1 = (1.0 - p10) * c1 + p10 * c0
    r0 = p01 * c1 + (1.0 - p01) * c0
    k = t1 * ((1.0 - q10) * c1 + q10 * c0) + t0 * (q01 * c1 + (1.0 - q01) * c0)
    return _ratio(r1 + k, r1 + r0 + 2.0 * k)


def _own(gl: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Message from every site's own conditional factor."""
    own = 0.5 * (gl + gt)
    own[0, :] = gl[0, :]
    own[1:, 0] = gt[1:, 0]
    return own


def _belief(pi: np.ndarray, *messages: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    b1, b0 = pi.copy(), 1.0 - pi
    for g in messages:
        b1 *= g
        b0 *= 1.0 - g
    return b1, b0


def ssi_iid(prior: IIDSupportPrior) -> BernoulliMessage:
    """Without coupling the message towards SC-VBI is the prior itself."""
    return BernoulliMessage(active_prob=np.asarray(prior.lam, dtype=np.float64).copy())


def propagate_markov2d(
    input_msg: BernoulliMessage,
    prior: Markov2DSupportPrior,
    sweeps: int,
    damping: float,
    tol: float = 0.0,
) -> MessageGrid:
    """Run up to ``sweeps`` rounds of directional sweeps and return the messages.

    Chains (``n1 == 1`` or ``n2 == 1``) are trees: they are propagated undamped and one
    round is exact. Loopy grids stop early once the largest message change drops below ``tol``.

    Raises:
        InputError: On size mismatch, ``sweeps < 1`` or damping outside ``[0, 1)``.
    """
    n1, n2 = prior.n1, prior.n2
    if input_msg.n != n1 * n2:
        msg = f"input message has {input_msg.n} entries, grid has {n1 * n2}"
        raise InputError(msg)
    if sweeps < 1:
        msg = f"sweeps must be >= 1, got {sweeps}"
        raise InputError(msg)
    if not 0.0 <= damping < 1.0:
        msg = f"damping must lie in [0, 1), got {damping}"
        raise InputError(msg)
    if n1 == 1 or n2 == 1:
        damping = 0.0

    pi = np.clip(input_msg.active_prob, PROB_CLAMP, 1.0 - PROB_CLAMP).reshape((n1, n2), order="F")
    gl = np.full((n1, n2), NEUTRAL)
    gr = np.full((n1, n2), NEUTRAL)
    gt = np.full((n1, n2), NEUTRAL)
    gb = np.full((n1, n2), NEUTRAL)
    gl[0, 0] = prior.lam
    row = (prior.p01_row, prior.p10_row)
    col = (prior.p01_col, prior.p10_col)

    def relax(target: np.ndarray, key: tuple[slice | int, slice | int], new: np.ndarray) -> float:
        old = target[key]
        updated = (1.0 - damping) * new + damping * old
        change = float(np.max(np.abs(updated - old))) if np.size(old) else 0.0
        target[key] = updated
        return change

    residual = float("inf")
    rounds = 0
    for rounds in range(1, sweeps + 1):  # noqa: B007
        residual = 0.0
        for i2 in range(1, n2):
            b1, b0 = _belief(pi[:, i2 - 1], _own(gl, gt)[:, i2 - 1], gb[:, i2 - 1])
            residual = max(residual, relax(gl, (slice(None), i2), _forward(b1, b0, *row)))
        for i2 in range(n2 - 2, -1, -1):
            b1, b0 = _belief(pi[:, i2 + 1], gr[:, i2 + 1], gb[:, i2 + 1])
            new = _backward(b1, b0, *row)
            if n1 > 1:
                # children below the first row also listen to their top parent
                o1, o0 = _belief(pi[:-1, i2 + 1], _own(gl, gt)[:-1, i2 + 1], gr[:-1, i2 + 1])
                new[1:] = _mixture_backward(b1[1:], b0[1:], o1, o0, row, col)
            residual = max(residual, relax(gr, (slice(None), i2), new))
        for i1 in range(1, n1):
            b1, b0 = _belief(pi[i1 - 1, :], _own(gl, gt)[i1 - 1, :], gr[i1 - 1, :])
            residual = max(residual, relax(gt, (i1, slice(None)), _forward(b1, b0, *col)))
        for i1 in range(n1 - 2, -1, -1):
            b1, b0 = _belief(pi[i1 + 1, :], gr[i1 + 1, :], gb[i1 + 1, :])
            new = _backward(b1, b0, *col)
            if n2 > 1:
                o1, o0 = _belief(pi[i1 + 1, :-1], _own(gl, gt)[i1 + 1, :-1], gb[i1 + 1, :-1])
                new[1:] = _mixture_backward(b1[1:], b0[1:], o1, o0, col, row)
            residual = max(residual, relax(gb, (i1, slice(None)), new))
        if residual < tol:
            break
    return MessageGrid(gamma_l=gl, gamma_r=gr, gamma_t=gt, gamma_b=gb, residual=residual, rounds=rounds)


def output_message(messages: MessageGrid) -> BernoulliMessage:
    """Combine each site's own-factor message with its child messages into the message towards SC-VBI."""
    own = _own(messages.gamma_l, messages.gamma_t)
    p1 = own * messages.gamma_r * messages.gamma_b
    p0 = (1.0 - own) * (1.0 - messages.gamma_r) * (1.0 - messages.gamma_b)
    return BernoulliMessage(active_prob=_ratio(p1, p1 + p0).reshape(-1, order="F"))


def ssi_markov2d(
    input_msg: BernoulliMessage, prior: Markov2DSupportPrior, sweeps: int, damping: float
) -> BernoulliMessage:
    messages = propagate_markov2d(input_msg, prior, sweeps, damping)
    logger.debug("Support messages propagated", rounds=messages.rounds, residual=messages.residual)
    return output_message(messages)


def brute_force_marginals(input_msg: BernoulliMessage, prior: SupportPrior) -> BernoulliMessage:
    """Exact extrinsic marginals by enumerating every support configuration.

    Site ``n`` receives ``p(s_n = 1 | inputs of every other site)`` under the support prior.

    Raises:
        SizeError: If the grid has more than 20 sites.
        InputError: If the message size does not match the prior.
    """
    n = support_size(prior)
    if n > BRUTE_FORCE_MAX_SITES:
        msg = f"enumeration over {n} sites exceeds the limit of {BRUTE_FORCE_MAX_SITES}"
        raise SizeError(msg)
    if input_msg.n != n:
        msg = f"input message has {input_msg.n} entries, prior has {n}"
        raise InputError(msg)
    configs = ((np.arange(2**n)[:, None] >> np.arange(n)) & 1).astype(bool)
    pi = np.asarray(input_msg.active_prob, dtype=np.float64)
    with np.errstate(divide="ignore"):
        ln_lik = np.where(configs, np.log(pi), np.log1p(-pi))
    ln_joint = log_support_prob(prior, configs) + np.sum(ln_lik, axis=1)
    out = np.empty(n)
    for site in range(n):
        ln_w = ln_joint - ln_lik[:, site]
        on = logsumexp(ln_w[configs[:, site]])
        total = logsumexp(ln_w)
        out[site] = np.exp(on - total) if np.isfinite(total) else NEUTRAL
    return BernoulliMessage(active_prob=out)


def structured_prior_message(
    input_msg: BernoulliMessage, prior: SupportPrior, sweeps: int, damping: float
) -> BernoulliMessage:
    """Dispatch on the support prior type."""
    if isinstance(prior, IIDSupportPrior):
        return ssi_iid(prior)
    return ssi_markov2d(input_msg, prior, sweeps, damping)
