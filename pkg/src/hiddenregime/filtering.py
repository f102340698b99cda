"""Regime filters: normalized, unnormalized and projected.

All array routines broadcast over leading batch axes so that many paths
can be stepped at once; the last axis always indexes regimes (or the
``N - 1`` projected coordinates). The dataclass wrappers give a one-path
interface.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.typing import NDArray

from .exceptions import NonFiniteIncrement
from .model import MarketModel

EPS_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# Small helpers
# ---------------------------------------------------------------------------


def hat_project(values, p):
    """Probability-weighted average ``sum_i values_i p_i`` over the last axis."""
    return np.sum(np.asarray(values, dtype=float) * np.asarray(p, dtype=float), axis=-1)


def complete_simplex(p_tilde):
    """Append the last coordinate ``1 - sum(p_tilde)``."""
    p_tilde = np.asarray(p_tilde, dtype=float)
    last = 1.0 - p_tilde.sum(axis=-1, keepdims=True)
    return np.concatenate([p_tilde, last], axis=-1)


def default_jump(p, hazard):
    """Filter update at the default time: ``p_i h_i / sum_j p_j h_j``."""
    p = np.asarray(p, dtype=float)
    w = p * hazard
    return w / w.sum(axis=-1, keepdims=True)


def clamp_renormalize(p, floor: float = EPS_FLOOR):
    """Renormalize, then lift coordinates below ``floor`` to exactly ``floor``.

    The unclamped coordinates are rescaled to carry the remaining mass, so
    the result lies in the simplex with every coordinate ``>= floor``.
    Returns the projected vector and the number of coordinates that were clamped.
    """
    p = p / p.sum(axis=-1, keepdims=True)
    low = p < floor
    n_clamped = int(np.count_nonzero(low))
    if n_clamped:
        rest = np.where(low, 0.0, p)
        k = low.sum(axis=-1, keepdims=True)
        scale = (1.0 - k * floor) / rest.sum(axis=-1, keepdims=True)
        p = np.where(low, floor, rest * scale)
    return p, n_clamped


def regime_drifts(model: MarketModel, t: float) -> NDArray[np.float64]:
    """Per-regime log-price drift, shape (N, 2)."""
    a = model.credit_drift_at(t)
    return np.column_stack([model.mu - 0.5 * model.sigma**2, a - 0.5 * model.upsilon**2])


def _check_finite(*arrays):
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise NonFiniteIncrement("non-finite increment passed to filter step")


# ---------------------------------------------------------------------------
# Normalized filter under the historical measure
# ---------------------------------------------------------------------------


class FilterUpdate(NamedTuple):
    p: NDArray[np.float64]
    z: NDArray[np.float64]
    p_minus: NDArray[np.float64]
    n_clamped: int


def filter_update(model: MarketModel, t: float, p, z, dY, dH, dt: float,
                  floor: float = EPS_FLOOR) -> FilterUpdate:
    """One Euler step of the normalized filter for a batch of paths.

    Parameters
    ----------
    p : ndarray, shape (..., N)
    z : ndarray, shape (...)
        Default indicator at the start of the step.
    dY : ndarray, shape (..., 2)
        Observed log-price increments. The second column is ignored where
        ``z = 1``.
    dH : ndarray, shape (...)
        1 where default occurs inside the step.

    Returns
    -------
    FilterUpdate
        ``p_minus`` is the state after the continuous part and before the
        default jump; ``p`` equals ``default_jump(p_minus)`` on defaulting paths.
    """
    p = np.asarray(p, dtype=float)
    z = np.asarray(z, dtype=float)
    dY = np.asarray(dY, dtype=float)
    dH = np.asarray(dH, dtype=float)
    _check_finite(dY, dH)
    A = model.generator_at(t)
    theta = regime_drifts(model, t)
    h = model.hazard
    alive = (1.0 - z)[..., None]

    theta_hat = p @ theta
    res0 = (dY[..., 0] - theta_hat[..., 0] * dt) / model.sigma**2
    res1 = (dY[..., 1] - theta_hat[..., 1] * dt) / model.upsilon**2 * alive[..., 0]
    innov = ((theta[:, 0] - theta_hat[..., 0:1]) * res0[..., None]
             + (theta[:, 1] - theta_hat[..., 1:2]) * res1[..., None])
    h_hat = p @ h

    p_new = p + (p @ A) * dt + p * innov - p * (h - h_hat[..., None]) * alive * dt
    p_minus, n_clamped = clamp_renormalize(p_new, floor)
    jumped = dH > 0.5
    if np.any(jumped):
        p_out = np.where(jumped[..., None], default_jump(p_minus, h), p_minus)
        z_out = np.maximum(z, jumped.astype(float))
    else:
        p_out, z_out = p_minus, z
    return FilterUpdate(p_out, z_out, p_minus, n_clamped)


@dataclass(frozen=True)
class FilterState:
    """Filter probabilities ``p``, default indicator ``z`` and time ``t``."""

    p: NDArray[np.float64]
    z: int
    t: float

    @property
    def p_tilde(self) -> NDArray[np.float64]:
        return self.p[:-1]


def filter_step_P(state: FilterState, model: MarketModel, dY, dH, dt: float) -> FilterState:
    """Advance one path of the normalized filter by ``dt``."""
    upd = filter_update(model, state.t, state.p, float(state.z), dY, float(dH), dt)
    return FilterState(p=upd.p, z=int(upd.z), t=state.t + dt)


def run_filter(model: MarketModel, prices, floor: float = EPS_FLOOR):
    """Filter a whole single price path.

    Returns
    -------
    p : ndarray, shape (n_steps + 1, N)
    z : ndarray, shape (n_steps + 1,)
    p_minus : ndarray or None
        State just before the default jump, if one occurred.
    """
    t = prices.t
    n = t.size - 1
    dt = prices.dt
    p = np.empty((n + 1, model.n_regimes))
    p[0] = model.p0
    z = prices.H.astype(float)
    p_minus = None
    for k in range(n):
        dH = prices.H[k + 1] - prices.H[k]
        upd = filter_update(model, t[k], p[k], z[k], prices.dY[k], dH, dt, floor)
        p[k + 1] = upd.p
        if dH:
            p_minus = upd.p_minus
    return p, z, p_minus


# ---------------------------------------------------------------------------
# Unnormalized filter under the reference measure
# ---------------------------------------------------------------------------


def eta_per_regime(model: MarketModel, t: float, pi) -> NDArray[np.float64]:
    """Per-regime ``eta(t, e_i, pi)``, shape (..., N)."""
    pi = np.asarray(pi, dtype=float)
    a = model.credit_drift_at(t)
    r, g = model.rate, model.gamma
    ps, pp = pi[..., 0:1], pi[..., 1:2]
    return (
        -r
        + ps * (r - model.mu)
        + pp * (r - a)
        + 0.5 * (1.0 - g) * (model.sigma**2 * ps**2 + model.upsilon**2 * pp**2)
    )


def q_per_regime(model: MarketModel, t: float, pi) -> NDArray[np.float64]:
    """Per-regime ``Q(t, e_i, pi)``, shape (..., N, 2)."""
    theta = regime_drifts(model, t)
    base = theta / np.array([model.sigma**2, model.upsilon**2])
    pi = np.asarray(pi, dtype=float)
    return base + model.gamma * pi[..., None, :]


def unnormalized_log_update(model: MarketModel, t: float, log_q, z, pi, dY, dH, dt: float):
    """One step of ``log q`` for a batch of paths.

    ``dY`` is the observed log-price increment, which equals
    ``Sigma_Y dW_hat`` under the reference measure. After default only the
    stock coordinate enters, and the defaultable position is zero. The
    terms are summed in the same order as the filtered density so that a
    single regime reproduces it bit for bit.
    """
    log_q = np.asarray(log_q, dtype=float)
    q = np.exp(log_q)
    z = np.asarray(z, dtype=float)
    alive = 1.0 - z
    pi = np.array(pi, dtype=float)
    pi = np.broadcast_to(pi, q.shape[:-1] + (2,)).copy()
    pi[..., 1] *= alive
    dY = np.asarray(dY, dtype=float)
    _check_finite(dY)
    A = model.generator_at(t)
    Q = q_per_regime(model, t, pi)
    Q = Q * np.stack([np.ones_like(alive), alive], axis=-1)[..., None, :]
    vol = np.array([model.sigma, model.upsilon])
    mart = np.sum(Q * dY[..., None, :], axis=-1) - 0.5 * np.sum((Q * vol) ** 2, axis=-1) * dt
    eta = eta_per_regime(model, t, pi)
    h = model.hazard
    comp = -(h - 1.0) * alive[..., None] * dt
    jump = np.where((np.asarray(dH) > 0.5)[..., None], np.log(h), 0.0)
    return log_q + ((mart + comp + jump - model.gamma * eta * dt) + ((q @ A) / q) * dt)


def unnormalized_update(model: MarketModel, t: float, q, z, pi, dY, dH, dt: float):
    """One step of the unnormalized filter ``q``; see :func:`unnormalized_log_update`."""
    return np.exp(unnormalized_log_update(model, t, np.log(q), z, pi, dY, dH, dt))


@dataclass(frozen=True)
class UnnormalizedFilterState:
    q: NDArray[np.float64]
    t: float
    z: int = 0

    @classmethod
    def initial(cls, model: MarketModel) -> "UnnormalizedFilterState":
        return cls(q=model.p0.copy(), t=0.0, z=0)


def unnormalized_filter_step(qstate: UnnormalizedFilterState, model: MarketModel, pi,
                             dW_hat, dxi_hat, dt: float) -> UnnormalizedFilterState:
    """Advance the unnormalized filter by one step.

    Parameters
    ----------
    dW_hat : array_like, shape (2,)
        Increment of the reference-measure Brownian motion.
    dxi_hat : float
        Increment of the compensated default indicator, ``dH - (1 - H) dt``.
    """
    dY = np.array([model.sigma, model.upsilon]) * np.asarray(dW_hat, dtype=float)
    dH = 1.0 if (qstate.z == 0 and dxi_hat > 0.0) else 0.0
    q = unnormalized_update(model, qstate.t, qstate.q, float(qstate.z), pi, dY, dH, dt)
    return UnnormalizedFilterState(q=q, t=qstate.t + dt, z=max(qstate.z, int(dH)))


# ---------------------------------------------------------------------------
# Projected filter under the risk-sensitive measure
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProjectedCoefficients:
    """Coefficients of the projected filter SDE at one time.

    Shapes carry the batch axes of the input ``p_tilde``; ``alpha`` has
    trailing shape ``(N - 1, 2)``.
    """

    alpha: NDArray[np.float64]
    beta_gamma: NDArray[np.float64]
    varrho: NDArray[np.float64]
    beta_varpi: NDArray[np.float64]


def projected_coefficients(model: MarketModel, t: float, p_tilde, pi, z=0.0) -> ProjectedCoefficients:
    """Diffusion, controlled drift, jump size and chain drift of the projected filter.

    After default (``z = 1``) the second diffusion column is zero, since only
    the stock keeps carrying information.
    """
    p = complete_simplex(p_tilde)
    z = np.asarray(z, dtype=float)
    theta = regime_drifts(model, t)
    A = model.generator_at(t)
    h = model.hazard
    vol = np.array([model.sigma, model.upsilon])
    theta_hat = p @ theta
    gap = theta[:-1] - theta_hat[..., None, :]
    alpha = p[..., :-1, None] * gap / vol
    alpha = alpha * np.stack([np.ones_like(z), 1.0 - z], axis=-1)[..., None, :]
    beta_varpi = (p @ A)[..., :-1]
    pi = np.asarray(pi, dtype=float)
    beta_gamma = beta_varpi + model.gamma * np.sum(alpha * (vol * pi)[..., None, :], axis=-1)
    h_til = p @ h
    varrho = p[..., :-1] * (h[:-1] - h_til[..., None]) / h_til[..., None]
    return ProjectedCoefficients(alpha, beta_gamma, varrho, beta_varpi)


def filter_step_tilde(model: MarketModel, t: float, p_tilde, z, pi, dW_tilde, dH, dt: float,
                      floor: float = EPS_FLOOR):
    """Euler step of the controlled projected filter (batch form).

    The default compensator ``-varrho * h_tilde * dt`` is applied while
    ``z = 0``; the jump itself is the map :func:`default_jump`.

    Returns
    -------
    p_tilde, z, p_minus, n_clamped
        ``p_minus`` is the full simplex vector before the jump.
    """
    dW_tilde = np.asarray(dW_tilde, dtype=float)
    _check_finite(dW_tilde)
    z = np.asarray(z, dtype=float)
    coef = projected_coefficients(model, t, p_tilde, pi, z)
    p = complete_simplex(p_tilde)
    h_til = p @ model.hazard
    drift = coef.beta_gamma - coef.varrho * (h_til * (1.0 - z))[..., None]
    step = drift * dt + np.sum(coef.alpha * dW_tilde[..., None, :], axis=-1)
    p_minus, n_clamped = clamp_renormalize(complete_simplex(np.asarray(p_tilde) + step), floor)
    dH = np.asarray(dH, dtype=float)
    p_out = np.where((dH > 0.5)[..., None], default_jump(p_minus, model.hazard), p_minus)
    z_out = np.maximum(z, (dH > 0.5).astype(float))
    return p_out[..., :-1], z_out, p_minus, n_clamped
