"""Scalar model functions, density processes and integrability checks.

Three densities are tracked in log space along historical paths:

* ``rho`` turns the historical measure into the reference measure, under
  which the observed log prices are scaled Brownian motions and default
  arrives at unit intensity;
* ``hatL`` is the filtered utility density under the reference measure;
* ``zeta`` turns the reference measure into the risk-sensitive one.

``hatL = zeta * exp(-gamma * int eta_hat)`` holds exactly on every path.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from .exceptions import GridMisalignment
from .filtering import complete_simplex, eta_per_regime, q_per_regime, regime_drifts
from .model import MarketModel
from .policy import PolicyField


# ---------------------------------------------------------------------------
# Scalar functions
# ---------------------------------------------------------------------------


def eta(model: MarketModel, t: float, state, pi):
    """Running cost ``eta``.

    ``state`` is either an integer regime or a projected filter vector
    ``p_tilde`` (batched on leading axes), in which case the drifts are
    filter-averaged.
    """
    pi = np.asarray(pi, dtype=float)
    per = eta_per_regime(model, t, pi)
    if isinstance(state, (int, np.integer)):
        return per[..., int(state)]
    return np.sum(per * complete_simplex(state), axis=-1)


def q_vector(model: MarketModel, t: float, regime: int, pi) -> NDArray[np.float64]:
    """``Q(t, e_i, pi) = (Sigma Sigma')^{-1} theta_i + gamma * pi``."""
    return q_per_regime(model, t, pi)[..., regime, :]


def novikov_check(model: MarketModel, policy: PolicyField, t_grid, p_grid) -> tuple[bool, float]:
    """Bound ``(gamma^2/2) int sup (sigma^2 pi_S^2 + upsilon^2 pi_P^2) dt`` over a grid.

    Returns ``(passed, bound)``; ``passed`` is ``True`` iff the bound is finite.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    dts = np.diff(t_grid)
    pts = np.asarray(p_grid, dtype=float).reshape(len(p_grid), -1)
    sup = np.empty(dts.size)
    with np.errstate(over="ignore", invalid="ignore"):
        for k, t in enumerate(t_grid[:-1]):
            worst = 0.0
            for z in (0.0, 1.0):
                pi = policy(t, pts, np.full(pts.shape[0], z))
                val = model.sigma**2 * pi[..., 0] ** 2 + model.upsilon**2 * pi[..., 1] ** 2
                worst = max(worst, float(np.max(val)) if np.all(np.isfinite(val)) else np.inf)
            sup[k] = worst
        bound = 0.5 * model.gamma**2 * float(np.sum(sup * dts))
    return bool(np.isfinite(bound)), bound


# ---------------------------------------------------------------------------
# Density accumulation
# ---------------------------------------------------------------------------


@dataclass
class DensityLedger:
    """Log densities on a batch of paths, all starting at zero.

    ``log_rho`` holds only the Brownian factor while stepping; the default
    factor is added en bloc by :meth:`finish` because it is exact on the
    chain path.
    """

    log_rho: NDArray[np.float64]
    log_hatL: NDArray[np.float64]
    log_zeta: NDArray[np.float64]
    int_eta: NDArray[np.float64]
    hatL_jump: NDArray[np.float64] = field(default=None)

    @classmethod
    def start(cls, n_paths: int) -> "DensityLedger":
        z = np.zeros(n_paths)
        return cls(z.copy(), z.copy(), z.copy(), z.copy(), np.full(n_paths, np.nan))

    def finish(self, log_rho_default) -> "DensityLedger":
        self.log_rho = self.log_rho + np.asarray(log_rho_default, dtype=float)
        return self

    @property
    def rho(self):
        return np.exp(self.log_rho)

    @property
    def hatL(self):
        return np.exp(self.log_hatL)

    @property
    def zeta(self):
        return np.exp(self.log_zeta)


def accumulate_densities(
    ledger: DensityLedger,
    model: MarketModel,
    t: float,
    dt: float,
    regimes,
    dW,
    dY,
    p,
    p_minus,
    z,
    dH,
    pi,
) -> DensityLedger:
    """Add one grid step to every density in ``ledger``.

    Parameters
    ----------
    regimes : int array, shape (B,)
        True regime at the left end of the step.
    dW, dY : ndarray, shape (B, 2)
        Brownian and observed log-price increments.
    p, p_minus : ndarray, shape (B, N)
        Filter at the left end of the step and just before a default jump.
    z, dH : ndarray, shape (B,)
        Default indicator at the start of the step and its increment.
    pi : ndarray, shape (B, 2)
        Positions held over the step.

    Raises
    ------
    GridMisalignment
        If batch sizes disagree.
    """
    B = ledger.log_rho.shape[0]
    arrays = (regimes, dW, dY, p, p_minus, z, dH, pi)
    if any(np.shape(a)[0] != B for a in arrays):
        raise GridMisalignment("density inputs do not share one batch axis")
    s, u = model.sigma, model.upsilon
    theta = regime_drifts(model, t)
    alive = 1.0 - z

    # historical -> reference, Brownian part, on the true regime
    k0 = theta[regimes, 0] / s
    k1 = theta[regimes, 1] / u
    ledger.log_rho += -(k0 * dW[:, 0] + k1 * dW[:, 1]) - 0.5 * (k0**2 + k1**2) * dt

    # reference -> risk-sensitive, on the filter
    g = model.gamma
    pi_s = pi[:, 0]
    pi_p = pi[:, 1] * alive
    th_hat = p @ theta
    q0 = th_hat[:, 0] / s**2 + g * pi_s
    q1 = (th_hat[:, 1] / u**2 + g * pi_p) * alive
    cont = q0 * dY[:, 0] + q1 * dY[:, 1] - 0.5 * ((q0 * s) ** 2 + (q1 * u) ** 2) * dt
    h_hat = p @ model.hazard
    comp = -(h_hat - 1.0) * alive * dt
    jumped = dH > 0.5
    jump = 0.0
    if np.any(jumped):
        jump = np.zeros(B)
        jump[jumped] = np.log(p_minus[jumped] @ model.hazard)
        ledger.hatL_jump[jumped] = jump[jumped]
    r = model.rate
    mu_hat = p @ model.mu
    a_hat = p @ model.credit_drift_at(t)
    eta_hat = (-r + pi_s * (r - mu_hat) + pi_p * (r - a_hat)
               + 0.5 * (1.0 - g) * (s**2 * pi_s**2 + u**2 * pi_p**2))

    ledger.log_zeta += cont + comp + jump
    ledger.log_hatL += cont + comp + jump - model.gamma * eta_hat * dt
    ledger.int_eta += eta_hat * dt
    return ledger


def rho_default_factor(model: MarketModel, chain, tau: float) -> float:
    """Exact log of the default part of ``rho`` on ``[0, T]``.

    ``-log h(X_{tau-}) 1{tau <= T} - int_0^{T ^ tau} (1 - h(X_u)) du``.
    """
    T = chain.horizon
    upto = min(tau, T)
    out = -chain.integrate(1.0 - model.hazard, upto)
    if tau <= T:
        out -= np.log(model.hazard[chain.regime_before(tau)])
    return float(out)


# ---------------------------------------------------------------------------
# Criterion identity
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CriterionReport:
    """Three estimates of the expected utility with standard errors."""

    estimate_a: float
    se_a: float
    estimate_b: float
    se_b: float
    estimate_c: float
    se_c: float

    def row(self) -> list[float]:
        return [self.estimate_a, self.se_a, self.estimate_b, self.se_b, self.estimate_c, self.se_c]

    def max_pairwise_z(self) -> float:
        """Largest pairwise gap in units of ``sqrt(se_x^2 + se_y^2)``."""
        est = [(self.estimate_a, self.se_a), (self.estimate_b, self.se_b), (self.estimate_c, self.se_c)]
        worst = 0.0
        for i in range(3):
            for j in range(i + 1, 3):
                se = np.hypot(est[i][1], est[j][1])
                gap = abs(est[i][0] - est[j][0])
                worst = max(worst, gap / se if se > 0 else (0.0 if gap == 0 else np.inf))
        return float(worst)


def mean_se(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    return float(np.mean(x)), float(np.std(x, ddof=1) / np.sqrt(x.size))


def criterion_identity_check(
    model: MarketModel,
    policy: PolicyField,
    n_paths: int,
    seed: int,
    dt: float = 1e-3,
    result=None,
) -> CriterionReport:
    """Estimate the expected utility three ways on the same historical paths.

    (a) ``E[V_T^gamma] / gamma``; (b) ``(v^gamma / gamma) E[rho_T hatL_T]``;
    (c) ``(v^gamma / gamma) E[rho_T zeta_T exp(-gamma int eta_hat)]``.

    ``result`` may carry a precomputed :class:`~hiddenregime.engine.HistoricalResult`.
    """
    from .engine import simulate_historical

    if result is None:
        result = simulate_historical(model, policy, n_paths, dt, seed)
    g = model.gamma
    scale = model.v0**g / g
    a = np.exp(g * result.log_V) / g
    b = scale * np.exp(result.ledger.log_rho + result.ledger.log_hatL)
    c = scale * np.exp(result.ledger.log_rho + result.ledger.log_zeta - g * result.ledger.int_eta)
    return CriterionReport(*mean_se(a), *mean_se(b), *mean_se(c))
