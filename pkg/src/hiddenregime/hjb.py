"""Post- and pre-default value functions, optimal feedback and HJB residuals.

Both value functions are solved in exponential variables
``psi = exp(w / (1 - gamma))``: the post-default equation becomes linear,
and the pre-default one keeps only the mild nonlinearity ``psi**gamma``
from the default coupling.

Before default the filter drifts even when no default happens, since
surviving is itself informative: the compensated default term contributes
``-p_i (h_i - h_tilde)`` to the drift of each filter coordinate. This drift
is part of the pre-default generator used here (see ``include_default_drift``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from .filtering import complete_simplex, default_jump, regime_drifts
from .model import MarketModel
from .pde import (
    FeynmanKacBundle,
    Grid1D,
    PDECoefficients,
    Scheme,
    ValueSurface,
    solve_backward,
)
from .policy import GridPolicy


# ---------------------------------------------------------------------------
# Coefficient fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PostCoefficients:
    """``alpha`` (..., N-1), ``phi`` (..., N-1) and ``psi`` (...)."""

    alpha: NDArray[np.float64]
    phi: NDArray[np.float64]
    psi: NDArray[np.float64]
    mu_tilde: NDArray[np.float64]
    beta_varpi: NDArray[np.float64]


def post_coefficients(model: MarketModel, t: float, p_tilde) -> PostCoefficients:
    """Stock-only filter diffusion, risk-adjusted drift and running reward after default."""
    p = complete_simplex(np.asarray(p_tilde, dtype=float))
    g, r, s = model.gamma, model.rate, model.sigma
    mu_t = p @ model.mu
    alpha = p[..., :-1] * (model.mu[:-1] - mu_t[..., None]) / s
    beta = (p @ model.generator_at(t))[..., :-1]
    sharpe = (mu_t - r) / s
    phi = beta + (g / (1.0 - g)) * sharpe[..., None] * alpha
    psi = g * r + (g / (2.0 * (1.0 - g))) * sharpe**2
    return PostCoefficients(alpha, phi, psi, mu_t, beta)


@dataclass(frozen=True)
class PreCoefficients:
    """Pre-default fields.

    ``alpha`` has trailing shape (N-1, 2); ``excess`` is ``(r - mu_tilde, r - a_tilde)``;
    ``default_drift`` is ``-p_i (h_i - h_tilde)`` for the first ``N - 1`` coordinates.
    """

    alpha: NDArray[np.float64]
    phi: NDArray[np.float64]
    psi: NDArray[np.float64]
    excess: NDArray[np.float64]
    default_drift: NDArray[np.float64]
    h_tilde: NDArray[np.float64]
    beta_varpi: NDArray[np.float64]


def pre_coefficients(model: MarketModel, t: float, p_tilde) -> PreCoefficients:
    """Filter diffusion, risk-adjusted drift and running reward before default."""
    p = complete_simplex(np.asarray(p_tilde, dtype=float))
    g, r = model.gamma, model.rate
    vol = np.array([model.sigma, model.upsilon])
    theta = regime_drifts(model, t)
    theta_hat = p @ theta
    alpha = p[..., :-1, None] * (theta[:-1] - theta_hat[..., None, :]) / vol
    mu_t = p @ model.mu
    a_t = p @ model.credit_drift_at(t)
    excess = np.stack([r - mu_t, r - a_t], axis=-1)
    beta = (p @ model.generator_at(t))[..., :-1]
    phi = beta - (g / (1.0 - g)) * np.sum(alpha * (excess / vol)[..., None, :], axis=-1)
    h_t = p @ model.hazard
    psi = (g / (2.0 * (1.0 - g))) * np.sum((excess / vol) ** 2, axis=-1) + g * r - h_t
    ddrift = -p[..., :-1] * (model.hazard[:-1] - h_t[..., None])
    return PreCoefficients(alpha, phi, psi, excess, ddrift, h_t, beta)


def jump_point(model: MarketModel, p) -> NDArray[np.float64]:
    """First filter coordinate after default, for two regimes."""
    p = np.asarray(p, dtype=float)
    full = np.stack([p, 1.0 - p], axis=-1)
    return default_jump(full, model.hazard)[..., 0]


# ---------------------------------------------------------------------------
# Problems
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PostDefaultProblem:
    """Solved post-default surfaces and the stock policy table."""

    model: MarketModel
    grid: Grid1D
    psi: ValueSurface
    w: ValueSurface
    stock: NDArray[np.float64]


@dataclass(frozen=True)
class PreDefaultProblem:
    """Solved pre-default surfaces and policy tables."""

    model: MarketModel
    grid: Grid1D
    post: PostDefaultProblem
    psi: ValueSurface
    w: ValueSurface
    stock: NDArray[np.float64]
    credit: NDArray[np.float64]
    include_default_drift: bool = True

    @property
    def max_picard(self) -> int:
        return int(np.max(self.psi.meta["picard_iterations"]))

    def policy_field(self) -> GridPolicy:
        return GridPolicy(self.grid.t, self.grid.p, self.stock, self.credit, self.post.stock)


def _require_two(model: MarketModel):
    if model.n_regimes != 2:
        raise ValueError("grid solvers need exactly two regimes; use the Feynman-Kac estimator")


def _p_tilde(p):
    return np.asarray(p, dtype=float)[..., None]


def solve_post(model: MarketModel, grid: Grid1D, scheme: Scheme = Scheme()) -> PostDefaultProblem:
    """Solve the linear post-default equation for ``psi`` and back-transform."""
    _require_two(model)
    g = model.gamma

    def coef(t, p):
        return post_coefficients(model, t, _p_tilde(p))

    pde = PDECoefficients(
        diffusion=lambda t, p: 0.5 * coef(t, p).alpha[..., 0] ** 2,
        drift=lambda t, p: coef(t, p).phi[..., 0],
        source=lambda t, p: coef(t, p).psi / (1.0 - g),
        terminal=lambda p: np.ones_like(p),
    )
    raw = solve_backward(pde, grid, scheme)
    psi = ValueSurface(raw.t, raw.p, raw.values, "psi", dict(raw.meta, problem="post"))
    w = ValueSurface(raw.t, raw.p, (1.0 - g) * np.log(raw.values), "w", {"problem": "post"})
    stock = _post_stock_table(model, grid, w)
    return PostDefaultProblem(model, grid, psi, w, stock)


def _post_stock_table(model, grid, w: ValueSurface):
    wp = w.p_gradient()
    out = np.empty_like(wp)
    for k, t in enumerate(grid.t):
        c = post_coefficients(model, t, _p_tilde(grid.p))
        out[k] = (c.mu_tilde - model.rate + model.sigma * wp[k] * c.alpha[..., 0]) / (
            model.sigma**2 * (1.0 - model.gamma)
        )
    return out


def solve_pre(
    model: MarketModel,
    post: PostDefaultProblem,
    grid: Optional[Grid1D] = None,
    scheme: Scheme = Scheme(),
    include_default_drift: bool = True,
) -> PreDefaultProblem:
    """Solve the semilinear pre-default equation for ``psi`` and back-transform.

    The coupling source is ``h_tilde * exp(w_post(t, j(p))) * psi**gamma / (1 - gamma)``
    with ``j`` the filter's default jump. Setting ``include_default_drift=False``
    drops the survival drift of the filter from the generator.
    """
    _require_two(model)
    grid = grid or post.grid
    if grid != post.grid:
        raise ValueError("pre- and post-default problems must share one grid")
    g = model.gamma
    jp = jump_point(model, grid.p)
    w_post_at_jump = np.array([np.interp(jp, grid.p, row) for row in post.w.values])
    row_of = {float(t): k for k, t in enumerate(grid.t)}

    def coef(t, p):
        return pre_coefficients(model, t, _p_tilde(p))

    def drift(t, p):
        c = coef(t, p)
        b = c.phi[..., 0]
        return b + c.default_drift[..., 0] if include_default_drift else b

    def coupling(t, p, u):
        k = row_of[float(t)]
        c = coef(t, p)
        return c.h_tilde * np.exp(w_post_at_jump[k]) * np.maximum(u, 1e-300) ** g / (1.0 - g)

    pde = PDECoefficients(
        diffusion=lambda t, p: 0.5 * np.sum(coef(t, p).alpha[..., 0, :] ** 2, axis=-1),
        drift=drift,
        source=lambda t, p: coef(t, p).psi / (1.0 - g),
        terminal=lambda p: np.ones_like(p),
        nonlinear=coupling,
    )
    raw = solve_backward(pde, grid, scheme)
    psi = ValueSurface(raw.t, raw.p, raw.values, "psi", dict(raw.meta, problem="pre"))
    w = ValueSurface(raw.t, raw.p, (1.0 - g) * np.log(raw.values), "w", {"problem": "pre"})
    stock, credit = _pre_tables(model, grid, w)
    return PreDefaultProblem(model, grid, post, psi, w, stock, credit, include_default_drift)


def _pre_tables(model, grid, w: ValueSurface):
    wp = w.p_gradient()
    stock = np.empty_like(wp)
    credit = np.empty_like(wp)
    k1 = model.sigma**2 * (1.0 - model.gamma)
    k2 = model.upsilon**2 * (1.0 - model.gamma)
    for k, t in enumerate(grid.t):
        c = pre_coefficients(model, t, _p_tilde(grid.p))
        al = c.alpha[..., 0, :]
        stock[k] = (-c.excess[..., 0] + model.sigma * al[..., 0] * wp[k]) / k1
        credit[k] = (-c.excess[..., 1] + model.upsilon * al[..., 1] * wp[k]) / k2
    return stock, credit


def solve_both(model: MarketModel, grid: Grid1D, scheme: Scheme = Scheme(),
               include_default_drift: bool = True) -> PreDefaultProblem:
    post = solve_post(model, grid, scheme)
    return solve_pre(model, post, grid, scheme, include_default_drift)


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------


def _table_at(grid: Grid1D, table, t, p):
    surf = ValueSurface(grid.t, grid.p, table)
    return np.interp(np.clip(p, 0.0, 1.0), grid.p, surf.row(t))


def post_policy(problem: PostDefaultProblem, t: float, p):
    """Optimal stock position after default at ``(t, p)``."""
    return _table_at(problem.grid, problem.stock, t, p)


def pre_policy(problem: PreDefaultProblem, t: float, p, z: int = 0):
    """Optimal ``(pi_S, pi_P)`` at ``(t, p, z)``; ``pi_P = 0`` after default."""
    if z:
        ps = post_policy(problem.post, t, p)
        return np.stack([ps, np.zeros_like(ps)], axis=-1)
    ps = _table_at(problem.grid, problem.stock, t, p)
    pp = _table_at(problem.grid, problem.credit, t, p)
    return np.stack([ps, pp], axis=-1)


# ---------------------------------------------------------------------------
# Residuals
# ---------------------------------------------------------------------------


def _derivatives(w: ValueSurface):
    """Forward time difference and central p differences at interior nodes."""
    W = w.values
    dt = w.t[1] - w.t[0]
    dp = w.p[1] - w.p[0]
    wt = (W[1:, 1:-1] - W[:-1, 1:-1]) / dt
    wp = (W[:-1, 2:] - W[:-1, :-2]) / (2 * dp)
    wpp = (W[:-1, 2:] - 2 * W[:-1, 1:-1] + W[:-1, :-2]) / dp**2
    return wt, wp, wpp


def post_residual_terms(model, t, p, wt, wp, wpp, pi_s):
    c = post_coefficients(model, t, _p_tilde(p))
    g, r, s = model.gamma, model.rate, model.sigma
    al = c.alpha[..., 0]
    return (
        wt
        + 0.5 * al**2 * (wpp + wp**2)
        + g * r
        + wp * (c.beta_varpi[..., 0] + g * s * pi_s * al)
        - g * pi_s * (r - c.mu_tilde)
        - 0.5 * s**2 * g * (1.0 - g) * pi_s**2
    )


def pre_residual_terms(model, t, p, wt, wp, wpp, pi_s, pi_p, w_pre, w_post_jump,
                       include_default_drift=True):
    c = pre_coefficients(model, t, _p_tilde(p))
    g, r = model.gamma, model.rate
    s, u = model.sigma, model.upsilon
    al = c.alpha[..., 0, :]
    a2 = np.sum(al**2, axis=-1)
    drift = c.beta_varpi[..., 0] + g * (al[..., 0] * s * pi_s + al[..., 1] * u * pi_p)
    if include_default_drift:
        drift = drift + c.default_drift[..., 0]
    return (
        wt
        + 0.5 * a2 * (wpp + wp**2)
        + wp * drift
        + c.h_tilde * (np.exp(w_post_jump - w_pre) - 1.0)
        + g * r
        - g * pi_s * c.excess[..., 0]
        - g * pi_p * c.excess[..., 1]
        - 0.5 * g * (1.0 - g) * (s**2 * pi_s**2 + u**2 * pi_p**2)
    )


def residual_grid(problem: PreDefaultProblem, z: int, delta=(0.0, 0.0)) -> NDArray[np.float64]:
    """HJB residual at all interior nodes and every time row but the last.

    ``delta`` shifts the computed optimal positions; the residual should be
    near zero at ``delta = 0`` and negative otherwise.
    """
    model = problem.model
    grid = problem.grid
    p_in = grid.p[1:-1]
    out = np.empty((grid.n_time, p_in.size))
    if z:
        wt, wp, wpp = _derivatives(problem.post.w)
        for k, t in enumerate(grid.t[:-1]):
            pi_s = problem.post.stock[k, 1:-1] + delta[0]
            out[k] = post_residual_terms(model, t, p_in, wt[k], wp[k], wpp[k], pi_s)
        return out
    wt, wp, wpp = _derivatives(problem.w)
    jp = jump_point(model, p_in)
    for k, t in enumerate(grid.t[:-1]):
        pi_s = problem.stock[k, 1:-1] + delta[0]
        pi_p = problem.credit[k, 1:-1] + delta[1]
        wj = np.interp(jp, grid.p, problem.post.w.values[k])
        out[k] = pre_residual_terms(model, t, p_in, wt[k], wp[k], wpp[k], pi_s, pi_p,
                                    problem.w.values[k, 1:-1], wj, problem.include_default_drift)
    return out


def hjb_residual(problem: PreDefaultProblem, k: int, j: int, z: int, pi=None) -> float:
    """HJB residual at node ``(t_k, p_j)`` for the optimal or a given policy.

    ``j`` must be an interior index and ``k < n_time``.
    """
    grid = problem.grid
    if not (0 < j < grid.n_space - 1 and 0 <= k < grid.n_time):
        raise ValueError("residual needs an interior node")
    model = problem.model
    t = grid.t[k]
    w = problem.post.w if z else problem.w
    wt, wp, wpp = (a[k, j - 1] for a in _derivatives(w))
    p = grid.p[j : j + 1]
    if z:
        pi_s = problem.post.stock[k, j] if pi is None else pi[0]
        return float(post_residual_terms(model, t, p, wt, wp, wpp, pi_s)[0])
    pi_s, pi_p = (problem.stock[k, j], problem.credit[k, j]) if pi is None else pi
    wj = np.interp(jump_point(model, p), grid.p, problem.post.w.values[k])
    return float(pre_residual_terms(model, t, p, wt, wp, wpp, pi_s, pi_p,
                                    problem.w.values[k, j], wj,
                                    problem.include_default_drift)[0])


# ---------------------------------------------------------------------------
# Feynman-Kac form of the post-default problem (any N)
# ---------------------------------------------------------------------------


def post_default_bundle(model: MarketModel) -> FeynmanKacBundle:
    """Coefficients representing ``psi_post`` for :func:`~hiddenregime.pde.feynman_kac_estimate`."""
    g = model.gamma
    m = model.n_regimes - 1

    def drift(t, x):
        return post_coefficients(model, t, x).phi

    def diffusion(t, x):
        return post_coefficients(model, t, x).alpha[..., None]

    def rate(t, x):
        return post_coefficients(model, t, x).psi / (1.0 - g)

    return FeynmanKacBundle(drift, diffusion, rate, dim=m, noise_dim=1)
