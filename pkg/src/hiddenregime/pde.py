"""Backward solver for 1-D degenerate parabolic equations on ``[0, 1]``.

The equation is

    u_t + d(t, p) u_pp + b(t, p) u_p + c(t, p) u + f(t, p, u) = 0,
    u(T, p) = g(p),

with ``d`` vanishing at both endpoints, so no boundary condition is
imposed and the endpoint rows reduce to one-sided upwind transport.
A Feynman-Kac Monte Carlo evaluator for the linear case in any dimension
lives at the end of the module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import solve_banded

from .exceptions import NonFiniteSurface, OutOfDomain, PicardDivergence


# ---------------------------------------------------------------------------
# Grid and surfaces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Grid1D:
    """Uniform grid of ``n_space`` nodes on ``[0, 1]`` and ``n_time`` steps on ``[0, T]``."""

    n_space: int
    n_time: int
    horizon: float

    def __post_init__(self):
        if self.n_space < 3 or self.n_time < 1 or not self.horizon > 0:
            raise ValueError("need n_space >= 3, n_time >= 1 and horizon > 0")

    @property
    def p(self) -> NDArray[np.float64]:
        return np.linspace(0.0, 1.0, self.n_space)

    @property
    def t(self) -> NDArray[np.float64]:
        return np.linspace(0.0, self.horizon, self.n_time + 1)

    @property
    def dp(self) -> float:
        return 1.0 / (self.n_space - 1)

    @property
    def dt(self) -> float:
        return self.horizon / self.n_time

    def cfl(self, d_max: float, b_max: float) -> float:
        """Stability ratio an explicit step of the same size would have."""
        return self.dt * (2.0 * d_max / self.dp**2 + b_max / self.dp)

    def refined(self, factor: int = 2) -> "Grid1D":
        return Grid1D((self.n_space - 1) * factor + 1, self.n_time * factor, self.horizon)


@dataclass(frozen=True)
class ValueSurface:
    """Values ``u(t_k, p_j)`` on a grid.

    ``transform`` is ``"w"`` for a log-criterion surface or ``"psi"`` for its
    exponential (Hopf-Cole) transform.
    """

    t: NDArray[np.float64]
    p: NDArray[np.float64]
    values: NDArray[np.float64]
    transform: str = "w"
    meta: dict = field(default_factory=dict)

    def row(self, t: float) -> NDArray[np.float64]:
        """Values at time ``t``, linear in time between rows."""
        if not (self.t[0] - 1e-12 <= t <= self.t[-1] + 1e-12):
            raise OutOfDomain(f"t={t} outside [{self.t[0]}, {self.t[-1]}]")
        k = int(np.clip(np.searchsorted(self.t, t, side="right") - 1, 0, self.t.size - 2))
        w = (t - self.t[k]) / (self.t[k + 1] - self.t[k])
        if w <= 0.0:
            return self.values[k]
        if w >= 1.0:
            return self.values[k + 1]
        return (1.0 - w) * self.values[k] + w * self.values[k + 1]

    def p_gradient(self) -> NDArray[np.float64]:
        """``du/dp`` at every node: central inside, one-sided at the ends."""
        return np.gradient(self.values, self.p, axis=1, edge_order=1)

    def to_csv(self, path) -> None:
        from .io import write_surface_csv

        write_surface_csv(path, self.t, self.p, self.values)


def interpolate(surface: ValueSurface, t: float, p):
    """Bilinear interpolation of ``surface`` at ``(t, p)``.

    Raises
    ------
    OutOfDomain
        If any query lies outside the grid hull.
    """
    p = np.asarray(p, dtype=float)
    if np.any(p < surface.p[0] - 1e-12) or np.any(p > surface.p[-1] + 1e-12):
        raise OutOfDomain("p outside [0, 1]")
    return np.interp(p, surface.p, surface.row(t))


# ---------------------------------------------------------------------------
# Coefficients and scheme
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PDECoefficients:
    """Coefficient callables, each vectorized over the ``p`` argument.

    ``diffusion`` multiplies ``u_pp`` directly (it already includes the 1/2).
    """

    diffusion: Callable
    drift: Callable
    source: Callable
    terminal: Callable
    nonlinear: Optional[Callable] = None


@dataclass(frozen=True)
class Scheme:
    theta: float = 1.0
    picard_max: int = 50
    picard_tol: float = 1e-12


def _operator(coeffs: PDECoefficients, t: float, p: NDArray, dp: float):
    """Tridiagonal spatial operator (lower, diag, upper) at time ``t``."""
    n = p.size
    d = np.broadcast_to(np.asarray(coeffs.diffusion(t, p), dtype=float), (n,)).copy()
    b = np.broadcast_to(np.asarray(coeffs.drift(t, p), dtype=float), (n,)).copy()
    c = np.broadcast_to(np.asarray(coeffs.source(t, p), dtype=float), (n,)).copy()
    scale = max(1.0, float(np.abs(d).max()))
    if np.any(d < -1e-14 * scale):
        raise ValueError("diffusion coefficient must be nonnegative")
    if abs(d[0]) > 1e-12 * scale or abs(d[-1]) > 1e-12 * scale:
        raise ValueError("diffusion must vanish at p = 0 and p = 1")
    d[0] = d[-1] = 0.0
    bp = np.maximum(b, 0.0) / dp
    bm = np.maximum(-b, 0.0) / dp
    lower = d / dp**2 + bm
    upper = d / dp**2 + bp
    diag = -2.0 * d / dp**2 - bp - bm + c
    # endpoint rows: only inward neighbours exist
    lower[0] = 0.0
    upper[-1] = 0.0
    upper[0] = b[0] / dp
    diag[0] = -b[0] / dp + c[0]
    lower[-1] = -b[-1] / dp
    diag[-1] = b[-1] / dp + c[-1]
    return lower, diag, upper, float(np.abs(d).max()), float(np.abs(b).max())


def _apply(lower, diag, upper, u):
    out = diag * u
    out[1:] += lower[1:] * u[:-1]
    out[:-1] += upper[:-1] * u[1:]
    return out


def _solve(ab, rhs, t):
    if not (np.all(np.isfinite(ab)) and np.all(np.isfinite(rhs))):
        raise NonFiniteSurface(f"non-finite coefficients or iterate at t={t:.6g}")
    return solve_banded((1, 1), ab, rhs)


def solve_backward(coeffs: PDECoefficients, grid: Grid1D, scheme: Scheme = Scheme()) -> ValueSurface:
    """Step the equation backward from ``T`` to ``0``.

    Uses a theta scheme in time (``theta = 1`` is fully implicit), central
    differences for diffusion and first-order upwinding for the drift. A
    nonlinear source is treated by Picard iteration: it is frozen at the
    previous iterate and the linear system is solved again until the
    max-norm change drops below ``picard_tol``.

    Raises
    ------
    PicardDivergence
        If ``picard_max`` iterations pass while the change is still growing.
    NonFiniteSurface
        If the surface stops being finite.
    """
    p, t = grid.p, grid.t
    dt, dp = grid.dt, grid.dp
    th = scheme.theta
    n = p.size
    U = np.empty((t.size, n))
    U[-1] = np.asarray(coeffs.terminal(p), dtype=float) * np.ones(n)
    iters = np.zeros(t.size, dtype=np.int64)
    l1, d1, u1, dmax, bmax = _operator(coeffs, t[-1], p, dp)
    cfl = grid.cfl(dmax, bmax)
    f1 = coeffs.nonlinear(t[-1], p, U[-1]) if coeffs.nonlinear is not None else None
    for k in range(t.size - 2, -1, -1):
        l0, d0, u0, dmax, bmax = _operator(coeffs, t[k], p, dp)
        cfl = max(cfl, grid.cfl(dmax, bmax))
        rhs = U[k + 1].copy()
        if th < 1.0:
            rhs += (1.0 - th) * dt * _apply(l1, d1, u1, U[k + 1])
            if f1 is not None:
                rhs += (1.0 - th) * dt * f1
        ab = np.zeros((3, n))
        ab[0, 1:] = -th * dt * u0[:-1]
        ab[1] = 1.0 - th * dt * d0
        ab[2, :-1] = -th * dt * l0[1:]
        if coeffs.nonlinear is None:
            U[k] = _solve(ab, rhs, t[k])
        else:
            guess = U[k + 1]
            prev_change = np.inf
            for it in range(1, scheme.picard_max + 1):
                f0 = coeffs.nonlinear(t[k], p, guess)
                new = _solve(ab, rhs + th * dt * f0, t[k])
                change = float(np.max(np.abs(new - guess)))
                guess = new
                if change < scheme.picard_tol * max(1.0, float(np.max(np.abs(new)))):
                    break
                if it == scheme.picard_max and change > prev_change:
                    raise PicardDivergence(f"Picard iteration diverging at t={t[k]:.6g}")
                prev_change = change
            iters[k] = it
            U[k] = guess
            f1 = coeffs.nonlinear(t[k], p, U[k])
        if not np.all(np.isfinite(U[k])):
            raise NonFiniteSurface(f"non-finite values at t={t[k]:.6g}")
        l1, d1, u1 = l0, d0, u0
    meta = {"cfl": cfl, "theta": th, "picard_iterations": iters}
    return ValueSurface(t=t, p=p, values=U, transform="raw", meta=meta)


# ---------------------------------------------------------------------------
# Feynman-Kac Monte Carlo
# ---------------------------------------------------------------------------


def _smooth_step(x):
    """C-infinity step, 0 for ``x <= 0`` and 1 for ``x >= 1``."""
    x = np.clip(x, 0.0, 1.0)
    a = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
    b = np.where(x < 1, np.exp(-1.0 / np.where(x < 1, 1.0 - x, 1.0)), 0.0)
    return a / (a + b)


def simplex_bump(x, width: float = 0.1):
    """Smooth cutoff: 1 on the projected simplex, 0 beyond distance ``width``.

    The distance is measured by the largest constraint violation
    ``max(0, -min_i x_i, sum_i x_i - 1)``.
    """
    x = np.asarray(x, dtype=float)
    viol = np.maximum(0.0, np.maximum(-x.min(axis=-1, initial=0.0), x.sum(axis=-1) - 1.0))
    return 1.0 - _smooth_step(viol / width)


def project_to_simplex(x):
    """Clip onto the projected simplex ``{x_i >= 0, sum x_i <= 1}``."""
    x = np.clip(np.asarray(x, dtype=float), 0.0, None)
    s = x.sum(axis=-1, keepdims=True)
    return np.where(s > 1.0, x / np.where(s > 0, s, 1.0), x)


@dataclass(frozen=True)
class FeynmanKacBundle:
    """Coefficients of a linear equation in Feynman-Kac form.

    ``drift(t, x)`` has shape ``(..., m)``, ``diffusion(t, x)`` shape
    ``(..., m, k)`` (so ``d = diffusion diffusion' / 2``) and ``rate(t, x)``
    shape ``(...)``; the represented value is
    ``E[exp(int_t^T rate(s, X_s) ds)]``.
    """

    drift: Callable
    diffusion: Callable
    rate: Callable
    dim: int
    noise_dim: int


@dataclass(frozen=True)
class MCEstimate:
    value: float
    se: float
    n_paths: int


def feynman_kac_estimate(
    bundle: FeynmanKacBundle,
    t: float,
    horizon: float,
    x0,
    n_paths: int,
    seed: int,
    dt: float = 1e-3,
    batch: int = 20000,
) -> MCEstimate:
    """Monte Carlo value of ``E[exp(int_t^T rate ds)]`` for the truncated diffusion.

    Drift and diffusion are multiplied by :func:`simplex_bump`; the rate is
    evaluated at the simplex projection of the state. The exponent is
    integrated by the trapezoid rule along an Euler path.
    """
    from .model import path_rng

    n = int(round((horizon - t) / dt))
    if n < 1 or abs(n * dt - (horizon - t)) > 1e-9 * max(1.0, horizon):
        raise ValueError("dt must divide the remaining horizon")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    vals = np.empty(n_paths)
    sq = math.sqrt(dt)
    for b, start in enumerate(range(0, n_paths, batch)):
        stop = min(start + batch, n_paths)
        B = stop - start
        rng = path_rng(seed, b, stream=1)
        x = np.broadcast_to(x0, (B, bundle.dim)).copy()
        integral = np.zeros(B)
        r_prev = bundle.rate(t, project_to_simplex(x))
        for k in range(n):
            s = t + k * dt
            cut = simplex_bump(x)[:, None]
            dB = rng.standard_normal((B, bundle.noise_dim)) * sq
            mu = bundle.drift(s, x) * cut
            sig = bundle.diffusion(s, x) * cut[..., None]
            x = x + mu * dt + np.einsum("bmk,bk->bm", sig, dB)
            r_next = bundle.rate(s + dt, project_to_simplex(x))
            integral += 0.5 * (r_prev + r_next) * dt
            r_prev = r_next
        vals[start:stop] = np.exp(integral)
    return MCEstimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_paths)), n_paths)
