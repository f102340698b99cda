"""Feedback policies ``(t, p_tilde, z) -> (pi_S, pi_P)``.

Every policy accepts batched inputs: ``p_tilde`` of shape ``(..., N - 1)``
and ``z`` of shape ``(...)``, and returns positions of shape ``(..., 2)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray


class PolicyField:
    """Base class for feedback policies."""

    def __call__(self, t: float, p_tilde, z) -> NDArray[np.float64]:
        raise NotImplementedError

    def bound(self) -> float:
        """Sup-norm of the positions, ``inf`` if unknown."""
        return np.inf


@dataclass(frozen=True)
class ConstantPolicy(PolicyField):
    """Fixed positions; the defaultable position is dropped after default."""

    pi_s: float
    pi_p: float = 0.0

    def __call__(self, t, p_tilde, z):
        z = np.asarray(z, dtype=float)
        out = np.empty(z.shape + (2,))
        out[..., 0] = self.pi_s
        out[..., 1] = self.pi_p * (1.0 - z)
        return out

    def bound(self) -> float:
        return float(max(abs(self.pi_s), abs(self.pi_p)))


def _interp_rows(t_grid, values, t):
    """Linear interpolation in time of a (n_t, n_p) table, returns one row."""
    k = np.searchsorted(t_grid, t, side="right") - 1
    k = int(np.clip(k, 0, t_grid.size - 2))
    w = (t - t_grid[k]) / (t_grid[k + 1] - t_grid[k])
    w = min(max(w, 0.0), 1.0)
    if w == 0.0:
        return values[k]
    return (1.0 - w) * values[k] + w * values[k + 1]


@dataclass(frozen=True)
class GridPolicy(PolicyField):
    """Bilinear policy tables on a (time, p) grid for two regimes.

    Parameters
    ----------
    t_grid, p_grid : ndarray
        Grid nodes.
    pre_stock, pre_credit : ndarray, shape (n_t, n_p)
        Positions before default.
    post_stock : ndarray, shape (n_t, n_p)
        Stock position after default (the defaultable position is zero).
    """

    t_grid: NDArray[np.float64]
    p_grid: NDArray[np.float64]
    pre_stock: NDArray[np.float64]
    pre_credit: NDArray[np.float64]
    post_stock: NDArray[np.float64]

    def __call__(self, t, p_tilde, z):
        p = np.clip(np.asarray(p_tilde, dtype=float)[..., 0], 0.0, 1.0)
        z = np.asarray(z, dtype=float)
        grid = self.p_grid
        j = np.clip(np.searchsorted(grid, p, side="right") - 1, 0, grid.size - 2)
        w = (p - grid[j]) / (grid[j + 1] - grid[j])

        def lerp(table):
            row = _interp_rows(self.t_grid, table, t)
            return row[j] + w * (row[j + 1] - row[j])

        post = z > 0.5
        out = np.empty(np.shape(p) + (2,))
        out[..., 0] = lerp(self.pre_stock)
        out[..., 1] = lerp(self.pre_credit)
        if np.any(post):
            out[..., 0] = np.where(post, lerp(self.post_stock), out[..., 0])
            out[..., 1] = np.where(post, 0.0, out[..., 1])
        return out

    def bound(self) -> float:
        return float(max(np.abs(self.pre_stock).max(), np.abs(self.pre_credit).max(),
                         np.abs(self.post_stock).max()))


@dataclass(frozen=True)
class PerturbedPolicy(PolicyField):
    """Base policy shifted by a constant offset.

    The credit offset applies only before default, so the defaultable
    position stays zero afterwards.
    """

    base: PolicyField
    delta_stock: float = 0.0
    delta_credit: float = 0.0

    def __call__(self, t, p_tilde, z):
        out = np.array(self.base(t, p_tilde, z), dtype=float)
        z = np.asarray(z, dtype=float)
        out[..., 0] += self.delta_stock
        out[..., 1] += self.delta_credit * (1.0 - z)
        return out

    def bound(self) -> float:
        return self.base.bound() + max(abs(self.delta_stock), abs(self.delta_credit))
