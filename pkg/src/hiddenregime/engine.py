"""Batched simulation of the full system under the historical measure.

Each path draws its chain, default threshold and Brownian increments from
its own counter-based stream (:func:`~hiddenregime.model.path_rng`), so
results do not depend on the batch size. Within a batch all paths are
stepped together on the time grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from .exceptions import PolicyNonFinite
from .filtering import EPS_FLOOR, default_jump, filter_update, unnormalized_log_update
from .measures import DensityLedger, accumulate_densities, rho_default_factor
from .model import (
    MarketModel,
    credit_drift_on_grid,
    default_grid_index,
    draw_default,
    path_rng,
    simulate_chain,
    time_grid,
    wealth_log_increment,
)
from .policy import PolicyField

BATCH = 5000


@dataclass
class HistoricalResult:
    """Per-path terminal quantities and diagnostics.

    Attributes
    ----------
    log_V : ndarray
        Log terminal wealth.
    ledger : DensityLedger
        Terminal log densities (``log_rho`` includes the default factor).
    tau : ndarray
        Exact default times (``T + 1`` if none).
    min_p : float
        Smallest filter coordinate seen on any path and step.
    n_clamped, n_steps_total : int
        Clamp events and the number of path-steps.
    jump_error : float
        Largest gap between the post-default filter and the jump map applied
        to the pre-jump state, over defaulted paths.
    identity_dev, identity_norm_dev : ndarray or None
        Per-path max deviation ``|q_i / hatL - p_i|`` and ``|p_i - q_i / sum q|``.
    paths : dict or None
        Full trajectories when requested.
    """

    log_V: NDArray[np.float64]
    ledger: DensityLedger
    tau: NDArray[np.float64]
    min_p: float
    n_clamped: int
    n_steps_total: int
    jump_error: float
    n_defaults: int
    identity_dev: Optional[NDArray[np.float64]] = None
    identity_norm_dev: Optional[NDArray[np.float64]] = None
    paths: Optional[dict] = None


@dataclass
class _PathInputs:
    regimes: NDArray[np.int64]
    dW: NDArray[np.float64]
    tau: NDArray[np.float64]
    kd: NDArray[np.int64]
    log_rho_default: NDArray[np.float64]


def draw_inputs(model: MarketModel, t: NDArray, seed: int, start: int, stop: int) -> _PathInputs:
    """Chain, default time and Brownian increments for paths ``start..stop-1``.

    ``regimes`` holds the chain on every grid node, including ``T``.
    """
    n = t.size - 1
    dt = t[1] - t[0]
    B = stop - start
    regimes = np.empty((B, n + 1), dtype=np.int64)
    dW = np.empty((B, n, 2))
    tau = np.empty(B)
    kd = np.empty(B, dtype=np.int64)
    lrd = np.empty(B)
    sq = math.sqrt(dt)
    for b in range(B):
        rng = path_rng(seed, start + b)
        chain = simulate_chain(model, rng)
        tau[b] = draw_default(model, chain, float(rng.exponential()))
        dW[b] = rng.standard_normal((n, 2)) * sq
        regimes[b] = chain.regime_at(t)
        kd[b] = default_grid_index(t, tau[b])
        lrd[b] = rho_default_factor(model, chain, tau[b])
    return _PathInputs(regimes, dW, tau, kd, lrd)


def simulate_historical(
    model: MarketModel,
    policy: PolicyField,
    n_paths: int,
    dt: float,
    seed: int,
    track_unnormalized: bool = False,
    keep_paths: bool = False,
    floor: float = EPS_FLOOR,
    batch: int = BATCH,
    path_offset: int = 0,
    workers: int = 1,
) -> HistoricalResult:
    """Simulate chain, default, prices, filter, wealth and densities.

    The policy sees the filter at the left end of each step. Default is
    snapped to the first grid point at or after the exact default time.

    Paths ``path_offset .. path_offset + n_paths - 1`` are simulated. With
    ``workers > 1`` contiguous chunks run in separate processes; since every
    path owns its random stream the result equals the single-worker one.
    """
    if workers > 1 and n_paths > 1:
        return _simulate_parallel(model, policy, n_paths, dt, seed, track_unnormalized,
                                  keep_paths, floor, batch, path_offset, workers)
    t = time_grid(model.horizon, dt)
    n = t.size - 1
    N = model.n_regimes
    a_grid = credit_drift_on_grid(model, t[:-1])

    log_V = np.empty(n_paths)
    taus = np.empty(n_paths)
    ledgers = []
    min_p = 1.0
    n_clamped = 0
    jump_error = 0.0
    n_defaults = 0
    dev = np.zeros(n_paths) if track_unnormalized else None
    ndev = np.zeros(n_paths) if track_unnormalized else None
    store = {} if keep_paths else None

    for start in range(0, n_paths, batch):
        stop = min(start + batch, n_paths)
        B = stop - start
        inp = draw_inputs(model, t, seed, path_offset + start, path_offset + stop)
        taus[start:stop] = inp.tau
        p = np.broadcast_to(model.p0, (B, N)).copy()
        lv = np.full(B, math.log(model.v0))
        ledger = DensityLedger.start(B)
        if track_unnormalized:
            log_q = np.log(p)
            d1 = np.zeros(B)
            d2 = np.zeros(B)
        if keep_paths:
            rec = {
                "p": np.empty((B, n + 1, N)),
                "logV": np.empty((B, n + 1)),
                "dY": np.empty((B, n, 2)),
                "pi": np.empty((B, n, 2)),
            }
            rec["p"][:, 0] = p
            rec["logV"][:, 0] = lv
        for k in range(n):
            tk = t[k]
            X = inp.regimes[:, k]
            dW = inp.dW[:, k]
            z = (k >= inp.kd).astype(float)
            dH = (k + 1 == inp.kd).astype(float)
            mu_k = model.mu[X]
            a_k = a_grid[k][X]
            dY = np.empty((B, 2))
            dY[:, 0] = (mu_k - 0.5 * model.sigma**2) * dt + model.sigma * dW[:, 0]
            dY[:, 1] = ((a_k - 0.5 * model.upsilon**2) * dt + model.upsilon * dW[:, 1]) * (1.0 - z)

            pi = np.array(policy(tk, p[:, :-1], z), dtype=float)
            if not np.all(np.isfinite(pi)):
                raise PolicyNonFinite(f"policy returned non-finite positions at t={tk}")
            pi[:, 1] *= 1.0 - z
            lv += wealth_log_increment(model, mu_k, a_k, pi[:, 0], pi[:, 1], dW[:, 0], dW[:, 1], dt)

            upd = filter_update(model, tk, p, z, dY, dH, dt, floor)
            accumulate_densities(ledger, model, tk, dt, X, dW, dY, p, upd.p_minus, z, dH, pi)
            if track_unnormalized:
                log_q = unnormalized_log_update(model, tk, log_q, z, pi, dY, dH, dt)
            n_clamped += upd.n_clamped
            if np.any(dH > 0.5):
                hit = dH > 0.5
                err = np.abs(upd.p[hit] - default_jump(upd.p_minus[hit], model.hazard))
                jump_error = max(jump_error, float(err.max()))
                n_defaults += int(hit.sum())
            p = upd.p
            min_p = min(min_p, float(p.min()))
            if track_unnormalized:
                q = np.exp(log_q)
                ratio = np.exp(log_q - ledger.log_hatL[:, None])
                d1 = np.maximum(d1, np.max(np.abs(ratio - p), axis=1))
                d2 = np.maximum(d2, np.max(np.abs(p - q / q.sum(axis=1, keepdims=True)), axis=1))
            if keep_paths:
                rec["p"][:, k + 1] = p
                rec["logV"][:, k + 1] = lv
                rec["dY"][:, k] = dY
                rec["pi"][:, k] = pi

        ledger.finish(inp.log_rho_default)
        ledgers.append(ledger)
        log_V[start:stop] = lv
        if track_unnormalized:
            dev[start:stop] = d1
            ndev[start:stop] = d2
        if keep_paths:
            rec["regimes"] = inp.regimes
            rec["dW"] = inp.dW
            rec["kd"] = inp.kd
            for key, val in rec.items():
                store.setdefault(key, []).append(val)

    full = DensityLedger(
        log_rho=np.concatenate([l.log_rho for l in ledgers]),
        log_hatL=np.concatenate([l.log_hatL for l in ledgers]),
        log_zeta=np.concatenate([l.log_zeta for l in ledgers]),
        int_eta=np.concatenate([l.int_eta for l in ledgers]),
        hatL_jump=np.concatenate([l.hatL_jump for l in ledgers]),
    )
    paths = None
    if keep_paths:
        paths = {key: np.concatenate(val) for key, val in store.items()}
        paths["t"] = t
        paths["tau"] = taus
    return HistoricalResult(
        log_V=log_V,
        ledger=full,
        tau=taus,
        min_p=min_p,
        n_clamped=n_clamped,
        n_steps_total=n_paths * n,
        jump_error=jump_error,
        n_defaults=n_defaults,
        identity_dev=dev,
        identity_norm_dev=ndev,
        paths=paths,
    )


def _simulate_parallel(model, policy, n_paths, dt, seed, track_unnormalized, keep_paths,
                       floor, batch, path_offset, workers) -> HistoricalResult:
    from concurrent.futures import ProcessPoolExecutor

    edges = np.linspace(0, n_paths, min(workers, n_paths) + 1).astype(int)
    with ProcessPoolExecutor(max_workers=len(edges) - 1) as pool:
        futures = [
            pool.submit(simulate_historical, model, policy, int(b - a), dt, seed,
                        track_unnormalized, keep_paths, floor, batch, path_offset + int(a), 1)
            for a, b in zip(edges[:-1], edges[1:])
        ]
        parts = [f.result() for f in futures]
    return merge_results(parts)


def merge_results(parts) -> HistoricalResult:
    """Concatenate results of consecutive path ranges."""
    cat = np.concatenate
    ledger = DensityLedger(
        log_rho=cat([r.ledger.log_rho for r in parts]),
        log_hatL=cat([r.ledger.log_hatL for r in parts]),
        log_zeta=cat([r.ledger.log_zeta for r in parts]),
        int_eta=cat([r.ledger.int_eta for r in parts]),
        hatL_jump=cat([r.ledger.hatL_jump for r in parts]),
    )
    paths = None
    if parts[0].paths is not None:
        paths = {key: cat([r.paths[key] for r in parts]) for key in parts[0].paths if key != "t"}
        paths["t"] = parts[0].paths["t"]
    track = parts[0].identity_dev is not None
    return HistoricalResult(
        log_V=cat([r.log_V for r in parts]),
        ledger=ledger,
        tau=cat([r.tau for r in parts]),
        min_p=min(r.min_p for r in parts),
        n_clamped=sum(r.n_clamped for r in parts),
        n_steps_total=sum(r.n_steps_total for r in parts),
        jump_error=max(r.jump_error for r in parts),
        n_defaults=sum(r.n_defaults for r in parts),
        identity_dev=cat([r.identity_dev for r in parts]) if track else None,
        identity_norm_dev=cat([r.identity_norm_dev for r in parts]) if track else None,
        paths=paths,
    )
