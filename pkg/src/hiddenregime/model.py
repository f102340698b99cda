"""Market model and simulation of its primitives under the historical measure.

The market has a hidden continuous-time Markov chain with ``N`` regimes.
The chain modulates the drift of a stock, the drift of a defaultable
security and the default intensity. Simulated objects are the chain path,
the default time, the two price paths and the wealth of a feedback policy.

Regimes are indexed ``0..N-1`` in Python and written as ``1..N`` in CSV
output.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Optional

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import expm

from .exceptions import (
    BadInitialDistribution,
    GammaOutOfRange,
    InvalidParameter,
    ModelValidationError,
    NonConservativeGenerator,
    NonPositiveHazard,
    PolicyNonFinite,
)

GENERATOR_TOL = 1e-10
SIMPLEX_TOL = 1e-10


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MarketModel:
    """Full parameterization of the regime-switching market.

    Parameters
    ----------
    generator_times : ndarray, shape (K,)
        Start times of the piecewise-constant generator schedule. The first
        entry must be 0.
    generator_values : ndarray, shape (K, N, N)
        Rate matrix in force from each start time on.
    mu : ndarray, shape (N,)
        Stock drift per regime.
    credit_times : ndarray, shape (M,)
        Start times of the credit drift schedule (first entry 0).
    credit_values : ndarray, shape (M, N)
        Drift of the defaultable security per regime on each segment.
    hazard : ndarray, shape (N,)
        Default intensity per regime.
    sigma, upsilon : float
        Volatilities of the stock and of the defaultable security.
    rate : float
        Risk-free rate.
    gamma : float
        Power-utility exponent in (0, 1).
    horizon : float
        Investment horizon ``T``.
    p0 : ndarray, shape (N,)
        Initial regime distribution.
    s0, P0, v0 : float
        Initial stock price, defaultable price and wealth.
    """

    generator_times: NDArray[np.float64]
    generator_values: NDArray[np.float64]
    mu: NDArray[np.float64]
    credit_times: NDArray[np.float64]
    credit_values: NDArray[np.float64]
    hazard: NDArray[np.float64]
    sigma: float
    upsilon: float
    rate: float
    gamma: float
    horizon: float
    p0: NDArray[np.float64]
    s0: float = 1.0
    P0: float = 1.0
    v0: float = 1.0

    def __post_init__(self):
        for name in (
            "generator_times",
            "generator_values",
            "mu",
            "credit_times",
            "credit_values",
            "hazard",
            "p0",
        ):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for name in ("sigma", "upsilon", "rate", "gamma", "horizon", "s0", "P0", "v0"):
            object.__setattr__(self, name, float(getattr(self, name)))

    # -- schedule lookups -------------------------------------------------

    @property
    def n_regimes(self) -> int:
        return int(self.mu.shape[0])

    @property
    def vol_matrix(self) -> NDArray[np.float64]:
        """Diagonal volatility matrix of the observed log prices."""
        return np.diag([self.sigma, self.upsilon])

    def generator_at(self, t: float) -> NDArray[np.float64]:
        k = np.searchsorted(self.generator_times, t, side="right") - 1
        return self.generator_values[max(int(k), 0)]

    def credit_drift_at(self, t: float) -> NDArray[np.float64]:
        k = np.searchsorted(self.credit_times, t, side="right") - 1
        return self.credit_values[max(int(k), 0)]

    def breakpoints(self) -> NDArray[np.float64]:
        """Sorted union of schedule change times inside ``[0, T)``."""
        pts = np.union1d(self.generator_times, self.credit_times)
        return pts[pts < self.horizon]

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "n_regimes": self.n_regimes,
            "generator": [
                {"t": float(t), "matrix": m.tolist()}
                for t, m in zip(self.generator_times, self.generator_values)
            ],
            "mu": self.mu.tolist(),
            "credit_drift": [
                {"t": float(t), "values": v.tolist()}
                for t, v in zip(self.credit_times, self.credit_values)
            ],
            "hazard": self.hazard.tolist(),
            "sigma": self.sigma,
            "upsilon": self.upsilon,
            "rate": self.rate,
            "gamma": self.gamma,
            "horizon": self.horizon,
            "p0": self.p0.tolist(),
            "s0": self.s0,
            "P0": self.P0,
            "v0": self.v0,
        }

    def model_hash(self) -> str:
        """SHA-256 of the canonical JSON form (first 16 hex digits)."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def replace(self, **changes) -> "MarketModel":
        """Copy with some fields changed; schedules given as plain values are accepted."""
        data = model_to_kwargs(self)
        data.update(changes)
        return build_model(**data)


def model_to_kwargs(model: MarketModel) -> dict:
    return {
        "generator": list(zip(model.generator_times.tolist(), model.generator_values)),
        "mu": model.mu,
        "credit_drift": list(zip(model.credit_times.tolist(), model.credit_values)),
        "hazard": model.hazard,
        "sigma": model.sigma,
        "upsilon": model.upsilon,
        "rate": model.rate,
        "gamma": model.gamma,
        "horizon": model.horizon,
        "p0": model.p0,
        "s0": model.s0,
        "P0": model.P0,
        "v0": model.v0,
    }


def _schedule(raw, width_ndim: int) -> tuple[NDArray, NDArray]:
    """Normalize a schedule given as a constant or as ``[(t, value), ...]``."""
    if isinstance(raw, (list, tuple)) and raw and isinstance(raw[0], Mapping):
        key = "matrix" if "matrix" in raw[0] else "values"
        pairs = [(float(item["t"]), item[key]) for item in raw]
    elif isinstance(raw, (list, tuple)) and raw and isinstance(raw[0], tuple):
        pairs = [(float(t), v) for t, v in raw]
    else:
        pairs = [(0.0, raw)]
    pairs.sort(key=lambda tv: tv[0])
    times = np.array([t for t, _ in pairs], dtype=float)
    values = np.array([np.asarray(v, dtype=float) for _, v in pairs])
    if values.ndim != width_ndim + 1:
        raise InvalidParameter(f"schedule values must be {width_ndim}-dimensional")
    return times, values


def build_model(
    generator,
    mu,
    credit_drift,
    hazard,
    sigma: float,
    upsilon: float,
    rate: float,
    gamma: float,
    horizon: float,
    p0,
    s0: float = 1.0,
    P0: float = 1.0,
    v0: float = 1.0,
) -> MarketModel:
    """Construct a :class:`MarketModel` from plain values.

    ``generator`` is either one N x N matrix or a list of ``(t, matrix)``
    pairs; ``credit_drift`` is either one length-N vector or a list of
    ``(t, vector)`` pairs. No validation is done here, see
    :func:`validate_model`.
    """
    gt, gv = _schedule(generator, 2)
    ct, cv = _schedule(credit_drift, 1)
    return MarketModel(
        generator_times=gt,
        generator_values=gv,
        mu=np.atleast_1d(np.asarray(mu, dtype=float)),
        credit_times=ct,
        credit_values=cv,
        hazard=np.atleast_1d(np.asarray(hazard, dtype=float)),
        sigma=sigma,
        upsilon=upsilon,
        rate=rate,
        gamma=gamma,
        horizon=horizon,
        p0=np.atleast_1d(np.asarray(p0, dtype=float)),
        s0=s0,
        P0=P0,
        v0=v0,
    )


def model_from_dict(cfg: Mapping[str, Any]) -> MarketModel:
    """Build a model from the JSON configuration schema (see README)."""
    required = ("generator", "mu", "credit_drift", "hazard", "sigma", "upsilon",
                "rate", "gamma", "horizon", "p0")
    missing = [k for k in required if k not in cfg]
    if missing:
        raise InvalidParameter(f"config is missing keys: {', '.join(missing)}")
    model = build_model(
        generator=cfg["generator"],
        mu=cfg["mu"],
        credit_drift=cfg["credit_drift"],
        hazard=cfg["hazard"],
        sigma=cfg["sigma"],
        upsilon=cfg["upsilon"],
        rate=cfg["rate"],
        gamma=cfg["gamma"],
        horizon=cfg["horizon"],
        p0=cfg["p0"],
        s0=cfg.get("s0", 1.0),
        P0=cfg.get("P0", 1.0),
        v0=cfg.get("v0", 1.0),
    )
    n = cfg.get("n_regimes")
    if n is not None and int(n) != model.n_regimes:
        raise InvalidParameter(f"n_regimes={n} but mu has {model.n_regimes} entries")
    return model


def load_model(path) -> MarketModel:
    with open(path) as fh:
        cfg = json.load(fh)
    return validate_model(model_from_dict(cfg.get("model", cfg)))


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def validate_model(raw: MarketModel) -> MarketModel:
    """Return ``raw`` unchanged if every invariant holds.

    Raises
    ------
    ModelValidationError
        Carrying the complete list of violations (``.violations``).
    """
    errs: list = []
    n = raw.n_regimes
    if n < 1:
        errs.append(InvalidParameter("need at least one regime"))
    shapes = {
        "hazard": (raw.hazard.shape, (n,)),
        "p0": (raw.p0.shape, (n,)),
        "generator": (raw.generator_values.shape[1:], (n, n)),
        "credit_drift": (raw.credit_values.shape[1:], (n,)),
    }
    for name, (got, want) in shapes.items():
        if tuple(got) != want:
            errs.append(InvalidParameter(f"{name} has shape {tuple(got)}, expected {want}"))
    if errs:
        raise ModelValidationError(errs)

    for times, label in ((raw.generator_times, "generator"), (raw.credit_times, "credit_drift")):
        if times[0] != 0.0 or np.any(np.diff(times) <= 0):
            errs.append(InvalidParameter(f"{label} schedule must start at t=0 with increasing times"))

    for t, A in zip(raw.generator_times, raw.generator_values):
        if not np.all(np.isfinite(A)):
            errs.append(NonConservativeGenerator(f"generator at t={t} is not finite"))
            continue
        off = A - np.diag(np.diag(A))
        if np.any(off < 0):
            errs.append(NonConservativeGenerator(f"negative off-diagonal rate at t={t}"))
        if np.any(np.abs(A.sum(axis=1)) > GENERATOR_TOL * max(1.0, np.abs(A).max())):
            errs.append(NonConservativeGenerator(f"row sums nonzero at t={t}"))

    if not np.all(np.isfinite(raw.hazard)) or np.any(raw.hazard <= 0):
        errs.append(NonPositiveHazard(f"hazard must be strictly positive, got {raw.hazard.tolist()}"))

    if not (0.0 < raw.gamma < 1.0):
        errs.append(GammaOutOfRange(f"gamma={raw.gamma} not in (0, 1)"))

    if np.any(~np.isfinite(raw.p0)) or np.any(raw.p0 <= 0) or abs(raw.p0.sum() - 1.0) > SIMPLEX_TOL:
        errs.append(BadInitialDistribution(f"p0={raw.p0.tolist()} must be positive and sum to 1"))

    for name in ("sigma", "upsilon", "horizon", "s0", "P0", "v0"):
        val = getattr(raw, name)
        if not (math.isfinite(val) and val > 0):
            errs.append(InvalidParameter(f"{name} must be finite and > 0, got {val}"))
    if not math.isfinite(raw.rate):
        errs.append(InvalidParameter("rate must be finite"))
    if not (np.all(np.isfinite(raw.mu)) and np.all(np.isfinite(raw.credit_values))):
        errs.append(InvalidParameter("drifts must be finite"))

    if errs:
        raise ModelValidationError(errs)

    if n > 1 and np.unique(raw.mu).size < n:
        warnings.warn("stock drifts are not distinct across regimes", stacklevel=2)
    return raw


# ---------------------------------------------------------------------------
# Chain
# ---------------------------------------------------------------------------


def transition_matrix(model: MarketModel, t: float, s: float) -> NDArray[np.float64]:
    """Transition matrix ``P[i, j] = P(X_s = j | X_t = i)``.

    Product of matrix exponentials over the constant pieces of the generator.
    """
    if not (0.0 <= t <= s):
        raise ValueError(f"need 0 <= t <= s, got t={t}, s={s}")
    n = model.n_regimes
    out = np.eye(n)
    edges = [t] + [b for b in model.generator_times if t < b < s] + [s]
    for a, b in zip(edges[:-1], edges[1:]):
        out = out @ expm(model.generator_at(a) * (b - a))
    return out


@dataclass(frozen=True)
class ChainPath:
    """Right-continuous piecewise-constant regime path on ``[0, T]``.

    ``times[k]`` is the start of the ``k``-th constant piece (``times[0]=0``)
    and ``regimes[k]`` the regime held on it.
    """

    times: NDArray[np.float64]
    regimes: NDArray[np.int64]
    horizon: float

    @property
    def jump_times(self) -> NDArray[np.float64]:
        return self.times[1:]

    @property
    def n_jumps(self) -> int:
        return int(self.times.size - 1)

    def regime_at(self, t) -> NDArray[np.int64]:
        """Regime in force at ``t`` (right-continuous)."""
        k = np.searchsorted(self.times, t, side="right") - 1
        return self.regimes[k]

    def regime_before(self, t: float) -> int:
        """Left limit of the path at ``t``."""
        k = int(np.searchsorted(self.times, t, side="left")) - 1
        return int(self.regimes[max(k, 0)])

    def integrate(self, values: NDArray[np.float64], upto: float) -> float:
        """Exact ``int_0^upto values[X_u] du`` for ``upto <= T``."""
        ends = np.append(self.times[1:], self.horizon)
        lengths = np.clip(np.minimum(ends, upto) - self.times, 0.0, None)
        return float(np.dot(values[self.regimes], lengths))


def simulate_chain(model: MarketModel, rng: np.random.Generator) -> ChainPath:
    """Exact event-driven simulation of the hidden chain.

    Holding times are exponential with the exit rate of the constant piece
    in force; a holding time that overshoots the end of its piece is
    discarded and redrawn from the piece boundary (memorylessness).
    """
    T = model.horizon
    n = model.n_regimes
    state = int(rng.choice(n, p=model.p0)) if n > 1 else 0
    times = [0.0]
    regimes = [state]
    seg_ends = np.append(model.generator_times[1:], np.inf)
    t = 0.0
    seg = 0
    while t < T:
        A = model.generator_values[seg]
        stop = min(seg_ends[seg], T)
        rate = -A[state, state]
        if rate <= 0.0:
            t = stop
        else:
            hold = rng.exponential(1.0 / rate)
            if t + hold >= stop:
                t = stop
            else:
                t += hold
                probs = A[state].copy()
                probs[state] = 0.0
                state = int(rng.choice(n, p=probs / rate))
                times.append(t)
                regimes.append(state)
                continue
        if t >= seg_ends[seg]:
            seg += 1
    return ChainPath(np.array(times), np.array(regimes, dtype=np.int64), T)


def draw_default(model: MarketModel, chain: ChainPath, threshold: float) -> float:
    """First time the integrated hazard reaches ``threshold``, or ``T + 1``."""
    ends = np.append(chain.times[1:], chain.horizon)
    h = model.hazard[chain.regimes]
    cum = np.concatenate(([0.0], np.cumsum(h * (ends - chain.times))))
    if cum[-1] < threshold:
        return chain.horizon + 1.0
    k = int(np.searchsorted(cum, threshold, side="left")) - 1
    k = max(k, 0)
    return float(chain.times[k] + (threshold - cum[k]) / h[k])


def simulate_default(model: MarketModel, chain: ChainPath, rng: np.random.Generator) -> float:
    """Canonical construction: ``tau = inf{t : int_0^t h(X_u) du >= chi}``, ``chi ~ Exp(1)``.

    Returns the sentinel ``T + 1`` when no default occurs on ``[0, T]``.
    """
    return draw_default(model, chain, float(rng.exponential()))


# ---------------------------------------------------------------------------
# Prices
# ---------------------------------------------------------------------------


def log_price_drift(model: MarketModel, t: float, regime: int) -> NDArray[np.float64]:
    """Drift of the observed log prices, ``[mu_i - sigma^2/2, a(t, i) - upsilon^2/2]``."""
    a = model.credit_drift_at(t)[regime]
    return np.array([model.mu[regime] - 0.5 * model.sigma**2, a - 0.5 * model.upsilon**2])


def time_grid(horizon: float, dt: float) -> NDArray[np.float64]:
    """Uniform grid ``0, dt, ..., T``; ``dt`` must divide ``T``."""
    n = int(round(horizon / dt))
    if n < 1 or abs(n * dt - horizon) > 1e-9 * max(horizon, 1.0):
        raise ValueError(f"dt={dt} does not divide horizon {horizon}")
    return np.linspace(0.0, horizon, n + 1)


def credit_drift_on_grid(model: MarketModel, t: NDArray[np.float64]) -> NDArray[np.float64]:
    """Credit drift values, shape (len(t), N)."""
    k = np.searchsorted(model.credit_times, t, side="right") - 1
    return model.credit_values[np.maximum(k, 0)]


def generator_on_grid(model: MarketModel, t: NDArray[np.float64]) -> NDArray[np.float64]:
    k = np.searchsorted(model.generator_times, t, side="right") - 1
    return model.generator_values[np.maximum(k, 0)]


@dataclass(frozen=True)
class PricePath:
    """Grid-sampled prices and the Brownian increments that generated them.

    ``dW[k]`` and ``dY[k]`` belong to the step from ``t[k]`` to ``t[k+1]``.
    ``dY[k, 1]`` is zero on steps that start at or after the default grid
    point, where the defaultable price is absorbed at zero.
    """

    t: NDArray[np.float64]
    S: NDArray[np.float64]
    P: NDArray[np.float64]
    H: NDArray[np.int64]
    tau: float
    dW: NDArray[np.float64]
    dY: NDArray[np.float64]
    regimes: NDArray[np.int64]
    log_stock_return: NDArray[np.float64]

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def default_index(self) -> Optional[int]:
        """Index of the first grid point with ``H = 1``, or ``None``."""
        hits = np.flatnonzero(self.H)
        return int(hits[0]) if hits.size else None


def default_grid_index(t: NDArray[np.float64], tau: float) -> int:
    """First grid index with ``t >= tau``; ``len(t)`` if none."""
    return int(np.searchsorted(t, tau, side="left"))


def simulate_prices(
    model: MarketModel,
    chain: ChainPath,
    tau: float,
    dt: float,
    rng: Optional[np.random.Generator] = None,
    increments: Optional[NDArray[np.float64]] = None,
) -> PricePath:
    """Log-Euler prices on a uniform grid.

    The regime is sampled at the left end of each step, which makes the
    per-step log increment ``theta * dt + Sigma_Y dW`` exact for that regime.

    Parameters
    ----------
    increments : ndarray, shape (n_steps, 2), optional
        Brownian increments, already scaled by ``sqrt(dt)``. Drawn from
        ``rng`` if omitted.
    """
    t = time_grid(model.horizon, dt)
    n = t.size - 1
    if increments is None:
        if rng is None:
            raise ValueError("need either rng or increments")
        increments = rng.standard_normal((n, 2)) * math.sqrt(dt)
    dW = np.asarray(increments, dtype=float)
    if dW.shape != (n, 2):
        raise ValueError(f"increments must have shape {(n, 2)}")
    reg = chain.regime_at(t[:-1])
    a = credit_drift_on_grid(model, t[:-1])[np.arange(n), reg]
    inc_s = (model.mu[reg] - 0.5 * model.sigma**2) * dt + model.sigma * dW[:, 0]
    inc_p = (a - 0.5 * model.upsilon**2) * dt + model.upsilon * dW[:, 1]

    kd = default_grid_index(t, tau)
    H = np.zeros(n + 1, dtype=np.int64)
    H[kd:] = 1
    inc_p_obs = inc_p.copy()
    inc_p_obs[kd:] = 0.0

    log_ret_s = np.concatenate(([0.0], np.cumsum(inc_s)))
    S = model.s0 * np.exp(log_ret_s)
    P = model.P0 * np.exp(np.concatenate(([0.0], np.cumsum(inc_p))))
    P[kd:] = 0.0
    return PricePath(
        t=t,
        S=S,
        P=P,
        H=H,
        tau=float(tau),
        dW=dW,
        dY=np.column_stack([inc_s, inc_p_obs]),
        regimes=reg,
        log_stock_return=log_ret_s,
    )


# ---------------------------------------------------------------------------
# Wealth
# ---------------------------------------------------------------------------


def wealth_log_increment(
    model: MarketModel,
    mu_k,
    a_k,
    pi_s,
    pi_p,
    dW1,
    dW2,
    dt: float,
):
    """Exact log-wealth increment over one step with constant regime and positions.

    Written through the cash weight ``1 - pi_s - pi_p`` so that ``pi = (1, 0)``
    reproduces the stock log increment bit for bit.
    """
    cash = 1.0 - pi_s - pi_p
    drift = (
        model.rate * cash
        + pi_s * mu_k
        + pi_p * a_k
        - 0.5 * (model.sigma**2 * pi_s**2 + model.upsilon**2 * pi_p**2)
    )
    return drift * dt + (model.sigma * pi_s * dW1 + model.upsilon * pi_p * dW2)


@dataclass(frozen=True)
class WealthPath:
    """Wealth on the price grid and the positions held on each step."""

    t: NDArray[np.float64]
    V: NDArray[np.float64]
    pi: NDArray[np.float64]
    log_return: NDArray[np.float64]


PolicyCallable = Callable[[float, NDArray[np.float64], NDArray[np.float64]], NDArray[np.float64]]


def simulate_wealth(
    model: MarketModel,
    prices: PricePath,
    policy: PolicyCallable,
    filter_path: Optional[NDArray[np.float64]] = None,
) -> WealthPath:
    """Step log wealth with the same Brownian increments as ``prices``.

    Parameters
    ----------
    policy : callable
        ``policy(t, p_tilde, z) -> (pi_S, pi_P)``.
    filter_path : ndarray, shape (n_steps + 1, N), optional
        Filter probabilities on the grid used as policy input. When omitted
        the policy sees ``p0`` throughout.

    Raises
    ------
    PolicyNonFinite
        If the policy returns NaN or infinite positions.
    """
    t = prices.t
    n = t.size - 1
    dt = prices.dt
    if filter_path is None:
        filter_path = np.broadcast_to(model.p0, (n + 1, model.n_regimes))
    pi = np.empty((n, 2))
    for k in range(n):
        z = float(prices.H[k])
        pi[k] = np.asarray(policy(t[k], filter_path[k, :-1], z), dtype=float).reshape(2)
    if not np.all(np.isfinite(pi)):
        raise PolicyNonFinite("policy produced non-finite positions")
    pi[prices.H[:-1] == 1, 1] = 0.0
    reg = prices.regimes
    a = credit_drift_on_grid(model, t[:-1])[np.arange(n), reg]
    inc = wealth_log_increment(
        model, model.mu[reg], a, pi[:, 0], pi[:, 1], prices.dW[:, 0], prices.dW[:, 1], dt
    )
    log_ret = np.concatenate(([0.0], np.cumsum(inc)))
    return WealthPath(t=t, V=model.v0 * np.exp(log_ret), pi=pi, log_return=log_ret)


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------


def path_rng(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator for path ``index``.

    Philox keyed by ``(seed, stream)`` with the path index in the counter,
    so any path can be regenerated on its own.
    """
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, stream], dtype=np.uint64)
    counter = np.array([0, 0, index, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def survival_probability(model: MarketModel, t: Optional[float] = None) -> float:
    """``P(tau > t)`` from the chain killed at rate ``h``.

    Computed as ``p0' exp((A - diag(h)) t) 1``, multiplied over the
    constant pieces of the generator.
    """
    t = model.horizon if t is None else float(t)
    v = model.p0.copy()
    edges = [0.0] + [b for b in model.generator_times if 0.0 < b < t] + [t]
    for a, b in zip(edges[:-1], edges[1:]):
        v = v @ expm((model.generator_at(a) - np.diag(model.hazard)) * (b - a))
    return float(v.sum())
