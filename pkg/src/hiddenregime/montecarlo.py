"""Monte Carlo verification: policy evaluation, risk-sensitive criterion,
supermartingale test and filter identities.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.typing import NDArray

from .engine import simulate_historical
from .filtering import EPS_FLOOR, complete_simplex, eta_per_regime, filter_step_tilde
from .measures import CriterionReport, criterion_identity_check, mean_se
from .model import MarketModel, path_rng
from .pde import MCEstimate
from .policy import PerturbedPolicy, PolicyField


# ---------------------------------------------------------------------------
# Configuration and reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """Inputs shared by the Monte Carlo checks."""

    model: MarketModel
    policy: PolicyField
    n_paths: int = 10_000
    dt: float = 1e-3
    seed: int = 0
    checks: tuple = ("filter", "criterion", "supermartingale")
    workers: int = 1

    def __post_init__(self):
        if self.n_paths < 100:
            raise ValueError("n_paths must be at least 100")
        n = round(self.model.horizon / self.dt)
        if abs(n * self.dt - self.model.horizon) > 1e-9 * max(1.0, self.model.horizon):
            raise ValueError("dt must divide the horizon")


@dataclass(frozen=True)
class CheckResult:
    name: str
    estimate: float
    se: float
    reference: float
    passed: bool
    detail: str = ""


@dataclass
class VerificationReport:
    """Ordered collection of check results, one per check name."""

    checks: list = field(default_factory=list)

    def add(self, result: CheckResult) -> None:
        if any(c.name == result.name for c in self.checks):
            raise ValueError(f"duplicate check {result.name}")
        if not all(math.isfinite(v) for v in (result.estimate, result.se, result.reference)):
            raise FloatingPointError(f"non-finite value in check {result.name}")
        self.checks.append(result)

    def extend(self, other: "VerificationReport") -> None:
        for c in other.checks:
            self.add(c)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["check", "estimate", "se", "reference", "passed", "detail"])
            for c in self.checks:
                wr.writerow([c.name, repr(float(c.estimate)), repr(float(c.se)), repr(float(c.reference)),
                             int(c.passed), c.detail])

    def summary(self) -> str:
        lines = []
        for c in self.checks:
            flag = "PASS" if c.passed else "FAIL"
            lines.append(f"{flag} {c.name}: {c.estimate:.6g} (se {c.se:.2g}) vs {c.reference:.6g} {c.detail}")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# Historical measure
# ---------------------------------------------------------------------------


def evaluate_policy_historical(config: ExperimentConfig) -> MCEstimate:
    """Mean of ``V_T^gamma / gamma`` under the historical measure."""
    res = simulate_historical(config.model, config.policy, config.n_paths, config.dt, config.seed,
                              workers=config.workers)
    g = config.model.gamma
    m, se = mean_se(np.exp(g * res.log_V) / g)
    return MCEstimate(m, se, config.n_paths)


# ---------------------------------------------------------------------------
# Risk-sensitive measure
# ---------------------------------------------------------------------------


def simulate_tilde(
    model: MarketModel,
    policies: Sequence[PolicyField],
    t0: float,
    p_tilde0,
    z0: int,
    n_paths: int,
    dt: float,
    seed: int,
    batch: int = 5000,
    floor: float = EPS_FLOOR,
    return_state: bool = False,
):
    """Simulate ``exp(-gamma int_t0^T eta_tilde)`` for several policies on common noise.

    Under the risk-sensitive measure the projected filter follows its
    controlled SDE; default arrives when the integrated intensity
    ``h_tilde`` of the current filter state crosses an Exp(1) threshold.

    Returns
    -------
    ndarray, shape (len(policies), n_paths)
        With ``return_state`` also the terminal projected filter, shape
        ``(len(policies), n_paths, N - 1)``, and default indicator.
    """
    n = int(round((model.horizon - t0) / dt))
    if n < 1 or abs(n * dt - (model.horizon - t0)) > 1e-9 * max(1.0, model.horizon):
        raise ValueError("dt must divide the remaining horizon")
    m = len(policies)
    N = model.n_regimes
    sq = math.sqrt(dt)
    out = np.empty((m, n_paths))
    p_end = np.empty((m, n_paths, N - 1))
    z_end = np.empty((m, n_paths))
    for start in range(0, n_paths, batch):
        stop = min(start + batch, n_paths)
        B = stop - start
        noise = np.empty((B, n, 2))
        chi = np.empty(B)
        for b in range(B):
            rng = path_rng(seed, start + b, stream=2)
            chi[b] = rng.exponential()
            noise[b] = rng.standard_normal((n, 2)) * sq
        noise = np.tile(noise, (m, 1, 1))
        chi = np.tile(chi, m)
        p = np.broadcast_to(np.asarray(p_tilde0, dtype=float), (m * B, N - 1)).copy()
        z = np.full(m * B, float(z0))
        lam = np.zeros(m * B)
        integral = np.zeros(m * B)
        for k in range(n):
            tk = t0 + k * dt
            pi = np.concatenate([
                np.asarray(pol(tk, p[i * B:(i + 1) * B], z[i * B:(i + 1) * B]), dtype=float)
                for i, pol in enumerate(policies)
            ])
            pi[:, 1] *= 1.0 - z
            full = complete_simplex(p)
            integral += np.sum(eta_per_regime(model, tk, pi) * full, axis=1) * dt
            h_til = full @ model.hazard
            lam_next = lam + h_til * (1.0 - z) * dt
            dH = ((lam_next >= chi) & (z < 0.5)).astype(float)
            lam = lam_next
            p, z, _, _ = filter_step_tilde(model, tk, p, z, pi, noise[:, k], dH, dt, floor)
        vals = np.exp(-model.gamma * integral)
        out[:, start:stop] = vals.reshape(m, B)
        p_end[:, start:stop] = p.reshape(m, B, N - 1)
        z_end[:, start:stop] = z.reshape(m, B)
    if return_state:
        return out, p_end, z_end
    return out


def evaluate_criterion_tilde(config: ExperimentConfig, t0: float = 0.0, p_tilde0=None,
                             z0: int = 0) -> MCEstimate:
    """Mean of ``exp(-gamma int eta_tilde)`` by direct simulation of the projected filter."""
    if p_tilde0 is None:
        p_tilde0 = config.model.p0[:-1]
    vals = simulate_tilde(config.model, [config.policy], t0, p_tilde0, z0,
                          config.n_paths, config.dt, config.seed)[0]
    m, se = mean_se(vals)
    return MCEstimate(m, se, config.n_paths)


def supermartingale_test(
    model: MarketModel,
    problem,
    nodes: Sequence[tuple[float, float]],
    deltas: Sequence[float] = (0.5, -0.5),
    n_paths: int = 4000,
    dt: float = 1e-3,
    seed: int = 0,
    policy: Optional[PolicyField] = None,
    rel_tol: float = 2e-2,
) -> VerificationReport:
    """Check that perturbing the optimal feedback lowers ``E[M_T]``.

    For each start node ``(t, p)`` and default state ``z`` the optimal
    policy and its shifts by each ``delta`` (on the stock position, and on
    the defaultable position before default) are simulated on common noise.
    A shift passes if the paired decrease exceeds 2 standard errors. At the
    first node the unperturbed estimate is also compared to ``exp(w)``.

    ``policy`` overrides the solved feedback, e.g. to test a policy file.
    """
    base = policy or problem.policy_field()
    rep = VerificationReport()
    for z in (1, 0):
        surf = problem.post.w if z else problem.w
        for idx, (t, p) in enumerate(nodes):
            variants = [base]
            labels = []
            for d in deltas:
                variants.append(PerturbedPolicy(base, delta_stock=d))
                labels.append(("stock", d))
                if not z:
                    variants.append(PerturbedPolicy(base, delta_credit=d))
                    labels.append(("credit", d))
            vals = simulate_tilde(model, variants, t, [p], z, n_paths, dt,
                                  seed + 7919 * idx + 104729 * z)
            ref = float(np.exp(np.interp(p, surf.p, surf.row(t))))
            m0, se0 = mean_se(vals[0])
            if idx == 0:
                tol = max(3 * se0, rel_tol * ref)
                rep.add(CheckResult(f"equality z={z} t={t:g} p={p:g}", m0, se0, ref,
                                    abs(m0 - ref) <= tol, f"tol={tol:.3g}"))
            for (coord, d), v in zip(labels, vals[1:]):
                diff = vals[0] - v
                md, sed = mean_se(diff)
                rep.add(CheckResult(f"decrease z={z} t={t:g} p={p:g} {coord}{d:+g}", md, sed, 0.0,
                                    md > 2 * sed, "paired E[M(opt)] - E[M(shifted)]"))
    return rep


def dominance_fraction(report: VerificationReport) -> dict:
    """Fraction of passing nodes per (z, coordinate, delta) group."""
    groups: dict = {}
    for c in report.checks:
        if not c.name.startswith("decrease"):
            continue
        parts = c.name.split()
        key = (parts[1], parts[4])
        groups.setdefault(key, []).append(c.passed)
    return {k: float(np.mean(v)) for k, v in groups.items()}


# ---------------------------------------------------------------------------
# Filter identity suite
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FilterIdentityResult:
    max_identity_dev: float
    max_normalization_dev: float
    min_coordinate: float
    clamp_fraction: float
    jump_error: float
    n_defaults: int


def filter_identity_suite(config: ExperimentConfig, result=None
                          ) -> tuple[VerificationReport, FilterIdentityResult]:
    """Co-simulate the normalized and unnormalized filters with shared noise.

    ``result`` may carry a precomputed run with ``track_unnormalized=True``.
    """
    res = result
    if res is None:
        res = simulate_historical(config.model, config.policy, config.n_paths, config.dt,
                                  config.seed, track_unnormalized=True, workers=config.workers)
    out = FilterIdentityResult(
        max_identity_dev=float(res.identity_dev.max()),
        max_normalization_dev=float(res.identity_norm_dev.max()),
        min_coordinate=res.min_p,
        clamp_fraction=res.n_clamped / res.n_steps_total,
        jump_error=res.jump_error,
        n_defaults=res.n_defaults,
    )
    rep = VerificationReport()
    rep.add(CheckResult("filter q vs hatL p", out.max_identity_dev, 0.0, 5e-2,
                        out.max_identity_dev < 5e-2, "max_t |q/hatL - p|"))
    rep.add(CheckResult("filter p vs q/sum q", out.max_normalization_dev, 0.0, 5e-2,
                        out.max_normalization_dev < 5e-2))
    rep.add(CheckResult("filter positivity", out.min_coordinate, 0.0, 0.0, out.min_coordinate > 0))
    rep.add(CheckResult("filter clamp fraction", out.clamp_fraction, 0.0, 1e-3,
                        out.clamp_fraction < 1e-3))
    rep.add(CheckResult("filter default jump", out.jump_error, 0.0, 0.0, out.jump_error == 0.0,
                        f"{out.n_defaults} defaults"))
    return rep, out


def criterion_report(config: ExperimentConfig, reference: Optional[float] = None,
                     rel_tol: float = 2e-2, result=None) -> tuple[VerificationReport, CriterionReport]:
    """Pairwise agreement of the three utility estimates and, optionally, a PDE value."""
    if result is None:
        result = simulate_historical(config.model, config.policy, config.n_paths, config.dt,
                                     config.seed, workers=config.workers)
    cr = criterion_identity_check(config.model, config.policy, config.n_paths, config.seed,
                                  config.dt, result=result)
    rep = VerificationReport()
    zmax = cr.max_pairwise_z()
    rep.add(CheckResult("criterion pairwise", zmax, 0.0, 3.0, zmax <= 3.0,
                        "max pairwise gap in combined standard errors"))
    if reference is not None:
        for tag, est, se in (("a", cr.estimate_a, cr.se_a), ("b", cr.estimate_b, cr.se_b)):
            tol = max(3 * se, rel_tol * abs(reference))
            rep.add(CheckResult(f"criterion {tag} vs PDE", est, se, reference,
                                abs(est - reference) <= tol, f"tol={tol:.3g}"))
    return rep, cr
