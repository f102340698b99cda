from __future__ import annotations

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from conftest import single_regime, two_regime
from hiddenregime.exceptions import (
    BadInitialDistribution,
    GammaOutOfRange,
    ModelValidationError,
    NonConservativeGenerator,
    NonPositiveHazard,
    PolicyNonFinite,
)
from hiddenregime.model import (
    ChainPath,
    build_model,
    draw_default,
    load_model,
    log_price_drift,
    model_from_dict,
    path_rng,
    simulate_chain,
    simulate_default,
    simulate_prices,
    simulate_wealth,
    survival_probability,
    time_grid,
    transition_matrix,
    validate_model,
)
from hiddenregime.policy import ConstantPolicy


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def test_single_regime_is_valid():
    m = validate_model(single_regime())
    assert m.n_regimes == 1


def test_asymmetric_generator_is_valid():
    validate_model(two_regime(generator=[[-1.0, 1.0], [0.5, -0.5]]))


def test_zero_hazard_rejected():
    with pytest.raises(ModelValidationError) as exc:
        validate_model(two_regime(hazard=[0.1, 0.0]))
    assert any(isinstance(v, NonPositiveHazard) for v in exc.value.violations)


def test_all_violations_reported_together():
    bad = two_regime(generator=[[-1.0, 0.5], [1.0, -1.0]], hazard=[0.1, -1.0], gamma=1.5,
                     p0=[0.7, 0.7])
    with pytest.raises(ModelValidationError) as exc:
        validate_model(bad)
    kinds = {type(v) for v in exc.value.violations}
    assert {NonConservativeGenerator, NonPositiveHazard, GammaOutOfRange,
            BadInitialDistribution} <= kinds


def test_negative_off_diagonal_rejected():
    with pytest.raises(ModelValidationError):
        validate_model(two_regime(generator=[[1.0, -1.0], [1.0, -1.0]]))


def test_tied_drifts_warn():
    with pytest.warns(UserWarning):
        validate_model(two_regime(mu=[0.1, 0.1]))


def test_model_from_dict_schedules():
    cfg = {
        "generator": [{"t": 0.0, "matrix": [[-1, 1], [1, -1]]},
                      {"t": 0.5, "matrix": [[-2, 2], [2, -2]]}],
        "mu": [0.1, 0.0], "credit_drift": [0.05, 0.04], "hazard": [0.2, 0.4],
        "sigma": 0.2, "upsilon": 0.3, "rate": 0.0, "gamma": 0.5, "horizon": 1.0,
        "p0": [0.5, 0.5],
    }
    m = validate_model(model_from_dict(cfg))
    assert m.generator_at(0.25)[0, 1] == 1.0
    assert m.generator_at(0.5)[0, 1] == 2.0
    assert m.generator_at(0.9)[0, 1] == 2.0


def test_model_hash_is_stable_and_sensitive():
    a, b = two_regime(), two_regime()
    assert a.model_hash() == b.model_hash()
    assert a.model_hash() != two_regime(rate=0.03).model_hash()


def test_load_model_roundtrip(tmp_path):
    import json

    m = two_regime()
    path = tmp_path / "m.json"
    path.write_text(json.dumps({"model": m.to_dict()}))
    assert load_model(path).model_hash() == m.model_hash()


# ---------------------------------------------------------------------------
# Transition matrix
# ---------------------------------------------------------------------------


def test_transition_identity_at_zero_lag(model2):
    np.testing.assert_allclose(transition_matrix(model2, 0.3, 0.3), np.eye(2))


def test_transition_single_regime(model1):
    assert transition_matrix(model1, 0.0, 0.7) == pytest.approx(np.array([[1.0]]))


def test_transition_symmetric_closed_form():
    m = validate_model(two_regime(generator=[[-1.0, 1.0], [1.0, -1.0]], horizon=2.0))
    P = transition_matrix(m, 0.0, math.log(2.0))
    assert P[0, 0] == pytest.approx(0.625, abs=1e-12)


def test_transition_asymmetric_closed_form():
    a, b, t = 1.0, 1.5, 0.8
    m = validate_model(two_regime())
    P = transition_matrix(m, 0.0, t)
    expected = b / (a + b) + a / (a + b) * math.exp(-(a + b) * t)
    assert P[0, 0] == pytest.approx(expected, abs=1e-12)


def test_transition_piecewise_matches_scalar_ode():
    """Kolmogorov forward equation integrated by RK4 across a generator switch."""
    m = validate_model(two_regime(generator=[(0.0, [[-1.0, 1.0], [2.0, -2.0]]),
                                             (0.4, [[-3.0, 3.0], [0.5, -0.5]])]))
    P = np.eye(2)
    n = 4000
    h = 1.0 / n
    for k in range(n):
        t = k * h
        f = lambda s, X: X @ m.generator_at(s)
        k1 = f(t, P)
        k2 = f(t + h / 2, P + h / 2 * k1)
        k3 = f(t + h / 2, P + h / 2 * k2)
        k4 = f(t + h, P + h * k3)
        P = P + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    np.testing.assert_allclose(transition_matrix(m, 0.0, 1.0), P, atol=1e-5)


@st.composite
def generators(draw, n=3):
    off = draw(st.lists(st.floats(0.0, 5.0), min_size=n * n, max_size=n * n))
    A = np.array(off).reshape(n, n)
    np.fill_diagonal(A, 0.0)
    np.fill_diagonal(A, -A.sum(axis=1))
    return A


@settings(max_examples=40, deadline=None)
@given(A=generators(), s=st.floats(0.0, 3.0), u=st.floats(0.0, 3.0))
def test_transition_is_stochastic_and_semigroup(A, s, u):
    m = build_model(A, [0.1, 0.0, -0.1], [0.05] * 3, [0.1, 0.2, 0.3], 0.2, 0.3, 0.0, 0.5,
                    10.0, [1 / 3] * 3)
    P = transition_matrix(m, 0.0, s + u)
    assert np.all(P >= -1e-12)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-10)
    np.testing.assert_allclose(transition_matrix(m, 0.0, s) @ transition_matrix(m, s, s + u), P,
                               atol=1e-10)


# ---------------------------------------------------------------------------
# Chain and default
# ---------------------------------------------------------------------------


def test_chain_single_regime_never_jumps(model1, rng):
    c = simulate_chain(model1, rng)
    assert c.n_jumps == 0 and c.regimes.tolist() == [0]


def test_chain_zero_generator_never_jumps(rng):
    m = two_regime(generator=[[0.0, 0.0], [0.0, 0.0]])
    counts = [simulate_chain(m, rng).n_jumps for _ in range(50)]
    assert max(counts) == 0


def test_chain_jump_count_poisson():
    m = two_regime(generator=[[-1.0, 1.0], [1.0, -1.0]], horizon=10.0)
    counts = np.array([simulate_chain(m, path_rng(1, i)).n_jumps for i in range(10_000)])
    se = counts.std(ddof=1) / math.sqrt(counts.size)
    assert abs(counts.mean() - 10.0) < 3 * se


def test_chain_marginals_match_transition_matrix():
    m = validate_model(two_regime(generator=[(0.0, [[-1.0, 1.0], [2.0, -2.0]]),
                                             (0.4, [[-3.0, 3.0], [0.5, -0.5]])],
                                  p0=[0.3, 0.7]))
    n = 20_000
    ends = np.array([simulate_chain(m, path_rng(2, i)).regime_at(0.9) for i in range(n)])
    p1 = (m.p0 @ transition_matrix(m, 0.0, 0.9))[0]
    freq = np.mean(ends == 0)
    assert abs(freq - p1) < 3 * math.sqrt(p1 * (1 - p1) / n)


def test_chain_path_integrate_exact():
    c = ChainPath(np.array([0.0, 0.3, 0.6]), np.array([0, 1, 0]), 1.0)
    v = np.array([1.0, 10.0])
    assert c.integrate(v, 1.0) == pytest.approx(0.3 + 3.0 + 0.4)
    assert c.integrate(v, 0.45) == pytest.approx(0.3 + 1.5)
    assert c.regime_before(0.3) == 0 and c.regime_at(0.3) == 1


def test_default_constant_hazard_law():
    lam = 0.7
    m = single_regime(hazard=[lam])
    n = 100_000
    rng = np.random.default_rng(3)
    chain = ChainPath(np.array([0.0]), np.array([0]), 1.0)
    taus = np.array([draw_default(m, chain, x) for x in rng.exponential(size=n)])
    frac = np.mean(taus <= 1.0)
    p = 1 - math.exp(-lam)
    assert abs(frac - p) < 3 * math.sqrt(p * (1 - p) / n)


def test_default_sentinel_when_threshold_large(model2):
    chain = ChainPath(np.array([0.0]), np.array([1]), 1.0)
    assert draw_default(model2, chain, 10.0) == 2.0


def test_default_in_fixed_regime_is_exponential():
    m = two_regime(hazard=[0.2, 0.4], horizon=50.0)
    chain = ChainPath(np.array([0.0]), np.array([1]), 50.0)
    rng = np.random.default_rng(4)
    taus = np.array([simulate_default(m, chain, rng) for _ in range(5000)])
    taus = taus[taus <= 50.0]
    assert stats.kstest(taus, "expon", args=(0, 1 / 0.4)).pvalue > 1e-3


def test_survival_probability_single_regime():
    m = single_regime(hazard=[0.3])
    assert survival_probability(m, 2.0) == pytest.approx(math.exp(-0.6))


def test_survival_probability_matches_simulation(model2):
    n = 20_000
    hits = 0
    for i in range(n):
        rng = path_rng(5, i)
        c = simulate_chain(model2, rng)
        hits += simulate_default(model2, c, rng) <= 1.0
    q = 1 - survival_probability(model2)
    assert abs(hits / n - q) < 3 * math.sqrt(q * (1 - q) / n)


# ---------------------------------------------------------------------------
# Prices and wealth
# ---------------------------------------------------------------------------


def test_log_price_drift_cancels():
    m = two_regime(mu=[0.02, 0.02], credit_drift=[0.045, 0.045])
    np.testing.assert_allclose(log_price_drift(m, 0.0, 0), [0.0, 0.0], atol=1e-15)


def test_log_price_drift_hand_value():
    m = two_regime(mu=[0.1, 0.1], credit_drift=[0.05, 0.05])
    np.testing.assert_allclose(log_price_drift(m, 0.0, 1), [0.08, 0.005], atol=1e-15)


def test_prices_noiseless_limit():
    m = single_regime(mu=[0.03], credit_drift=[0.03], rate=0.03, sigma=1e-300, upsilon=1e-300)
    chain = ChainPath(np.array([0.0]), np.array([0]), 1.0)
    pp = simulate_prices(m, chain, 2.0, 0.01, increments=np.zeros((100, 2)))
    assert pp.S[-1] == pytest.approx(math.exp(0.03), rel=1e-12)


def test_prices_absorbed_after_default(model2, rng):
    chain = ChainPath(np.array([0.0]), np.array([0]), 1.0)
    pp = simulate_prices(model2, chain, 0.5, 0.01, rng=rng)
    after = pp.t >= 0.5 - 1e-12
    assert np.all(pp.P[after] == 0.0) and np.all(pp.P[~after] > 0)
    assert np.all(np.diff(pp.H) >= 0) and pp.H[-1] == 1 and np.all(pp.S > 0)
    assert np.all(pp.dY[pp.default_index:, 1] == 0.0)


def test_wealth_cash_only(model2, rng):
    chain = ChainPath(np.array([0.0]), np.array([0]), 1.0)
    pp = simulate_prices(model2, chain, 2.0, 0.01, rng=rng)
    w = simulate_wealth(model2, pp, ConstantPolicy(0.0, 0.0))
    assert w.V[-1] == pytest.approx(math.exp(model2.rate), rel=1e-12)


def test_wealth_full_stock_replicates_price(model1, rng):
    chain = ChainPath(np.array([0.0]), np.array([0]), 1.0)
    pp = simulate_prices(model1, chain, 2.0, 0.01, rng=rng)
    w = simulate_wealth(model1, pp, ConstantPolicy(1.0, 0.0))
    np.testing.assert_array_equal(w.V / model1.v0, pp.S / model1.s0)


def test_wealth_drops_credit_position_after_default(model2, rng):
    chain = ChainPath(np.array([0.0]), np.array([0]), 1.0)
    pp = simulate_prices(model2, chain, 0.3, 0.01, rng=rng)
    w = simulate_wealth(model2, pp, ConstantPolicy(0.5, 0.5))
    assert np.all(w.pi[pp.H[:-1] == 1, 1] == 0.0)


def test_wealth_nonfinite_policy_raises(model2, rng):
    chain = ChainPath(np.array([0.0]), np.array([0]), 1.0)
    pp = simulate_prices(model2, chain, 2.0, 0.01, rng=rng)
    with pytest.raises(PolicyNonFinite):
        simulate_wealth(model2, pp, lambda t, p, z: (np.nan, 0.0))


def test_time_grid_rejects_non_divisor():
    with pytest.raises(ValueError):
        time_grid(1.0, 0.3)


def test_path_rng_reproducible_and_independent():
    a = path_rng(9, 3).standard_normal(4)
    b = path_rng(9, 3).standard_normal(4)
    c = path_rng(9, 4).standard_normal(4)
    d = path_rng(9, 3, stream=1).standard_normal(4)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c) and not np.allclose(a, d)
