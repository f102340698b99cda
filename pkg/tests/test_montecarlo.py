from __future__ import annotations

import math

import numpy as np
import pytest

from conftest import single_regime, two_regime
from hiddenregime.engine import simulate_historical
from hiddenregime.hjb import solve_both
from hiddenregime.model import validate_model
from hiddenregime.montecarlo import (
    CheckResult,
    ExperimentConfig,
    VerificationReport,
    criterion_report,
    dominance_fraction,
    evaluate_criterion_tilde,
    evaluate_policy_historical,
    filter_identity_suite,
    simulate_tilde,
    supermartingale_test,
)
from hiddenregime.pde import Grid1D
from hiddenregime.policy import ConstantPolicy, PerturbedPolicy


def test_report_rejects_duplicates_and_nonfinite(tmp_path):
    rep = VerificationReport()
    rep.add(CheckResult("a", 1.0, 0.1, 1.0, True))
    with pytest.raises(ValueError):
        rep.add(CheckResult("a", 1.0, 0.1, 1.0, True))
    with pytest.raises(FloatingPointError):
        rep.add(CheckResult("b", math.nan, 0.1, 1.0, True))
    rep.add(CheckResult("c", 2.0, 0.0, 1.0, False, "x"))
    assert not rep.passed and rep["a"].passed
    rep.write_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "check,estimate,se,reference,passed,detail"
    assert lines[2] == "c,2.0,0.0,1.0,0,x"
    assert rep.summary().splitlines()[1].startswith("FAIL c")


def test_config_validation(model2):
    with pytest.raises(ValueError):
        ExperimentConfig(model2, ConstantPolicy(0, 0), n_paths=50)
    with pytest.raises(ValueError):
        ExperimentConfig(model2, ConstantPolicy(0, 0), dt=0.3)


def test_cash_only_policy_is_exact(model2):
    est = evaluate_policy_historical(ExperimentConfig(model2, ConstantPolicy(0, 0), n_paths=100))
    assert est.value == pytest.approx(math.exp(model2.gamma * model2.rate) / model2.gamma, rel=1e-12)
    assert est.se < 1e-12


def test_tilde_small_gamma_is_one():
    m = validate_model(two_regime(gamma=1e-8))
    vals = simulate_tilde(m, [ConstantPolicy(1.0, 1.0)], 0.0, [0.5], 0, 200, 1e-2, 3)
    np.testing.assert_allclose(vals, 1.0, atol=1e-7)


def test_tilde_cash_only_is_deterministic(model2):
    est = evaluate_criterion_tilde(ExperimentConfig(model2, ConstantPolicy(0, 0), n_paths=100, dt=1e-2))
    assert est.value == pytest.approx(math.exp(model2.gamma * model2.rate), rel=1e-12)


def test_tilde_state_shapes(model2):
    vals, p_end, z_end = simulate_tilde(model2, [ConstantPolicy(0, 0), ConstantPolicy(1, 0)], 0.5,
                                        [0.3], 0, 150, 1e-2, 4, batch=64, return_state=True)
    assert vals.shape == (2, 150) and p_end.shape == (2, 150, 1) and z_end.shape == (2, 150)
    assert set(np.unique(z_end)) <= {0.0, 1.0}
    with pytest.raises(ValueError):
        simulate_tilde(model2, [ConstantPolicy(0, 0)], 0.0, [0.5], 0, 10, 0.3, 0)


@pytest.fixture(scope="module")
def small_problem():
    m = validate_model(two_regime())
    return m, solve_both(m, Grid1D(51, 200, 1.0))


def test_supermartingale_small_run(small_problem):
    m, prob = small_problem
    rep = supermartingale_test(m, prob, [(0.0, 0.5), (0.4, 0.75)], n_paths=1000, dt=1e-2, seed=1)
    names = [c.name for c in rep.checks]
    assert sum(n.startswith("equality") for n in names) == 2
    assert sum(n.startswith("decrease") for n in names) == 2 * (4 + 2)
    assert rep[names[0]].passed
    frac = dominance_fraction(rep)
    assert set(frac) == {("z=1", "stock+0.5"), ("z=1", "stock-0.5"), ("z=0", "stock+0.5"),
                         ("z=0", "stock-0.5"), ("z=0", "credit+0.5"), ("z=0", "credit-0.5")}
    assert min(frac.values()) == 1.0


def test_supermartingale_detects_suboptimal_policy(small_problem):
    m, prob = small_problem
    bad = PerturbedPolicy(prob.policy_field(), delta_stock=1.0)
    rep = supermartingale_test(m, prob, [(0.0, 0.5)], n_paths=1000, dt=1e-2, seed=2, policy=bad)
    assert not rep.passed


def test_filter_suite_single_regime():
    m = validate_model(single_regime())
    rep, out = filter_identity_suite(ExperimentConfig(m, ConstantPolicy(0.5, 0.5), n_paths=200))
    assert out.max_identity_dev == 0.0 and out.max_normalization_dev == 0.0
    assert out.min_coordinate == 1.0 and out.clamp_fraction == 0.0
    assert rep.passed


def test_criterion_report_with_reference(small_problem):
    m, prob = small_problem
    cfg = ExperimentConfig(m, prob.policy_field(), n_paths=2000, seed=5)
    ref = math.exp(float(np.interp(0.5, prob.w.p, prob.w.values[0]))) / m.gamma
    rep, cr = criterion_report(cfg, reference=ref)
    assert [c.name for c in rep.checks] == ["criterion pairwise", "criterion a vs PDE", "criterion b vs PDE"]
    assert rep.passed


def test_workers_do_not_change_results(model2):
    pol = ConstantPolicy(0.5, -0.2)
    one = simulate_historical(model2, pol, 300, 1e-3, 9, track_unnormalized=True)
    two = simulate_historical(model2, pol, 300, 1e-3, 9, track_unnormalized=True, workers=2)
    np.testing.assert_array_equal(one.log_V, two.log_V)
    np.testing.assert_array_equal(one.tau, two.tau)
    np.testing.assert_array_equal(one.ledger.log_rho, two.ledger.log_rho)
    np.testing.assert_array_equal(one.identity_dev, two.identity_dev)
