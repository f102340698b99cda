from __future__ import annotations

import math

import numpy as np
import pytest

from conftest import merton_two, single_regime, two_regime
from hiddenregime.exceptions import NonFiniteSurface, OutOfDomain, PicardDivergence
from hiddenregime.hjb import post_default_bundle, solve_post
from hiddenregime.io import read_surface_csv
from hiddenregime.model import validate_model
from hiddenregime.pde import (
    FeynmanKacBundle,
    Grid1D,
    PDECoefficients,
    Scheme,
    ValueSurface,
    feynman_kac_estimate,
    interpolate,
    project_to_simplex,
    simplex_bump,
    solve_backward,
)

zero = lambda t, p: np.zeros_like(p)


def test_grid_nodes_and_refinement():
    g = Grid1D(5, 4, 2.0)
    np.testing.assert_allclose(g.p, [0, 0.25, 0.5, 0.75, 1])
    assert g.dt == 0.5 and g.dp == 0.25
    r = g.refined()
    assert (r.n_space, r.n_time) == (9, 8)
    with pytest.raises(ValueError):
        Grid1D(2, 4, 1.0)


def test_scalar_ode_solution():
    k = 0.5
    pde = PDECoefficients(zero, zero, lambda t, p: np.full_like(p, k), lambda p: np.ones_like(p))
    grid = Grid1D(11, 1000, 1.0)
    u = solve_backward(pde, grid)
    exact = np.exp(k * (1.0 - grid.t))[:, None]
    np.testing.assert_allclose(u.values, np.broadcast_to(exact, u.values.shape), rtol=2e-4)
    u2 = solve_backward(pde, grid, Scheme(theta=0.5))
    np.testing.assert_allclose(u2.values, np.broadcast_to(exact, u.values.shape), rtol=1e-7)


def _heat(theta, n_space, n_time):
    pde = PDECoefficients(lambda t, p: p * (1 - p), zero, zero, lambda p: p * (1 - p))
    return solve_backward(pde, Grid1D(n_space, n_time, 1.0), Scheme(theta=theta))


def test_heat_solution_decays_monotonically():
    u = _heat(1.0, 41, 200)
    assert np.all(np.diff(u.values[:, 20]) >= 0)
    np.testing.assert_array_equal(u.values[-1], u.p * (1 - u.p))


def test_heat_crank_nicolson_second_order():
    p = np.linspace(0, 1, 21)
    exact = math.exp(-2.0) * p * (1 - p)
    errs = []
    for nt in (20, 40):
        u = _heat(0.5, 21, nt)
        errs.append(np.abs(u.values[0] - exact).max())
    assert 3.5 <= errs[0] / errs[1] <= 4.5


def test_heat_implicit_first_order():
    p = np.linspace(0, 1, 21)
    exact = math.exp(-2.0) * p * (1 - p)
    errs = [np.abs(_heat(1.0, 21, nt).values[0] - exact).max() for nt in (50, 100)]
    assert 1.7 <= errs[0] / errs[1] <= 2.3


def test_pure_drift_follows_characteristics():
    b = 0.2
    g = lambda p: np.sin(np.pi * p)
    pde = PDECoefficients(zero, lambda t, p: np.full_like(p, b), zero, g)
    grid = Grid1D(401, 2000, 1.0)
    u = solve_backward(pde, grid)
    inside = grid.p <= 0.75
    exact = g(grid.p[inside] + b)
    assert np.abs(u.values[0, inside] - exact).max() < 5e-3


def test_nonzero_endpoint_diffusion_rejected():
    pde = PDECoefficients(lambda t, p: np.ones_like(p), zero, zero, lambda p: p)
    with pytest.raises(ValueError):
        solve_backward(pde, Grid1D(11, 10, 1.0))


def test_nonfinite_surface_raises():
    pde = PDECoefficients(zero, zero, lambda t, p: np.full_like(p, np.nan), lambda p: np.ones_like(p))
    with pytest.raises(NonFiniteSurface):
        solve_backward(pde, Grid1D(5, 3, 1.0))


def test_picard_converges_on_contractive_source():
    # u' = -u^2/2 backward from 1: u(t) = 1 / (1 - (T - t)/2)
    pde = PDECoefficients(zero, zero, zero, lambda p: np.ones_like(p),
                          nonlinear=lambda t, p, u: 0.5 * u**2)
    u = solve_backward(pde, Grid1D(5, 2000, 1.0))
    assert u.values[0, 2] == pytest.approx(2.0, rel=1e-3)
    assert u.meta["picard_iterations"].max() <= 5


def test_picard_divergence_detected():
    # the frozen-source map has contraction factor 3 * dt = 3 > 1
    pde = PDECoefficients(zero, zero, zero, lambda p: np.ones_like(p),
                          nonlinear=lambda t, p, u: -3.0 * u)
    with pytest.raises(PicardDivergence):
        solve_backward(pde, Grid1D(5, 1, 1.0), Scheme(picard_max=20))


def test_surface_csv_roundtrip(tmp_path):
    s = ValueSurface(np.array([0.0, 0.5]), np.array([0.0, 0.5, 1.0]), np.arange(6.0).reshape(2, 3) / 7)
    s.to_csv(tmp_path / "s.csv")
    t, p, v = read_surface_csv(tmp_path / "s.csv")
    np.testing.assert_array_equal(v, s.values)
    np.testing.assert_array_equal(p, s.p)
    np.testing.assert_array_equal(t, s.t)


def test_interpolate_examples():
    t = np.array([0.0, 1.0])
    p = np.linspace(0, 1, 5)
    lin = ValueSurface(t, p, np.vstack([2 * p, 2 * p + 1]))
    assert interpolate(lin, 0.0, 0.5) == 1.0
    assert interpolate(lin, 0.0, 0.375) == pytest.approx((0.5 + 1.0) / 2)
    assert interpolate(lin, 0.5, 0.25) == pytest.approx(1.0)
    const = ValueSurface(t, p, np.full((2, 5), 3.25))
    assert interpolate(const, 0.3, np.array([0.1, 0.9])).tolist() == [3.25, 3.25]
    with pytest.raises(OutOfDomain):
        interpolate(lin, 0.0, 1.5)
    with pytest.raises(OutOfDomain):
        interpolate(lin, 2.0, 0.5)


# ---------------------------------------------------------------------------
# Feynman-Kac
# ---------------------------------------------------------------------------


def test_simplex_bump_and_projection():
    x = np.array([[0.2, 0.3], [-0.2, 0.1], [0.6, 0.45], [-0.01, 0.5]])
    b = simplex_bump(x)
    assert b[0] == 1.0 and b[1] == 0.0 and 0.0 < b[3] < 1.0
    proj = project_to_simplex(x)
    assert np.all(proj >= 0) and np.all(proj.sum(axis=1) <= 1 + 1e-15)


def test_fk_single_regime_is_deterministic():
    m = validate_model(single_regime())
    est = feynman_kac_estimate(post_default_bundle(m), 0.0, 1.0, [], 200, 0)
    psi_rate = (m.gamma * m.rate + m.gamma / (2 * (1 - m.gamma)) * ((0.1 - 0.02) / 0.2) ** 2) / (1 - m.gamma)
    assert est.value == pytest.approx(math.exp(psi_rate), rel=1e-12)
    assert est.se < 1e-12


def test_fk_small_gamma_tends_to_one(model2):
    m = validate_model(two_regime(gamma=1e-6))
    est = feynman_kac_estimate(post_default_bundle(m), 0.0, 1.0, [0.5], 500, 1)
    assert est.value == pytest.approx(1.0, abs=1e-4)


def test_fk_matches_pde_small_sample(model2):
    post = solve_post(model2, Grid1D(101, 500, 1.0))
    ref = float(np.interp(0.5, post.psi.p, post.psi.values[0]))
    est = feynman_kac_estimate(post_default_bundle(model2), 0.0, 1.0, [0.5], 10_000, 2)
    assert abs(est.value - ref) < 3 * est.se + 1e-4


def test_fk_three_regimes_runs():
    m = validate_model(two_regime(generator=[[-1, 0.5, 0.5], [0.2, -0.4, 0.2], [1, 1, -2]],
                                  mu=[0.3, 0.0, -0.3], credit_drift=[0.1, 0.05, 0.0],
                                  hazard=[0.1, 0.3, 0.9], p0=[1 / 3] * 3))
    est = feynman_kac_estimate(post_default_bundle(m), 0.0, 1.0, [1 / 3, 1 / 3], 500, 3)
    assert est.value > 1.0 and est.se > 0


def test_fk_custom_bundle_brownian_exponent():
    """E[exp(int_0^T X ds)] for X = x0 + B, which is exp(x0 T + T^3 / 6)."""
    b = FeynmanKacBundle(
        drift=lambda t, x: np.zeros_like(x),
        diffusion=lambda t, x: np.ones(x.shape + (1,)),
        rate=lambda t, x: x[..., 0],
        dim=1,
        noise_dim=1,
    )
    # stay well inside the simplex cutoff support by using a tiny horizon
    est = feynman_kac_estimate(b, 0.0, 0.05, [0.5], 20_000, 4, dt=1e-3)
    assert abs(est.value - math.exp(0.5 * 0.05 + 0.05**3 / 6)) < 4 * est.se + 1e-6
