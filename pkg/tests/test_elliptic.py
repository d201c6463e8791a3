import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from harmaplab.elliptic import (boundary_holder_check, estimate_delta, harmonic_extension,
                                interior_derivative_bound_check, inverse_laplacian,
                                solve_poisson_dirichlet, solve_weighted_dirichlet)
from harmaplab.errors import NoConvergence, NonpositiveWeight
from harmaplab.grid import Domain, GridFunction, build_grid, level_boundary_flux

BALL = Domain.ball((0.0, 0.0), 1.0)


@pytest.fixture(scope="module")
def ball32():
    return build_grid(BALL, 1 / 32)


@pytest.fixture(scope="module")
def box33():
    # 31^2 inside nodes plus the boundary ring: a 33^2 lattice
    return build_grid(Domain.box((0, 0), (1, 1)), 1 / 32)


def dense_solve(grid, f, gb):
    L = grid.laplace_matrix.toarray()
    n = grid.n_inside
    return np.linalg.solve(L[:, :n], f - L[:, n:] @ gb)


# ---------------------------------------------------------------- Poisson

def test_zero_data_zero_solution(ball32):
    rep = solve_poisson_dirichlet(ball32, 0.0, 0.0)
    assert rep.converged and np.all(rep.solution.values == 0)


@pytest.mark.parametrize("m,h", [(2, 1 / 32), (3, 1 / 8)])
def test_quadratic_is_reproduced(m, h):
    g = build_grid(Domain.ball((0.0,) * m, 1.0), h)
    q = lambda x: np.sum(x ** 2, axis=1) / (2 * m)
    u = solve_poisson_dirichlet(g, 1.0, q).solution
    np.testing.assert_allclose(u.values, q(g.points), atol=1e-9)


@pytest.mark.parametrize("method", ["direct", "krylov", "rbgs"])
def test_random_source_matches_dense(box33, method):
    rng = np.random.default_rng(7)
    f = rng.normal(size=box33.n_inside)
    gb = rng.normal(size=box33.n_boundary)
    rep = solve_poisson_dirichlet(box33, f, gb, tol=1e-12, method=method)
    np.testing.assert_allclose(rep.solution.values, dense_solve(box33, f, gb), atol=1e-9)
    assert rep.final_residual <= 1e-12


def test_curved_domain_matches_dense(ball32):
    rng = np.random.default_rng(8)
    f = rng.normal(size=ball32.n_inside)
    gb = rng.normal(size=ball32.n_boundary)
    u = solve_poisson_dirichlet(ball32, f, gb).solution.values
    np.testing.assert_allclose(u, dense_solve(ball32, f, gb), atol=1e-9)


def test_visit_order_invariance(ball32):
    rng = np.random.default_rng(9)
    f = rng.normal(size=ball32.n_inside)
    a = solve_poisson_dirichlet(ball32, f, 0.0, tol=1e-11, method="rbgs", first_colour=0)
    b = solve_poisson_dirichlet(ball32, f, 0.0, tol=1e-11, method="rbgs", first_colour=1)
    # scaled residual 1e-11 bounds the error by roughly (1/h^2) * 1e-11 * diam^2
    assert np.max(np.abs(a.solution.values - b.solution.values)) < 1e-8


def test_no_convergence_reports_partial_state(ball32):
    with pytest.raises(NoConvergence) as info:
        solve_poisson_dirichlet(ball32, 1.0, 0.0, method="rbgs", max_sweeps=5)
    rep = info.value.report
    assert not rep.converged and rep.iterations == 5 and rep.final_residual > 1e-10


def test_report_json(ball32):
    d = json.loads(solve_poisson_dirichlet(ball32, 1.0, 0.0).to_json())
    assert set(d) == {"iterations", "final_residual", "converged"} and d["converged"]


def test_vector_valued_data(ball32):
    gb = np.stack([ball32.boundary_points[:, 0], np.ones(ball32.n_boundary)], 1)
    u = solve_poisson_dirichlet(ball32, None, gb).solution
    np.testing.assert_allclose(u.values[:, 0], ball32.points[:, 0], atol=1e-9)
    np.testing.assert_allclose(u.values[:, 1], 1.0, atol=1e-9)


def test_3d_krylov_agrees_with_direct():
    g = build_grid(Domain.annulus((0, 0, 0), 0.3, 1.0), 1 / 10)
    rng = np.random.default_rng(2)
    f = rng.normal(size=g.n_inside)
    a = solve_poisson_dirichlet(g, f, 1.0, method="direct").solution.values
    b = solve_poisson_dirichlet(g, f, 1.0, method="krylov").solution.values
    assert np.max(np.abs(a - b)) < 1e-9


# ---------------------------------------------------------------- harmonic extension

def test_constant_extension(ball32):
    np.testing.assert_allclose(harmonic_extension(ball32, 2.5).values, 2.5, atol=1e-10)


def test_harmonic_polynomial_oracle():
    p = lambda x: x[:, 0] ** 2 - x[:, 1] ** 2
    errs = []
    for h in (1 / 16, 1 / 32):
        g = build_grid(BALL, h)
        u = harmonic_extension(g, p)
        errs.append(np.max(np.abs(u.values - p(g.points))))
    # Shortley-Weller reproduces quadratics exactly
    assert max(errs) < 1e-9


def test_harmonic_cubic_converges():
    p = lambda x: x[:, 0] ** 3 - 3 * x[:, 0] * x[:, 1] ** 2 + np.exp(x[:, 0]) * np.cos(x[:, 1])
    errs = []
    for h in (1 / 16, 1 / 32):
        g = build_grid(BALL, h)
        errs.append(np.max(np.abs(harmonic_extension(g, p).values - p(g.points))))
    assert errs[0] / errs[1] > 3


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_discrete_maximum_principle(seed):
    g = build_grid(Domain.annulus((0.0, 0.0), 0.3, 1.0), 1 / 16)
    gb = np.random.default_rng(seed).normal(size=g.n_boundary)
    u = harmonic_extension(g, gb).values
    assert gb.min() - 1e-10 <= u.min() and u.max() <= gb.max() + 1e-10


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_comparison_principle(seed):
    g = build_grid(BALL, 1 / 16)
    rng = np.random.default_rng(seed)
    gu = rng.normal(size=g.n_boundary)
    gw = gu + rng.uniform(0, 1, size=g.n_boundary)
    fu = rng.normal(size=g.n_inside)
    fw = fu - rng.uniform(0, 1, size=g.n_inside)   # Lap u >= Lap w
    u = solve_poisson_dirichlet(g, fu, gu).solution.values
    w = solve_poisson_dirichlet(g, fw, gw).solution.values
    assert np.all(u <= w + 1e-9)


# ---------------------------------------------------------------- weighted Dirichlet

def test_weighted_radial_annulus():
    eps = 0.2
    errs = []
    for h in (1 / 16, 1 / 32):
        g = build_grid(Domain.annulus((0, 0), eps, 1.0), h)
        gb = np.where(g.boundary_component == 1, 1.0, 0.0)
        u = solve_weighted_dirichlet(g, 1.0, gb).solution
        exact = np.log(np.linalg.norm(g.points, axis=1)) / math.log(eps)
        errs.append(np.max(np.abs(u.values - exact)))
    assert errs[1] < 0.02
    assert errs[1] < errs[0]


def test_weighted_constant_factors_out():
    g = build_grid(Domain.annulus((0, 0), 0.2, 1.0), 1 / 32)
    gb = np.where(g.boundary_component == 1, 1.0, 0.0)
    a = solve_weighted_dirichlet(g, 1.0, gb).solution.values
    b = solve_weighted_dirichlet(g, 7.3, gb).solution.values
    assert np.max(np.abs(a - b)) < 1e-12


def test_weighted_flux_conservation():
    g = build_grid(Domain.annulus((0, 0), 0.2, 1.0), 1 / 64)
    rho = lambda x: 1 + 0.5 * np.sin(3 * x[:, 0]) * np.cos(2 * x[:, 1])
    gb = np.where(g.boundary_component == 1, 1.0, 0.0)
    u = solve_weighted_dirichlet(g, rho, gb).solution
    rg = GridFunction.from_callable(g, rho)
    near_in, near_out = level_boundary_flux(u, rg, 0.85), level_boundary_flux(u, rg, 0.15)
    assert abs(near_in / near_out - 1) < 0.02


def test_weighted_max_principle_rough_rho():
    g = build_grid(Domain.annulus((0, 0), 0.3, 1.0), 1 / 32)
    rng = np.random.default_rng(4)
    rho = np.exp(2 * rng.normal(size=g.n_total))
    gb = rng.uniform(-1, 2, size=g.n_boundary)
    u = solve_weighted_dirichlet(g, rho, gb).solution.values
    assert gb.min() - 1e-9 <= u.min() and u.max() <= gb.max() + 1e-9


def test_weighted_rejects_nonpositive():
    g = build_grid(BALL, 1 / 16)
    with pytest.raises(NonpositiveWeight):
        solve_weighted_dirichlet(g, lambda x: x[:, 0], 0.0)


# ---------------------------------------------------------------- inverse Laplacian

def test_inverse_laplacian_zero(ball32):
    assert np.all(inverse_laplacian(ball32, 0.0).values == 0)


def test_inverse_laplacian_unit_source():
    g = build_grid(BALL, 1 / 32)
    phi = inverse_laplacian(g, 1.0)
    # (1 - |x|^2)/4 is reproduced exactly by the scheme
    assert phi.values[g.node_at((0.0, 0.0))] == pytest.approx(0.25, abs=1e-9)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.floats(-5, 5), st.floats(-5, 5))
def test_inverse_laplacian_superposition(seed, a, b):
    g = build_grid(BALL, 1 / 16)
    rng = np.random.default_rng(seed)
    f1, f2 = rng.normal(size=(2, g.n_inside))
    lhs = inverse_laplacian(g, a * f1 + b * f2).values
    rhs = a * inverse_laplacian(g, f1).values + b * inverse_laplacian(g, f2).values
    assert np.max(np.abs(lhs - rhs)) < 1e-9 * (1 + abs(a) + abs(b))


# ---------------------------------------------------------------- delta estimate

def test_delta_reproducible_and_positive():
    g = build_grid(BALL, 1 / 16)
    a = estimate_delta(g, 0.5, trials=5, seed=3)
    assert a > 0 and a == estimate_delta(g, 0.5, trials=5, seed=3)


def test_delta_ratio_scale_invariant():
    from harmaplab.holder import holder_norm

    g = build_grid(BALL, 1 / 16)
    f = GridFunction.from_callable(g, lambda x: np.cos(2 * x[:, 0]) + x[:, 1])
    ratios = []
    for c in (1.0, -3.0, 1e3):
        u = inverse_laplacian(g, c * f.values)
        ratios.append(holder_norm(u, 2, 0.5, -0.5) / holder_norm(f * c, 0, 0.5, 1.5))
    np.testing.assert_allclose(ratios, ratios[0], rtol=1e-9)


@pytest.mark.slow
def test_delta_stabilises():
    g = build_grid(BALL, 1 / 16)
    d50 = estimate_delta(g, 0.5, trials=50)
    d100 = estimate_delta(g, 0.5, trials=100)
    assert d100 >= d50 and (d100 - d50) / d50 < 0.25


def test_delta_rejects_zero_trials():
    with pytest.raises(ValueError):
        estimate_delta(build_grid(BALL, 1 / 8), 0.5, trials=0)


# ---------------------------------------------------------------- interior estimate

def test_interior_bound_constant(ball32):
    v = harmonic_extension(ball32, 3.0)
    rep = interior_derivative_bound_check(v, (0.0, 0.0), 0.5, C=0.0)
    assert rep["violations"] == 0 and rep["worst_margin"] >= 0


def test_interior_bound_affine(ball32):
    v = harmonic_extension(ball32, lambda x: 1 + x[:, 0] - 0.5 * x[:, 1])
    rep = interior_derivative_bound_check(v, (0.0, 0.0), 0.6, C=0.0)
    assert rep["violations"] == 0 and rep["worst_margin"] >= 0


def test_interior_bound_quadratic_refinement():
    p = lambda x: x[:, 0] ** 2 - x[:, 1] ** 2
    for h in (1 / 16, 1 / 32, 1 / 64):
        g = build_grid(BALL, h)
        rep = interior_derivative_bound_check(harmonic_extension(g, p), (0.25, 0.0), 0.5)
        assert rep["violations"] == 0


# ---------------------------------------------------------------- boundary estimate

def test_boundary_check_zero_data():
    g = build_grid(BALL, 1 / 16)
    rep = boundary_holder_check(g, 0.0, 0.5)
    assert rep["seminorms"] == [0.0, 0.0, 0.0] and rep["f_norm_0"] == 0.0


def test_boundary_check_affine_data():
    g = build_grid(BALL, 1 / 16)
    rep = boundary_holder_check(g, lambda x: 0.3 + x[:, 0] - 2 * x[:, 1], 0.5)
    assert all(np.isfinite(rep["seminorms"]))
    np.testing.assert_allclose(rep["solution"].values, 0.3 + g.points[:, 0] - 2 * g.points[:, 1],
                               atol=1e-9)


@pytest.mark.slow
def test_boundary_check_holder_profile_bounded():
    prof = lambda x: np.abs(np.arctan2(x[:, 1], x[:, 0])) ** 0.5
    ratios = [boundary_holder_check(build_grid(BALL, h), prof, 0.5)["ratio_305"]
              for h in (1 / 32, 1 / 64, 1 / 128)]
    assert all(np.isfinite(ratios))
    assert max(ratios) / min(ratios) < 2
