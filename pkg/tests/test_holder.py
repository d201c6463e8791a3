import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from harmaplab.errors import UnsupportedOrder, ZeroDenominator
from harmaplab.grid import Domain, GridFunction, build_grid
from harmaplab.holder import (bracket_norm, holder_norm, interpolation_check, pair_sup,
                              product_inequality_check, weighted_seminorms)

BALL = Domain.ball((0.0, 0.0), 1.0)


@pytest.fixture(scope="module")
def ball16():
    return build_grid(BALL, 1 / 16)


@pytest.fixture(scope="module")
def box():
    return build_grid(Domain.box((0, 0), (1, 1)), 1 / 16)


def smooth(grid, seed):
    rng = np.random.default_rng(seed)
    k = rng.normal(size=(3, 2)) * 2
    c = rng.normal(size=3)
    return GridFunction.from_callable(grid, lambda x: np.cos(x @ k.T + 0.3) @ c)


def brute_holder(x, v, d, e, alpha):
    best = 0.0
    for i, j in itertools.combinations(range(len(x)), 2):
        q = min(d[i], d[j]) ** e * np.sum(np.abs(v[i] - v[j])) / np.linalg.norm(x[i] - x[j]) ** alpha
        best = max(best, q)
    return best


# ---------------------------------------------------------------- seminorms

def test_constant_function(ball16):
    u = GridFunction.from_callable(ball16, lambda x: np.full(len(x), -2.0))
    rep = weighted_seminorms(u, 0, 0.5, 0.0)
    assert rep.seminorms == [2.0] and rep.seminorm_k_alpha == 0.0 and rep.full == 2.0


@pytest.mark.parametrize("beta", [-1.0, -0.5, 0.0, 0.5, 1.0])
def test_linear_on_box_closed_form(box, beta):
    u = GridFunction.from_callable(box, lambda x: x[:, 0])
    rep = weighted_seminorms(u, 1, 0.5, beta)
    # gradient is exactly (1, 0); the centre node has d = 1/2, the nodes
    # next to the boundary have d = h
    d = box.distance
    expected = 0.5 ** (beta + 1) if beta + 1 >= 0 else (1 / 16) ** (beta + 1)
    assert np.max(d) == 0.5
    assert rep.seminorms[1] == pytest.approx(expected, rel=1e-12)
    assert rep.seminorm_k_alpha == pytest.approx(0.0, abs=1e-9)


def test_analytic_distances(ball16):
    np.testing.assert_allclose(ball16.distance, 1 - np.linalg.norm(ball16.points, axis=1),
                               atol=1e-15)
    g = build_grid(Domain.annulus((0, 0), 0.3, 1.0), 1 / 16)
    r = np.linalg.norm(g.points, axis=1)
    np.testing.assert_allclose(g.distance, np.minimum(r - 0.3, 1 - r), atol=1e-15)


def test_full_is_sum(ball16):
    u = smooth(ball16, 1)
    for k in (0, 1, 2):
        rep = weighted_seminorms(u, k, 0.4, -0.4)
        assert abs(rep.full - (sum(rep.seminorms) + rep.seminorm_k_alpha)) <= 1e-12 * rep.full
        assert len(rep.seminorms) == k + 1 and rep.seminorm_k == rep.seminorms[-1]
        assert all(v >= 0 for v in rep.seminorms + [rep.seminorm_k_alpha])


def test_pair_sup_matches_brute_force():
    g = build_grid(BALL, 1 / 6)
    u = smooth(g, 2)
    x, v, d = g.points, u.values.reshape(-1, 1), g.distance
    for e, a in [(0.5, 0.5), (1.3, 0.3), (0.0, 0.9)]:
        assert pair_sup(x, v, d, e, a, g.h, full=True) == pytest.approx(brute_holder(x, v, d, e, a),
                                                                         rel=1e-12)


def test_sampled_pairs_close_to_exhaustive():
    g = build_grid(BALL, 1 / 48)
    u = smooth(g, 3)
    x, v, d = g.points, u.values, g.distance
    exact = pair_sup(x, v, d, 1.5, 0.5, g.h, full=True)
    sampled = pair_sup(x, v, d, 1.5, 0.5, g.h, full=False)
    assert sampled <= exact * (1 + 1e-12)
    assert sampled >= 0.99 * exact


def test_unsupported_order(ball16):
    with pytest.raises(UnsupportedOrder):
        weighted_seminorms(smooth(ball16, 0), 3, 0.5, 0.0)


def test_report_json(ball16):
    rep = weighted_seminorms(smooth(ball16, 0), 1, 0.5, 0.0, bracket=True)
    d = json.loads(rep.to_json())
    assert d["k"] == 1 and d["bracket"] == rep.bracket


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 1000), st.floats(-4, 4).filter(lambda c: abs(c) > 1e-3))
def test_homogeneity(seed, c):
    g = build_grid(BALL, 1 / 12)
    u = smooth(g, seed)
    for k in (0, 1, 2):
        a = weighted_seminorms(u, k, 0.5, -0.5)
        b = weighted_seminorms(u * c, k, 0.5, -0.5)
        np.testing.assert_allclose(b.seminorms, abs(c) * np.array(a.seminorms), rtol=1e-10)
        assert b.seminorm_k_alpha == pytest.approx(abs(c) * a.seminorm_k_alpha, rel=1e-10)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 1000))
def test_triangle_inequality(seed):
    g = build_grid(BALL, 1 / 12)
    u, w = smooth(g, seed), smooth(g, seed + 1)
    for k, beta in ((0, 0.0), (1, 0.5), (2, -0.5)):
        lhs = holder_norm(u + w, k, 0.5, beta)
        assert lhs <= holder_norm(u, k, 0.5, beta) + holder_norm(w, k, 0.5, beta) + 1e-10


def test_subdomain_monotonicity(ball16):
    u = smooth(ball16, 4)
    inner = np.linalg.norm(ball16.points, axis=1) < 0.6
    for k in (0, 1, 2):
        full = weighted_seminorms(u, k, 0.5, 0.5)
        sub = weighted_seminorms(u, k, 0.5, 0.5, mask=inner)
        assert all(s <= f + 1e-15 for s, f in zip(sub.seminorms, full.seminorms))
        assert sub.seminorm_k_alpha <= full.seminorm_k_alpha + 1e-15


def test_bracket_bounds(ball16):
    u = smooth(ball16, 5)
    parts = [holder_norm(u, 0, 0.5, 0.0),
             weighted_seminorms(u, 1, 0.5, -0.5).seminorm_k_alpha,
             weighted_seminorms(u, 2, 0.5, -0.5).seminorm_k_alpha]
    b = bracket_norm(u, 0.5)
    assert b == pytest.approx(sum(parts), rel=1e-12)
    assert max(parts) <= b <= 3 * max(parts)


# ---------------------------------------------------------------- interpolation

def test_interpolation_zero_rejected(ball16):
    z = GridFunction(ball16, np.zeros(ball16.n_inside), np.zeros(ball16.n_boundary))
    with pytest.raises(ZeroDenominator):
        interpolation_check(z, 0, 0.5, 1, 0.5, 0.0)


def test_interpolation_scale_invariant(ball16):
    u = smooth(ball16, 6)
    a = interpolation_check(u, 0, 0.5, 1, 0.5, 0.0)
    assert interpolation_check(u * -7.0, 0, 0.5, 1, 0.5, 0.0) == pytest.approx(a, rel=1e-12)


def test_interpolation_requires_order():
    g = build_grid(BALL, 1 / 8)
    with pytest.raises(ValueError):
        interpolation_check(smooth(g, 0), 1, 0.5, 0, 0.5, 0.0)


def _corpus_max(h, n):
    g = build_grid(BALL, h)
    return max(interpolation_check(smooth(g, s), 0, 0.5, 1, 0.5, 0.0) for s in range(n))


def test_interpolation_corpus_small():
    a, b = _corpus_max(1 / 12, 10), _corpus_max(1 / 24, 10)
    assert np.isfinite(a) and abs(a / b - 1) < 0.30


@pytest.mark.slow
def test_interpolation_corpus_refinement():
    a, b = _corpus_max(1 / 16, 100), _corpus_max(1 / 32, 100)
    assert np.isfinite(a) and abs(a / b - 1) < 0.30


# ---------------------------------------------------------------- product

def test_product_with_one(ball16):
    one = GridFunction(ball16, np.ones(ball16.n_inside))
    u = smooth(ball16, 7)
    slack = product_inequality_check(one, u, 0.5, 0.0, 0.3)
    # |1|^(0)_{0,a} = 1, so both sides coincide
    assert slack == pytest.approx(0.0, abs=1e-12)


def test_product_direct_evaluation():
    g = build_grid(BALL, 1 / 6)
    f = smooth(g, 8)
    x, d, a, b = g.points, g.distance, 0.5, 0.25
    fv = f.values

    def norm(v, w):
        return np.max(d ** w * np.abs(v)) + brute_holder(x, v.reshape(-1, 1), d, w + a, a)

    slack = product_inequality_check(f, f, a, b, b)
    assert slack == pytest.approx(norm(fv, b) ** 2 - norm(fv * fv, 2 * b), abs=1e-12)
    assert slack >= -1e-10


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000), st.floats(0, 1), st.floats(-0.5, 1))
def test_product_inequality_random(seed, beta, gamma):
    g = build_grid(BALL, 1 / 12)
    if beta + gamma < 0:
        return
    f, w = smooth(g, seed), smooth(g, seed + 50)
    assert product_inequality_check(f, w, 0.5, beta, gamma) >= -1e-10


def test_product_vector_valued(ball16):
    f = smooth(ball16, 9)
    w = GridFunction(ball16, np.stack([smooth(ball16, 10).values, smooth(ball16, 11).values], 1))
    assert product_inequality_check(f, w, 0.5, 0.2, 0.3) >= -1e-10
