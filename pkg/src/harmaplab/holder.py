"""Interior-distance-weighted Hölder norms on grid functions.

With ``d_x = dist(x, boundary)`` and ``d_xy = min(d_x, d_y)``::

    [u]^(b)_k     = sup_x  d_x^(b+k) |D^k u(x)|
    [u]^(b)_{k,a} = sup_xy d_xy^(b+k+a) |D^k u(x) - D^k u(y)| / |x-y|^a
    |u|^(b)_{k,a} = sum_{j=0..k} [u]^(b)_j + [u]^(b)_{k,a}

``|D^k u|`` is the sum of absolute values of all order-k partial
derivatives (one per multi-index) and, for vector-valued ``u``, over
components.  Suprema run over inside nodes only (the domain is open).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import UnsupportedOrder, ZeroDenominator
from .grid import GridFunction, gradient

__all__ = [
    "WeightedNormReport",
    "derivative_data",
    "pair_sup",
    "weighted_seminorms",
    "bracket_norm",
    "holder_norm",
    "boundary_holder_norm",
    "interpolation_check",
    "product_inequality_check",
]

# Exhaustive pair enumeration below this many points; sampled above.
FULL_PAIR_LIMIT = 4000
RANDOM_PAIRS = 2_000_000
NEAR_RANGE = 5.0  # in units of h


@dataclass
class WeightedNormReport:
    beta: float
    alpha: float
    k: int
    seminorms: list  # [u]^(beta)_j for j = 0..k
    seminorm_k: float
    seminorm_k_alpha: float
    full: float
    bracket: Optional[float] = None

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def derivative_data(u: GridFunction, k: int, mask=None):
    """Node indices and flattened ``D^k u`` rows (one column per multi-index/component).

    k=0 and k=1 use every inside node; k=2 uses regular nodes, where pure
    second derivatives are three-point differences and mixed ones are
    central differences of the gradient.
    """
    g = u.grid
    n_in = g.n_inside
    vals = u.values.reshape(n_in, -1)
    if k == 0:
        idx = np.arange(n_in)
        data = vals
    elif k == 1:
        idx = np.arange(n_in)
        data = gradient(u).values.reshape(n_in, -1)
    elif k == 2:
        idx = np.flatnonzero(g.regular)
        full = u.full().reshape(g.n_total, -1)
        grad = gradient(u).values.reshape(n_in, vals.shape[1], g.m)
        cols = []
        for a in range(g.m):
            jm, jp = g.nbr[a, 0, idx], g.nbr[a, 1, idx]
            cols.append((full[jp] - 2 * full[idx] + full[jm]) / g.h ** 2)
            for b in range(a + 1, g.m):
                cols.append((grad[jp, :, b] - grad[jm, :, b]) / (2 * g.h))
        data = np.concatenate(cols, axis=1)
    else:
        raise UnsupportedOrder(f"derivative order {k} > 2 is not supported")
    if mask is not None:
        keep = np.asarray(mask)[idx]
        idx, data = idx[keep], data[keep]
    return idx, data


def _pairs(points: np.ndarray, h: float, seed: int):
    """Candidate pair index arrays for large point sets."""
    n = len(points)
    near = cKDTree(points).query_pairs(NEAR_RANGE * h * (1 + 1e-9), output_type="ndarray")
    rng = np.random.default_rng(seed)
    i = rng.integers(0, n, RANDOM_PAIRS)
    j = rng.integers(0, n, RANDOM_PAIRS)
    keep = i != j
    return np.concatenate([near[:, 0], i[keep]]), np.concatenate([near[:, 1], j[keep]])


def _quotients(x, v, d, e, alpha, i, j):
    dist = np.linalg.norm(x[i] - x[j], axis=1)
    diff = np.sum(np.abs(v[i] - v[j]), axis=1)
    w = np.minimum(d[i], d[j]) ** e
    return w * diff / dist ** alpha


def pair_sup(x, v, d, e, alpha, h, seed=0, full=None) -> float:
    """``sup d_xy^e |v(x)-v(y)|_1 / |x-y|^alpha`` over node pairs."""
    n = len(x)
    if n < 2:
        return 0.0
    v = v.reshape(n, -1)
    if full is None:
        full = n <= FULL_PAIR_LIMIT
    best = 0.0
    if full:
        chunk = max(1, 4_000_000 // n)
        for s in range(0, n - 1, chunk):
            rows = slice(s, min(s + chunk, n - 1))
            cols = slice(s + 1, n)
            dist2 = np.zeros((rows.stop - s, n - s - 1))
            for c in range(x.shape[1]):
                dist2 += (x[rows, c, None] - x[None, cols, c]) ** 2
            diff = np.zeros_like(dist2)
            for c in range(v.shape[1]):
                diff += np.abs(v[rows, c, None] - v[None, cols, c])
            w = np.minimum(d[rows, None], d[None, cols]) ** e
            with np.errstate(divide="ignore", invalid="ignore"):
                q = w * diff / dist2 ** (alpha / 2)
            # keep only j > i
            q = np.where(np.arange(s + 1, n)[None, :] > np.arange(rows.start, rows.stop)[:, None], q, 0.0)
            best = max(best, float(q.max()))
        return best
    i, j = _pairs(x, h, seed)
    for s in range(0, len(i), 500_000):
        q = _quotients(x, v, d, e, alpha, i[s:s + 500_000], j[s:s + 500_000])
        if q.size:
            best = max(best, float(q.max()))
    return best


def _sup_weighted(d, data, e) -> float:
    if len(data) == 0:
        return 0.0
    return float(np.max(d ** e * np.sum(np.abs(data), axis=1)))


def weighted_seminorms(u: GridFunction, k: int, alpha: float, beta: float,
                       bracket: bool = False, mask=None, distance=None,
                       seed: int = 0) -> WeightedNormReport:
    """All weighted (semi)norms of order ``k`` for ``u``.

    ``mask`` restricts the suprema to a subset of inside nodes and
    ``distance`` overrides the analytic ``d_x`` (e.g. to keep the distance
    of a larger domain).
    """
    if k > 2:
        raise UnsupportedOrder(f"order {k} > 2 is not supported")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    g = u.grid
    dist = g.distance if distance is None else np.asarray(distance)
    semis = []
    for j in range(k + 1):
        idx, data = derivative_data(u, j, mask)
        semis.append(_sup_weighted(dist[idx], data, beta + j))
    idx, data = derivative_data(u, k, mask)
    holder = pair_sup(g.points[idx], data, dist[idx], beta + k + alpha, alpha, g.h, seed)
    rep = WeightedNormReport(beta=beta, alpha=alpha, k=k, seminorms=semis,
                             seminorm_k=semis[-1], seminorm_k_alpha=holder,
                             full=float(sum(semis) + holder))
    if bracket:
        rep.bracket = bracket_norm(u, alpha, mask=mask, distance=distance, seed=seed)
    return rep


def _holder_only(u, k, alpha, beta, mask, distance, seed):
    g = u.grid
    dist = g.distance if distance is None else np.asarray(distance)
    idx, data = derivative_data(u, k, mask)
    return pair_sup(g.points[idx], data, dist[idx], beta + k + alpha, alpha, g.h, seed)


def holder_norm(u: GridFunction, k: int, alpha: float, beta: float, **kw) -> float:
    """``|u|^(beta)_{k,alpha}``."""
    return weighted_seminorms(u, k, alpha, beta, **kw).full


def bracket_norm(u: GridFunction, alpha: float, mask=None, distance=None, seed: int = 0) -> float:
    """``|u|^(0)_{0,alpha} + [u]^(-alpha)_{1,alpha} + [u]^(-alpha)_{2,alpha}``."""
    first = weighted_seminorms(u, 0, alpha, 0.0, mask=mask, distance=distance, seed=seed).full
    s1 = _holder_only(u, 1, alpha, -alpha, mask, distance, seed)
    s2 = _holder_only(u, 2, alpha, -alpha, mask, distance, seed)
    return float(first + s1 + s2)


def boundary_holder_norm(points: np.ndarray, values: np.ndarray, alpha: float) -> float:
    """Unweighted ``|phi|_{0,alpha}`` of boundary samples: sup plus Hölder quotient."""
    v = np.asarray(values, dtype=float).reshape(len(points), -1)
    sup = float(np.max(np.sum(np.abs(v), axis=1))) if len(v) else 0.0
    ones = np.ones(len(points))
    return sup + pair_sup(points, v, ones, 0.0, alpha, h=1.0, full=True)


def interpolation_check(u: GridFunction, j: int, alpha: float, k: int, beta: float,
                        gamma: float, **kw) -> float:
    """Ratio ``|u|^(gamma)_{j,alpha} / |u|^(gamma)_{k,beta}``."""
    if j + alpha > k + beta + 1e-15:
        raise ValueError("interpolation needs j + alpha <= k + beta")
    num = holder_norm(u, j, alpha, gamma, **kw)
    den = holder_norm(u, k, beta, gamma, **kw)
    if den == 0.0:
        raise ZeroDenominator("denominator norm vanishes")
    return num / den


def product_inequality_check(f: GridFunction, g: GridFunction, alpha: float, beta: float,
                             gamma: float, seed: int = 0) -> float:
    """Slack ``|f|^(beta)_{0,a} |g|^(gamma)_{0,a} - |fg|^(beta+gamma)_{0,a}``.

    ``f`` is scalar; ``g`` may be vector-valued.
    """
    if beta + gamma < 0:
        raise ValueError("need beta + gamma >= 0")
    fv = f.values.reshape(f.grid.n_inside, -1)
    if fv.shape[1] != 1:
        raise ValueError("f must be scalar")
    prod = GridFunction(f.grid, fv * g.values.reshape(g.grid.n_inside, -1))
    lhs = holder_norm(prod, 0, alpha, beta + gamma, seed=seed)
    rhs = holder_norm(f, 0, alpha, beta, seed=seed) * holder_norm(g, 0, alpha, gamma, seed=seed)
    return rhs - lhs
