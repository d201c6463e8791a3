"""The harmonic map equation ``Lap u + Gamma(u)(grad u, grad u) = 0``.

Maps take values in a coordinate chart: either a :class:`MetricChart`
directly or a :class:`NormalCoordinateMap`, in which case the pulled-back
metric on the validity ball is used.  The existence proof is mirrored by a
Picard iteration ``w <- (-Lap)^-1 Gamma(v+w)(grad(v+w), grad(v+w))``
around the harmonic extension ``v`` of the boundary data.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .elliptic import harmonic_extension, inverse_laplacian
from .errors import ChartExit, NoConvergence, ZeroDenominator
from .geometry import MetricChart, NormalCoordinateMap, christoffel_field
from .grid import Domain, Grid, GridFunction, build_grid, gradient, laplacian
from .holder import bracket_norm, holder_norm

__all__ = [
    "PicardConfig",
    "PicardReport",
    "as_chart",
    "gamma_quadratic",
    "residual",
    "energy",
    "picard_iterate",
    "picard_solve",
    "contraction_certificate",
    "trilinear_estimate_check",
    "measure_lambda",
    "estimate_C3",
]


def as_chart(frame) -> MetricChart:
    """The chart in which map values are coordinates."""
    if isinstance(frame, NormalCoordinateMap):
        return frame.pulled_back_chart()
    return frame


def _require_inside(chart: MetricChart, values: np.ndarray, iterate=None) -> None:
    ok = chart.inside(values)
    if not np.all(ok):
        worst = float(np.max(np.abs(values[~ok])))
        raise ChartExit(f"{int((~ok).sum())} values left the chart (|u| up to {worst:.3g})",
                        iterate=iterate)


def _vector_values(u: GridFunction) -> np.ndarray:
    return u.values.reshape(u.grid.n_inside, -1)


def gamma_quadratic(frame, u: GridFunction, grad_u: Optional[GridFunction] = None,
                    gamma_at: Optional[GridFunction] = None) -> GridFunction:
    """``sum_a Gamma^i_jk(u) d_a u^j d_a u^k`` on inside nodes.

    ``gamma_at`` evaluates the Christoffel symbols at a different map (used
    for the difference form of the trilinear estimate).
    """
    chart = as_chart(frame)
    base = u if gamma_at is None else gamma_at
    vals = _vector_values(base)
    _require_inside(chart, vals)
    gam = christoffel_field(chart, vals)
    if grad_u is None:
        grad_u = gradient(u)
    du = grad_u.values.reshape(u.grid.n_inside, chart.n, u.grid.m)
    out = np.einsum("nijk,nja,nka->ni", gam, du, du)
    return GridFunction(u.grid, out)


def _trilinear(frame, w1: GridFunction, w2: GridFunction, w3: GridFunction) -> np.ndarray:
    """``Gamma(w1)(grad w2, grad w3)``."""
    chart = as_chart(frame)
    vals = _vector_values(w1)
    _require_inside(chart, vals)
    gam = christoffel_field(chart, vals)
    m = w1.grid.m
    d2 = gradient(w2).values.reshape(-1, chart.n, m)
    d3 = gradient(w3).values.reshape(-1, chart.n, m)
    return np.einsum("nijk,nja,nka->ni", gam, d2, d3)


def residual(frame, u: GridFunction) -> GridFunction:
    """``Lap u + Gamma(u)(grad u, grad u)`` on inside nodes."""
    lap = laplacian(u).values.reshape(u.grid.n_inside, -1)
    return GridFunction(u.grid, lap + gamma_quadratic(frame, u).values)


def energy(frame, u: GridFunction) -> float:
    """Node Riemann sum of ``h_ij(u) <d u^i, d u^j>``; may be negative."""
    chart = as_chart(frame)
    g = u.grid
    vals = _vector_values(u)
    _require_inside(chart, vals)
    hm = chart.metric(vals)
    du = gradient(u).values.reshape(g.n_inside, chart.n, g.m)
    dens = np.einsum("nij,nia,nja->n", hm, du, du)
    return float(np.sum(dens) * g.h ** g.m)


@dataclass
class PicardConfig:
    r: float
    alpha: float = 0.5
    max_iter: int = 100
    tol: float = 1e-10
    delta: Optional[float] = None
    C3: Optional[float] = None
    Lambda: Optional[float] = None
    h: float = 1 / 64
    center: tuple = (0.0, 0.0)
    R1: Optional[float] = None

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError("r must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")


@dataclass
class PicardReport:
    u_bar: GridFunction
    v: GridFunction
    w: GridFunction
    w_norm_history: list
    contraction_factors: list
    converged: bool
    iterations: int
    certificate: Optional[dict] = None
    r_used: Optional[float] = None

    def to_dict(self) -> dict:
        return {"w_norm_history": self.w_norm_history,
                "contraction_factors": self.contraction_factors,
                "converged": self.converged, "iterations": self.iterations,
                "certificate": self.certificate, "r_used": self.r_used}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _boundary_array(grid: Grid, g, n: Optional[int] = None) -> np.ndarray:
    if isinstance(g, GridFunction):
        return g.boundary
    if callable(g):
        return np.asarray(g(grid.boundary_points), dtype=float)
    return np.asarray(g, dtype=float)


def picard_iterate(frame, grid: Grid, g, max_iter: int = 100, tol: float = 1e-10,
                   w0: Optional[np.ndarray] = None) -> PicardReport:
    """Fixed-point iteration on a given grid (no radius retry).

    Raises :class:`ChartExit` (with ``iterate``) if ``v + w`` leaves the chart
    and :class:`NoConvergence` (with the partial report) at the cap.
    """
    chart = as_chart(frame)
    gb = _boundary_array(grid, g)
    v = harmonic_extension(grid, gb)
    n = chart.n
    zeros_b = np.zeros((grid.n_boundary, n))
    w = np.zeros((grid.n_inside, n)) if w0 is None else np.array(w0, dtype=float)
    history, factors = [], []
    prev = None
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        ubar = GridFunction(grid, v.values + w, gb)
        _require_inside(chart, np.vstack([ubar.values, gb]), iterate=it)
        src = gamma_quadratic(chart, ubar).values
        w_new = inverse_laplacian(grid, src).values
        upd = float(np.max(np.abs(w_new - w))) if w.size else 0.0
        w = w_new
        history.append(float(np.max(np.abs(w))) if w.size else 0.0)
        if prev is not None and prev > 0:
            factors.append(upd / prev)
        prev = upd
        if upd <= tol:
            converged = True
            break
    wf = GridFunction(grid, w, zeros_b)
    rep = PicardReport(u_bar=GridFunction(grid, v.values + w, gb), v=v, w=wf,
                       w_norm_history=history, contraction_factors=factors,
                       converged=converged, iterations=it)
    if not converged:
        raise NoConvergence(f"Picard iteration did not reach tol {tol} in {max_iter} steps", rep)
    return rep


def picard_solve(frame, g, cfg: PicardConfig) -> PicardReport:
    """Solve on ``B(cfg.center, cfg.r)``; retry once on ``B(center, r/2)`` on chart exit.

    ``g`` is a callable of position (boundary points of the grid).
    """
    radius = cfg.r
    for attempt in range(2):
        grid = build_grid(Domain.ball(cfg.center, radius), cfg.h)
        try:
            rep = picard_iterate(frame, grid, g, cfg.max_iter, cfg.tol)
        except ChartExit:
            if attempt == 1:
                raise
            radius = radius / 2
            continue
        rep.r_used = radius
        if None not in (cfg.delta, cfg.C3, cfg.Lambda):
            rep.certificate = contraction_certificate(cfg, r=radius)
        return rep
    raise AssertionError("unreachable")


def contraction_certificate(cfg: PicardConfig, r: Optional[float] = None) -> dict:
    """Ball preservation and contraction of the Picard map from measured constants."""
    r = cfg.r if r is None else r
    d, c3, lam, a = cfg.delta, cfg.C3, cfg.Lambda, cfg.alpha
    base = d * c3 * r ** a
    R1pp = (12 * d * c3 * lam ** 2) ** (-1 / a)
    R1p = (8 * d * c3 * lam ** 2) ** (-1 / a)
    R1 = cfg.R1 if cfg.R1 is not None else r
    return {"ball_preserved": bool(base * (2 * lam) ** 3 < lam),
            "contracting": bool(3 * base * (2 * lam) ** 2 < 1),
            "contraction_bound": 3 * base * (2 * lam) ** 2,
            "R1p": R1p, "R1pp": R1pp, "R2": min(R1, R1pp)}


def _ratio(num: float, den: float) -> float:
    if num == 0.0:
        return 0.0
    if den == 0.0:
        raise ZeroDenominator("bracket norms vanish while the left side does not")
    return num / den


def trilinear_estimate_check(frame, w0: GridFunction, w1: GridFunction, w2: GridFunction,
                             w3: GridFunction, alpha: float, r: float) -> dict:
    """Empirical trilinear constants.

    ``diff``: ``|(G(w1)-G(w0))(Dw2,Dw3)|^(2-a)_{0,a} / (r^a |[w1-w0]| |[w2]| |[w3]|)``
    ``plain``: ``|G(w1)(Dw2,Dw3)|^(2-a)_{0,a} / (r^a |[w1]| |[w2]| |[w3]|)``
    """
    grid = w1.grid
    t1 = _trilinear(frame, w1, w2, w3)
    t0 = _trilinear(frame, w0, w2, w3)
    lhs_diff = holder_norm(GridFunction(grid, t1 - t0), 0, alpha, 2 - alpha)
    lhs_plain = holder_norm(GridFunction(grid, t1), 0, alpha, 2 - alpha)
    b2, b3 = bracket_norm(w2, alpha), bracket_norm(w3, alpha)
    b10 = bracket_norm(w1 - w0, alpha) if lhs_diff > 0 else 0.0
    b1 = bracket_norm(w1, alpha)
    ra = r ** alpha
    out = {"diff": _ratio(lhs_diff, ra * b10 * b2 * b3),
           "plain": _ratio(lhs_plain, ra * b1 * b2 * b3)}
    out["C3"] = max(out["diff"], out["plain"])
    if not np.isfinite(out["C3"]):
        raise FloatingPointError("non-finite trilinear ratio")
    return out


def measure_lambda(v: GridFunction, alpha: float, fractions: Sequence[float] = (1.0, 0.75, 0.5)) -> float:
    """``sup_r |[v]|_{alpha; r}`` over concentric sub-balls of the grid's ball.

    On a sub-ball the restriction of a harmonic ``v`` is its own harmonic
    extension, so each term uses the distance to the sub-ball's boundary.
    """
    g = v.grid
    c = np.asarray(g.domain.center)
    rad = np.linalg.norm(g.points - c, axis=1)
    best = 0.0
    for f in fractions:
        rr = f * g.domain.outer_radius
        mask = rad < rr
        if mask.sum() < 8:
            continue
        best = max(best, bracket_norm(v, alpha, mask=mask, distance=np.maximum(rr - rad, 0.0)))
    return best


def _smooth_field(grid: Grid, rng, n: int, amp: float) -> GridFunction:
    c = np.asarray(grid.domain.center)
    R = grid.domain.outer_radius

    def fn(x):
        y = (x - c) / R
        out = np.zeros((len(x), n))
        for i in range(n):
            k = rng.normal(size=grid.m) * 1.5
            out[:, i] = amp * (rng.uniform(-1, 1) + np.sin(y @ k + rng.uniform(0, 2 * np.pi)))
        return out / 2

    state = rng.bit_generator.state
    vals = fn(grid.points)
    rng.bit_generator.state = state
    bvals = fn(grid.boundary_points)
    return GridFunction(grid, vals, bvals)


def estimate_C3(frame, grid: Grid, alpha: float, corpus: int = 10, amp: float = 0.05,
                seed: int = 0) -> float:
    """Corpus maximum of :func:`trilinear_estimate_check` over seeded smooth quadruples."""
    rng = np.random.default_rng(seed)
    n = as_chart(frame).n
    r = grid.domain.outer_radius
    best = 0.0
    for _ in range(corpus):
        ws = [_smooth_field(grid, rng, n, amp) for _ in range(4)]
        best = max(best, trilinear_estimate_check(frame, *ws, alpha, r)["C3"])
    return best
