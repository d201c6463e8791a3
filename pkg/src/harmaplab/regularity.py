"""Hölder continuity machinery around a point.

Comparison functions ``f+- (y) = <nu, y> +- lam |y|^2 / 2`` turn a small
harmonic map into sub/super-harmonic scalars; punctured Dirichlet solves
sandwich ``<nu, u>``; the oscillation on balls of radius ``R 4^-k`` then
obeys ``a_{k+1} <= a_k/2 + a_k^2`` which decays like ``exp(-k/2)``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import LinearNDInterpolator

from .elliptic import harmonic_extension, solve_poisson_dirichlet
from .errors import DomainError, InsufficientLevels, SmallnessViolated
from .geometry import (MetricChart, NormalCoordinateMap, chart_constants,
                       normal_coordinates)
from .grid import Domain, Grid, GridFunction, build_grid, laplacian, norms

__all__ = [
    "comparison_pair",
    "truncation_tolerance",
    "subsolution_check",
    "sampler",
    "punctured_comparison",
    "deviation_check",
    "oscillation_step",
    "DecayBound",
    "decay_sequence",
    "OscillationSequence",
    "recentre",
    "oscillation_sequence",
    "holder_exponent_extract",
    "HOLDER_EXPONENT",
    "nu_directions",
    "write_oscillation_csv",
    "write_sandwich_csv",
]

HOLDER_EXPONENT = 1 / (2 * math.log(4))


def comparison_pair(nu, lam: float):
    """``(f+, f-)`` as vectorised callables of ``y`` with shape (..., n)."""
    nu = np.asarray(nu, dtype=float)
    if abs(np.linalg.norm(nu) - 1) > 1e-12:
        raise ValueError("nu must be a unit vector")
    if not lam > 0:
        raise ValueError("lambda must be positive")

    def fplus(y):
        y = np.asarray(y, dtype=float)
        return y @ nu + 0.5 * lam * np.sum(y * y, axis=-1)

    def fminus(y):
        y = np.asarray(y, dtype=float)
        return y @ nu - 0.5 * lam * np.sum(y * y, axis=-1)

    return fplus, fminus


def nu_directions(n: int) -> np.ndarray:
    """16 unit directions on the circle (n = 2) or the 26 lattice directions (n = 3)."""
    if n == 2:
        t = 2 * np.pi * np.arange(16) / 16
        return np.stack([np.cos(t), np.sin(t)], axis=1)
    if n == 3:
        d = np.array([v for v in np.ndindex(3, 3, 3) if v != (1, 1, 1)], dtype=float) - 1
        return d / np.linalg.norm(d, axis=1, keepdims=True)
    rng = np.random.default_rng(0)
    d = rng.normal(size=(32, n))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def truncation_tolerance(f: GridFunction, factor: float = 10.0, mask=None) -> float:
    """``factor * h * sup |third differences|`` over axis stencils inside the grid.

    ``mask`` (over inside nodes) restricts the sup to stencils centred on
    the nodes where a discrete inequality is actually checked.
    """
    g = f.grid
    vals = f.values.reshape(g.n_inside, -1)
    best = 0.0
    for k in range(g.m):
        jp = g.nbr[k, 1]
        ok = jp < g.n_inside
        jp2 = np.where(ok, g.nbr[k, 1, np.where(ok, jp, 0)], g.n_inside)
        jm = g.nbr[k, 0]
        ok &= (jp2 < g.n_inside) & (jm < g.n_inside)
        ok &= g.theta[k, 0] == 1
        if mask is not None:
            ok &= np.asarray(mask, dtype=bool)
        if not np.any(ok):
            continue
        i = np.flatnonzero(ok)
        d3 = (vals[jp2[i]] - 3 * vals[jp[i]] + 3 * vals[i] - vals[jm[i]]) / g.h ** 3
        best = max(best, float(np.max(np.abs(d3))))
    return factor * g.h * best


def _scalar(grid: Grid, fn, u: GridFunction) -> GridFunction:
    n = u.values.reshape(grid.n_inside, -1).shape[1]
    b = None if u.boundary is None else fn(u.boundary.reshape(grid.n_boundary, n))
    return GridFunction(grid, fn(u.values.reshape(grid.n_inside, n)), b)


def subsolution_check(u: GridFunction, nu, lam: float, C_Gamma: float,
                      region: Optional[Domain] = None, tol_h: Optional[float] = None) -> dict:
    """Discrete ``-Lap f+(u) <= tol_h`` and ``-Lap f-(u) >= -tol_h``.

    ``u`` carries boundary values and lives in a chart centred so that the
    smallness ``sup|u| <= min(1/(2 C_Gamma), 1/4)`` holds.
    """
    vals = u.full() if u.boundary is not None else u.values
    sup = float(np.max(np.linalg.norm(vals.reshape(len(vals), -1), axis=1)))
    bound = min(1 / (2 * C_Gamma) if C_Gamma > 0 else np.inf, 0.25)
    if sup > bound:
        raise SmallnessViolated(f"sup|u| = {sup:.4g} exceeds {bound:.4g}")
    fp, fm = comparison_pair(nu, lam)
    Fp, Fm = _scalar(u.grid, fp, u), _scalar(u.grid, fm, u)
    if tol_h is None:
        tol_h = max(truncation_tolerance(Fp), truncation_tolerance(Fm))
    sel = u.grid.in_region(region)
    lp = -laplacian(Fp).values[sel]
    lm = -laplacian(Fm).values[sel]
    plus_margin = float(np.min(-lp)) if lp.size else 0.0   # want -Lap f+ <= 0
    minus_margin = float(np.min(lm)) if lm.size else 0.0   # want -Lap f- >= 0
    return {"plus_margin": plus_margin, "minus_margin": minus_margin, "tol_h": tol_h,
            "violations": int(np.sum(lp > tol_h) + np.sum(lm < -tol_h))}


def sampler(u: GridFunction) -> Callable:
    """Piecewise-linear interpolant of ``u`` over inside nodes and boundary points."""
    g = u.grid
    if u.boundary is not None:
        pts, vals = g.all_points, u.full()
    else:
        pts, vals = g.points, u.values
    interp = LinearNDInterpolator(pts, vals.reshape(len(pts), -1))
    n = vals.reshape(len(pts), -1).shape[1]

    def fn(x):
        out = interp(np.asarray(x, dtype=float))
        if np.any(np.isnan(out)):
            raise DomainError("sample point outside the source grid")
        return out.reshape((len(x),) + u.value_shape) if n > 1 else out.reshape(len(x))

    return fn


def _lattice_map(small: Grid, big: Grid) -> np.ndarray:
    """Index in ``big`` of every inside node of ``small`` (same origin and h)."""
    if not (np.allclose(small.origin, big.origin) and small.h == big.h):
        raise ValueError("grids do not share a lattice")
    loc = small.ijk - big.offset
    return big.index[tuple(loc.T)]


def punctured_comparison(u: GridFunction, x0, r: float, eps_list: Sequence[float],
                         lam: float, nu, h: float, K: Optional[Domain] = None,
                         u_norm: Optional[float] = None, tol_h: Optional[float] = None) -> dict:
    """Punctured comparison solves ``u+-^eps`` on ``B(x0, r) \\ B(x0, eps)``.

    Inner values ``+-(|u| + lam |u|^2 / 2)`` with ``|u| = sup_{B(x0,r)} |u|``
    (or ``u_norm``), outer values ``f+-(u)``.  Reports, per ``eps``, the
    comparison margins on ``K``, the sandwich margins and
    ``||u+^eps - u+^0||_{L1(K)}``.
    """
    x0 = np.asarray(x0, dtype=float)
    fp, fm = comparison_pair(nu, lam)
    nu = np.asarray(nu, dtype=float)
    su = sampler(u)
    ball = build_grid(Domain.ball(x0, r), h)
    if u_norm is None:
        uv = su(ball.all_points).reshape(ball.n_total, -1)
        u_norm = float(np.max(np.linalg.norm(uv, axis=1)))
    inner = u_norm + 0.5 * lam * u_norm ** 2
    if K is None:
        K = Domain.annulus(x0, 0.4 * r, 0.95 * r)

    def outer(grid):
        y = su(grid.boundary_points).reshape(grid.n_boundary, -1)
        return fp(y), fm(y)

    bp, bm = outer(ball)
    up0 = harmonic_extension(ball, bp)
    um0 = harmonic_extension(ball, bm)
    uball = su(ball.points).reshape(ball.n_inside, -1)
    if tol_h is None:
        tol_h = 10 * h * h  # solver and interpolation noise scale
    # sandwich at eps = 0: u- <= <nu,u> <= u+ nodewise
    proj = uball @ nu
    sandwich0 = float(min(np.min(up0.values - proj), np.min(proj - um0.values)))
    rows = []
    for eps in eps_list:
        ann = build_grid(Domain.annulus(x0, eps, r), h)
        yb = su(ann.boundary_points).reshape(ann.n_boundary, -1)
        innerb = ann.boundary_component == 1
        gp = np.where(innerb, inner, fp(yb))
        gm = np.where(innerb, -inner, fm(yb))
        upe = harmonic_extension(ann, gp)
        ume = harmonic_extension(ann, gm)
        y = su(ann.points).reshape(ann.n_inside, -1)
        inK = ann.in_region(K)
        cp = upe.values - fp(y)
        cm = fm(y) - ume.values
        idx = _lattice_map(ann, ball)
        dK = np.abs(upe.values - up0.values[idx])[inK]
        l1 = float(np.sum(dK) * h ** ball.m)
        proj_e = y @ nu
        rows.append({
            "eps": float(eps),
            "plus_margin": float(cp[inK].min()),
            "minus_margin": float(cm[inK].min()),
            "comparison_violations": int(np.sum(cp[inK] < -tol_h) + np.sum(cm[inK] < -tol_h)),
            "sandwich_margin": float(min(np.min(upe.values - proj_e), np.min(proj_e - ume.values))),
            "L1_plus": l1,
            "L1_minus": float(np.sum(np.abs(ume.values - um0.values[idx])[inK]) * h ** ball.m),
        })
    return {"u_norm": u_norm, "inner_value": inner, "sandwich0_margin": sandwich0,
            "tol_h": tol_h, "rows": rows}


def deviation_check(u: GridFunction, x0, r: float, lam: float, h: float,
                    tol: Optional[float] = None) -> dict:
    """``|<nu, u - v>| <= lam Q <= lam ||u||^2_r / 2`` on ``B(x0, r)``.

    ``v`` is the harmonic extension of ``u`` and ``Q`` that of ``|u|^2/2``;
    ``nu`` runs over :func:`nu_directions`.  Also reports the vector form
    ``|u - v| <= lam Q``.
    """
    su = sampler(u)
    ball = build_grid(Domain.ball(x0, r), h)
    yb = su(ball.boundary_points).reshape(ball.n_boundary, -1)
    y = su(ball.points).reshape(ball.n_inside, -1)
    v = harmonic_extension(ball, yb).values.reshape(ball.n_inside, -1)
    Q = harmonic_extension(ball, 0.5 * np.sum(yb ** 2, axis=1)).values
    unorm = float(max(np.max(np.linalg.norm(y, axis=1)), np.max(np.linalg.norm(yb, axis=1))))
    if tol is None:
        tol = 10 * h * h
    dirs = nu_directions(y.shape[1])
    proj = np.abs((y - v) @ dirs.T)  # (N, ndirs)
    nu_margin = float(np.min(lam * Q[:, None] - proj))
    vec_margin = float(np.min(lam * Q - np.linalg.norm(y - v, axis=1)))
    q_margin = float(np.min(lam * unorm ** 2 / 2 - lam * Q))
    return {"nu_margin": nu_margin, "vector_margin": vec_margin, "Q_margin": q_margin,
            "n_directions": len(dirs), "tol": tol,
            "ok": nu_margin >= -tol and q_margin >= -tol}


def oscillation_step(norm_r: float, lam: float, rho_over_r: float) -> float:
    """``2 ||u||_r rho/r + lam ||u||_r^2``."""
    if min(norm_r, lam, rho_over_r) < 0:
        raise ValueError("inputs must be nonnegative")
    if rho_over_r > 0.5:
        raise ValueError("rho/r must be at most 1/2")
    return 2 * norm_r * rho_over_r + lam * norm_r ** 2


@dataclass(frozen=True)
class DecayBound:
    a0: float

    def phi(self, t):
        a0 = self.a0
        return a0 / (2 * a0 + np.exp(np.asarray(t, dtype=float) / 2) * (1 - 2 * a0))


def decay_sequence(a0: float, K: int) -> dict:
    """Worst-case recursion ``a_{k+1} = a_k/2 + a_k^2`` against its ODE bound."""
    if a0 > 0.25:
        raise DomainError("a0 must lie in [0, 1/4]")
    if a0 < 0:
        raise DomainError("a0 must be nonnegative")
    a = np.empty(K + 1)
    a[0] = a0
    for k in range(K):
        a[k + 1] = a[k] / 2 + a[k] ** 2
    k = np.arange(K + 1)
    phi = DecayBound(a0).phi(k)
    env = np.exp(-k / 2) / 2
    tol = 1e-12
    ok_phi = a <= phi + tol
    ok_env = phi <= env + tol
    return {"a": a, "phi": phi, "envelope": env, "ok_phi": ok_phi, "ok_env": ok_env,
            "bound_ok": bool(np.all(ok_phi) and np.all(ok_env))}


@dataclass
class OscillationSequence:
    R: float
    radii: np.ndarray
    norms: np.ndarray
    lam: float
    x0: np.ndarray
    C_Gamma: float = 0.0
    smallness_ok: bool = True

    @property
    def a(self) -> np.ndarray:
        return self.lam * self.norms

    def rows(self) -> list:
        phi = DecayBound(min(float(self.a[0]), 0.25)).phi(np.arange(len(self.radii)))
        return [{"x0": ",".join(f"{t:.6g}" for t in self.x0), "k": k, "r_k": float(r),
                 "norm": float(nm), "a_k": float(ak), "phi_k": float(p)}
                for k, (r, nm, ak, p) in enumerate(zip(self.radii, self.norms, self.a, phi))]


def recentre(frame, values: np.ndarray, base: np.ndarray):
    """Express chart values in normal coordinates centred at the image of ``base``.

    Returns ``(ncm, new_values)``; ``new_values`` vanish at ``base``.
    """
    if isinstance(frame, NormalCoordinateMap):
        src, to_src = frame.source, frame.forward
    else:
        src, to_src = frame, (lambda y: np.asarray(y, dtype=float))
    z0 = to_src(np.asarray(base, dtype=float))
    ncm = normal_coordinates(src, z0)
    return ncm, ncm.inverse(to_src(values))


def oscillation_sequence(frame, u: GridFunction, x0, R: float, levels: Optional[int] = None,
                         domain_sup: Optional[float] = None) -> OscillationSequence:
    """Sup norms of the recentred map on ``B(x0, R 4^-k)``.

    ``u`` is given in the coordinates of ``frame``; it is re-expressed in
    normal coordinates centred at ``u(x0)`` (linear interpolation at
    ``x0``).  ``lam = 2 C_Gamma sup|u|`` over the whole grid.
    """
    g = u.grid
    x0 = np.asarray(x0, dtype=float)
    pts = g.all_points if u.boundary is not None else g.points
    vals = (u.full() if u.boundary is not None else u.values).reshape(len(pts), -1)
    base = sampler(u)(x0[None, :]).reshape(-1)
    ncm, y = recentre(frame, vals, base)
    sup_all = float(np.max(np.linalg.norm(y, axis=1)))
    radius = min(ncm.validity_radius, max(1.5 * sup_all, 1e-6))
    C_Gamma = chart_constants(ncm.source, ncm, radius).C_Gamma
    lam = 2 * C_Gamma * (sup_all if domain_sup is None else domain_sup)
    if levels is None:
        levels = int(math.floor(math.log(R / g.h) / math.log(4))) + 1
    radii = R * 4.0 ** -np.arange(levels)
    dist = np.linalg.norm(pts - x0, axis=1)
    ynorm = np.linalg.norm(y, axis=1)
    nrm = np.array([float(np.max(ynorm[dist <= rk * (1 + 1e-12)])) for rk in radii])
    small = bool(sup_all <= min(1 / (2 * C_Gamma) if C_Gamma > 0 else np.inf, 0.25)
                 and lam * nrm[0] <= 1)
    return OscillationSequence(R=R, radii=radii, norms=nrm, lam=lam, x0=x0,
                               C_Gamma=C_Gamma, smallness_ok=small)


def holder_exponent_extract(osc: OscillationSequence) -> float:
    """Least-squares slope of ``log ||u||_{r_k}`` against ``log r_k``."""
    if len(osc.radii) < 4:
        raise InsufficientLevels("need at least 4 radii")
    norms = np.asarray(osc.norms, dtype=float)
    if np.any(norms <= 0):
        raise DomainError("norms must be positive for a log-log fit")
    slope, _ = np.polyfit(np.log(osc.radii), np.log(norms), 1)
    return float(slope)


def _write_csv(path, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def write_oscillation_csv(path, seqs: Sequence[OscillationSequence]) -> None:
    _write_csv(path, [row for s in seqs for row in s.rows()])


def write_sandwich_csv(path, report: dict) -> None:
    _write_csv(path, report["rows"])
