"""End-to-end removability experiment.

A map that is harmonic on a punctured ball and a harmonic map with the
same outer data are compared through the functional ``f`` of
:mod:`harmaplab.maxprinciple`.  ``f`` is a subsolution of
``div(rho grad .)``, so it sits below the capacity potential of the
puncture with height ``M = 2 A^2 (alpha^2 + A^2)^2``.  As the puncture
shrinks that potential vanishes in L1, which forces the two maps to agree.

The punctured map is simulated by solving on the annulus
``B(a, r) \\ B(a, eps)`` with inner data equal to the full-ball solution
plus a seeded bump of size ``sigma``; ``sigma = 0`` is the exact control.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .capacity import run_capacity
from .config import ExperimentConfig
from .errors import HarmapError, ParameterWindowViolated
from .geometry import NormalCoordinateMap, chart_constants, normal_coordinates, parse_chart
from .grid import Domain, Grid, GridFunction, build_grid, norms
from .harmonic_map import PicardConfig, picard_iterate, picard_solve
from .maxprinciple import admissible_parameters, build_functional, subsolution_inequality
from .regularity import truncation_tolerance

__all__ = [
    "StageError",
    "boundary_family",
    "bump",
    "setup_frame",
    "EpsilonResult",
    "RemovabilityReport",
    "removability_experiment",
]

FAMILIES = ("modes", "trig")


class StageError(HarmapError):
    """A module error tagged with the pipeline stage it came from."""

    def __init__(self, stage: str, exc: Exception):
        super().__init__(f"[{stage}] {type(exc).__name__}: {exc}")
        self.stage = stage
        self.cause = exc


def boundary_family(name: str, n: int, amplitude: float, seed: int, center, r: float) -> Callable:
    """Seeded boundary data ``g: points -> R^n`` with ``sup |g_i| <= amplitude``.

    ``modes``: ``amplitude * cos((i+1) theta + phase_i)`` in the first two
    coordinates; ``trig``: ``amplitude * sin(k_i . (x-a)/r + phase_i)``
    with seeded wave vectors.
    """
    rng = np.random.default_rng(seed)
    c = np.asarray(center, dtype=float)
    phase = rng.uniform(0, 2 * np.pi, n)
    if name == "modes":
        def g(x):
            x = np.asarray(x, dtype=float) - c
            th = np.arctan2(x[:, 1], x[:, 0])
            return amplitude * np.stack([np.cos((i + 1) * th + phase[i]) for i in range(n)], axis=1)
        return g
    if name == "trig":
        k = rng.normal(scale=1.5, size=(n, len(c)))

        def g(x):
            y = (np.asarray(x, dtype=float) - c) / r
            return amplitude * np.sin(y @ k.T + phase)
        return g
    raise ValueError(f"unknown data family {name!r}; known: {list(FAMILIES)}")


def bump(n: int, sigma: float, seed: int, center, width: float = 0.5) -> Callable:
    """``sigma * e * exp(-|x_hat - xi|^2 / (2 width^2))`` on spheres about ``center``.

    ``e`` is a seeded unit vector of the target and ``xi`` a seeded unit
    direction of the domain; the peak value is ``sigma``.
    """
    rng = np.random.default_rng(seed + 7919)
    e = rng.normal(size=n)
    e /= np.linalg.norm(e)
    c = np.asarray(center, dtype=float)
    xi = rng.normal(size=len(c))
    xi /= np.linalg.norm(xi)

    def b(x):
        d = np.asarray(x, dtype=float) - c
        xh = d / np.maximum(np.linalg.norm(d, axis=1, keepdims=True), 1e-300)
        prof = np.exp(-np.sum((xh - xi) ** 2, axis=1) / (2 * width ** 2))
        return sigma * prof[:, None] * e

    return b


@dataclass
class Frame:
    ncm: NormalCoordinateMap
    C_Gamma: float
    R: float
    mp_alpha: float
    r_max: float


def setup_frame(cfg: ExperimentConfig) -> Frame:
    """Normal coordinates at the configured base point and the comparison window."""
    chart = parse_chart(cfg.chart)
    ncm = normal_coordinates(chart, np.asarray(cfg.base, dtype=float))
    R = min(cfg.R, ncm.validity_radius)
    C = chart_constants(chart, ncm, R).C_Gamma
    win = admissible_parameters(C, R)
    a = win["mp_alpha"] if cfg.mp_alpha is None else cfg.mp_alpha
    if a > win["mp_alpha"] * (1 + 1e-12):
        raise ParameterWindowViolated(f"mp_alpha={a:.4g} above the admissible {win['mp_alpha']:.4g}")
    if not math.isfinite(a):
        a = 1.0  # flat target: any positive value is admissible
    r_max = min(R, a / 4, 1 / (2 * math.sqrt(C)) if C > 0 else math.inf)
    return Frame(ncm=ncm, C_Gamma=C, R=R, mp_alpha=a, r_max=r_max)


def _lattice_interpolator(u: GridFunction) -> Callable:
    """Cubic interpolation of a ball-grid function on the cube inscribed in the ball.

    Every lattice node of that cube is an inside node, so the tensor spline
    sees no boundary cut.
    """
    g = u.grid
    arr = g.lattice_array(u.values.reshape(g.n_inside, -1))
    half = 0.95 * g.domain.outer_radius / math.sqrt(g.m)
    axes, sl = [], []
    for k in range(g.m):
        ax = g.origin[k] + g.h * (g.offset[k] + np.arange(g.shape[k]))
        keep = np.flatnonzero(np.abs(ax - g.origin[k]) <= half)
        axes.append(ax[keep])
        sl.append(slice(keep[0], keep[-1] + 1))
    block = arr[tuple(sl)]
    if np.any(np.isnan(block)):
        raise ValueError("inscribed cube contains non-inside lattice nodes")
    return RegularGridInterpolator(axes, block, method="cubic", bounds_error=True)


@dataclass
class EpsilonResult:
    eps: float
    u_eps: GridFunction
    u_bar: GridFunction  # full-ball solution restricted to the annulus
    f: GridFunction
    phi: GridFunction
    A: float
    M: float
    tol_h: float
    violations: int
    min_margin: float  # min over K of phi - f, without tol_h
    L1_f: float
    sup_dev: float
    sup_f: float
    sub_violations: int
    iterations: int

    def row(self) -> dict:
        return {"eps": self.eps, "L1_f": self.L1_f, "sup_dev": self.sup_dev,
                "sup_f": self.sup_f, "violations": self.violations,
                "min_margin": self.min_margin, "tol_h": self.tol_h, "A": self.A,
                "M": self.M, "sub_violations": self.sub_violations,
                "iterations": self.iterations}


@dataclass
class RemovabilityReport:
    config: ExperimentConfig
    C_Gamma: float
    mp_alpha: float
    r_max: float
    data_sup: float
    u_bar: GridFunction
    results: list = field(default_factory=list)
    assertions: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.assertions.values())

    def to_dict(self) -> dict:
        return {"C_Gamma": self.C_Gamma, "mp_alpha": self.mp_alpha, "r_max": self.r_max,
                "data_sup": self.data_sup, "sigma": self.config.sigma,
                "rows": [r.row() for r in self.results],
                "assertions": self.assertions, "passed": self.passed}


def _run_eps(frame: Frame, cfg: ExperimentConfig, ubar: GridFunction, ubar_at: Callable,
             g: Callable, b: Callable, K: Domain, eps: float) -> EpsilonResult:
    tag = f"eps={eps:g}"
    try:
        grid = build_grid(Domain.annulus(cfg.center, eps, cfg.r), cfg.h)
    except HarmapError as exc:
        raise StageError(f"{tag} grid", exc) from exc
    inner = grid.boundary_component == 1
    bp = grid.boundary_points
    gb = np.empty((grid.n_boundary, frame.ncm.A.shape[0]))
    gb[~inner] = g(bp[~inner])
    gb[inner] = ubar_at(bp[inner]) + b(bp[inner])
    try:
        rep = picard_iterate(frame.ncm, grid, gb, cfg.max_iter, cfg.tol)
    except HarmapError as exc:
        raise StageError(f"{tag} annulus solve", exc) from exc
    u_eps = rep.u_bar
    # the full-ball solution on the annulus nodes (shared lattice)
    loc = grid.ijk - ubar.grid.offset
    idx = ubar.grid.index[tuple(loc.T)]
    ub_b = np.empty_like(gb)
    ub_b[~inner] = g(bp[~inner])
    ub_b[inner] = ubar_at(bp[inner])
    u_ref = GridFunction(grid, ubar.values[idx], ub_b)

    try:
        cf = build_functional(frame.ncm, u_eps, u_ref, frame.mp_alpha)
        sub = subsolution_inequality(cf)
    except HarmapError as exc:
        raise StageError(f"{tag} comparison functional", exc) from exc
    A = max(float(np.max(np.linalg.norm(u_eps.full(), axis=1))),
            float(np.max(np.linalg.norm(u_ref.full(), axis=1))))
    a2 = frame.mp_alpha ** 2
    M = 2 * A ** 2 * (a2 + A ** 2) ** 2
    try:
        cap = run_capacity(eps, cfg.r, rho=cf.rho, M=M, h=cfg.h, m=grid.m,
                           center=cfg.center, grid=grid)
    except HarmapError as exc:
        raise StageError(f"{tag} capacity", exc) from exc
    inK = grid.in_region(K)
    tol_h = truncation_tolerance(cf.f, mask=inK)
    raw = cap.phi.values[inK] - cf.f.values[inK]
    margin = raw + tol_h
    dev = np.linalg.norm(u_eps.values - u_ref.values, axis=1)
    return EpsilonResult(
        eps=eps, u_eps=u_eps, u_bar=u_ref, f=cf.f, phi=cap.phi, A=A, M=M, tol_h=tol_h,
        violations=int(np.sum(margin < 0)), min_margin=float(raw.min()),
        L1_f=norms(cf.f, K)["L1"], sup_dev=float(dev[inK].max()),
        sup_f=float(np.max(cf.f.full())), sub_violations=sub["violations"],
        iterations=rep.iterations)


def removability_experiment(cfg: ExperimentConfig, sigma: Optional[float] = None) -> RemovabilityReport:
    """Run the full comparison pipeline over ``cfg.eps``.

    Assertions recorded in the report: zero violations of ``f <= phi + tol_h``
    on ``K`` at every ``eps``; for ``sigma > 0`` the L1 norm of ``f`` on ``K``
    and ``sup_K |u_eps - u_bar|`` strictly decrease with the final L1 value at
    most half the first; for ``sigma = 0``, ``sup f <= 10 tol``.
    """
    sigma = cfg.sigma if sigma is None else sigma
    try:
        frame = setup_frame(cfg)
    except HarmapError as exc:
        raise StageError("frame", exc) from exc
    n = frame.ncm.A.shape[0]
    g = boundary_family(cfg.family, n, cfg.amplitude, cfg.seed, cfg.center, cfg.r)
    data_sup = cfg.amplitude * math.sqrt(n)
    if data_sup > frame.r_max:
        raise StageError("frame", ParameterWindowViolated(
            f"data bound {data_sup:.4g} exceeds r_max = {frame.r_max:.4g}"))
    try:
        prep = picard_solve(frame.ncm, g, PicardConfig(r=cfg.r, alpha=cfg.alpha, h=cfg.h,
                                                       center=tuple(cfg.center),
                                                       max_iter=cfg.max_iter, tol=cfg.tol))
    except HarmapError as exc:
        raise StageError("full-ball solve", exc) from exc
    if prep.r_used != cfg.r:
        raise StageError("full-ball solve", ParameterWindowViolated(
            "full-ball solve had to shrink the radius"))
    ubar = prep.u_bar
    ubar_at = _lattice_interpolator(ubar)
    b = bump(n, sigma, cfg.seed, cfg.center)
    K = Domain.annulus(cfg.center, cfg.K_inner, cfg.K_outer)
    eps_list = sorted(cfg.eps, reverse=True)

    def job(e):
        return _run_eps(frame, cfg, ubar, ubar_at, g, b, K, e)

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(job, eps_list))
    else:
        results = [job(e) for e in eps_list]

    rep = RemovabilityReport(config=cfg, C_Gamma=frame.C_Gamma, mp_alpha=frame.mp_alpha,
                             r_max=frame.r_max, data_sup=data_sup, u_bar=ubar, results=results)
    rep.assertions["comparison_holds"] = all(r.violations == 0 for r in results)
    if sigma == 0:
        rep.assertions["control_f_vanishes"] = all(r.sup_f <= 10 * cfg.tol for r in results)
    else:
        l1 = np.array([r.L1_f for r in results])
        dev = np.array([r.sup_dev for r in results])
        rep.assertions["L1_decreasing"] = bool(np.all(np.diff(l1) < 0))
        rep.assertions["deviation_decreasing"] = bool(np.all(np.diff(dev) < 0))
        rep.assertions["L1_final_half"] = bool(l1[-1] <= 0.5 * l1[0])
    return rep
