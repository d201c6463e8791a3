"""Weighted capacity potentials of a small ball and their decay.

``phi_eps`` solves ``div(rho grad phi) = 0`` on ``B(a, r) \\ B(a, eps)``
with ``phi = M`` on the small sphere and ``0`` outside.  Its energy ``E``
tends to zero with ``eps``; through the coarea formula and the
isoperimetric inequality the level profile ``F(s) = |{phi > s}| + |hole|``
satisfies ``F' + k F^(2(m-1)/m) <= 0`` with
``k = A M (m^(m-1) omega_m)^(2/m) / E``, which forces ``phi -> 0`` in L1.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .elliptic import solve_weighted_dirichlet
from .errors import DegenerateLevel, EmptyRegion
from .grid import (Domain, Grid, GridFunction, build_grid, level_boundary_flux,
                   level_profile, norms, unit_ball_volume)

__all__ = [
    "CapacityRun",
    "run_capacity",
    "rho_values",
    "green_cutoff",
    "test_function_energy",
    "flux_constancy",
    "profile_bound",
    "l1_bound",
    "isoperimetric_ode_check",
    "l1_convergence",
    "write_sweep_csv",
    "write_profile_csv",
]


@dataclass
class CapacityRun:
    eps: float
    r: float
    m: int
    M: float
    phi: GridFunction
    rho: np.ndarray  # on inside nodes + boundary points
    E: float
    A_low: float
    B_high: float
    k: float
    s_values: np.ndarray
    F: np.ndarray
    beta: float
    hole_volume: float
    omega_volume: float
    L1_K: Optional[float] = None

    @property
    def grid(self) -> Grid:
        return self.phi.grid


def rho_values(grid: Grid, rho) -> np.ndarray:
    """``rho`` (scalar, callable of position, array or GridFunction) on all points."""
    if isinstance(rho, GridFunction):
        return rho.full()
    if callable(rho):
        return np.asarray(rho(grid.all_points), dtype=float)
    if np.isscalar(rho):
        return np.full(grid.n_total, float(rho))
    return np.asarray(rho, dtype=float)


def run_capacity(eps: float, r: float = 1.0, rho=1.0, M: float = 1.0, h: float = 1 / 64,
                 m: int = 2, center=None, K: Optional[Domain] = None, n_levels: int = 64,
                 grid: Optional[Grid] = None) -> CapacityRun:
    """Solve for the capacity potential and fill in every derived quantity."""
    if not 0 < eps < r / 2:
        raise ValueError("need 0 < eps < r/2")
    center = (0.0,) * m if center is None else tuple(center)
    if grid is None:
        grid = build_grid(Domain.annulus(center, eps, r), h)
    rv = rho_values(grid, rho)
    gb = np.where(grid.boundary_component == 1, float(M), 0.0)
    phi = solve_weighted_dirichlet(grid, rv, gb).solution
    E = norms(phi, rho=GridFunction(grid, rv[: grid.n_inside], rv[grid.n_inside:]))["energy"]
    A_low, B_high = float(rv.min()), float(rv.max())
    om = unit_ball_volume(m)
    iso = (m ** (m - 1) * om) ** (2 / m)
    k = A_low * M * iso / E if E > 0 else math.inf
    s = np.linspace(0.05 * M, 0.95 * M, n_levels) if M > 0 else np.zeros(n_levels)
    hole = om * eps ** m
    F = level_profile(phi, s, hole_volume=hole)
    run = CapacityRun(eps=eps, r=r, m=m, M=M, phi=phi, rho=rv, E=E, A_low=A_low,
                      B_high=B_high, k=k, s_values=s, F=F, beta=(m - 2) / m,
                      hole_volume=hole, omega_volume=om * r ** m)
    if K is not None:
        run.L1_K = norms(phi, K)["L1"]
    return run


def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t ** 3 * (10 - 15 * t + 6 * t * t)


def green_cutoff(x, eps: float, r: float, M: float, m: int, center=None) -> np.ndarray:
    """``M chi G_eps`` with ``chi`` a quintic cutoff from ``r/4`` to ``r/2``.

    ``G_eps = log|x| / log eps`` (m = 2) or ``(eps/|x|)^(m-2)`` (m >= 3);
    ``|grad chi| <= 3.75/eps0 <= 4/eps0`` with ``eps0 = r/2``.
    """
    x = np.asarray(x, dtype=float)
    c = np.zeros(x.shape[-1]) if center is None else np.asarray(center, dtype=float)
    rad = np.linalg.norm(x - c, axis=-1)
    eps0 = r / 2
    chi = 1 - _smoothstep((rad - eps0 / 2) / (eps0 / 2))
    with np.errstate(divide="ignore"):
        if m == 2:
            G = np.log(rad) / math.log(eps)
        else:
            G = (eps / rad) ** (m - 2)
    return M * chi * np.where(rad > 0, G, 1.0)


def test_function_energy(eps: float, r: float = 1.0, M: float = 1.0, rho=1.0,
                         h: float = 1 / 64, m: int = 2, grid: Optional[Grid] = None) -> float:
    """Energy of the Green-cutoff competitor with the same quadrature as ``E``."""
    if grid is None:
        grid = build_grid(Domain.annulus((0.0,) * m, eps, r), h)
    if eps >= r / 4:
        raise ValueError("the cutoff needs eps < r/4")
    c = grid.domain.center
    v = GridFunction(grid, green_cutoff(grid.points, eps, r, M, m, c),
                     green_cutoff(grid.boundary_points, eps, r, M, m, c))
    # boundary values must match the potential's data exactly
    v.boundary[:] = np.where(grid.boundary_component == 1, float(M), 0.0)
    rv = rho_values(grid, rho)
    return norms(v, rho=GridFunction(grid, rv[: grid.n_inside], rv[grid.n_inside:]))["energy"]


test_function_energy.__test__ = False  # not a pytest test


def flux_constancy(run: CapacityRun, s_values: Optional[Sequence[float]] = None) -> dict:
    """Flux ``int_{phi=s} rho |grad phi|`` across levels.

    Returns the relative spread ``(max-min)/mean``, the largest relative
    deviation from ``E/M`` and the coarea integral over ``[0, M]`` (end
    intervals filled with the nearest measured flux).
    """
    s = run.s_values if s_values is None else np.asarray(s_values, dtype=float)
    rho = GridFunction(run.grid, run.rho[: run.grid.n_inside])
    flux = np.array([level_boundary_flux(run.phi, rho, float(t)) for t in s])
    target = run.E / run.M
    mean = float(flux.mean())
    integral = float(np.trapezoid(flux, s) + flux[0] * s[0] + flux[-1] * (run.M - s[-1]))
    return {"s": s, "flux": flux, "spread": float((flux.max() - flux.min()) / mean),
            "deviation": float(np.max(np.abs(flux - target)) / target),
            "coarea_integral": integral,
            "coarea_error": abs(integral - run.E) / run.E}


def profile_bound(run: CapacityRun, s) -> np.ndarray:
    """Closed-form bound on ``F(s)`` from the differential inequality."""
    s = np.asarray(s, dtype=float)
    om, k = run.omega_volume, run.k
    if run.m == 2:
        return om * np.exp(-k * s)
    b = run.beta
    return om / (1 + b * om ** b * k * s) ** (1 / b)


def l1_bound(run: CapacityRun) -> float:
    """Closed-form bound on ``||phi||_{L1}``."""
    om, k, M = run.omega_volume, run.k, run.M
    if M == 0:
        return 0.0
    if run.m == 2:
        return om / k * (1 - math.exp(-k * M))
    b = run.beta
    return om ** (1 - b) / ((1 - b) * k) * (1 - (1 + b * om ** b * k * M) ** (-(1 / b - 1)))


def isoperimetric_ode_check(run: CapacityRun, rel_tol: float = 0.10) -> dict:
    """Integrated comparison between consecutive levels and against the global bound.

    Between ``s1 < s2``: ``F(s2) <= G(s2)`` where ``G`` solves
    ``G' = -k G^(2(m-1)/m)`` from ``G(s1) = F(s1)``.  Intervals where ``F``
    sits at the hole-volume floor are flagged, not failed.  ``F`` counts
    nodes, so both comparisons carry an absolute slack of one node volume
    ``h^m`` on top of the relative tolerance.
    """
    s, F, k = run.s_values, run.F, run.k
    ds = np.diff(s)
    F1, F2 = F[:-1], F[1:]
    if run.m == 2:
        G = F1 * np.exp(-k * ds)
    else:
        b = run.beta
        G = F1 / (1 + b * F1 ** b * k * ds) ** (1 / b)
    quantum = run.grid.h ** run.m
    local = G * (1 + rel_tol) + quantum - F2
    floor = F2 <= run.hole_volume * (1 + 1e-12)
    glob = profile_bound(run, s) * (1 + rel_tol) + quantum - F
    return {"local_margin": local, "global_margin": glob,
            "local_violations": int(np.sum((local < 0) & ~floor)),
            "global_violations": int(np.sum(glob < 0)),
            "floor_flags": int(floor.sum()),
            "ok": bool(np.all((local >= 0) | floor) and np.all(glob >= 0))}


def l1_convergence(runs: Sequence[CapacityRun], K: Domain, slack: float = 0.15) -> dict:
    """Table of ``(eps, E, k, ||phi||_{L1(K)}, bound)`` along a sweep (decreasing eps)."""
    rows = []
    for run in runs:
        if K.kind == "annulus" and K.inner_radius < run.eps + 2 * run.grid.h:
            raise ValueError("K must stay 2h away from the hole")
        l1 = norms(run.phi, K)["L1"]
        run.L1_K = l1
        rows.append({"eps": run.eps, "E": run.E, "k": run.k, "L1": l1, "bound": l1_bound(run)})
    l1s = np.array([r_["L1"] for r_ in rows])
    within = all(r_["L1"] <= r_["bound"] * (1 + slack) for r_ in rows)
    decreasing = bool(np.all(np.diff(l1s) < 0))
    return {"rows": rows, "within_bound": within, "decreasing": decreasing,
            "final_over_first": float(l1s[-1] / l1s[0]) if l1s[0] > 0 else 0.0}


def write_sweep_csv(path, table: dict) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["eps", "E", "k", "L1", "bound"])
        w.writeheader()
        for row in table["rows"]:
            w.writerow({k: f"{v:.10g}" for k, v in row.items()})


def write_profile_csv(path, runs: Sequence[CapacityRun]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["eps", "s", "F", "bound"])
        for run in runs:
            for s, F, b in zip(run.s_values, run.F, profile_bound(run, run.s_values)):
                w.writerow([f"{run.eps:.10g}", f"{s:.10g}", f"{F:.10g}", f"{b:.10g}"])
