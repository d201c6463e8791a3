"""Comparison functional for two harmonic maps into one normal chart.

With ``P = a^2 + |u|^2``, ``Q = a^2 + |v|^2`` and ``d = u - v``::

    f   = P Q |d|^2 / 2,        rho = 1 / (P Q)
    div(rho grad f) = G1 + G2 + B1 + B2 + B3 + B4

    G1 = |grad d|^2
    G2 = |d|^2 (|grad u|^2 / P + |grad v|^2 / Q)
    B1 = <d, Lap d>
    B2 = 2 sum_a <d, d_a d> (<u, d_a u>/P + <v, d_a v>/Q)
    B3 = |d|^2 (<u, Lap u>/P + <v, Lap v>/Q)
    B4 = -2 |d|^2 (|<u, grad u>|^2/P^2 + |<v, grad v>|^2/Q^2)

Inside the parameter window the bad terms are dominated and
``div(rho grad f) >= G1/4 + G2/8``.  The pairing is the Euclidean one of
the chart coordinates.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterWindowViolated
from .grid import GridFunction, gradient, laplacian, weighted_divergence
from .harmonic_map import _require_inside, as_chart
from .regularity import truncation_tolerance

__all__ = [
    "ComparisonFunctional",
    "build_functional",
    "admissible_parameters",
    "term_bounds_check",
    "subsolution_inequality",
    "decomposition_residual",
    "write_margin_csv",
]


@dataclass
class ComparisonFunctional:
    mp_alpha: float
    u: GridFunction
    v: GridFunction
    f: GridFunction
    rho: GridFunction
    terms: dict = field(default_factory=dict)


def _pq(vals, a2):
    return a2 + np.sum(vals * vals, axis=-1)


def build_functional(frame, u: GridFunction, v: GridFunction, mp_alpha: float) -> ComparisonFunctional:
    """Assemble ``f``, ``rho`` and the six terms on inside nodes."""
    if not (mp_alpha > 0 and math.isfinite(mp_alpha)):
        raise ValueError("mp_alpha must be positive and finite")
    g = u.grid
    n_in = g.n_inside
    chart = as_chart(frame) if frame is not None else None
    uf = u.full().reshape(g.n_total, -1)
    vf = v.full().reshape(g.n_total, -1)
    if chart is not None:
        _require_inside(chart, uf)
        _require_inside(chart, vf)
    a2 = mp_alpha ** 2
    P, Q = _pq(uf, a2), _pq(vf, a2)
    d = uf - vf
    fvals = P * Q * np.sum(d * d, axis=1) / 2
    rho = 1.0 / (P * Q)
    f = GridFunction(g, fvals[:n_in], fvals[n_in:])
    rho_gf = GridFunction(g, rho[:n_in], rho[n_in:])

    n = uf.shape[1]
    du = gradient(u).values.reshape(n_in, n, g.m)
    dv = gradient(v).values.reshape(n_in, n, g.m)
    dd = du - dv
    lu = laplacian(u).values.reshape(n_in, n)
    lv = laplacian(v).values.reshape(n_in, n)
    ui, vi, di = uf[:n_in], vf[:n_in], d[:n_in]
    Pi, Qi = P[:n_in], Q[:n_in]
    d2 = np.sum(di * di, axis=1)
    u_du = np.einsum("ni,nia->na", ui, du)  # <u, d_a u>
    v_dv = np.einsum("ni,nia->na", vi, dv)
    d_dd = np.einsum("ni,nia->na", di, dd)
    terms = {
        "G1": np.sum(dd * dd, axis=(1, 2)),
        "G2": d2 * (np.sum(du * du, axis=(1, 2)) / Pi + np.sum(dv * dv, axis=(1, 2)) / Qi),
        "B1": np.sum(di * (lu - lv), axis=1),
        "B2": 2 * np.sum(d_dd * (u_du / Pi[:, None] + v_dv / Qi[:, None]), axis=1),
        "B3": d2 * (np.sum(ui * lu, axis=1) / Pi + np.sum(vi * lv, axis=1) / Qi),
        "B4": -2 * d2 * (np.sum(u_du ** 2, axis=1) / Pi ** 2 + np.sum(v_dv ** 2, axis=1) / Qi ** 2),
    }
    return ComparisonFunctional(mp_alpha, u, v, f, rho_gf, terms)


def admissible_parameters(C_Gamma: float, R: float) -> dict:
    """Largest ``mp_alpha`` and radius ``r_max`` allowed by the window."""
    if C_Gamma < 0 or not R > 0:
        raise ValueError("need C_Gamma >= 0 and R > 0")
    if C_Gamma == 0:
        return {"mp_alpha": math.inf, "r_max": R}
    a = 1 / (2 * math.sqrt(2 * C_Gamma ** 2 * R ** 2 + C_Gamma))
    return {"mp_alpha": a, "r_max": min(R, a / 4, 1 / (2 * math.sqrt(C_Gamma)))}


def _check_window(cf: ComparisonFunctional, C_Gamma: float, R: float) -> None:
    win = admissible_parameters(C_Gamma, R)
    if cf.mp_alpha > win["mp_alpha"] * (1 + 1e-12):
        raise ParameterWindowViolated(f"mp_alpha={cf.mp_alpha:.4g} above {win['mp_alpha']:.4g}")
    r_max = min(R, cf.mp_alpha / 4, 1 / (2 * math.sqrt(C_Gamma)) if C_Gamma > 0 else math.inf)
    for name, w in (("u", cf.u), ("v", cf.v)):
        vals = w.full() if w.boundary is not None else w.values
        sup = float(np.max(np.linalg.norm(vals.reshape(len(vals), -1), axis=1)))
        if sup > r_max * (1 + 1e-12):
            raise ParameterWindowViolated(f"sup|{name}| = {sup:.4g} exceeds r_max = {r_max:.4g}")


def term_bounds_check(cf: ComparisonFunctional, C_Gamma: float, R: float,
                      tol_h=None) -> dict:
    """Nodewise margins ``RHS - |B_i|`` of the four term bounds."""
    _check_window(cf, C_Gamma, R)
    t = cf.terms
    if tol_h is None:
        tol_h = truncation_tolerance(cf.f)
    margins = {
        "B1": t["G1"] / 4 + t["G2"] / 4 - np.abs(t["B1"]),
        "B2": t["G1"] / 2 + t["G2"] / 4 - np.abs(t["B2"]),
        "B4": t["G2"] / 8 - np.abs(t["B4"]),
        "B3": t["G2"] / 4 - np.abs(t["B3"]),
    }
    return {"min_margin": {k: float(v.min()) for k, v in margins.items()},
            "violations": {k: int(np.sum(v < -tol_h)) for k, v in margins.items()},
            "tol_h": tol_h, "margins": margins}


def subsolution_inequality(cf: ComparisonFunctional, C_Gamma=None, R=None, tol_h=None) -> dict:
    """``div(rho grad f) - (G1/4 + G2/8)`` nodewise; violations below ``-tol_h``."""
    if C_Gamma is not None and R is not None:
        _check_window(cf, C_Gamma, R)
    lhs = weighted_divergence(cf.rho, cf.f).values
    rhs = cf.terms["G1"] / 4 + cf.terms["G2"] / 8
    margin = lhs - rhs
    if tol_h is None:
        tol_h = truncation_tolerance(cf.f)
    viol = margin < -tol_h
    return {"min_margin": float(margin.min()), "violations": int(viol.sum()),
            "max_violation": float(max(0.0, -margin.min())), "tol_h": tol_h,
            "margin": margin, "div": lhs}


def decomposition_residual(cf: ComparisonFunctional) -> np.ndarray:
    """``div(rho grad f) - sum of the six terms`` on inside nodes."""
    lhs = weighted_divergence(cf.rho, cf.f).values
    return lhs - sum(cf.terms.values())


def write_margin_csv(path, cf: ComparisonFunctional, bounds: dict, sub: dict) -> None:
    g = cf.u.grid
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node"] + [f"x{i + 1}" for i in range(g.m)]
                   + ["B1", "B2", "B3", "B4", "final"])
        mg = bounds["margins"]
        for i in range(g.n_inside):
            w.writerow([i] + [f"{t:.10g}" for t in g.points[i]]
                       + [f"{mg[k][i]:.6e}" for k in ("B1", "B2", "B3", "B4")]
                       + [f"{sub['margin'][i]:.6e}"])
