"""Acceptance criteria 1-10.  Each test records one PASS/FAIL line."""
import math
import time

import numpy as np
import pytest

from harmaplab.capacity import (flux_constancy, l1_bound, l1_convergence, run_capacity,
                                test_function_energy)
from harmaplab.config import load_config
from harmaplab.elliptic import estimate_delta, harmonic_extension, solve_poisson_dirichlet
from harmaplab.geometry import (christoffel_field, chart_constants, flat_chart, normal_coordinates,
                                parse_chart, pullback_metric)
from harmaplab.grid import Domain, build_grid
from harmaplab.harmonic_map import (PicardConfig, contraction_certificate, estimate_C3,
                                    measure_lambda, picard_iterate, picard_solve)
from harmaplab.maxprinciple import admissible_parameters, build_functional, subsolution_inequality
from harmaplab.pipeline import boundary_family, removability_experiment
from harmaplab.regularity import (HOLDER_EXPONENT, decay_sequence, holder_exponent_extract,
                                  oscillation_sequence)

SMALL = Domain.ball((0.0, 0.0), 0.2)


@pytest.fixture(scope="module")
def frame():
    ch = parse_chart("eta-plus-quadratic p=1 q=1 scale=0.2 seed=0 width=0.5")
    return normal_coordinates(ch, np.array([0.1, 0.1]))


@pytest.fixture(scope="module")
def C_Gamma(frame):
    return chart_constants(frame.source, frame, 0.2).C_Gamma


def modes(amp, phase=0.3):
    def g(x):
        t = np.arctan2(x[:, 1], x[:, 0])
        return amp * np.stack([np.cos(t + phase), np.sin(2 * t) + 0.5 * np.cos(3 * t)], 1)
    return g


def test_criterion_01_decay(criterion):
    t0 = time.perf_counter()
    a0s = np.random.default_rng(0).uniform(0, 0.25, 1000)
    a0s[a0s == 0] = 0.25
    k = np.arange(61)
    worst_phi = worst_env = -math.inf
    for a0 in a0s:
        a = decay_sequence(float(a0), 60)["a"]
        phi = a0 / (2 * a0 + np.exp(k / 2) * (1 - 2 * a0))
        worst_phi = max(worst_phi, float(np.max(a - phi)))
        worst_env = max(worst_env, float(np.max(a - np.exp(-k / 2) / 2)))
    dt = time.perf_counter() - t0
    ok = worst_phi <= 1e-12 and worst_env <= 1e-12 and dt < 1.0
    assert criterion(1, ok, f"max(a-phi)={worst_phi:.2e} max(a-env)={worst_env:.2e} in {dt:.2f}s")


CURVED = ["eta-plus-quadratic p=1 q=1 scale=0.2 seed=0 width=0.5",
          "eta-plus-quadratic p=1 q=1 scale=0.3 seed=4 width=0.5",
          "diag-poly p=1 q=1 a=0.2,-0.1,0.3,0.05 b=-0.2,0.1,0.15,-0.05 width=0.8",
          "eta-plus-quadratic p=2 q=1 scale=0.2 seed=1 width=0.5",
          "diag-poly p=2 q=1 a=0.1,0.2,-0.1,0.05,0.0,0.1,-0.2,0.3,0.1 b=0.2,-0.1,0.0,0.1,0.05,0.0,0.1,-0.1,0.2 width=0.8"]


def test_criterion_02_normal_coordinates(criterion):
    t0 = time.perf_counter()
    metric = gamma = 0.0
    for spec in CURVED:
        ch = parse_chart(spec)
        n = sum(ch.signature)
        ncm = normal_coordinates(ch, np.full(n, 0.05))
        origin = np.zeros(n)
        metric = max(metric, float(np.max(np.abs(pullback_metric(ch, ncm, origin) - ch.eta))))
        gamma = max(gamma, float(np.max(np.abs(christoffel_field(ncm.pulled_back_chart(), origin)))))
    dt = time.perf_counter() - t0
    ok = metric <= 1e-10 and gamma <= 1e-6 and dt < 5
    assert criterion(2, ok, f"|h(0)-eta|={metric:.1e} |Gamma(0)|={gamma:.1e} on 5 charts in {dt:.2f}s")


def test_criterion_03_flat_oracle(criterion):
    t0 = time.perf_counter()
    ball = build_grid(Domain.ball((0.0, 0.0), 1.0), 1 / 64)  # 129 nodes across
    g = boundary_family("trig", 2, 0.3, 0, (0.0, 0.0), 1.0)
    pic = picard_solve(flat_chart(1, 1), g, PicardConfig(r=1.0, h=1 / 64)).u_bar
    ext = harmonic_extension(ball, g)
    flat_err = float(np.max(np.abs(pic.values - ext.values)))
    box = build_grid(Domain.box((0, 0), (1, 1)), 1 / 32)  # 33^2 lattice
    rng = np.random.default_rng(3)
    f, gb = rng.normal(size=box.n_inside), rng.normal(size=box.n_boundary)
    L = box.laplace_matrix.toarray()
    dense = np.linalg.solve(L[:, :box.n_inside], f - L[:, box.n_inside:] @ gb)
    lu_err = max(float(np.max(np.abs(solve_poisson_dirichlet(box, f, gb, method=m, tol=1e-12)
                                     .solution.values - dense)))
                 for m in ("direct", "krylov", "rbgs"))
    dt = time.perf_counter() - t0
    ok = flat_err <= 1e-9 and lu_err <= 1e-9 and dt < 30
    assert criterion(3, ok, f"picard-vs-extension {flat_err:.1e}, dense LU {lu_err:.1e} in {dt:.1f}s")


def test_criterion_04_cubic_smallness(frame, criterion):
    t0 = time.perf_counter()
    g = build_grid(SMALL, 1 / 32)
    sig = np.array([0.04, 0.02, 0.01])
    w = [np.max(np.abs(picard_iterate(frame, g, modes(s)).w.values)) for s in sig]
    slope = float(np.polyfit(np.log(sig), np.log(w), 1)[0])
    dt = time.perf_counter() - t0
    ok = 2.6 <= slope <= 3.4 and dt < 120
    assert criterion(4, ok, f"log-log slope {slope:.3f} in {dt:.1f}s")


def test_criterion_05_certificate(frame, criterion):
    g = build_grid(SMALL, 1 / 32)
    delta = estimate_delta(g, 0.5, trials=5)
    C3 = estimate_C3(frame, g, 0.5, corpus=3)
    cases = contracting = 0
    worst = -math.inf
    for seed in range(12):
        amp = 0.02 + 0.04 * seed / 11
        rep = picard_iterate(frame, g, boundary_family("modes", 2, amp, seed, (0.0, 0.0), 0.2))
        lam = measure_lambda(rep.v, 0.5)
        cert = contraction_certificate(PicardConfig(r=0.2, delta=delta, C3=C3, Lambda=lam, alpha=0.5))
        cases += 1
        if cert["contracting"]:
            contracting += 1
            worst = max(worst, max(rep.contraction_factors, default=0.0) - cert["contraction_bound"])
    ok = contracting >= 10 and worst <= 0.1
    assert criterion(5, ok, f"{contracting}/{cases} certified cases, max(factor-bound)={worst:.2e}")


def test_criterion_06_maximum_principle(frame, C_Gamma, criterion):
    t0 = time.perf_counter()
    a = admissible_parameters(C_Gamma, 0.2)["mp_alpha"]
    pairs = [(modes(0.05), modes(0.045, 0.4)), (modes(0.04, 1.0), modes(0.05, -0.7)),
             (boundary_family("trig", 2, 0.04, 1, (0, 0), 0.2),
              boundary_family("trig", 2, 0.04, 2, (0, 0), 0.2))]
    viol_129 = 0
    mags = []  # worst violation (margin below zero, no tolerance) per resolution
    for n in (65, 129, 257):
        g = build_grid(SMALL, 0.4 / (n - 1))
        worst = 0.0
        for gu, gv in pairs:
            u, v = picard_iterate(frame, g, gu).u_bar, picard_iterate(frame, g, gv).u_bar
            rep = subsolution_inequality(build_functional(frame, u, v, a), C_Gamma, 0.2)
            worst = max(worst, rep["max_violation"])
            if n == 129:
                viol_129 += rep["violations"]
        mags.append(worst)
    halves = all(b <= a_ / 2 if a_ > 0 else b == 0 for a_, b in zip(mags, mags[1:]))
    dt = time.perf_counter() - t0
    ok = viol_129 == 0 and halves and dt < 300
    assert criterion(6, ok, f"violations at 129^2: {viol_129}; magnitudes 65/129/257: "
                            f"{', '.join(f'{m:.1e}' for m in mags)} in {dt:.1f}s")


@pytest.fixture(scope="module")
def capacity_m2():
    t0 = time.perf_counter()
    K = Domain.annulus((0.0, 0.0), 0.4, 0.95)
    runs = [run_capacity(e, h=1 / 128, K=K) for e in (0.2, 0.1, 0.05, 0.025)]
    return runs, K, time.perf_counter() - t0


def test_criterion_07_capacity(capacity_m2, criterion):
    runs, K, setup = capacity_m2
    t0 = time.perf_counter() - setup
    notes, checks = [], {}
    E_err = max(abs(r.E / (2 * math.pi * r.M ** 2 / math.log(r.r / r.eps)) - 1) for r in runs)
    checks["E"] = E_err <= 0.10
    checks["competitor"] = all(r.E <= 1.01 * test_function_energy(r.eps, r.r, r.M, grid=r.grid)
                               for r in runs)
    checks["k"] = all(a.k < b.k for a, b in zip(runs, runs[1:]))
    tab = l1_convergence(runs, K)
    ratio = max(row["L1"] / l1_bound(run) for row, run in zip(tab["rows"], runs))
    checks["L1_decreasing"] = tab["decreasing"]
    checks["L1_third"] = tab["final_over_first"] <= 1 / 3
    checks["L1_bound"] = ratio <= 1.15
    K3 = Domain.annulus((0.0, 0.0, 0.0), 0.4, 0.95)
    eps3 = np.array([0.2, 0.1, 0.05, 0.025])
    tab3 = l1_convergence([run_capacity(e, h=1 / 24, m=3, K=K3) for e in eps3], K3)
    slope = float(np.polyfit(np.log(eps3), np.log([r["L1"] for r in tab3["rows"]]), 1)[0])
    checks["m3_slope"] = 0.8 <= slope <= 1.2
    dt = time.perf_counter() - t0
    checks["runtime"] = dt < 300
    notes.append(f"E err {E_err:.3f}, L1 final/first {tab['final_over_first']:.3f} (need <= 0.333), "
                 f"L1/bound {ratio:.3f}, m=3 slope {slope:.3f}, {dt:.0f}s")
    failed = [k for k, v in checks.items() if not v]
    if failed:
        notes.append("failed: " + ",".join(failed))
    assert criterion(7, not failed, "; ".join(notes))


def test_criterion_08_flux(capacity_m2, criterion):
    run = capacity_m2[0][1]  # eps = 0.1
    assert len(run.s_values) == 64
    rep = flux_constancy(run)
    ok = rep["spread"] <= 0.05 and rep["coarea_error"] <= 0.07
    assert criterion(8, ok, f"spread {rep['spread']:.4f} over 64 levels, "
                            f"coarea error {rep['coarea_error']:.4f}")


def test_criterion_09_removability(criterion):
    t0 = time.perf_counter()
    cfg = load_config()
    assert cfg.h == 1 / 64 and cfg.r == 1.0  # 129 nodes across the ball
    control = removability_experiment(cfg, sigma=0.0)
    bumped = removability_experiment(cfg, sigma=0.01)
    dt = time.perf_counter() - t0
    l1 = [r.L1_f for r in bumped.results]
    ok = control.passed and bumped.passed and dt < 600
    detail = (f"control sup f {max(r.sup_f for r in control.results):.1e} (<= {10 * cfg.tol:.0e}); "
              f"violations {sum(r.violations for r in bumped.results)}; "
              f"L1(f) {', '.join(f'{v:.2e}' for v in l1)}; {dt:.0f}s")
    assert criterion(9, ok, detail)


def test_criterion_10_holder_exponent(frame, criterion):
    u = picard_iterate(frame, build_grid(SMALL, 0.2 / 96), modes(0.05)).u_bar
    rng = np.random.default_rng(10)
    slopes, small = [], True
    for _ in range(8):
        th, rad = rng.uniform(0, 2 * np.pi), 0.06 * math.sqrt(rng.uniform())
        osc = oscillation_sequence(frame, u, (rad * math.cos(th), rad * math.sin(th)), 0.14)
        small &= osc.smallness_ok
        slopes.append(holder_exponent_extract(osc))
    ok = small and min(slopes) >= HOLDER_EXPONENT - 0.05
    assert criterion(10, ok, f"min slope {min(slopes):.3f} over 8 centres "
                             f"(threshold {HOLDER_EXPONENT - 0.05:.3f})")
