"""Command line entry point: ``harmaplab <subcommand> [--config F] [--out D] [--seed S]``.

Every subcommand writes ``report.json`` (assertions and measured margins)
plus stage CSVs into the output directory and exits with status 0 exactly
when every assertion passed.  Configuration errors exit with status 2.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from .capacity import (flux_constancy, isoperimetric_ode_check, l1_convergence, run_capacity,
                       test_function_energy, write_profile_csv, write_sweep_csv)
from .config import ExperimentConfig, load_config
from .elliptic import boundary_holder_check, estimate_delta
from .errors import ConfigError, HarmapError
from .geometry import christoffel_field, pullback_metric
from .grid import Domain, GridFunction, build_grid, write_grid_function
from .harmonic_map import (PicardConfig, contraction_certificate, estimate_C3, measure_lambda,
                           picard_solve, residual)
from .holder import weighted_seminorms
from .maxprinciple import (build_functional, decomposition_residual, subsolution_inequality,
                           term_bounds_check, write_margin_csv)
from .pipeline import boundary_family, removability_experiment, setup_frame
from .regularity import decay_sequence

__all__ = ["main", "build_parser"]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    return obj


def _write_report(out: Path, name: str, report: dict, assertions: dict) -> bool:
    passed = all(bool(v) for v in assertions.values())
    doc = {"command": name, "assertions": assertions, "passed": passed, **report}
    (out / "report.json").write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")
    return passed


def _write_csv(path: Path, rows: list) -> None:
    if not rows:
        path.write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for row in rows:
            w.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in row.items()})


def _data(cfg: ExperimentConfig, n: int, seed_shift: int = 0):
    return boundary_family(cfg.family, n, cfg.amplitude, cfg.seed + seed_shift, cfg.center, cfg.r)


def _picard_cfg(cfg: ExperimentConfig) -> PicardConfig:
    return PicardConfig(r=cfg.r, alpha=cfg.alpha, h=cfg.h, center=tuple(cfg.center),
                        max_iter=cfg.max_iter, tol=cfg.tol)


# ---------------------------------------------------------------- subcommands

def cmd_geometry_check(cfg, args, out):
    frame = setup_frame(cfg)
    ncm = frame.ncm
    n = ncm.A.shape[0]
    src = ncm.source
    origin = np.zeros(n)
    metric_err = float(np.max(np.abs(pullback_metric(src, ncm, origin) - src.eta)))
    pb = ncm.pulled_back_chart()
    gamma0 = float(np.max(np.abs(christoffel_field(pb, origin))))
    rng = np.random.default_rng(cfg.seed)
    y = rng.normal(size=(256, n))
    y *= (0.9 * frame.R * rng.uniform(size=256) / np.linalg.norm(y, axis=1))[:, None]
    roundtrip = float(np.max(np.abs(ncm.inverse(ncm.forward(y)) - y)))
    gam = christoffel_field(pb, y)
    gn = np.sqrt(np.sum(gam ** 2, axis=(1, 2, 3)))
    lin_margin = float(np.min(frame.C_Gamma * np.linalg.norm(y, axis=1) + 1e-8 - gn))
    rows = [{"quantity": "metric_minus_eta", "value": metric_err},
            {"quantity": "gamma_at_zero", "value": gamma0},
            {"quantity": "roundtrip", "value": roundtrip},
            {"quantity": "gamma_linear_margin", "value": lin_margin},
            {"quantity": "C_Gamma", "value": frame.C_Gamma},
            {"quantity": "validity_radius", "value": float(ncm.validity_radius)},
            {"quantity": "mp_alpha", "value": frame.mp_alpha},
            {"quantity": "r_max", "value": frame.r_max}]
    _write_csv(out / "geometry.csv", rows)
    assertions = {"metric_is_eta": metric_err <= 1e-10, "christoffel_vanish": gamma0 <= 1e-6,
                  "inverse_roundtrip": roundtrip <= 1e-10, "gamma_linear_bound": lin_margin >= 0}
    report = {"chart": cfg.chart, "A": ncm.A, "values": {r["quantity"]: r["value"] for r in rows}}
    return report, assertions


def cmd_picard(cfg, args, out):
    frame = setup_frame(cfg)
    n = frame.ncm.A.shape[0]
    pc = _picard_cfg(cfg)
    rep = picard_solve(frame.ncm, _data(cfg, n), pc)
    res = float(np.max(np.abs(residual(frame.ncm, rep.u_bar).values)))
    assertions = {"converged": rep.converged}
    report = {"picard": rep.to_dict(), "residual_sup": res}
    if args.certificate:
        grid = rep.u_bar.grid
        pc.delta = estimate_delta(grid, cfg.alpha, trials=args.trials, seed=cfg.seed)
        coarse = build_grid(Domain.ball(cfg.center, cfg.r), max(cfg.h, 1 / 32))
        pc.C3 = estimate_C3(frame.ncm, coarse, cfg.alpha, corpus=args.trials, seed=cfg.seed)
        pc.Lambda = measure_lambda(rep.v, cfg.alpha)
        cert = rep.certificate = contraction_certificate(pc, r=rep.r_used)
        report["certificate"] = {"delta": pc.delta, "C3": pc.C3, "Lambda": pc.Lambda, **cert}
        if cert["contracting"]:
            worst = max(rep.contraction_factors, default=0.0)
            assertions["factors_within_bound"] = worst <= cert["contraction_bound"] + 0.1
    rows = [{"iteration": i + 1, "w_norm": w,
             "contraction_factor": (rep.contraction_factors[i - 1] if i >= 1 else float("nan"))}
            for i, w in enumerate(rep.w_norm_history)]
    _write_csv(out / "picard.csv", rows)
    write_grid_function(out / "ubar.grid", rep.u_bar)
    return report, assertions


def cmd_capacity_sweep(cfg, args, out):
    m = cfg.cap_m
    center = (0.0,) * m
    K = Domain.annulus(center, cfg.cap_K_inner, cfg.cap_K_outer)
    eps_list = sorted(cfg.cap_eps, reverse=True)
    runs = [run_capacity(e, cfg.cap_r, 1.0, cfg.cap_M, h=cfg.cap_h, m=m, center=center)
            for e in eps_list]
    table = l1_convergence(runs, K)
    E = np.array([r.E for r in runs])
    k = np.array([r.k for r in runs])
    rows = []
    odes_ok = True
    comp_ok = True
    for run, row in zip(runs, table["rows"]):
        ode = isoperimetric_ode_check(run)
        odes_ok &= ode["ok"]
        extra = {"ode_ok": ode["ok"]}
        if run.eps < run.r / 4:
            comp = test_function_energy(run.eps, run.r, run.M, 1.0, grid=run.grid, m=m)
            extra["competitor_E"] = comp
            comp_ok &= run.E <= comp * 1.01
        rows.append({**row, **extra})
    flux = flux_constancy(runs[0])
    write_sweep_csv(out / "capacity_sweep.csv", table)
    write_profile_csv(out / "profile.csv", runs)
    _write_csv(out / "flux.csv", [{"s": float(s), "flux": float(f)}
                                  for s, f in zip(flux["s"], flux["flux"])])
    assertions = {"E_decreasing": bool(np.all(np.diff(E) < 0)),
                  "k_increasing": bool(np.all(np.diff(k) > 0)),
                  "L1_decreasing": table["decreasing"],
                  "L1_within_bound": table["within_bound"],
                  "isoperimetric_ode": bool(odes_ok),
                  "competitor_dominates": bool(comp_ok),
                  "flux_spread": flux["spread"] <= 0.05,
                  "coarea": flux["coarea_error"] <= 0.07}
    report = {"rows": rows, "final_over_first": table["final_over_first"],
              "flux_spread": flux["spread"], "coarea_error": flux["coarea_error"]}
    return report, assertions


def cmd_decay(cfg, args, out):
    a0 = cfg.a0 if args.a0 is None else args.a0
    steps = cfg.steps if args.steps is None else args.steps
    d = decay_sequence(a0, steps)
    rows = [{"k": i, "a_k": float(d["a"][i]), "phi_k": float(d["phi"][i]),
             "envelope": float(d["envelope"][i]), "ok_phi": bool(d["ok_phi"][i]),
             "ok_env": bool(d["ok_env"][i])} for i in range(steps + 1)]
    _write_csv(out / "decay.csv", rows)
    return {"a0": a0, "steps": steps}, {"bounds_hold": d["bound_ok"]}


def cmd_maxprinciple_check(cfg, args, out):
    frame = setup_frame(cfg)
    n = frame.ncm.A.shape[0]
    pc = _picard_cfg(cfg)
    u = picard_solve(frame.ncm, _data(cfg, n), pc).u_bar
    v = picard_solve(frame.ncm, _data(cfg, n, seed_shift=1), pc).u_bar
    cf = build_functional(frame.ncm, u, v, frame.mp_alpha)
    bounds = term_bounds_check(cf, frame.C_Gamma, frame.R)
    sub = subsolution_inequality(cf, frame.C_Gamma, frame.R)
    dec = float(np.max(np.abs(decomposition_residual(cf))))
    write_margin_csv(out / "margins.csv", cf, bounds, sub)
    assertions = {"term_bounds": all(v == 0 for v in bounds["violations"].values()),
                  "subsolution": sub["violations"] == 0}
    report = {"mp_alpha": frame.mp_alpha, "C_Gamma": frame.C_Gamma, "R": frame.R,
              "term_min_margin": bounds["min_margin"], "term_violations": bounds["violations"],
              "subsolution_min_margin": sub["min_margin"], "subsolution_violations": sub["violations"],
              "tol_h": sub["tol_h"], "decomposition_residual": dec}
    return report, assertions


def cmd_removability(cfg, args, out):
    rep = removability_experiment(cfg, sigma=args.sigma)
    _write_csv(out / "removability.csv", [r.row() for r in rep.results])
    write_grid_function(out / "ubar.grid", rep.u_bar)
    for r in rep.results:
        tag = f"{r.eps:g}"
        write_grid_function(out / f"u_eps_{tag}.grid", r.u_eps)
        write_grid_function(out / f"f_{tag}.grid", r.f)
        write_grid_function(out / f"phi_{tag}.grid", r.phi)
    d = rep.to_dict()
    assertions = d.pop("assertions")
    d.pop("passed")
    return d, assertions


def cmd_holder_norms(cfg, args, out):
    frame = setup_frame(cfg)
    n = frame.ncm.A.shape[0]
    g = _data(cfg, n)
    rep = picard_solve(frame.ncm, g, _picard_cfg(cfg))
    rows = []
    for k in range(3):
        w = weighted_seminorms(rep.u_bar, k, cfg.alpha, args.beta, seed=cfg.seed)
        sups = list(w.seminorms) + [float("nan")] * (2 - k)
        rows.append({"k": k, "beta": args.beta, "alpha": cfg.alpha,
                     **{f"sup_D{j}": float(s) for j, s in enumerate(sups)},
                     "holder_seminorm": w.seminorm_k_alpha, "full": w.full})
    bh = boundary_holder_check(rep.v.grid, g, cfg.alpha, seed=cfg.seed)
    _write_csv(out / "holder.csv", rows)
    finite = all(math.isfinite(r["full"]) for r in rows)
    report = {"rows": rows, "boundary": {k: v for k, v in bh.items() if k != "solution"}}
    return report, {"finite": finite and math.isfinite(bh["C1"])}


COMMANDS = {
    "geometry-check": (cmd_geometry_check, "normal coordinates and chart constants"),
    "picard": (cmd_picard, "fixed-point solve of the harmonic map system"),
    "capacity-sweep": (cmd_capacity_sweep, "capacity potentials over the eps sweep"),
    "decay": (cmd_decay, "oscillation recursion against its closed-form bound"),
    "maxprinciple-check": (cmd_maxprinciple_check, "comparison functional subsolution check"),
    "removability": (cmd_removability, "end-to-end removability pipeline"),
    "holder-norms": (cmd_holder_norms, "weighted Hölder norms of a Picard solution"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="configuration file (default: built-in)")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--seed", type=int, help="override [run] seed")
    parser = argparse.ArgumentParser(prog="harmaplab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    ps = {name: sub.add_parser(name, parents=[common], help=help_)
          for name, (_, help_) in COMMANDS.items()}
    ps["decay"].add_argument("--a0", type=float)
    ps["decay"].add_argument("--steps", type=int)
    ps["picard"].add_argument("--certificate", action="store_true",
                              help="measure delta, C3 and Lambda and check the certificate")
    ps["picard"].add_argument("--trials", type=int, default=3)
    ps["capacity-sweep"].add_argument("--m", type=int, choices=(2, 3))
    ps["capacity-sweep"].add_argument("--h", type=float)
    ps["removability"].add_argument("--sigma", type=float)
    ps["removability"].add_argument("--workers", type=int)
    ps["holder-norms"].add_argument("--beta", type=float, default=0.0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        cfg = cfg.with_overrides(seed=args.seed,
                                 cap_m=getattr(args, "m", None), cap_h=getattr(args, "h", None),
                                 workers=getattr(args, "workers", None))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    handler = COMMANDS[args.command][0]
    try:
        report, assertions = handler(cfg, args, out)
    except (HarmapError, ValueError) as exc:
        _write_report(out, args.command, {"error": f"{type(exc).__name__}: {exc}"}, {"ran": False})
        print(f"error: {exc}", file=sys.stderr)
        return 1
    passed = _write_report(out, args.command, report, assertions)
    for key, ok in assertions.items():
        print(f"{'PASS' if ok else 'FAIL'} {key}")
    return 0 if passed else 1


if __name__ == "__main__":
    sys.exit(main())
