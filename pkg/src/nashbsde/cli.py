"""Batch front end.

Subcommands: simulate, solve, verify-nash, check-isaacs,
verify-generator, density-check.  Each takes one config (a JSON file
path or a bundled name such as ``lq_paper``), writes CSV/JSON artifacts
and a PNG figure into the configured output directory, and prints a
one-line machine-parsable summary.

Exit codes: 0 success/pass, 1 verification failure, 2 invalid
configuration (the message names the field), 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import figures
from .config import ConfigError, RunConfig, load_config
from .density import (AronsonParams, check_aronson, density_mass_1d,
                      domination_check, gaussian_density, lognormal_mass_report)
from .games import check_isaacs, equilibrium_feedbacks
from .payoffs import deviation_test, standard_deviation_family, verify_w0_equals_j
from .reporting import fmt_float, write_csv, write_json
from .sde import SimulationError, simulate_reference
from .smoothing import MollifyParams, verify_generator_properties
from .solver import RegressionError, solve_coupled

__all__ = ["main"]


def _summary(status: str, **kv) -> None:
    parts = [f"status={status}"]
    for k, v in kv.items():
        if isinstance(v, float):
            parts.append(f"{k}={fmt_float(v)}")
        else:
            parts.append(f"{k}={v}")
    print(" ".join(parts))


def _outdir(cfg: RunConfig) -> Path:
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_paths_csv(bundle, path, max_paths=None) -> None:
    m = bundle.states.shape[2]
    header = ["path_id", "t"] + [f"x_{j + 1}" for j in range(m)]
    rows = []
    knots = bundle.grid.knots
    count = bundle.n_paths if max_paths is None else min(max_paths, bundle.n_paths)
    for j in range(count):
        for k in range(bundle.grid.n_steps + 1):
            rows.append([j, float(knots[k])] + [float(v) for v in bundle.states[j, k]])
    write_csv(path, header, rows)


def cmd_simulate(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    bundle = simulate_reference(cfg.game, cfg.grid, cfg.x0, cfg.n_paths, cfg.seed)
    _write_paths_csv(bundle, out / "paths.csv", cfg.simulate["csv_max_paths"])
    figures.render_paths(bundle, out / "paths.png")
    _summary("pass", n_paths=bundle.n_paths, n_steps=cfg.grid.n_steps,
             seed=cfg.seed, terminal_mean=float(np.mean(bundle.states[:, -1, 0])))
    return 0


def _solve(cfg: RunConfig):
    bundle = simulate_reference(cfg.game, cfg.grid, cfg.x0, cfg.n_paths, cfg.seed)
    sol = solve_coupled(cfg.game, bundle, cfg.basis, mollify=cfg.mollify)
    return bundle, sol


def cmd_solve(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    bundle, sol = _solve(cfg)
    write_json(out / "solution.json", sol.to_doc())
    d = sol.diagnostics
    rows = []
    for k in range(cfg.grid.n_steps):
        res = d["picard_residuals"][k]
        rows.append([k, float(cfg.grid.knots[k]), float(d["cond_numbers"][k]),
                     int(d["picard_iterations"][k]), float(res[0]), float(res[-1])])
    write_csv(out / "solve_diagnostics.csv",
              ["knot", "t", "cond_number", "picard_iterations",
               "picard_residual_first", "picard_residual_last"], rows)
    figures.render_value_maps(sol, out / "value_maps.png")
    figures.render_solution_diagnostics(sol, out / "solve_diagnostics.png")
    w0 = {p: float(sol.eval_w(p, cfg.grid.t0, cfg.x0)) for p in (1, 2)}
    _summary("pass", w0_1=w0[1], w0_2=w0[2],
             z_energy_1=float(d["z_energy"]["1"]), z_energy_2=float(d["z_energy"]["2"]),
             picard_converged=str(d["picard_converged"]).lower())
    return 0


def cmd_verify_nash(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    bundle, sol = _solve(cfg)
    eq = equilibrium_feedbacks(cfg.game)
    w0_report = verify_w0_equals_j(
        cfg.game, sol, eq, cfg.grid, cfg.x0, cfg.n_paths, cfg.seed,
        rel_allowance=float(cfg.nash["w0_rel_allowance"]))
    family = standard_deviation_family(
        cfg.game, seed=int(cfg.nash["family_seed"]),
        constants=int(cfg.nash["constants"]), bang_bang=int(cfg.nash["bang_bang"]),
        perturbed=int(cfg.nash["perturbed_feedback"]))
    report = deviation_test(cfg.game, sol, eq, family, cfg.grid, cfg.x0,
                            cfg.n_paths, cfg.seed,
                            rel_tol=float(cfg.nash["rel_tol"]), bundle=bundle)

    write_csv(out / "nash_report.csv",
              ["player", "description", "payoff", "std_error", "improvement",
               "improvement_se", "tolerance", "verdict"],
              [[r.player, r.description, r.payoff, r.std_error, r.improvement,
                r.improvement_se, r.tolerance, r.verdict] for r in report.rows])
    write_json(out / "nash_summary.json", {
        "schema_version": 1,
        "kind": "nash_summary",
        "passed": report.passed,
        "rel_tol": report.rel_tol,
        "family_size": report.family_size,
        "weight_mean": report.weight_mean,
        "weight_mean_se": report.weight_mean_se,
        "weight_check_passed": report.weight_check_passed,
        "equilibrium_estimates": [
            {"player": e.player, "method": e.method, "value": e.value,
             "std_error": e.std_error, "n_paths": e.n_paths}
            for e in report.eq_estimates
        ],
        "w0_vs_payoff": {
            "passed": w0_report.passed,
            "rel_allowance": w0_report.rel_allowance,
            "rows": w0_report.rows,
        },
    })
    figures.render_nash_report(report, out / "nash_report.png")
    eq1 = report.eq_value(1)
    eq2 = report.eq_value(2)
    _summary("pass" if report.passed else "fail",
             deviations=report.family_size,
             j1=eq1.value, j2=eq2.value,
             weight_mean=report.weight_mean,
             w0_check=str(w0_report.passed).lower())
    return 0 if report.passed else 1


def cmd_check_isaacs(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    report = check_isaacs(cfg.game, int(cfg.isaacs["sample_count"]),
                          int(cfg.isaacs["grid_n"]), int(cfg.isaacs["seed"]))
    m = cfg.game.dim_m
    header = (["sample", "t"] + [f"x_{j + 1}" for j in range(m)]
              + [f"z1_{j + 1}" for j in range(m)] + [f"z2_{j + 1}" for j in range(m)]
              + ["violation_p1", "violation_p2"])
    rows = []
    for idx, (t, x, z1, z2, v1, v2) in enumerate(report.samples):
        rows.append([idx, t] + [float(c) for c in x] + [float(c) for c in z1]
                    + [float(c) for c in z2] + [v1, v2])
    write_csv(out / "isaacs_report.csv", header, rows)
    figures.render_isaacs(report, out / "isaacs_report.png")
    _summary("pass" if report.passed else "fail",
             max_violation=report.max_violation, threshold=report.threshold,
             samples=report.sample_count, grid_n=report.grid_n)
    return 0 if report.passed else 1


def cmd_verify_generator(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    levels = [int(v) for v in cfg.generator["levels"]]
    quad = int(cfg.generator["quad_points"])
    reports = []
    rows = []
    for level in levels:
        params = MollifyParams(level=level, quad_points=quad)
        rep = verify_generator_properties(
            cfg.game, params, int(cfg.generator["sample_count"]),
            int(cfg.generator["seed"]))
        reports.append(rep)
        for player in (1, 2):
            rows.append([level, player, "lipschitz", rep.lipschitz[player],
                         rep.lipschitz_pass])
            rows.append([level, player, "growth_const", rep.growth_const[player],
                         rep.growth_pass])
            rows.append([level, player, "sup_bound", rep.sup_bound[player],
                         rep.bound_pass])
            rows.append([level, player, "sup_distance", rep.decay[player][0],
                         rep.decay_pass])
            rows.append([level, player, "sup_distance_doubled", rep.decay[player][1],
                         rep.decay_pass])
    write_csv(out / "generator_report.csv",
              ["level", "player", "property", "value", "pass"], rows)
    figures.render_generator_decay(reports, out / "generator_decay.png")
    ok = all(r.passed for r in reports)
    _summary("pass" if ok else "fail", levels=",".join(str(v) for v in levels),
             quad_points=quad)
    return 0 if ok else 1


def cmd_density_check(cfg: RunConfig) -> int:
    out = _outdir(cfg)
    dc = cfg.density
    sigma = float(dc["sigma"])
    t0 = float(dc["t0"])
    x0 = float(dc["x0"])
    gridc = dc["grid"]
    horizon = cfg.grid.T

    def density(s, x):
        return gaussian_density(t0, [x0], s, [x], sigma)

    mass = density_mass_1d(
        lambda x: density(t0 + 1.0, x), x0 - 10.0 * sigma, x0 + 10.0 * sigma)
    mass_ok = abs(mass - 1.0) <= float(dc["mass_tol"])

    ar = dc["aronson"]
    params = AronsonParams(rho1=float(ar["rho1"]), rho2=float(ar["rho2"]),
                           lambda_small=float(ar["lambda_small"]),
                           lambda_big=float(ar["lambda_big"]), dim_m=1)
    s_values = np.linspace(t0 + float(gridc["s_min"]), t0 + float(gridc["s_max"]),
                           int(gridc["n_s"]))
    x_values = np.linspace(x0 - float(gridc["x_halfwidth"]),
                           x0 + float(gridc["x_halfwidth"]),
                           int(gridc["n_x"])).reshape(-1, 1)
    aronson = check_aronson(params, density, t0, [x0], s_values, x_values)

    dom = dc["domination"]
    dom_report = domination_check(density, density, t1=t0,
                                  delta=float(dom["delta"]), horizon_T=horizon,
                                  k=float(dom["k"]), q=float(dom["q"]))
    dom_ok = dom_report.passed and dom_report.value <= horizon + 1e-6

    jac = lognormal_mass_report()

    header = ["s"] + ["x_1"] + ["density", "lower_bound", "upper_bound",
                                "lower_violation", "upper_violation"]
    rows = [[s, float(x[0]), rho, lower, upper, lv, uv]
            for (s, x, rho, lower, upper, lv, uv) in aronson.rows]
    write_csv(out / "density_report.csv", header, rows)
    passed = mass_ok and aronson.passed and dom_ok
    write_json(out / "density_summary.json", {
        "schema_version": 1,
        "kind": "density_summary",
        "passed": passed,
        "gaussian_mass": {"value": mass, "tol": float(dc["mass_tol"]), "passed": mass_ok},
        "aronson": {
            "max_lower_violation": aronson.max_lower_violation,
            "max_upper_violation": aronson.max_upper_violation,
            "tol": aronson.tol,
            "passed": aronson.passed,
        },
        "domination_identical_families": {
            "value": dom_report.value,
            "history": dom_report.history,
            "rel_change": dom_report.rel_change,
            "passed": dom_ok,
        },
        "lognormal_jacobian": jac,
    })
    figures.render_density(aronson, density, t0, x0, out / "density_report.png")
    _summary("pass" if passed else "fail", gaussian_mass=mass,
             aronson_max_violation=max(aronson.max_lower_violation,
                                       aronson.max_upper_violation),
             domination_value=dom_report.value,
             lognormal_unit_mass=jac["integrates_to_one"])
    return 0 if passed else 1


_COMMANDS = {
    "simulate": cmd_simulate,
    "solve": cmd_solve,
    "verify-nash": cmd_verify_nash,
    "check-isaacs": cmd_check_isaacs,
    "verify-generator": cmd_verify_generator,
    "density-check": cmd_density_check,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="nashbsde",
        description="Compute and certify Nash equilibria of two-player "
                    "stochastic differential games.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", help="config file path or bundled name "
                                      "(lq_paper, gbm_extension)")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        return _COMMANDS[args.command](cfg)
    except (SimulationError, RegressionError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
