"""Command-line pipelines: solve-hme, solve-cme, ssa, and compare.

Exit codes: 0 on success, 2 for configuration errors, 3 for numerical
failures, 4 when a comparison threshold is violated.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .config import RunConfig, parse_config_file
from .errors import ConfigError, SolverError
from .gridio import (
    read_grid,
    write_domain_csv,
    write_grid,
    write_marginals_csv,
    write_run_meta,
)
from .integrator import (
    RunStats,
    build_initial_domain,
    full_feasible_lattice,
    poisson_joint,
    run_to_time,
)
from .maxent import MaxEntProblem, assemble_joint, conditional_problems, dual_solve
from .network import decompose_propensity, validate_network
from .oracles import RNG_ALGORITHM, cme_solve, ssa_simulate, total_variation
from .errors import DegenerateGridError, InfeasibleMomentsError


def _tau_tag(tau: float) -> str:
    return repr(float(tau))


def _load(args) -> RunConfig:
    cfg = parse_config_file(args.config)
    if getattr(args, "tau", None) is not None:
        cfg = replace(cfg, solver=replace(cfg.solver, tau=args.tau))
    return cfg


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out) if getattr(args, "out", None) else Path(cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _validated_decomp(cfg: RunConfig):
    violations = validate_network(cfg.network, hybrid=True)
    if violations:
        raise ConfigError("invalid network: " + "; ".join(violations))
    return decompose_propensity(cfg.network)


def _initial_domain(cfg: RunConfig, decomp):
    return build_initial_domain(
        decomp, cfg.slow_caps, cfg.fast_caps, cfg.init_slow_caps, cfg.init_fast_caps
    )


def _base_meta(cfg: RunConfig, command: str, tau: float) -> dict:
    return {
        "command": command,
        "tau": tau,
        "status": "running",
        "config": cfg.raw,
        "overrides": {"tau": tau},
    }


def cmd_solve_hme(args) -> int:
    cfg = _load(args)
    decomp = _validated_decomp(cfg)
    out = _out_dir(args, cfg)
    tau = cfg.solver.tau
    tag = _tau_tag(tau)
    meta = _base_meta(cfg, "solve-hme", tau)
    write_run_meta(out / "run_meta", meta)

    domain0 = _initial_domain(cfg, decomp)
    stats = RunStats()
    diag_handle = None
    if cfg.output.emit_diagnostics:
        diag_handle = open(out / f"diagnostics_tau{tag}.csv", "w", newline="\n")
    try:
        field, domain = run_to_time(
            cfg.network, cfg.solver, domain0, diagnostics=diag_handle, stats=stats
        )
    finally:
        if diag_handle is not None:
            diag_handle.close()

    warnings: list = []
    problems = conditional_problems(field, domain, cfg.maxent.mass_floor, warnings)
    solutions = []
    fallbacks = 0
    total_iters = 0
    max_resid = 0.0
    for d, problem in problems:
        try:
            sol = dual_solve(problem, tol=cfg.maxent.tol, max_iter=cfg.maxent.max_iter)
        except (InfeasibleMomentsError, DegenerateGridError) as exc:
            # degrade to the feasible grid point nearest the tracked mean
            mean = field.mean_of(d)
            nearest = min(
                problem.grid, key=lambda c: sum((x - mu) ** 2 for x, mu in zip(c, mean))
            )
            fd = field.fast_count
            sol = dual_solve(MaxEntProblem(grid=(nearest,), constraints=(((0,) * fd, 1.0),)))
            warnings.append((d, f"maxent degraded to one point: {exc}"))
        if sol.fallback:
            fallbacks += 1
        total_iters += sol.iterations
        max_resid = max(max_resid, sol.residual)
        solutions.append((d, sol))

    joint = assemble_joint(solutions, field, tau)
    write_grid(joint, out / f"hme_joint_tau{tag}.grid")
    write_marginals_csv(field, out / f"marginals_tau{tag}.csv")
    write_domain_csv(domain, out / f"domain_tau{tag}.csv")

    meta.update(
        {
            "status": "complete",
            "steps": stats.steps,
            "final_total_mass": stats.final_mass,
            "clamp_counts": {
                "marginal": stats.clamps.marginal,
                "central": stats.clamps.central,
            },
            "expansions": [
                {"step": s, "state": list(d)} for s, d in domain.expansion_log
            ],
            "maxent": {
                "problems": len(problems),
                "total_iterations": total_iters,
                "max_residual": max_resid,
                "fallbacks": fallbacks,
                "warnings": [str(w) for w in warnings],
            },
            "outputs": [
                f"hme_joint_tau{tag}.grid",
                f"marginals_tau{tag}.csv",
                f"domain_tau{tag}.csv",
            ],
        }
    )
    write_run_meta(out / "run_meta", meta)
    return 0


def cmd_solve_cme(args) -> int:
    cfg = _load(args)
    decomp = _validated_decomp(cfg)
    out = _out_dir(args, cfg)
    tau = cfg.solver.tau
    tag = _tau_tag(tau)
    meta = _base_meta(cfg, "solve-cme", tau)
    meta["init"] = args.init
    write_run_meta(out / "run_meta", meta)

    lattice = full_feasible_lattice(decomp, cfg.slow_caps, cfg.fast_caps)
    if args.init == "poisson":
        domain0 = _initial_domain(cfg, decomp)
        init = poisson_joint(domain0, cfg.solver.poisson_mean_d, cfg.solver.poisson_mean_c)
    else:
        init = "point"
    grid = cme_solve(
        cfg.network,
        decomp,
        lattice,
        tau,
        cfg.solver.delta,
        init=init,
        scheme=args.scheme,
        fast_gain_mode=args.fast_gain_mode,
    )
    write_grid(grid, out / f"cme_joint_tau{tag}.grid")
    meta.update(
        {
            "status": "complete",
            "lattice_size": len(lattice),
            "total_mass": grid.total_mass(),
            "outputs": [f"cme_joint_tau{tag}.grid"],
        }
    )
    write_run_meta(out / "run_meta", meta)
    return 0


def cmd_ssa(args) -> int:
    cfg = _load(args)
    decomp = _validated_decomp(cfg)
    out = _out_dir(args, cfg)
    tau = cfg.solver.tau
    tag = _tau_tag(tau)
    n_traj = args.n_traj if args.n_traj is not None else cfg.oracle.n_traj
    seed = args.seed if args.seed is not None else cfg.oracle.seed
    meta = _base_meta(cfg, "ssa", tau)
    meta.update({"n_traj": n_traj, "seed": seed, "rng_algorithm": RNG_ALGORITHM})
    write_run_meta(out / "run_meta", meta)

    if args.init == "poisson":
        domain0 = _initial_domain(cfg, decomp)
        init = poisson_joint(domain0, cfg.solver.poisson_mean_d, cfg.solver.poisson_mean_c)
    else:
        init = "point"
    grid = ssa_simulate(cfg.network, decomp, tau, n_traj, seed, init=init)
    write_grid(grid, out / f"ssa_empirical_tau{tag}.grid")
    meta.update({"status": "complete", "outputs": [f"ssa_empirical_tau{tag}.grid"]})
    write_run_meta(out / "run_meta", meta)
    return 0


def cmd_compare(args) -> int:
    grid_a = read_grid(args.grid_a)
    grid_b = read_grid(args.grid_b)
    tv = total_variation(grid_a, grid_b)
    mode_a = grid_a.argmax()
    mode_b = grid_b.argmax()
    ta, tb = grid_a.total_mass(), grid_b.total_mass()
    marg_a = {d: p / ta for d, p in grid_a.slow_marginals().items()}
    marg_b = {d: p / tb for d, p in grid_b.slow_marginals().items()}
    stats_a = grid_a.conditional_stats()
    stats_b = grid_b.conditional_stats()

    per_d = {}
    for d in sorted(set(marg_a) | set(marg_b)):
        entry = {"marginal_gap": abs(marg_a.get(d, 0.0) - marg_b.get(d, 0.0))}
        if d in stats_a and d in stats_b:
            _, mean_a, var_a = stats_a[d]
            _, mean_b, var_b = stats_b[d]
            entry["mean_gap"] = max(abs(x - y) for x, y in zip(mean_a, mean_b))
            entry["var_gap"] = max(abs(x - y) for x, y in zip(var_a, var_b))
        per_d["/".join(map(str, d))] = entry

    report = {
        "grid_a": str(args.grid_a),
        "grid_b": str(args.grid_b),
        "total_variation": tv,
        "mode_a": [list(mode_a[0]), list(mode_a[1])],
        "mode_b": [list(mode_b[0]), list(mode_b[1])],
        "mode_match": mode_a == mode_b,
        "marginal_l1": sum(e["marginal_gap"] for e in per_d.values()),
        "per_d": per_d,
    }
    print(f"total variation: {tv:.6g}")
    print(f"mode a: {mode_a}  mode b: {mode_b}  match: {mode_a == mode_b}")
    print(f"slow-marginal L1 gap: {report['marginal_l1']:.6g}")
    worst = sorted(per_d.items(), key=lambda kv: -kv[1]["marginal_gap"])[:5]
    for d, entry in worst:
        extras = ", ".join(
            f"{k.replace('_gap', '')} gap {v:.3g}" for k, v in entry.items() if k != "marginal_gap"
        )
        print(f"  d={d}: marginal gap {entry['marginal_gap']:.3g}" + (f", {extras}" if extras else ""))
    if args.report:
        Path(args.report).parent.mkdir(parents=True, exist_ok=True)
        Path(args.report).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    status = 0
    if args.max_tv is not None:
        if tv <= args.max_tv:
            print(f"PASS tv {tv:.6g} <= {args.max_tv}")
        else:
            print(f"FAIL tv {tv:.6g} > {args.max_tv}")
            status = 4
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hmesolver",
        description="Joint reaction-counting densities for jump-diffusion hybrid kinetics",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="path to the YAML run configuration")
        p.add_argument("--tau", type=float, default=None, help="override the end time")
        p.add_argument("--out", default=None, help="override the output directory")

    p_hme = sub.add_parser("solve-hme", help="moment solve + maxent reconstruction")
    add_common(p_hme)
    p_hme.set_defaults(handler=cmd_solve_hme)

    p_cme = sub.add_parser("solve-cme", help="dense master-equation oracle")
    add_common(p_cme)
    p_cme.add_argument("--init", choices=("poisson", "point"), default="poisson")
    p_cme.add_argument("--scheme", choices=("euler", "rk4"), default="euler")
    p_cme.add_argument(
        "--fast-gain-mode",
        choices=("corrected", "printed"),
        default="corrected",
        help="'printed' reproduces the self-cancelling fast gain form (documentation only)",
    )
    p_cme.set_defaults(handler=cmd_solve_cme)

    p_ssa = sub.add_parser("ssa", help="exact-jump trajectory oracle")
    add_common(p_ssa)
    p_ssa.add_argument("--seed", type=int, default=None)
    p_ssa.add_argument("--n-traj", type=int, default=None)
    p_ssa.add_argument("--init", choices=("point", "poisson"), default="point")
    p_ssa.set_defaults(handler=cmd_ssa)

    p_cmp = sub.add_parser("compare", help="compare two density grid files")
    p_cmp.add_argument("grid_a")
    p_cmp.add_argument("grid_b")
    p_cmp.add_argument("--report", default=None, help="write a JSON report here")
    p_cmp.add_argument("--max-tv", type=float, default=None, help="fail (exit 4) above this TV")
    p_cmp.set_defaults(handler=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
