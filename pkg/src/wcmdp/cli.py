"""Command-line entry point: generation, solving, simulation, sweeps, and
diagnostics as composable subcommands.

Every file-producing command writes a manifest next to its output recording
the command, flags, seeds, component versions, and the instance hash, so a
run can be replayed to identical data outputs (timestamps aside).

Exit codes: 0 ok, 2 usage error, 3 validation failure, 4 feasibility
assertion, 5 assumption failure under --strict.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .lp_relax import build_lp, check_solution, extract_policy, solve_lp
from .model import (COST_ACTION_ONLY, COST_STATE_ACTION, FULLY_HETEROGENEOUS,
                    TYPED, GeneratorConfig, WcmdpInstance, generate, validate)
from .policies import OracleSizeError, exact_oracle
from .simulator import (PolicyBundle, SimConfig, simulate, sweep,
                        write_results_csv)
from . import lyapunov

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_FEASIBILITY = 4
EXIT_ASSUMPTION = 5

_FAMILY_FLAGS = {"fully-het": FULLY_HETEROGENEOUS, "typed": TYPED}
_COST_FLAGS = {"state-action": COST_STATE_ACTION, "action-only": COST_ACTION_ONLY}


def _instance_hash(instance: WcmdpInstance) -> str:
    return hashlib.sha256(instance.to_json().encode()).hexdigest()


def write_manifest(out_path, command: str, flags: dict,
                   instance_hash: str | None = None) -> None:
    manifest = {
        "command": command,
        "flags": {k: v for k, v in flags.items() if not callable(v)},
        "versions": {
            "wcmdp": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": sys.version.split()[0],
        },
        "instance_hash": instance_hash,
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    path = Path(str(out_path) + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, default=str))


def _generator_config(args) -> GeneratorConfig:
    return GeneratorConfig(
        seed=args.seed,
        num_arms=args.n,
        num_states=args.states,
        num_actions=args.actions,
        num_constraints=args.k,
        family=_FAMILY_FLAGS[args.family],
        num_types=args.types,
        cost_mode=_COST_FLAGS[args.cost_mode],
    )


def _add_generation_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--family", choices=sorted(_FAMILY_FLAGS), default="fully-het")
    p.add_argument("--n", type=int, required=True, help="number of arms")
    p.add_argument("--states", type=int, default=10)
    p.add_argument("--actions", type=int, default=4)
    p.add_argument("--k", type=int, default=4, help="number of budget constraints")
    p.add_argument("--types", type=int, default=1, help="types (typed family)")
    p.add_argument("--cost-mode", choices=sorted(_COST_FLAGS),
                   default="state-action")
    p.add_argument("--seed", type=int, default=0)


def _add_sim_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--horizon", type=int, default=20000)
    p.add_argument("--reps", type=int, default=4)
    p.add_argument("--batch-size", type=int, default=4000)
    p.add_argument("--sim-seed", type=int, default=0)
    p.add_argument("--threads", type=int,
                   default=int(os.environ.get("WCMDP_THREADS", "1")))


def _load_instance(path: str) -> WcmdpInstance:
    instance = WcmdpInstance.load(path)
    problems = validate(instance)
    if problems:
        for msg in problems:
            print(f"invalid instance: {msg}", file=sys.stderr)
        raise SystemExit(EXIT_VALIDATION)
    return instance


def cmd_generate(args) -> int:
    try:
        cfg = _generator_config(args)
        instance = generate(cfg)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    problems = validate(instance)
    if problems:
        for msg in problems:
            print(f"validation: {msg}", file=sys.stderr)
        return EXIT_VALIDATION
    instance.save(args.out)
    write_manifest(args.out, "generate", vars(args), _instance_hash(instance))
    print(f"wrote {args.out}: N={instance.num_arms} S={instance.num_states} "
          f"A={instance.num_actions} K={instance.num_constraints}")
    return EXIT_OK


def cmd_solve(args) -> int:
    instance = _load_instance(args.instance)
    solution = solve_lp(build_lp(instance))
    report = check_solution(instance, solution)
    if not report.ok:
        print(f"solution failed the feasibility audit: {report}", file=sys.stderr)
        return EXIT_VALIDATION
    Path(args.out).write_text(json.dumps(solution.to_json_dict()))
    write_manifest(args.out, "solve", vars(args), _instance_hash(instance))
    print(f"R_rel = {solution.objective:.10f}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    instance = _load_instance(args.instance)
    bundle = PolicyBundle.prepare(instance, seed=args.sim_seed)
    config = SimConfig(horizon=args.horizon, replications=args.reps,
                       batch_size=args.batch_size, seed=args.sim_seed,
                       policy=args.policy)
    result = simulate(instance, bundle, config, threads=args.threads)
    if result.feasibility_violations:
        print(f"feasibility violations: {result.feasibility_violations}",
              file=sys.stderr)
        return EXIT_FEASIBILITY
    gap = result.r_rel - result.avg_reward_per_arm
    rows = [{
        "family": "file", "seed": args.sim_seed, "N": instance.num_arms,
        "policy": args.policy, "T": args.horizon, "reps": args.reps,
        "R_rel": result.r_rel, "avg_reward": result.avg_reward_per_arm,
        "ratio": result.optimality_ratio, "ci_halfwidth": result.ci_halfwidth,
        "gap": gap, "gap_sqrtN": gap * math.sqrt(instance.num_arms),
        "conforming_frac": result.mean_conforming_fraction,
        "violations": result.feasibility_violations,
    }]
    write_results_csv(rows, args.out)
    write_manifest(args.out, "simulate", vars(args), _instance_hash(instance))
    print(f"{args.policy}: avg={result.avg_reward_per_arm:.6f} "
          f"ratio={result.optimality_ratio:.4f} ci={result.ci_halfwidth:.2e}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    try:
        n_values = [int(v) for v in args.n_list.split(",")]
        policies = args.policies.split(",")
        template = _generator_config(
            argparse.Namespace(**{**vars(args), "n": n_values[0]}))
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    config = SimConfig(horizon=args.horizon, replications=args.reps,
                       batch_size=args.batch_size, seed=args.sim_seed)
    rows = sweep(template, n_values, config, policies=policies,
                 threads=args.threads)
    if any(r["violations"] for r in rows):
        print("budget violation detected during sweep", file=sys.stderr)
        return EXIT_FEASIBILITY
    write_results_csv(rows, args.out)
    write_manifest(args.out, "sweep", vars(args))
    if args.svg:
        Path(args.svg).write_text(ratio_chart_svg(rows))
        write_manifest(args.svg, "sweep", vars(args))
    for row in rows:
        print(f"N={row['N']:>5} {row['policy']:>4} ratio={row['ratio']:.4f} "
              f"gap*sqrtN={row['gap_sqrtN']:.4f}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    instance = _load_instance(args.instance)
    solution = solve_lp(build_lp(instance))
    policy = extract_policy(instance, solution)
    report = lyapunov.check_assumption(policy)
    if not report.ok and args.strict:
        print(f"assumption failure: arms {report.failing_arms()} are not "
              "aperiodic unichains", file=sys.stderr)
        return EXIT_ASSUMPTION
    if report.ok:
        diag = lyapunov.chain_diagnostics(instance, policy, t_cap=args.t_cap)
        payload = diag.to_json_dict()
    else:
        diag = None
        taus = [lyapunov.mixing_time(policy.induced_P[i], policy.mu_star[i],
                                     args.t_cap)
                for i in range(instance.num_arms)]
        payload = {
            "tau": [None if math.isinf(t) else int(t) for t in taus],
            "gamma": None, "C_tau": None, "L_h": None, "C_h": None,
            "unichain": report.unichain.tolist(),
            "aperiodic": report.aperiodic.tolist(),
        }
    payload["assumption_ok"] = report.ok
    if args.probe_drift and diag is not None:
        rng = np.random.default_rng(args.sim_seed)
        probe = lyapunov.drift_probe(instance, policy, diag,
                                     np.arange(instance.num_arms),
                                     args.samples, rng)
        payload["probes"] = [{
            "mean": probe.mean, "stderr": probe.stderr, "bound": probe.bound,
            "num_samples": probe.num_samples, "within_bound": probe.within_bound,
        }]
    Path(args.out).write_text(json.dumps(payload, indent=2))
    write_manifest(args.out, "diagnose", vars(args), _instance_hash(instance))
    if diag is not None:
        print(f"tau_max={diag.tau_max:.0f} gamma={diag.gamma:.6f} "
              f"assumption_ok={report.ok}")
    else:
        print(f"assumption_ok={report.ok}")
    return EXIT_OK


def cmd_compare(args) -> int:
    instance = _load_instance(args.instance)
    bundle = PolicyBundle.prepare(instance, seed=args.sim_seed)
    print(f"{'policy':>6} {'avg':>12} {'ratio':>8} {'ci':>10}")
    for kind in ("id", "erc"):
        config = SimConfig(horizon=args.horizon, replications=args.reps,
                           batch_size=args.batch_size, seed=args.sim_seed,
                           policy=kind)
        result = simulate(instance, bundle, config, threads=args.threads)
        if result.feasibility_violations:
            print("budget violation detected", file=sys.stderr)
            return EXIT_FEASIBILITY
        print(f"{kind:>6} {result.avg_reward_per_arm:12.6f} "
              f"{result.optimality_ratio:8.4f} {result.ci_halfwidth:10.2e}")
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    worst = -math.inf
    for seed in range(args.seeds):
        cfg = GeneratorConfig(seed=seed, num_arms=args.n,
                              num_states=args.states, num_actions=args.actions,
                              num_constraints=args.k)
        instance = generate(cfg)
        solution = solve_lp(build_lp(instance))
        try:
            r_star = exact_oracle(instance)
        except OracleSizeError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        margin = r_star - solution.objective
        worst = max(worst, margin)
        print(f"seed={seed}: R*={r_star:.8f} R_rel={solution.objective:.8f} "
              f"margin={margin:+.2e}")
    if worst > args.tol:
        print(f"upper bound violated by {worst:.2e} > {args.tol:.2e}",
              file=sys.stderr)
        return EXIT_VALIDATION
    print(f"upper bound holds for all {args.seeds} instances "
          f"(worst margin {worst:+.2e})")
    return EXIT_OK


def ratio_chart_svg(rows) -> str:
    """Line chart of optimality ratio vs N (log x), one polyline per policy."""
    width, height = 640, 420
    ml, mr, mt, mb = 70, 20, 20, 50
    policies = sorted({r["policy"] for r in rows})
    xs = sorted({r["N"] for r in rows})
    ys = [r["ratio"] for r in rows]
    y_lo = min(ys) - 0.01
    y_hi = max(1.0, max(ys)) + 0.01
    lx = [math.log(x) for x in xs]

    def px(n):
        if len(xs) == 1:
            return ml + (width - ml - mr) / 2
        f = (math.log(n) - lx[0]) / (lx[-1] - lx[0])
        return ml + f * (width - ml - mr)

    def py(v):
        f = (v - y_lo) / (y_hi - y_lo)
        return height - mb - f * (height - mt - mb)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{ml}" y1="{height - mb}" x2="{width - mr}" '
        f'y2="{height - mb}" stroke="black"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{height - mb}" stroke="black"/>',
    ]
    for n in xs:
        parts.append(f'<text x="{px(n):.1f}" y="{height - mb + 18}" '
                     f'font-size="12" text-anchor="middle">{n}</text>')
    for j in range(6):
        v = y_lo + j * (y_hi - y_lo) / 5
        parts.append(f'<text x="{ml - 8}" y="{py(v) + 4:.1f}" font-size="12" '
                     f'text-anchor="end">{v:.3f}</text>')
        parts.append(f'<line x1="{ml}" y1="{py(v):.1f}" x2="{width - mr}" '
                     f'y2="{py(v):.1f}" stroke="#dddddd"/>')
    for c, policy in enumerate(policies):
        pts = sorted((r["N"], r["ratio"]) for r in rows if r["policy"] == policy)
        path = " ".join(f"{px(n):.1f},{py(v):.1f}" for n, v in pts)
        color = colors[c % len(colors)]
        parts.append(f'<polyline points="{path}" fill="none" '
                     f'stroke="{color}" stroke-width="2"/>')
        for n, v in pts:
            parts.append(f'<circle cx="{px(n):.1f}" cy="{py(v):.1f}" r="3" '
                         f'fill="{color}"/>')
        parts.append(f'<text x="{width - mr - 5}" y="{mt + 16 * (c + 1)}" '
                     f'font-size="13" text-anchor="end" fill="{color}">'
                     f'{policy}</text>')
    parts.append(f'<text x="{(ml + width - mr) / 2:.0f}" y="{height - 10}" '
                 'font-size="13" text-anchor="middle">N (log scale)</text>')
    parts.append('</svg>')
    return "\n".join(parts)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wcmdp",
        description="Heterogeneous weakly-coupled MDP planning and simulation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a random instance file")
    _add_generation_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("solve", help="solve the LP relaxation of an instance")
    p.add_argument("--instance", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simulate", help="simulate one policy on an instance")
    p.add_argument("--instance", required=True)
    p.add_argument("--policy", choices=["id", "erc"], default="id")
    _add_sim_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="simulate policies across system sizes")
    _add_generation_flags(p)
    p.add_argument("--n-list", required=True, help="comma-separated sizes")
    p.add_argument("--policies", default="id", help="comma-separated policies")
    _add_sim_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--svg", default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("diagnose", help="mixing and drift diagnostics")
    p.add_argument("--instance", required=True)
    p.add_argument("--strict", action="store_true")
    p.add_argument("--probe-drift", action="store_true")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--t-cap", type=int, default=10000)
    p.add_argument("--sim-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("compare", help="run both policies on one instance")
    p.add_argument("--instance", required=True)
    _add_sim_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("oracle-check",
                       help="exact small-instance optimum vs the LP bound")
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--states", type=int, default=3)
    p.add_argument("--actions", type=int, default=2)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--tol", type=float, default=1e-6)
    p.set_defaults(func=cmd_oracle_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
