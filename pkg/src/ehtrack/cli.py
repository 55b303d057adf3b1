"""Command-line harness.

Subcommands: solve (build + RVIA, optional policy export), simulate (evaluate
one policy), sweep (run an experiment config), preset <name> (built-in figure
experiments), tune-gamma (grid search of the energy-aware regularizer).

Exit codes: 0 success, 1 configuration/usage error, 2 finished with per-point
failures recorded in the output CSV.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import replace
from pathlib import Path

from .belief_mdp import check_communicating
from .config import (
    ConfigError,
    apply_preset_overrides,
    load_config,
    parse_gamma_tuning,
    parse_model,
    parse_policy,
    parse_sim,
    parse_solver,
    parse_experiment,
)
from .experiments import (
    get_preset,
    run_experiment,
    run_structure,
    solve_instance,
    write_rows_csv,
    write_structure_csv,
)
from .model import ModelError
from .policies import (
    BoPolicy,
    BoRcPolicy,
    LcAgnosticPolicy,
    LcAwarePolicy,
    PomdpTablePolicy,
    default_gamma_grid,
    gamma_sweep,
)
from .sim import EpisodeConfig, evaluate_policy, run_episode, write_trace_csv
from .solver import export_policy_csv


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ehtrack",
        description="Belief-MDP solver and Monte Carlo simulator for "
                    "energy-harvesting status updating",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="YAML config file")
        p.add_argument("--out", help="output path")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                       help="worker processes for sweep points (default: all cores)")
        p.add_argument("--cache-dir", help="directory for belief-set/kernel/policy caches")

    p = sub.add_parser("solve", help="build and solve one instance by RVIA")
    common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simulate", help="evaluate one policy by Monte Carlo")
    common(p)
    p.add_argument("--trace", nargs="?", const="trace.csv", default=None,
                   help="write a per-slot trace of the first episode (optional path)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="run a one-axis experiment sweep")
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("preset", help="run a built-in figure experiment")
    p.add_argument("name", help="preset name (fig2..fig10)")
    common(p, config_required=False)
    p.set_defaults(func=cmd_preset)

    p = sub.add_parser("tune-gamma", help="grid-search the energy-aware regularizer")
    common(p)
    p.set_defaults(func=cmd_tune_gamma)
    return parser


def cmd_solve(args) -> int:
    cfg = load_config(args.config)
    params = parse_model(cfg)
    solver = parse_solver(cfg)
    bset, space, kernel, _, sol, tb, ts = solve_instance(
        params, solver["epsilon"], solver["max_iter"], solver["ref_state"],
        args.cache_dir,
    )
    ok, witness = check_communicating(kernel)
    print(f"beliefs:       {len(bset)}")
    print(f"states:        {len(space)}")
    print(f"communicating: {ok}" + ("" if ok else f"  (witness pair {witness})"))
    print(f"gain:          {sol.gain:.10g}")
    print(f"iterations:    {sol.iterations}")
    print(f"residual:      {sol.residual:.3e}")
    print(f"build/solve:   {tb:.2f}s / {ts:.2f}s")
    if args.out:
        export_policy_csv(args.out, space, sol)
        print(f"policy table written to {args.out}")
    return 0


def _build_policy(cfg, params, args, pol):
    """Policy object for the non-table kinds (cmd_simulate handles pomdp)."""
    if pol["kind"] == "lc_agnostic":
        return LcAgnosticPolicy(params)
    if pol["kind"] == "lc_aware":
        gamma = pol["gamma"]
        if gamma is None:
            g = parse_gamma_tuning(cfg.get("experiment", {}).get("gamma", {}) or {},
                                   "experiment.gamma")
            from .policies import tune_gamma

            gamma = tune_gamma(
                params, grid=g["grid"] or default_gamma_grid(params),
                horizon=g["horizon"], reps=g["reps"],
                base_seed=parse_sim(cfg)["seed"],
            )
            print(f"tuned gamma: {gamma:.10g}")
        return LcAwarePolicy(params, gamma=gamma)
    if pol["kind"] == "bo":
        return BoPolicy(params)
    return BoRcPolicy(params)


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    params = parse_model(cfg)
    pol = parse_policy(cfg)
    sim = parse_sim(cfg)
    if args.seed is not None:
        sim["seed"] = args.seed

    if pol["kind"] == "pomdp":
        solver = parse_solver(cfg)
        bset, space, _, _, sol, _, _ = solve_instance(
            params, solver["epsilon"], solver["max_iter"], solver["ref_state"],
            args.cache_dir,
        )
        policy = PomdpTablePolicy(params, space, bset, sol)
        print(f"solved: states={len(space)} gain={sol.gain:.10g}")
    else:
        policy = _build_policy(cfg, params, args, pol)

    ev = evaluate_policy(
        policy, params, sim["horizon"], sim["reps"], sim["seed"],
        warmup=sim["warmup"], belief_mode=sim["belief_mode"],
    )
    total_tx = sum(ep.transmissions for ep in ev.episodes)
    total_dl = sum(ep.deliveries for ep in ev.episodes)
    total_ack = sum(ep.ack_received for ep in ev.episodes)
    print(f"policy:     {policy.name}")
    print(f"mean cost:  {ev.mean:.6f}  (95% CI [{ev.ci_low:.6f}, {ev.ci_high:.6f}])")
    print(f"episodes:   {sim['reps']} x {sim['horizon']} slots, warmup {sim['warmup']}")
    print(f"tx/dl/ack:  {total_tx}/{total_dl}/{total_ack}")
    if args.trace:
        ep = run_episode(
            policy, params,
            EpisodeConfig(horizon=sim["horizon"], warmup=sim["warmup"],
                          seed=sim["seed"], belief_mode=sim["belief_mode"]),
            collect_trace=True,
        )
        write_trace_csv(args.trace, ep.trace)
        print(f"trace written to {args.trace}")
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["policy", "mean_cost", "ci_low", "ci_high",
                        "reps", "horizon", "warmup", "seed"])
            w.writerow([policy.name, f"{ev.mean:.10g}", f"{ev.ci_low:.10g}",
                        f"{ev.ci_high:.10g}", sim["reps"], sim["horizon"],
                        sim["warmup"], sim["seed"]])
        print(f"results written to {args.out}")
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    spec = parse_experiment(cfg)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    rows = run_experiment(spec, cache_dir=args.cache_dir, jobs=args.jobs)
    out = args.out or f"{spec.name}.csv"
    write_rows_csv(out, rows)
    failures = [r for r in rows if r.error]
    print(f"{len(rows)} rows written to {out}")
    for r in failures:
        print(f"point ({r.sweep_value}, {r.policy}) failed: {r.error}", file=sys.stderr)
    return 2 if failures else 0


def cmd_preset(args) -> int:
    preset = get_preset(args.name)
    overrides = load_config(args.config) if args.config else None
    out_dir = Path(args.out) if args.out else Path(".")
    if out_dir.suffix:  # a file path was given; use its parent
        out_dir = out_dir.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    had_failures = False
    for label, spec in preset.sweeps:
        if overrides:
            spec = apply_preset_overrides(spec, overrides)
        if args.seed is not None:
            spec = replace(spec, seed=args.seed)
        rows = run_experiment(spec, cache_dir=args.cache_dir, jobs=args.jobs)
        suffix = f"_{label}" if label else ""
        path = out_dir / f"{preset.name}{suffix}.csv"
        write_rows_csv(path, rows)
        failures = [r for r in rows if r.error]
        had_failures = had_failures or bool(failures)
        print(f"{len(rows)} rows written to {path}")
        for r in failures:
            print(f"point ({r.sweep_value}, {r.policy}) failed: {r.error}",
                  file=sys.stderr)
    for label, sspec in preset.structures:
        if overrides:
            sspec = apply_preset_overrides(sspec, overrides)
        if args.seed is not None:
            sspec = replace(sspec, seed=args.seed)
        header, rows = run_structure(sspec, cache_dir=args.cache_dir)
        suffix = f"_{label}" if label else ""
        path = out_dir / f"{preset.name}{suffix}.csv"
        write_structure_csv(path, header, rows)
        print(f"{len(rows)} structure rows written to {path}")
    return 2 if had_failures else 0


def cmd_tune_gamma(args) -> int:
    cfg = load_config(args.config)
    params = parse_model(cfg)
    g = parse_gamma_tuning(cfg.get("experiment", {}).get("gamma", {}) or {},
                           "experiment.gamma")
    seed = args.seed if args.seed is not None else parse_sim(cfg)["seed"]
    grid = g["grid"] or default_gamma_grid(params)
    rows = gamma_sweep(params, grid, g["horizon"], g["reps"], seed)
    means = [ev.mean for _, ev in rows]
    best = rows[means.index(min(means))][0]
    print(f"{'gamma':>10} {'mean_cost':>12} {'ci_low':>12} {'ci_high':>12}")
    for gval, ev in rows:
        print(f"{gval:>10.4g} {ev.mean:>12.6f} {ev.ci_low:>12.6f} {ev.ci_high:>12.6f}")
    print(f"best gamma: {best:.10g}")
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["gamma", "mean_cost", "ci_low", "ci_high"])
            for gval, ev in rows:
                w.writerow([f"{gval:.10g}", f"{ev.mean:.10g}",
                            f"{ev.ci_low:.10g}", f"{ev.ci_high:.10g}"])
        print(f"results written to {args.out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
