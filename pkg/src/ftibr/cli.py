"""Command-line entry point.

    ftibr run <config> -o <dir> [--decimate N] [--full-rate] [--svg]
    ftibr solve <config> [--beta B1,B2,...] [--p-a W] [--q-a VAR]
    ftibr compare <config> -o <dir> [--arms A,B] [--decimate N] [--svg]
    ftibr scenarios

``<config>`` is a TOML path or the name of a bundled scenario.
Exit codes: 0 ok, 2 config error, 3 numerical divergence, 4 allocator
did not converge.
"""
import argparse
import json
import sys
import time
from dataclasses import replace
from importlib import metadata
from pathlib import Path

import numpy as np

from . import allocator as alloc
from . import report, scenario, sim_engine
from .errors import BadTau, ConfigError, DisconnectedGraph, NoConvergence, NumericalDivergence
from .graph_core import build_topology

EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_NO_CONVERGENCE = 4


def tool_version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0.0.0"


def _load(config, decimate=None, full_rate=False):
    cfg = scenario.load(config)
    if full_rate:
        cfg = replace(cfg, record_every=1)
    elif decimate is not None:
        if decimate < 1:
            raise ConfigError("--decimate", "must be at least 1")
        cfg = replace(cfg, record_every=decimate)
    return cfg


def _write_run(result, out_dir, manifest, prefix="", svg=False):
    manifest.add(out_dir / f"{prefix}timeseries.csv", report.timeseries_csv(result).encode())
    manifest.add(out_dir / f"{prefix}metrics.json", report.metrics_json(result.metrics).encode())
    manifest.add(out_dir / f"{prefix}allocator_trace.csv",
                 report.trace_csv(result.allocator_trace).encode())
    if svg:
        manifest.add(out_dir / f"{prefix}power.svg", report.power_split_svg(result).encode())
        manifest.add(out_dir / f"{prefix}currents.svg", report.current_svg(result).encode())


def cmd_run(config, out_dir, decimate=None, full_rate=False, svg=False):
    start = time.perf_counter()
    cfg = _load(config, decimate, full_rate)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = sim_engine.run(cfg)
    manifest = report.RunManifest(str(config), str(out_dir), tool_version())
    _write_run(result, out_dir, manifest, svg=svg)
    manifest.wall_clock_s = time.perf_counter() - start
    (out_dir / "manifest.json").write_text(manifest.to_json(), encoding="utf-8")
    return manifest, result


def _parse_floats(text, name):
    try:
        return [float(x) for x in text.split(",")]
    except ValueError as exc:
        raise ConfigError(name, f"expected comma-separated numbers, got {text!r}") from exc


def cmd_solve(config, beta=None, p_a=None, q_a=None, max_iters=None, tol=None):
    """Offline allocator solve with a centralized comparison."""
    cfg = scenario.load(config)
    n = cfg.n_ibrs
    if beta is None:
        beta = list(cfg.solve_beta) or [cfg.beta_nominal] * n
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (n,) or np.any(beta <= 0):
        raise ConfigError("solve.beta", f"needs {n} positive entries")
    p_a = cfg.p_a_watt if p_a is None else float(p_a)
    q_a = cfg.q_a_var if q_a is None else float(q_a)
    max_iters = cfg.solve_max_iters if max_iters is None else int(max_iters)
    tol = cfg.solve_tol if tol is None else float(tol)

    topology = build_topology(cfg.edges, n, cfg.tau or None)
    cost = alloc.CostSpec(mu=cfg.cost_mu, L_smooth=cfg.cost_l_smooth)
    state = alloc.AllocatorState.initial(n, cfg.alpha, beta=beta)
    state = alloc.solve(state, topology, p_a, q_a, max_iters=max_iters, tol=tol, cost=cost)
    p_kkt = alloc.kkt_oracle(beta, p_a)
    q_kkt = alloc.kkt_oracle(beta, q_a)
    per_node = [alloc.contraction_coefficient(cfg.alpha, cost, float(b)) for b in beta]
    return {
        "n_nodes": n,
        "beta": beta.tolist(),
        "alpha": cfg.alpha,
        "tau": topology.tau,
        "p_a": p_a,
        "q_a": q_a,
        "p": state.p.tolist(),
        "q": state.q.tolist(),
        "lambda": state.lam.tolist(),
        "nu": state.nu.tolist(),
        "iterations": state.iter,
        "converged": state.converged,
        "sum_p": float(state.p.sum()),
        "sum_q": float(state.q.sum()),
        "residual_p": state.residual_p,
        "residual_q": state.residual_q,
        "contraction_per_node": per_node,
        "contraction_worst": max(per_node),
        "kkt_p": p_kkt.tolist(),
        "kkt_q": q_kkt.tolist(),
        "deviation_from_kkt_p": float(np.max(np.abs(state.p - p_kkt))),
        "deviation_from_kkt_q": float(np.max(np.abs(state.q - q_kkt))),
    }


def _arm_summary(metrics):
    ev = metrics["events"][0] if metrics["events"] else None
    return {
        "splitter": metrics["splitter"],
        "initial_settling_time_s": metrics["initial"]["settling_time_s"],
        "max_abs_deviation_after_event_pu": None if ev is None else ev["max_abs_deviation_pu"],
        "settling_time_after_event_s": None if ev is None else ev["settling_time_s"],
        "final_split": metrics["splits"]["final"],
        "pre_event_split": metrics["splits"]["pre_event"],
    }


def cmd_compare(config, out_dir, arms=scenario.SPLITTERS, decimate=None, svg=False):
    start = time.perf_counter()
    base = _load(config, decimate)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = report.RunManifest(str(config), str(out_dir), tool_version())
    summaries = []
    for n, arm in enumerate(arms):
        cfg = scenario.with_overrides(base, splitter=arm)
        result = sim_engine.run(cfg)
        _write_run(result, out_dir, manifest, prefix=f"arm{n + 1}_{arm}_", svg=svg)
        summaries.append(_arm_summary(result.metrics))
    first, second = summaries[0], summaries[1]
    no_event = not base.events
    comparison = {
        "scenario": base.name,
        "no_event": no_event,
        "arms": summaries,
        "first_settles_no_later": (
            None if no_event else _no_later(first["settling_time_after_event_s"],
                                            second["settling_time_after_event_s"])
        ),
        "identical_metrics": first == second,
    }
    manifest.add(out_dir / "comparison.json", report.metrics_json(comparison).encode())
    manifest.wall_clock_s = time.perf_counter() - start
    (out_dir / "manifest.json").write_text(manifest.to_json(), encoding="utf-8")
    return comparison


def _no_later(a, b):
    if a is None:
        return b is None
    return b is None or a <= b


def format_comparison(comparison):
    lines = [f"scenario: {comparison['scenario']}"
             + ("  (no event)" if comparison["no_event"] else "")]
    lines.append(f"{'metric':<36}" + "".join(f"{a['splitter']:>20}" for a in comparison["arms"]))
    for key in ("initial_settling_time_s", "max_abs_deviation_after_event_pu",
                "settling_time_after_event_s"):
        cells = "".join(
            f"{'-' if a[key] is None else format(a[key], '.6g'):>20}" for a in comparison["arms"]
        )
        lines.append(f"{key:<36}{cells}")
    for a in comparison["arms"]:
        split = ", ".join(f"{x:.4f}" for x in a["final_split"])
        lines.append(f"final split [{a['splitter']}]: {split}")
    return "\n".join(lines)


def build_parser():
    parser = argparse.ArgumentParser(prog="ftibr", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=tool_version())
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="simulate a scenario and write CSV/metrics")
    run_p.add_argument("config")
    run_p.add_argument("-o", "--out", required=True)
    run_p.add_argument("--decimate", type=int, default=None, help="record every N-th step")
    run_p.add_argument("--full-rate", action="store_true", help="record every step")
    run_p.add_argument("--svg", action="store_true", help="also write SVG charts")

    solve_p = sub.add_parser("solve", help="offline allocator solve")
    solve_p.add_argument("config")
    solve_p.add_argument("--beta", default=None, help="comma-separated penalties")
    solve_p.add_argument("--p-a", type=float, default=None)
    solve_p.add_argument("--q-a", type=float, default=None)
    solve_p.add_argument("--max-iters", type=int, default=None)
    solve_p.add_argument("--tol", type=float, default=None)

    cmp_p = sub.add_parser("compare", help="decentralized vs baseline splitter")
    cmp_p.add_argument("config")
    cmp_p.add_argument("-o", "--out", required=True)
    cmp_p.add_argument("--arms", default=",".join(scenario.SPLITTERS))
    cmp_p.add_argument("--decimate", type=int, default=None)
    cmp_p.add_argument("--svg", action="store_true")

    sub.add_parser("scenarios", help="list bundled scenarios")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            manifest, result = cmd_run(args.config, args.out, args.decimate,
                                       args.full_rate, args.svg)
            print(report.metrics_json(result.metrics), end="")
            print(f"wrote {len(manifest.files)} files to {manifest.out_dir}")
        elif args.command == "solve":
            beta = None if args.beta is None else _parse_floats(args.beta, "--beta")
            out = cmd_solve(args.config, beta, args.p_a, args.q_a, args.max_iters, args.tol)
            print(json.dumps(out, indent=2))
        elif args.command == "compare":
            arms = tuple(a.strip() for a in args.arms.split(","))
            if len(arms) != 2 or any(a not in scenario.SPLITTERS for a in arms):
                raise ConfigError("--arms", f"need two of {scenario.SPLITTERS}")
            comparison = cmd_compare(args.config, args.out, arms, args.decimate, args.svg)
            print(format_comparison(comparison))
        elif args.command == "scenarios":
            print("\n".join(scenario.bundled_scenarios()))
    except (ConfigError, DisconnectedGraph, BadTau) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalDivergence as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except NoConvergence as exc:
        print(f"no convergence: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    return 0


if __name__ == "__main__":
    sys.exit(main())
