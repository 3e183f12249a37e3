"""Command-line interface.

Subcommands: topology, bound, feasibility, simulate, sweep, plot-data.
Exit codes: 0 on success, 2 for configuration/input errors, 1 for
unexpected runtime faults.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

from . import experiments
from .analytic import MacParams, renewal_time, slot_probabilities, throughput_bound
from .errors import ConfigurationError, GeometryError, NotAHelperError
from .schemes import (
    SchemeKind,
    feasibility,
    max_direct_rate,
    max_supported_rate,
)
from .simulator import SimConfig, Simulation, StopRule
from .topology import (
    ChannelParams,
    build_rate_table,
    generate_topology,
    load_topology,
    save_topology,
)

_SCHEME_CHOICES = [s.value for s in SchemeKind]


def _topology_from_args(args) -> tuple:
    if args.load:
        topo = load_topology(args.load)
    else:
        if args.n is None:
            raise ConfigurationError("give either --load FILE or --n (with --seed)")
        topo = generate_topology(args.n, args.seed)
    return topo


def _channel_from_args(args) -> ChannelParams:
    return ChannelParams(tx_snr=args.tx_snr, gamma=args.gamma)


def _add_topology_source(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--load", metavar="FILE", help="read a topology file")
    parser.add_argument("--n", type=int, help="number of nodes to generate")
    parser.add_argument("--seed", type=int, default=0, help="topology seed (default 0)")
    parser.add_argument("--tx-snr", type=float, default=10.0,
                        help="linear transmit SNR at unit distance (default 10)")
    parser.add_argument("--gamma", type=float, default=2.0,
                        help="pathloss exponent (default 2)")


def cmd_topology(args) -> int:
    topo = _topology_from_args(args)
    params = _channel_from_args(args)
    rates = build_rate_table(topo, params)
    dist = topo.ap_distances()
    info = {
        "n": topo.n,
        "seed": topo.seed,
        "max_distance": float(dist.max()),
        "min_distance": float(dist.min()),
        "min_direct_rate": float(rates.direct.min()),
        "max_direct_rate_node": float(rates.direct.max()),
        "common_direct_target": max_direct_rate(rates),
    }
    if args.out:
        save_topology(topo, args.out)
        info["written"] = args.out
    if args.plot:
        from .plotting import save_topology_figure

        save_topology_figure(topo, args.plot, title=f"{topo.n} nodes")
        info["figure"] = args.plot
    if args.json:
        print(json.dumps(info, sort_keys=True))
    else:
        for key, val in info.items():
            print(f"{key}: {val}")
    return 0


def cmd_bound(args) -> int:
    params = MacParams(n=args.n, tau=args.tau, sigma=args.sigma)
    probs = slot_probabilities(params)
    out = {
        "n": args.n,
        "tau": args.tau,
        "sigma": args.sigma,
        "d": args.d,
        "p_success": probs.success,
        "p_idle": probs.idle,
        "p_collision": probs.collision,
        "cycle_time": renewal_time(params),
        "throughput_bound": throughput_bound(args.d, params),
    }
    if args.json:
        print(json.dumps(out, sort_keys=True))
    else:
        for key, val in out.items():
            print(f"{key}: {val}")
    return 0


def cmd_feasibility(args) -> int:
    topo = _topology_from_args(args)
    rates = build_rate_table(topo, _channel_from_args(args))
    scheme = SchemeKind(args.scheme)
    report = feasibility(rates, args.d, scheme)
    out = report.to_dict()
    out["max_supported_rate"] = max_supported_rate(rates, scheme)
    out["common_direct_target"] = max_direct_rate(rates)
    if args.json:
        print(json.dumps(out, sort_keys=True))
    else:
        print(f"scheme: {scheme}  d: {args.d}")
        for k in range(topo.n):
            cls = out["classes"][k]
            helpers = out["helper_sets"].get(k, [])
            extra = f"  helpers={helpers}" if helpers else ""
            print(f"node {k}: {cls}{extra}")
        print(f"helpers H: {out['helpers']}")
        print(f"helped C: {out['helped']}")
        print(f"unsupported: {out['unsupported']}")
        print(f"max supported rate: {out['max_supported_rate']}")
    return 0


def cmd_simulate(args) -> int:
    topo = _topology_from_args(args)
    rates = build_rate_table(topo, _channel_from_args(args))
    if args.sim_time is not None:
        stop = StopRule(sim_time=args.sim_time)
    else:
        stop = StopRule(deliveries=args.deliveries)
    cfg = SimConfig(
        scheme=SchemeKind(args.scheme),
        d=args.d,
        stop=stop,
        q_limit=args.q,
        tau=args.tau,
        sigma=args.sigma,
        seed=args.sim_seed,
        engine=args.engine,
    )
    sim = Simulation(cfg, topo, rates)
    if args.log:
        with open(args.log, "w", encoding="utf-8") as fh:
            report = sim.run(trace=lambda ev: fh.write(json.dumps(ev.to_dict()) + "\n"))
    else:
        report = sim.run()
    out = report.to_dict()
    out["bound"] = throughput_bound(args.d, MacParams(n=topo.n, tau=args.tau, sigma=args.sigma))
    if args.json:
        print(json.dumps(out, sort_keys=True))
    else:
        keys = [
            "scheme", "d", "n", "seed", "engine", "stop_reason", "elapsed_time",
            "idle_slots", "success_slots", "collision_slots", "deliveries",
            "min_throughput", "bound", "peak_obligation_memory",
        ]
        for key in keys:
            print(f"{key}: {out[key]}")
        print(f"per_node_throughput: {out['per_node_throughput']}")
        print(f"per_node_tx_count: {out['per_node_tx_count']}")
    return 0


def _spec_from_args(args) -> experiments.SweepSpec:
    data: dict = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigurationError(f"invalid JSON in {args.config}: {exc}") from exc
    if args.variable is not None:
        data["variable"] = args.variable
    if args.values is not None:
        data["values"] = [float(v) for v in args.values.split(",") if v]
    if args.schemes is not None:
        data["schemes"] = [s.strip() for s in args.schemes.split(",") if s.strip()]
    if args.replications is not None:
        data["replications"] = args.replications
    if args.workers is not None:
        data["workers"] = args.workers

    fixed = dict(data.get("fixed", {}))
    overrides = {
        "n": args.n,
        "topology_seed": args.topology_seed,
        "vary_topology": args.vary_topology,
        "tx_snr": args.tx_snr,
        "gamma": args.gamma,
        "tau": args.tau,
        "sigma": args.sigma,
        "q_limit": args.q,
        "d": args.d,
        "optimize_d": args.optimize_d,
        "d_grid_points": args.grid_points,
        "stop_deliveries": args.deliveries,
        "master_seed": args.master_seed,
        "engine": args.engine,
    }
    for key, val in overrides.items():
        if val is not None:
            fixed[key] = val
    if fixed:
        data["fixed"] = fixed
    if "variable" not in data or "values" not in data or "schemes" not in data:
        raise ConfigurationError(
            "sweep needs variable, values and schemes (from --config or flags)"
        )
    return experiments.SweepSpec.from_dict(data)


def cmd_sweep(args) -> int:
    spec = experiments.resolve_spec(_spec_from_args(args))
    records = experiments.run_sweep(spec)
    if args.out:
        experiments.write_csv(records, spec, args.out)
        print(f"wrote {len(records)} records to {args.out}", file=sys.stderr)
    else:
        experiments.write_csv(records, spec, sys.stdout)
    return 0


def cmd_plot_data(args) -> int:
    _, rows = experiments.read_csv(args.results)
    if not rows:
        raise ConfigurationError(f"no data rows in {args.results}")
    agg = experiments.aggregate(rows)
    if args.out:
        experiments.write_aggregate_csv(agg, args.out)
    else:
        experiments.write_aggregate_csv(agg, sys.stdout)
    fig_path = args.plot
    if fig_path is None and not args.no_plot and args.out:
        stem = args.out[:-4] if args.out.endswith(".csv") else args.out
        fig_path = stem + ".png"
    if fig_path and not args.no_plot:
        from .plotting import save_gain_figure

        save_gain_figure(agg, fig_path)
        print(f"wrote figure to {fig_path}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coopsim",
        description="Cooperative random-access uplink: simulator and analysis tools",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("topology", help="generate or inspect a topology")
    _add_topology_source(p)
    p.add_argument("-o", "--out", metavar="FILE", help="write the topology file")
    p.add_argument("--plot", metavar="PNG", help="render the layout to a figure")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_topology)

    p = sub.add_parser("bound", help="print contention probabilities and throughput bound")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--tau", type=float, default=0.001)
    p.add_argument("--sigma", type=float, default=0.002)
    p.add_argument("--d", type=float, default=1.0, help="target rate (default 1)")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("feasibility", help="helper sets and support classification")
    _add_topology_source(p)
    p.add_argument("--d", type=float, required=True, help="target rate")
    p.add_argument("--scheme", choices=_SCHEME_CHOICES, required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_feasibility)

    p = sub.add_parser("simulate", help="run one simulation")
    _add_topology_source(p)
    p.add_argument("--scheme", choices=_SCHEME_CHOICES, required=True)
    p.add_argument("--d", type=float, required=True, help="target rate")
    p.add_argument("--q", type=int, default=100, help="unacknowledged-packet limit")
    p.add_argument("--tau", type=float, default=0.001)
    p.add_argument("--sigma", type=float, default=0.002)
    p.add_argument("--sim-seed", type=int, default=0)
    p.add_argument("--deliveries", type=int, default=100_000,
                   help="stop after this many delivered packets (default 100000)")
    p.add_argument("--sim-time", type=float, help="stop after this much simulated time")
    p.add_argument("--engine", choices=["renewal", "slotted"], default="renewal")
    p.add_argument("--log", metavar="FILE", help="write one JSON line per busy event")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="run a parameter sweep, write a CSV")
    p.add_argument("-c", "--config", metavar="FILE", help="JSON sweep configuration")
    p.add_argument("-o", "--out", metavar="CSV", help="output path (default stdout)")
    p.add_argument("--variable", choices=experiments.SWEEP_VARIABLES)
    p.add_argument("--values", help="comma-separated sweep values")
    p.add_argument("--schemes", help="comma-separated scheme names")
    p.add_argument("--replications", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--topology-seed", type=int)
    p.add_argument("--vary-topology", action=argparse.BooleanOptionalAction)
    p.add_argument("--tx-snr", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--q", type=int)
    p.add_argument("--d", type=float)
    p.add_argument("--optimize-d", action=argparse.BooleanOptionalAction)
    p.add_argument("--grid-points", type=int)
    p.add_argument("--deliveries", type=int)
    p.add_argument("--master-seed", type=int)
    p.add_argument("--engine", choices=["renewal", "slotted"])
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("plot-data", help="aggregate a sweep CSV and render a figure")
    p.add_argument("results", help="sweep CSV produced by the sweep command")
    p.add_argument("-o", "--out", metavar="CSV", help="aggregated CSV (default stdout)")
    p.add_argument("--plot", metavar="PNG", help="figure path (default: alongside --out)")
    p.add_argument("--no-plot", action="store_true", help="skip figure rendering")
    p.set_defaults(func=cmd_plot_data)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, GeometryError, NotAHelperError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - unexpected faults
        print(f"runtime fault: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
