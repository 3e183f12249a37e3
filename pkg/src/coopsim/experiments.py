"""Configuration-driven experiment sweeps.

A sweep varies one knob (transmit SNR, target rate, unacknowledged-packet
limit, or node count), runs the simulator per point x scheme x replication,
and emits gain records against a direct-link baseline operated at its own
best target rate (the largest rate every node meets directly).

All randomness is derived from one master seed through explicit key paths,
so a sweep is reproducible byte-for-byte regardless of worker count or
execution order.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import IO, Iterable, Sequence

import numpy as np

from .analytic import MacParams, throughput_bound
from .errors import ConfigurationError
from .schemes import (
    SchemeKind,
    feasibility,
    helper_map,
    max_direct_rate,
    max_supported_rate,
)
from .simulator import SimConfig, Simulation, StopRule
from .topology import ChannelParams, RateTable, Topology, build_rate_table, generate_topology

SWEEP_VARIABLES = ("tx_snr", "d", "q_limit", "n")

# key-path roles for seed derivation
_ROLE_TOPOLOGY = 0
_ROLE_SIM = 1
_ROLE_BASELINE = 2

CSV_COLUMNS = [
    "variable",
    "value",
    "scheme",
    "replication",
    "n",
    "topology_seed",
    "sim_seed",
    "baseline_seed",
    "d",
    "baseline_d",
    "min_throughput",
    "baseline_min_throughput",
    "gain_percent",
    "bound",
    "baseline_bound",
    "regime",
    "note",
]

AGGREGATE_COLUMNS = [
    "variable",
    "value",
    "scheme",
    "replications",
    "gain_percent_mean",
    "gain_percent_se",
    "min_throughput_mean",
    "min_throughput_se",
    "baseline_mean",
    "bound_mean",
    "regime_mode",
    "errors",
]


class Regime(Enum):
    BOUND_TRACKING = "bound_tracking"
    MAC_DEGRADED = "mac_degraded"
    UNSUPPORTED = "unsupported"

    def __str__(self) -> str:
        return self.value


def derive_seed(master_seed: int, *tags: int) -> int:
    """Deterministic child seed from a master seed and an explicit key path.

    The path length is folded in because trailing zero entropy words do not
    change a SeedSequence state.
    """
    ss = np.random.SeedSequence(
        [int(master_seed), len(tags)] + [int(t) + 1 for t in tags]
    )
    return int(ss.generate_state(1, np.uint64)[0])


def classify_regime(
    measured: float, bound: float, all_supported: bool, tol: float = 0.05
) -> Regime:
    """Label a sweep point: unsupported if some node cannot reach the target
    at all, bound-tracking if the measurement sits within ``tol`` of the
    analytic bound, MAC-degraded otherwise."""
    if not bound > 0:
        raise ConfigurationError(f"bound must be > 0, got {bound}")
    if not all_supported:
        return Regime.UNSUPPORTED
    if measured >= (1.0 - tol) * bound:
        return Regime.BOUND_TRACKING
    return Regime.MAC_DEGRADED


@dataclass(frozen=True)
class BaselineResult:
    """Direct-link operating point: best common target rate, the simulated
    min-throughput there, and the analytic value alongside."""

    d_star: float
    min_throughput: float
    bound: float


@dataclass(frozen=True)
class OptimumResult:
    d: float
    min_throughput: float
    # (d, measured min-throughput, bound) per grid point, ascending d
    evaluations: tuple[tuple[float, float, float], ...]


def baseline_direct(
    topology: Topology,
    rates: RateTable,
    *,
    tau: float = 0.001,
    sigma: float = 0.002,
    stop_deliveries: int = 100_000,
    seed: int = 0,
    engine: str = "renewal",
) -> BaselineResult:
    """Simulate direct-link at its own best target rate ``min_k R_k``."""
    d_star = max_direct_rate(rates)
    if not d_star > 0:
        raise ConfigurationError("baseline target rate is not positive")
    cfg = SimConfig(
        scheme=SchemeKind.DIRECT_LINK,
        d=d_star,
        stop=StopRule(deliveries=stop_deliveries),
        q_limit=1,
        tau=tau,
        sigma=sigma,
        seed=seed,
        engine=engine,
    )
    report = Simulation(cfg, topology, rates).run()
    bound = throughput_bound(d_star, MacParams(n=rates.n, tau=tau, sigma=sigma))
    return BaselineResult(d_star=d_star, min_throughput=report.min_throughput, bound=bound)


def geometric_grid(lo: float, hi: float, points: int) -> list[float]:
    """Geometric grid including both endpoints; collapses when hi <= lo."""
    if points < 1:
        raise ConfigurationError(f"need at least one grid point, got {points}")
    if not lo > 0:
        raise ConfigurationError(f"grid start must be > 0, got {lo}")
    if hi <= lo or points == 1:
        return [lo]
    return [float(x) for x in np.geomspace(lo, hi, points)]


def optimize_target_rate(
    topology: Topology,
    rates: RateTable,
    scheme: SchemeKind,
    *,
    tau: float = 0.001,
    sigma: float = 0.002,
    q_limit: int = 100,
    d_grid: Sequence[float],
    stop_deliveries: int = 100_000,
    seed: int = 0,
    engine: str = "renewal",
) -> OptimumResult:
    """Simulate every target rate in ``d_grid`` and return the argmax by
    measured min-throughput, ties broken toward the smaller rate.

    All grid points share one seed (common random numbers), so two rates
    with identical support/helper structure produce the identical event
    trajectory and are evaluated from one run.
    """
    if len(d_grid) == 0:
        raise ConfigurationError("d_grid must be non-empty")
    grid = sorted(float(d) for d in d_grid)
    mac = MacParams(n=rates.n, tau=tau, sigma=sigma)
    cache: dict = {}
    best_d = None
    best_mt = -1.0
    evaluations = []
    for d in grid:
        supported = rates.direct >= d
        hmap = helper_map_signature(rates, d, scheme)
        key = (supported.tobytes(), hmap)
        res = cache.get(key)
        if res is None:
            cfg = SimConfig(
                scheme=scheme,
                d=d,
                stop=StopRule(deliveries=stop_deliveries),
                q_limit=q_limit,
                tau=tau,
                sigma=sigma,
                seed=seed,
                engine=engine,
            )
            report = Simulation(cfg, topology, rates).run()
            res = (min(report.per_node_delivered_count), report.elapsed_time)
            cache[key] = res
        min_count, elapsed = res
        mt = min_count * d / elapsed if elapsed > 0 else 0.0
        evaluations.append((d, mt, throughput_bound(d, mac)))
        if mt > best_mt:
            best_d, best_mt = d, mt
    return OptimumResult(d=best_d, min_throughput=best_mt, evaluations=tuple(evaluations))


def helper_map_signature(rates: RateTable, d: float, scheme: SchemeKind):
    """Hashable token of the support/helper structure at target ``d``; runs
    with equal tokens (and equal seed, q, stop) have identical trajectories."""
    return tuple(sorted(helper_map(rates, d, scheme).items()))


@dataclass(frozen=True)
class SweepDefaults:
    """Fixed parameters of a sweep; the swept variable overrides its field."""

    n: int = 20
    topology_seed: int = 1
    vary_topology: bool | None = None  # default: True for tx_snr / n sweeps
    tx_snr: float = 10.0
    gamma: float = 2.0
    tau: float = 0.001
    sigma: float = 0.002
    q_limit: int = 100
    d: float | None = None
    optimize_d: bool | None = None  # default: True for tx_snr / n sweeps
    d_grid_points: int = 40
    stop_deliveries: int = 100_000
    master_seed: int = 0
    engine: str = "renewal"
    regime_tolerance: float = 0.05


@dataclass(frozen=True)
class SweepSpec:
    variable: str
    values: tuple[float, ...]
    schemes: tuple[SchemeKind, ...]
    replications: int = 1
    fixed: SweepDefaults = field(default_factory=SweepDefaults)
    workers: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(
            self,
            "schemes",
            tuple(s if isinstance(s, SchemeKind) else SchemeKind(s) for s in self.schemes),
        )

    def to_dict(self) -> dict:
        out = asdict(self)
        out["values"] = list(self.values)
        out["schemes"] = [str(s) for s in self.schemes]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SweepSpec":
        data = dict(data)
        fixed = data.pop("fixed", {})
        if not isinstance(fixed, SweepDefaults):
            known = {f for f in SweepDefaults.__dataclass_fields__}
            bad = set(fixed) - known
            if bad:
                raise ConfigurationError(f"unknown fixed parameters: {sorted(bad)}")
            fixed = SweepDefaults(**fixed)
        known = {f for f in cls.__dataclass_fields__}
        bad = set(data) - known
        if bad:
            raise ConfigurationError(f"unknown sweep parameters: {sorted(bad)}")
        return cls(fixed=fixed, **data)


def resolve_spec(spec: SweepSpec) -> SweepSpec:
    """Validate a spec and fill the variable-dependent defaults."""
    if spec.variable not in SWEEP_VARIABLES:
        raise ConfigurationError(
            f"variable must be one of {SWEEP_VARIABLES}, got {spec.variable!r}"
        )
    if not spec.values:
        raise ConfigurationError("values must be non-empty")
    if list(spec.values) != sorted(spec.values):
        raise ConfigurationError("values must be sorted ascending")
    if not spec.schemes:
        raise ConfigurationError("schemes must be non-empty")
    if spec.replications < 1:
        raise ConfigurationError(f"replications must be >= 1, got {spec.replications}")
    if spec.workers < 1:
        raise ConfigurationError(f"workers must be >= 1, got {spec.workers}")
    if spec.variable in ("q_limit", "n"):
        for v in spec.values:
            if v != int(v) or v < 1:
                raise ConfigurationError(f"{spec.variable} values must be integers >= 1")

    by_position = spec.variable in ("tx_snr", "n")
    fixed = spec.fixed
    if fixed.vary_topology is None:
        fixed = replace(fixed, vary_topology=by_position)
    if fixed.optimize_d is None:
        fixed = replace(fixed, optimize_d=by_position)

    if spec.variable == "d" and fixed.optimize_d:
        raise ConfigurationError("a target-rate sweep cannot also optimize d")
    if spec.variable != "d" and not fixed.optimize_d and fixed.d is None:
        raise ConfigurationError("fixed.d is required when optimize_d is off")
    return replace(spec, fixed=fixed)


@dataclass(frozen=True)
class GainRecord:
    variable: str
    value: float
    scheme: str
    replication: int
    n: int
    topology_seed: int
    sim_seed: int
    baseline_seed: int
    d: float
    baseline_d: float
    min_throughput: float
    baseline_min_throughput: float
    gain_percent: float
    bound: float
    baseline_bound: float
    regime: str
    note: str = ""


def _point_inputs(spec: SweepSpec, j: int, r: int):
    """Topology and rates for sweep point ``j``, replication ``r``."""
    fx = spec.fixed
    value = spec.values[j]
    n = int(value) if spec.variable == "n" else fx.n
    tx_snr = value if spec.variable == "tx_snr" else fx.tx_snr
    if fx.vary_topology:
        topo_seed = derive_seed(fx.master_seed, _ROLE_TOPOLOGY, r)
    else:
        topo_seed = fx.topology_seed
    topo = generate_topology(n, topo_seed)
    rates = build_rate_table(topo, ChannelParams(tx_snr=tx_snr, gamma=fx.gamma))
    return topo, rates, topo_seed, n


def _baseline_key_depends_on_point(spec: SweepSpec) -> bool:
    return spec.variable in ("tx_snr", "n")


def _run_point(args) -> GainRecord:
    spec, j, s_idx, r, shared_baseline = args
    fx = spec.fixed
    value = spec.values[j]
    scheme = spec.schemes[s_idx]
    n = int(value) if spec.variable == "n" else fx.n
    if fx.vary_topology:
        topo_seed = derive_seed(fx.master_seed, _ROLE_TOPOLOGY, r)
    else:
        topo_seed = fx.topology_seed
    sim_seed = derive_seed(fx.master_seed, _ROLE_SIM, j, s_idx, r)
    q_limit = int(value) if spec.variable == "q_limit" else fx.q_limit
    mac = MacParams(n=n, tau=fx.tau, sigma=fx.sigma)

    nan = float("nan")
    d = mt = bound = gain = nan
    base = BaselineResult(d_star=nan, min_throughput=nan, bound=nan)
    baseline_seed = -1
    regime = "error"
    note = ""
    try:
        topo, rates, topo_seed, n = _point_inputs(spec, j, r)
        if shared_baseline is not None:
            baseline_seed, base = shared_baseline[r]
            if isinstance(base, ConfigurationError):
                raise base
        else:
            baseline_seed = derive_seed(fx.master_seed, _ROLE_BASELINE, j, r)
            base = baseline_direct(
                topo,
                rates,
                tau=fx.tau,
                sigma=fx.sigma,
                stop_deliveries=fx.stop_deliveries,
                seed=baseline_seed,
                engine=fx.engine,
            )
        if spec.variable == "d":
            d = float(value)
            mt = _single_run(spec, scheme, topo, rates, d, q_limit, sim_seed)
        elif fx.optimize_d:
            d_max = max_supported_rate(rates, scheme)
            grid = geometric_grid(base.d_star, d_max, fx.d_grid_points)
            opt = optimize_target_rate(
                topo,
                rates,
                scheme,
                tau=fx.tau,
                sigma=fx.sigma,
                q_limit=q_limit,
                d_grid=grid,
                stop_deliveries=fx.stop_deliveries,
                seed=sim_seed,
                engine=fx.engine,
            )
            d, mt = opt.d, opt.min_throughput
        else:
            d = float(fx.d)
            mt = _single_run(spec, scheme, topo, rates, d, q_limit, sim_seed)
        bound = throughput_bound(d, mac)
        feas = feasibility(rates, d, scheme)
        regime = str(classify_regime(mt, bound, feas.all_supported, fx.regime_tolerance))
        # divide before scaling so a zero measurement gives exactly -100.0
        gain = 100.0 * ((mt - base.min_throughput) / base.min_throughput)
    except ConfigurationError as exc:
        d = mt = bound = gain = nan
        note = str(exc)

    return GainRecord(
        variable=spec.variable,
        value=float(value),
        scheme=str(scheme),
        replication=r,
        n=n,
        topology_seed=topo_seed,
        sim_seed=sim_seed,
        baseline_seed=baseline_seed,
        d=d,
        baseline_d=base.d_star,
        min_throughput=mt,
        baseline_min_throughput=base.min_throughput,
        gain_percent=gain,
        bound=bound,
        baseline_bound=base.bound,
        regime=regime,
        note=note,
    )


def _single_run(spec, scheme, topo, rates, d, q_limit, seed) -> float:
    fx = spec.fixed
    cfg = SimConfig(
        scheme=scheme,
        d=d,
        stop=StopRule(deliveries=fx.stop_deliveries),
        q_limit=q_limit,
        tau=fx.tau,
        sigma=fx.sigma,
        seed=seed,
        engine=fx.engine,
    )
    return Simulation(cfg, topo, rates).run().min_throughput


def run_sweep(spec: SweepSpec) -> list[GainRecord]:
    """Run the full sweep, spec order preserved in the returned records."""
    spec = resolve_spec(spec)
    fx = spec.fixed

    shared_baseline = None
    if not _baseline_key_depends_on_point(spec):
        # topology and SNR are the same at every point: one baseline per
        # replication, shared so gains are comparable across points
        shared_baseline = {}
        for r in range(spec.replications):
            seed = derive_seed(fx.master_seed, _ROLE_BASELINE, r)
            try:
                topo, rates, _, _ = _point_inputs(spec, 0, r)
                base = baseline_direct(
                    topo,
                    rates,
                    tau=fx.tau,
                    sigma=fx.sigma,
                    stop_deliveries=fx.stop_deliveries,
                    seed=seed,
                    engine=fx.engine,
                )
            except ConfigurationError as exc:
                base = exc
            shared_baseline[r] = (seed, base)

    tasks = [
        (spec, j, s_idx, r, shared_baseline)
        for j in range(len(spec.values))
        for s_idx in range(len(spec.schemes))
        for r in range(spec.replications)
    ]
    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            return list(pool.map(_run_point, tasks, chunksize=1))
    return [_run_point(t) for t in tasks]


# -- CSV output -------------------------------------------------------------


def _format_cell(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_csv(records: Iterable[GainRecord], spec: SweepSpec, dest: str | IO[str]) -> None:
    """Write gain records with a commented metadata header recording the
    fully resolved configuration; identical inputs yield identical bytes."""
    spec = resolve_spec(spec)
    meta = json.dumps(spec.to_dict(), sort_keys=True)
    lines = [
        "# coopsim sweep v1",
        f"# spec: {meta}",
        f"# columns: {','.join(CSV_COLUMNS)}",
    ]

    def emit(fh: IO[str]) -> None:
        fh.write("\n".join(lines) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            writer.writerow([_format_cell(getattr(rec, c)) for c in CSV_COLUMNS])

    if isinstance(dest, str):
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            emit(fh)
    else:
        emit(dest)


def read_csv(src: str | IO[str]) -> tuple[dict, list[dict]]:
    """Read a sweep CSV back: (metadata, rows with numeric fields coerced)."""
    if isinstance(src, str):
        with open(src, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    else:
        lines = list(src)
    meta: dict = {}
    body = []
    for line in lines:
        if line.startswith("#"):
            text = line.lstrip("#").strip()
            if text.startswith("spec:"):
                meta["spec"] = json.loads(text.split(":", 1)[1])
            continue
        if line.strip():
            body.append(line)
    rows = []
    numeric = {
        "value",
        "d",
        "baseline_d",
        "min_throughput",
        "baseline_min_throughput",
        "gain_percent",
        "bound",
        "baseline_bound",
    }
    integers = {"replication", "n", "topology_seed", "sim_seed", "baseline_seed"}
    for row in csv.DictReader(body):
        parsed: dict = {}
        for k, v in row.items():
            if k in numeric:
                parsed[k] = float(v)
            elif k in integers:
                parsed[k] = int(v)
            else:
                parsed[k] = v
        rows.append(parsed)
    return meta, rows


def aggregate(rows: Sequence[dict]) -> list[dict]:
    """Mean and standard error per (scheme, value), error rows counted apart."""
    groups: dict[tuple, list[dict]] = {}
    order: list[tuple] = []
    for row in rows:
        key = (row["scheme"], row["value"])
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(row)

    def mean_se(xs: list[float]) -> tuple[float, float]:
        k = len(xs)
        m = sum(xs) / k
        if k < 2:
            return m, 0.0
        var = sum((x - m) ** 2 for x in xs) / (k - 1)
        return m, math.sqrt(var / k)

    out = []
    for key in order:
        rows_k = groups[key]
        good = [r for r in rows_k if r.get("regime") != "error"]
        errors = len(rows_k) - len(good)
        if good:
            gain_m, gain_se = mean_se([r["gain_percent"] for r in good])
            mt_m, mt_se = mean_se([r["min_throughput"] for r in good])
            base_m = sum(r["baseline_min_throughput"] for r in good) / len(good)
            bound_m = sum(r["bound"] for r in good) / len(good)
            counts: dict[str, int] = {}
            for r in good:
                counts[r["regime"]] = counts.get(r["regime"], 0) + 1
            regime_mode = max(counts.items(), key=lambda kv: kv[1])[0]
        else:
            gain_m = gain_se = mt_m = mt_se = base_m = bound_m = float("nan")
            regime_mode = "error"
        out.append(
            {
                "variable": rows_k[0]["variable"],
                "value": rows_k[0]["value"],
                "scheme": key[0],
                "replications": len(good),
                "gain_percent_mean": gain_m,
                "gain_percent_se": gain_se,
                "min_throughput_mean": mt_m,
                "min_throughput_se": mt_se,
                "baseline_mean": base_m,
                "bound_mean": bound_m,
                "regime_mode": regime_mode,
                "errors": errors,
            }
        )
    return out


def write_aggregate_csv(rows: Sequence[dict], dest: str | IO[str]) -> None:
    def emit(fh: IO[str]) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(AGGREGATE_COLUMNS)
        for row in rows:
            writer.writerow([_format_cell(row[c]) for c in AGGREGATE_COLUMNS])

    if isinstance(dest, str):
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            emit(fh)
    else:
        emit(dest)
