"""Slotted discrete-event engine for the three uplink protocols.

Time advances in contention cycles: after an idle slot every eligible node
transmits with probability tau, so a cycle is either an idle slot (duration
sigma) or a busy event (a unit packet plus its forced trailing idle slot,
duration 1 + sigma).  The clock therefore satisfies

    elapsed = sigma * idle_slots + (1 + sigma) * busy_events

which is exactly the cycle accounting of the analytic bound.

Two sampling engines produce identical dynamics in distribution:

* ``renewal`` (default): skips idle runs by drawing their geometric length
  and the busy outcome directly; state changes only at busy events, so this
  is an exact reformulation, not an approximation.
* ``slotted``: literally draws one uniform per node per slot, in node-id
  order.  Slower; kept as the reference semantics for cross-checks.

Protocol rules (cooperative schemes):

* A node transmits the head of its relay queue when the queue is non-empty,
  otherwise a fresh broadcast of its own next packet.  Every transmission
  carries exactly one target-rate unit of the transmitter's own data, so
  channel competition and energy are identical for plain and joint packets.
* A broadcast by a node at or above the target is decoded and acknowledged
  by the AP immediately.  Below the target, the AP acknowledges reception
  only; every helper of the origin enqueues a relay obligation; the origin's
  unacknowledged count grows and, at the limit ``q_limit``, the origin stops
  contending until one of its packets is delivered.
* A successful relay transmission delivers the origin's packet and the
  relay's own data in one joint packet; every other helper drops its copy of
  the obligation in the same event (acknowledgements are heard everywhere).
* Collisions destroy all payloads involved; colliders keep their state and
  recontend.  Acknowledgements are instantaneous and never collide.

Direct-link: nodes below the target are silenced from the start and never
contend; everyone else delivers one target-rate unit per success.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from math import exp, expm1, log, log1p
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import ConfigurationError
from .schemes import SchemeKind, helper_map
from .topology import RateTable, Topology

_ENGINES = ("renewal", "slotted")
_BUF = 1 << 16


class PacketRef(NamedTuple):
    """One packet of one origin; the header flags the origin's direct rate."""

    origin: int
    seq: int
    flagged_rate: float


class RelayObligation(NamedTuple):
    packet: PacketRef
    forward_amount: float


@dataclass(frozen=True)
class SlotOutcome:
    """Result of one contention slot: no transmitter, one, or several."""

    kind: str  # "idle" | "success" | "collision"
    transmitters: tuple[int, ...] = ()


@dataclass(frozen=True)
class BusyEvent:
    """Trace record for one busy event (success or collision)."""

    index: int
    time: float
    kind: str  # "success" | "collision"
    transmitters: tuple[int, ...]
    tx_kind: str | None  # "direct" | "broadcast_delivered" | "broadcast_stored" | "relay"
    packet: PacketRef | None
    credited: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "time": self.time,
            "kind": self.kind,
            "transmitters": list(self.transmitters),
            "tx_kind": self.tx_kind,
            "packet": list(self.packet[:2]) if self.packet else None,
            "credited": list(self.credited),
        }


@dataclass(frozen=True)
class NodeStateView:
    queue: tuple[RelayObligation, ...]
    outstanding: int
    next_seq: int
    delivered_info: float
    delivered_count: int
    tx_count: int
    silenced: bool
    stalled: bool


@dataclass(frozen=True)
class ApStateView:
    partial_store: dict[PacketRef, float]
    delivered: frozenset[tuple[int, int]] | None


@dataclass(frozen=True)
class StopRule:
    """Run until a number of delivered packets or an amount of simulated time.

    Exactly one of the two must be set.  ``deliveries`` counts packets worth
    of data handed to the AP: a joint packet counts twice (the origin's
    packet and the relay's own data).
    """

    deliveries: int | None = None
    sim_time: float | None = None

    def __post_init__(self) -> None:
        if (self.deliveries is None) == (self.sim_time is None):
            raise ConfigurationError("set exactly one of deliveries / sim_time")
        if self.deliveries is not None and self.deliveries < 1:
            raise ConfigurationError(f"deliveries must be >= 1, got {self.deliveries}")
        if self.sim_time is not None and not self.sim_time > 0:
            raise ConfigurationError(f"sim_time must be > 0, got {self.sim_time}")


@dataclass(frozen=True)
class SimConfig:
    scheme: SchemeKind
    d: float
    stop: StopRule
    q_limit: int = 100
    tau: float = 0.001
    sigma: float = 0.002
    seed: int = 0
    engine: str = "renewal"
    record_delivered: bool = False

    def __post_init__(self) -> None:
        if not isinstance(self.scheme, SchemeKind):
            raise ConfigurationError(f"scheme must be a SchemeKind, got {self.scheme!r}")
        if not self.d > 0:
            raise ConfigurationError(f"target rate d must be > 0, got {self.d}")
        if self.q_limit < 1:
            raise ConfigurationError(f"q_limit must be >= 1, got {self.q_limit}")
        if not 0.0 < self.tau < 1.0:
            raise ConfigurationError(f"tau must be in (0, 1), got {self.tau}")
        if not self.sigma > 0:
            raise ConfigurationError(f"sigma must be > 0, got {self.sigma}")
        if self.engine not in _ENGINES:
            raise ConfigurationError(f"engine must be one of {_ENGINES}, got {self.engine!r}")


@dataclass(frozen=True)
class MetricsReport:
    scheme: SchemeKind
    d: float
    n: int
    seed: int
    q_limit: int
    tau: float
    sigma: float
    engine: str
    stop_reason: str  # "deliveries" | "time" | "stalled"
    elapsed_time: float
    idle_slots: int
    success_slots: int
    collision_slots: int
    deliveries: int
    per_node_delivered_info: tuple[float, ...]
    per_node_delivered_count: tuple[int, ...]
    per_node_tx_count: tuple[int, ...]
    per_node_stall_time: tuple[float, ...]
    per_node_throughput: tuple[float, ...]
    min_throughput: float
    peak_obligation_memory: int
    final_outstanding: tuple[int, ...]

    @property
    def busy_events(self) -> int:
        return self.success_slots + self.collision_slots

    def to_dict(self) -> dict:
        out = {
            "scheme": str(self.scheme),
            "d": self.d,
            "n": self.n,
            "seed": self.seed,
            "q_limit": self.q_limit,
            "tau": self.tau,
            "sigma": self.sigma,
            "engine": self.engine,
            "stop_reason": self.stop_reason,
            "elapsed_time": self.elapsed_time,
            "idle_slots": self.idle_slots,
            "success_slots": self.success_slots,
            "collision_slots": self.collision_slots,
            "deliveries": self.deliveries,
            "per_node_delivered_info": list(self.per_node_delivered_info),
            "per_node_delivered_count": list(self.per_node_delivered_count),
            "per_node_tx_count": list(self.per_node_tx_count),
            "per_node_stall_time": list(self.per_node_stall_time),
            "per_node_throughput": list(self.per_node_throughput),
            "min_throughput": self.min_throughput,
            "peak_obligation_memory": self.peak_obligation_memory,
            "final_outstanding": list(self.final_outstanding),
        }
        return out


def contend(eligible: Sequence[int], tau: float, rng: np.random.Generator) -> SlotOutcome:
    """One contention slot: every eligible node transmits with probability
    ``tau``, decisions drawn in ascending node-id order."""
    ids = sorted(eligible)
    if not ids:
        return SlotOutcome(kind="idle")
    draws = rng.random(len(ids))
    hits = tuple(ids[j] for j in np.nonzero(draws < tau)[0])
    if not hits:
        return SlotOutcome(kind="idle")
    if len(hits) == 1:
        return SlotOutcome(kind="success", transmitters=hits)
    return SlotOutcome(kind="collision", transmitters=hits)


class Simulation:
    """Stateful single run.  Use :meth:`run` for the full loop, or repeated
    :meth:`step` calls to observe every busy event."""

    def __init__(self, config: SimConfig, topology: Topology, rates: RateTable):
        if topology.n != rates.n:
            raise ConfigurationError(
                f"topology has {topology.n} nodes but rate table has {rates.n}"
            )
        self.config = config
        self.rates = rates
        n = rates.n
        self._n = n
        d = config.d
        self._direct_scheme = config.scheme is SchemeKind.DIRECT_LINK
        self._supported = [bool(r >= d) for r in rates.direct]
        if self._direct_scheme:
            self._helpers: dict[int, tuple[int, ...]] = {}
            self._silenced = [not s for s in self._supported]
        else:
            self._helpers = helper_map(rates, d, config.scheme)
            self._silenced = [False] * n
        df = config.scheme is SchemeKind.DECODE_FORWARD
        self._forward_amount = {
            k: (d - float(rates.direct[k])) if df else d for k in self._helpers
        }
        self._partial: dict[tuple[int, int], float] | None = {} if df else None
        self._delivered: set[tuple[int, int]] | None = (
            set() if config.record_delivered else None
        )

        # dynamic state
        self._outstanding = [0] * n
        self._next_seq = [0] * n
        self._credits = [0] * n
        self._txc = [0] * n
        self._queues: list[OrderedDict] = [OrderedDict() for _ in range(n)]
        self._eligible: list[int] = [i for i in range(n) if not self._silenced[i]]
        self._pos = [-1] * n
        for p, i in enumerate(self._eligible):
            self._pos[i] = p
        self._elig_mask = np.array([not s for s in self._silenced], dtype=bool)
        self._stall_started: list[float | None] = [
            0.0 if self._silenced[i] else None for i in range(n)
        ]
        self._stall_time = [0.0] * n

        self._clock = 0.0
        self._idle = 0
        self._succ = 0
        self._coll = 0
        self._deliveries = 0
        self._peak_queue = 0
        self._event_index = 0
        self._stop_reason: str | None = None
        if not self._eligible:
            self._stop_reason = "stalled"

        # sampling caches, indexed by number of eligible nodes
        tau = config.tau
        l1p = log1p(-tau)
        self._logq = [0.0] + [m * l1p for m in range(1, n + 1)]
        self._busyp = [0.0] + [-expm1(m * l1p) for m in range(1, n + 1)]
        self._p1 = [0.0] + [m * tau * exp((m - 1) * l1p) for m in range(1, n + 1)]
        self._ratio = tau / (1.0 - tau)

        self._rng = np.random.default_rng(config.seed)
        self._buf: list[float] = []
        self._ptr = 0

    # -- state views ------------------------------------------------------

    def _packet_ref(self, key: tuple[int, int]) -> PacketRef:
        return PacketRef(key[0], key[1], float(self.rates.direct[key[0]]))

    def node_state(self, k: int) -> NodeStateView:
        queue = tuple(
            RelayObligation(self._packet_ref(key), self._forward_amount[key[0]])
            for key in self._queues[k]
        )
        return NodeStateView(
            queue=queue,
            outstanding=self._outstanding[k],
            next_seq=self._next_seq[k],
            delivered_info=self._credits[k] * self.config.d,
            delivered_count=self._credits[k],
            tx_count=self._txc[k],
            silenced=self._silenced[k],
            stalled=self._stall_started[k] is not None,
        )

    def ap_state(self) -> ApStateView:
        partial = {}
        if self._partial is not None:
            partial = {self._packet_ref(k): v for k, v in self._partial.items()}
        delivered = None if self._delivered is None else frozenset(self._delivered)
        return ApStateView(partial_store=partial, delivered=delivered)

    def queue_snapshot(self) -> tuple[tuple[tuple[int, int], ...], ...]:
        """Per-node tuples of (origin, seq) keys currently queued."""
        return tuple(tuple(q.keys()) for q in self._queues)

    @property
    def clock(self) -> float:
        return self._clock

    @property
    def stopped(self) -> bool:
        return self._stop_reason is not None

    # -- eligibility ------------------------------------------------------

    def _deactivate(self, i: int) -> None:
        p = self._pos[i]
        last = self._eligible[-1]
        self._eligible[p] = last
        self._pos[last] = p
        self._eligible.pop()
        self._pos[i] = -1
        self._elig_mask[i] = False
        self._stall_started[i] = self._clock

    def _reactivate(self, i: int) -> None:
        self._pos[i] = len(self._eligible)
        self._eligible.append(i)
        self._elig_mask[i] = True
        started = self._stall_started[i]
        if started is not None:
            self._stall_time[i] += self._clock - started
        self._stall_started[i] = None

    # -- protocol handlers ------------------------------------------------

    def _on_success(self, i: int):
        """Apply one successful transmission by node ``i``; returns
        (tx_kind, packet_key, credited)."""
        self._txc[i] += 1
        if self._direct_scheme:
            self._credits[i] += 1
            self._deliveries += 1
            return "direct", None, (i,)
        qi = self._queues[i]
        if qi:
            key, _ = qi.popitem(last=False)
            origin = key[0]
            for h in self._helpers[origin]:
                if h != i:
                    del self._queues[h][key]
            if self._partial is not None:
                del self._partial[key]
            if self._delivered is not None:
                if key in self._delivered:
                    raise AssertionError(f"packet {key} delivered twice")
                self._delivered.add(key)
            self._credits[origin] += 1
            self._credits[i] += 1
            self._deliveries += 2
            was = self._outstanding[origin]
            self._outstanding[origin] = was - 1
            if was == self.config.q_limit:
                self._reactivate(origin)
            return "relay", key, (origin, i)
        if self._supported[i]:
            key = (i, self._next_seq[i])
            self._next_seq[i] += 1
            if self._delivered is not None:
                self._delivered.add(key)
            self._credits[i] += 1
            self._deliveries += 1
            return "broadcast_delivered", key, (i,)
        key = (i, self._next_seq[i])
        self._next_seq[i] += 1
        self._outstanding[i] += 1
        if self._partial is not None:
            self._partial[key] = float(self.rates.direct[i])
        peak = self._peak_queue
        for h in self._helpers[i]:
            q = self._queues[h]
            q[key] = None
            if len(q) > peak:
                peak = len(q)
        self._peak_queue = peak
        if self._outstanding[i] == self.config.q_limit:
            self._deactivate(i)
        return "broadcast_stored", key, ()

    def _on_collision(self, ids) -> None:
        for i in ids:
            self._txc[i] += 1

    # -- sampling ---------------------------------------------------------

    def _uniform(self) -> float:
        if self._ptr >= len(self._buf):
            self._buf = self._rng.random(_BUF).tolist()
            self._ptr = 0
        u = self._buf[self._ptr]
        self._ptr += 1
        return u

    def _sample_renewal(self) -> list[int]:
        """Advance the clock past the idle run and return the transmitter
        set of the next busy event."""
        m = len(self._eligible)
        u = self._uniform()
        while u == 0.0:
            u = self._uniform()
        gap = int(log(u) / self._logq[m])
        self._idle += gap
        self._clock += self.config.sigma * gap + 1.0 + self.config.sigma

        x = self._uniform() * self._busyp[m]
        pmf = self._p1[m]
        t = 1
        while x >= pmf and t < m:
            x -= pmf
            pmf = pmf * (m - t) / (t + 1) * self._ratio
            t += 1
        if t == 1:
            return [self._eligible[int(self._uniform() * m)]]
        chosen: set[int] = set()
        while len(chosen) < t:
            chosen.add(self._eligible[int(self._uniform() * m)])
        return sorted(chosen)

    def _sample_slotted(self) -> list[int] | None:
        """Literal per-slot dynamics: one uniform per node per slot in
        node-id order (draws for ineligible nodes are discarded)."""
        tau = self.config.tau
        sigma = self.config.sigma
        n = self._n
        mask = self._elig_mask
        rng = self._rng
        limit = self.config.stop.sim_time
        while True:
            draws = rng.random(n)
            hits = np.nonzero((draws < tau) & mask)[0]
            if hits.size:
                self._clock += 1.0 + sigma
                return hits.tolist()
            self._idle += 1
            self._clock += sigma
            if limit is not None and self._clock >= limit:
                return None

    # -- main loop --------------------------------------------------------

    def _check_stop(self) -> None:
        stop = self.config.stop
        if stop.deliveries is not None and self._deliveries >= stop.deliveries:
            self._stop_reason = "deliveries"
        elif stop.sim_time is not None and self._clock >= stop.sim_time:
            self._stop_reason = "time"
        elif not self._eligible:
            self._stop_reason = "stalled"

    def step(self) -> BusyEvent | None:
        """Advance to the next busy event and apply it.  Returns the event
        record, or None once the run has stopped."""
        if self._stop_reason is not None:
            return None
        if self.config.engine == "renewal":
            txs = self._sample_renewal()
        else:
            txs = self._sample_slotted()
            if txs is None:  # time limit hit during an idle run
                self._stop_reason = "time"
                return None
        if len(txs) == 1:
            self._succ += 1
            tx_kind, key, credited = self._on_success(txs[0])
            event = BusyEvent(
                index=self._event_index,
                time=self._clock,
                kind="success",
                transmitters=(txs[0],),
                tx_kind=tx_kind,
                packet=self._packet_ref(key) if key is not None else None,
                credited=credited,
            )
        else:
            self._coll += 1
            self._on_collision(txs)
            event = BusyEvent(
                index=self._event_index,
                time=self._clock,
                kind="collision",
                transmitters=tuple(txs),
                tx_kind=None,
                packet=None,
                credited=(),
            )
        self._event_index += 1
        self._check_stop()
        return event

    def run(self, trace: Callable[[BusyEvent], None] | None = None) -> MetricsReport:
        """Run to the stop condition and return the metrics report."""
        if trace is not None or self.config.engine == "slotted":
            while (event := self.step()) is not None:
                if trace is not None:
                    trace(event)
            return self.report()

        # tight loop: same sampling and handlers as step(), but without
        # materialising a BusyEvent record per event
        sample = self._sample_renewal
        on_success = self._on_success
        check = self._check_stop
        while self._stop_reason is None:
            txs = sample()
            if len(txs) == 1:
                self._succ += 1
                on_success(txs[0])
            else:
                self._coll += 1
                self._on_collision(txs)
            self._event_index += 1
            check()
        return self.report()

    def report(self) -> MetricsReport:
        n = self._n
        d = self.config.d
        elapsed = self._clock
        stall = list(self._stall_time)
        for i in range(n):
            started = self._stall_started[i]
            if started is not None:
                stall[i] += elapsed - started
        info = tuple(c * d for c in self._credits)
        thr = tuple((x / elapsed if elapsed > 0 else 0.0) for x in info)
        return MetricsReport(
            scheme=self.config.scheme,
            d=d,
            n=n,
            seed=self.config.seed,
            q_limit=self.config.q_limit,
            tau=self.config.tau,
            sigma=self.config.sigma,
            engine=self.config.engine,
            stop_reason=self._stop_reason or "running",
            elapsed_time=elapsed,
            idle_slots=self._idle,
            success_slots=self._succ,
            collision_slots=self._coll,
            deliveries=self._deliveries,
            per_node_delivered_info=info,
            per_node_delivered_count=tuple(self._credits),
            per_node_tx_count=tuple(self._txc),
            per_node_stall_time=tuple(stall),
            per_node_throughput=thr,
            min_throughput=min(thr),
            peak_obligation_memory=self._peak_queue,
            final_outstanding=tuple(self._outstanding),
        )


def run(
    config: SimConfig,
    topology: Topology,
    rates: RateTable,
    trace: Callable[[BusyEvent], None] | None = None,
) -> MetricsReport:
    """Execute one simulation run."""
    return Simulation(config, topology, rates).run(trace=trace)
