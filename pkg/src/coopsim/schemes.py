"""Achievable rates per transmission scheme and target-rate feasibility.

A node delivers a unit-duration packet either straight to the AP at its
direct rate, or with the help of a relay.  A relay ``l`` must itself meet
the target ``d`` directly (so the own-data share of its packet fits in
``t_l = d / r_l <= 1``); the remaining fraction ``1 - t_l`` of each of its
packets is available to forward for someone else.

Helper-set membership reduces to closed forms:

* two-hop:           r_kl >= d  and  r_l >= 2 d
* decode-forward:    r_kl >= d  and  r_l >= d  and  r_k + r_l >= 2 d

because min(r_kl, r_l - d) >= d and min(r_kl, r_k + r_l - d) >= d
respectively.  Comparisons are inclusive throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import NotAHelperError
from .topology import NodeId, RateTable


class SchemeKind(Enum):
    DIRECT_LINK = "direct_link"
    TWO_HOP = "two_hop"
    DECODE_FORWARD = "decode_forward"

    def __str__(self) -> str:  # friendlier CLI/CSV rendering
        return self.value


class NodeClass(Enum):
    DIRECT_SUPPORTED = "direct_supported"
    HELPER_SUPPORTED = "helper_supported"
    UNSUPPORTED = "unsupported"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class HelperSets:
    """Helper sets of every node under both cooperative schemes."""

    two_hop: dict[NodeId, frozenset[NodeId]]
    df: dict[NodeId, frozenset[NodeId]]


@dataclass(frozen=True)
class FeasibilityReport:
    """Per-node support classification for a target rate under one scheme.

    ``helpers`` (H) is the union of the helper sets of nodes that need help;
    ``helped`` (C) are the nodes below the target that have at least one
    helper; ``unsupported`` are below the target with no helper.
    """

    scheme: SchemeKind
    d: float
    classes: tuple[NodeClass, ...]
    helper_sets: dict[NodeId, frozenset[NodeId]]
    helpers: frozenset[NodeId]
    helped: frozenset[NodeId]
    unsupported: frozenset[NodeId]

    @property
    def all_supported(self) -> bool:
        return not self.unsupported

    def to_dict(self) -> dict:
        return {
            "scheme": str(self.scheme),
            "d": self.d,
            "classes": [str(c) for c in self.classes],
            "helper_sets": {k: sorted(v) for k, v in sorted(self.helper_sets.items())},
            "helpers": sorted(self.helpers),
            "helped": sorted(self.helped),
            "unsupported": sorted(self.unsupported),
            "all_supported": self.all_supported,
        }


def free_time(direct_rate: float, d: float) -> float:
    """Fraction of a packet a node needs for its own data at target ``d``."""
    if d <= 0:
        raise ValueError(f"target rate must be > 0, got {d}")
    if direct_rate < d:
        raise NotAHelperError(f"direct rate {direct_rate} is below the target {d}")
    return d / direct_rate


def _check_target(d: float) -> None:
    if not d > 0:
        raise ValueError(f"target rate must be > 0, got {d}")


def rate_two_hop(r_kl: float, r_l: float, d: float) -> float:
    """Deliverable rate for source k through relay l that re-encodes the
    whole packet: min(r_kl, (1 - d/r_l) * r_l)."""
    _check_target(d)
    if r_l < d:
        raise NotAHelperError(f"relay rate {r_l} is below the target {d}")
    return min(r_kl, r_l - d)


def rate_df(r_kl: float, r_k: float, r_l: float, d: float) -> float:
    """Deliverable rate for source k through relay l that forwards only what
    the AP is missing: min(r_kl, r_k + (1 - d/r_l) * r_l)."""
    _check_target(d)
    if r_l < d:
        raise NotAHelperError(f"relay rate {r_l} is below the target {d}")
    return min(r_kl, r_k + r_l - d)


def helper_set_two_hop(k: NodeId, rates: RateTable, d: float) -> frozenset[NodeId]:
    """Nodes able to bring source ``k`` to target ``d`` via two-hop."""
    _check_target(d)
    ok = (rates.pair[k] >= d) & (rates.direct >= 2.0 * d)
    ok[k] = False
    return frozenset(np.nonzero(ok)[0].tolist())


def helper_set_df(k: NodeId, rates: RateTable, d: float) -> frozenset[NodeId]:
    """Nodes able to bring source ``k`` to target ``d`` via decode-forward."""
    _check_target(d)
    ok = (
        (rates.pair[k] >= d)
        & (rates.direct >= d)
        & (rates.direct[k] + rates.direct >= 2.0 * d)
    )
    ok[k] = False
    return frozenset(np.nonzero(ok)[0].tolist())


def all_helper_sets(rates: RateTable, d: float) -> HelperSets:
    return HelperSets(
        two_hop={k: helper_set_two_hop(k, rates, d) for k in range(rates.n)},
        df={k: helper_set_df(k, rates, d) for k in range(rates.n)},
    )


def helper_map(rates: RateTable, d: float, scheme: SchemeKind) -> dict[NodeId, tuple[NodeId, ...]]:
    """Sorted helper tuples for every node below the target, as the
    simulator consumes them.  Empty for the direct-link scheme."""
    if scheme is SchemeKind.DIRECT_LINK:
        return {}
    pick = helper_set_two_hop if scheme is SchemeKind.TWO_HOP else helper_set_df
    return {
        k: tuple(sorted(pick(k, rates, d)))
        for k in range(rates.n)
        if rates.direct[k] < d
    }


def feasibility(rates: RateTable, d: float, scheme: SchemeKind) -> FeasibilityReport:
    """Classify every node as directly supported, supported through a helper,
    or unsupported, for target ``d`` under ``scheme``."""
    _check_target(d)
    sets = helper_map(rates, d, scheme)
    classes = []
    helped = set()
    unsupported = set()
    for k in range(rates.n):
        if rates.direct[k] >= d:
            classes.append(NodeClass.DIRECT_SUPPORTED)
        elif sets.get(k):
            classes.append(NodeClass.HELPER_SUPPORTED)
            helped.add(k)
        else:
            classes.append(NodeClass.UNSUPPORTED)
            unsupported.add(k)
    helpers = set()
    for k in helped | unsupported:
        helpers.update(sets.get(k, ()))
    return FeasibilityReport(
        scheme=scheme,
        d=d,
        classes=tuple(classes),
        helper_sets={k: frozenset(v) for k, v in sets.items()},
        helpers=frozenset(helpers),
        helped=frozenset(helped),
        unsupported=frozenset(unsupported),
    )


def max_direct_rate(rates: RateTable) -> float:
    """Largest target every node meets on its own: min over direct rates."""
    return float(rates.direct.min())


def max_supported_rate(rates: RateTable, scheme: SchemeKind) -> float:
    """Largest target rate at which every node is still physically supported
    under ``scheme`` (direct link for some nodes, best helper for the rest)."""
    direct = rates.direct
    if scheme is SchemeKind.DIRECT_LINK:
        return float(direct.min())
    if scheme is SchemeKind.TWO_HOP:
        # support of k through l holds iff d <= min(r_kl, r_l / 2)
        cap = np.minimum(rates.pair, direct[None, :] / 2.0)
    elif scheme is SchemeKind.DECODE_FORWARD:
        # iff d <= min(r_kl, r_l, (r_k + r_l) / 2)
        cap = np.minimum(
            rates.pair,
            np.minimum(direct[None, :], (direct[:, None] + direct[None, :]) / 2.0),
        )
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    np.fill_diagonal(cap, 0.0)
    best = np.maximum(direct, cap.max(axis=1) if rates.n > 1 else 0.0)
    return float(best.min())
