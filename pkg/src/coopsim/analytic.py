"""Closed-form saturation analysis of the slotted contention channel.

All nodes are backlogged and, after sensing an idle slot, transmit in the
next slot independently with probability tau.  A success or a collision
occupies one packet duration and is always followed by one idle slot, so a
busy contention cycle costs 1 + sigma while an idle cycle costs sigma.
These expressions are the oracle the simulator is checked against.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigurationError


@dataclass(frozen=True)
class MacParams:
    """Contention parameters.

    Parameters
    ----------
    n : int
        Number of competing nodes.
    tau : float
        Per-slot transmission probability after an idle slot, 0 < tau < 1.
    sigma : float
        Idle slot duration as a fraction of the packet duration.
    """

    n: int
    tau: float
    sigma: float

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ConfigurationError(f"n must be >= 1, got {self.n}")
        if not 0.0 < self.tau < 1.0:
            raise ConfigurationError(f"tau must be in (0, 1), got {self.tau}")
        if not self.sigma > 0.0:
            raise ConfigurationError(f"sigma must be > 0, got {self.sigma}")


@dataclass(frozen=True)
class SlotProbabilities:
    """Outcome probabilities of the slot following an idle slot."""

    success: float
    idle: float
    collision: float


def slot_probabilities(params: MacParams) -> SlotProbabilities:
    """Success / idle / collision probabilities of one contention slot.

    success   = n * (1 - tau)^(n-1) * tau
    idle      = (1 - tau)^n
    collision = 1 - success - idle
    """
    n, tau = params.n, params.tau
    p_success = n * (1.0 - tau) ** (n - 1) * tau
    p_idle = (1.0 - tau) ** n
    p_collision = max(1.0 - (p_success + p_idle), 0.0)  # guard fp dust at n=1
    return SlotProbabilities(success=p_success, idle=p_idle, collision=p_collision)


def renewal_time(params: MacParams) -> float:
    """Expected duration of one contention cycle.

    Busy outcomes (success or collision) cost 1 + sigma because the packet
    is followed by a forced idle slot; idle outcomes cost sigma.
    """
    p = slot_probabilities(params)
    return (1.0 - p.idle) * (1.0 + params.sigma) + p.idle * params.sigma


def throughput_bound(d: float, params: MacParams) -> float:
    """Per-node saturation throughput when every success delivers ``d``.

    S(d) = success * d / (n * [(1 - idle) * (1 + sigma) + idle * sigma])

    This is an upper bound on the achievable min-throughput at target rate
    ``d``; it is attained when no node ever stalls.
    """
    p = slot_probabilities(params)
    cycle = (1.0 - p.idle) * (1.0 + params.sigma) + p.idle * params.sigma
    return p.success * d / (params.n * cycle)
