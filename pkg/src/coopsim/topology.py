"""Network geometry and link rates.

Nodes are points in the plane served by a single access point (AP) at the
origin.  Distances are dimensionless: generated layouts are scaled so the
node farthest from the AP sits at distance exactly 1.  Received SNR follows
an inverse power law of distance and maps to a spectral efficiency through
the Shannon formula, evaluated in base 2 so rates are in bits/s/Hz.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import IO, Iterable

import numpy as np

from .errors import ConfigurationError, GeometryError

# Lower clamp applied to any distance before converting to SNR, so that two
# (near-)coincident points yield a large but finite rate.
MIN_DISTANCE = 1e-6

NodeId = int


@dataclass(frozen=True)
class ChannelParams:
    """Radio parameters: linear transmit SNR referenced at unit distance and
    the pathloss exponent."""

    tx_snr: float
    gamma: float = 2.0

    def __post_init__(self) -> None:
        if not self.tx_snr > 0:
            raise ConfigurationError(f"tx_snr must be > 0, got {self.tx_snr}")
        if self.gamma < 0:
            raise ConfigurationError(f"gamma must be >= 0, got {self.gamma}")


@dataclass(frozen=True)
class Topology:
    """Node coordinates, AP implicitly at the origin.

    ``seed`` records the generator seed when the layout was sampled (kept for
    reproducible export headers); hand-built layouts leave it None.
    """

    positions: np.ndarray  # shape (n, 2), float64
    seed: int | None = None

    def __post_init__(self) -> None:
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 2 or pos.shape[0] < 1:
            raise ConfigurationError(f"positions must have shape (n, 2), got {pos.shape}")
        object.__setattr__(self, "positions", pos)
        if np.any(np.hypot(pos[:, 0], pos[:, 1]) == 0.0):
            raise GeometryError("a node coincides with the AP at the origin")

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    def ap_distances(self) -> np.ndarray:
        """Distance of every node to the AP."""
        return np.hypot(self.positions[:, 0], self.positions[:, 1])

    def pair_distances(self) -> np.ndarray:
        """Full n x n inter-node distance matrix (zero diagonal)."""
        diff = self.positions[:, None, :] - self.positions[None, :, :]
        return np.hypot(diff[..., 0], diff[..., 1])


@dataclass(frozen=True)
class RateTable:
    """Direct rates node->AP and pairwise rates node->node.

    ``pair`` is symmetric; its diagonal is 0 and never meaningful.
    """

    direct: np.ndarray  # shape (n,)
    pair: np.ndarray  # shape (n, n)

    @property
    def n(self) -> int:
        return self.direct.shape[0]

    def direct_rate(self, k: NodeId) -> float:
        return float(self.direct[k])

    def pair_rate(self, k: NodeId, l: NodeId) -> float:
        if k == l:
            raise ValueError("pair rate is undefined for k == l")
        return float(self.pair[k, l])


def snr_at(distance: float, params: ChannelParams) -> float:
    """Linear SNR at the given distance under the pathloss law."""
    if distance <= 0:
        raise GeometryError(f"distance must be > 0, got {distance}")
    return params.tx_snr / distance**params.gamma


def link_rate(snr: float) -> float:
    """Shannon spectral efficiency log2(1 + snr) in bits/s/Hz."""
    if snr < 0:
        raise ValueError(f"snr must be >= 0, got {snr}")
    return math.log2(1.0 + snr)


def generate_topology(n: int, seed: int) -> Topology:
    """Sample ``n`` points uniformly over the unit disk around the AP, then
    rescale so the farthest point lies at distance exactly 1.

    Deterministic for a given ``seed``.
    """
    if n < 1:
        raise ConfigurationError(f"need at least one node, got n={n}")
    rng = np.random.default_rng(seed)
    while True:
        radius = np.sqrt(rng.random(n))
        theta = rng.random(n) * (2.0 * math.pi)
        pos = np.column_stack((radius * np.cos(theta), radius * np.sin(theta)))
        dmax = np.hypot(pos[:, 0], pos[:, 1]).max()
        if dmax > 0.0:  # all-zero sample has probability 0 but stay safe
            break
    return Topology(positions=pos / dmax, seed=seed)


def build_rate_table(topology: Topology, params: ChannelParams) -> RateTable:
    """Evaluate direct and pairwise link rates for a layout.

    Distances are clamped below at ``MIN_DISTANCE`` so coincident points do
    not produce infinite SNR.
    """
    ap_dist = np.maximum(topology.ap_distances(), MIN_DISTANCE)
    direct = np.log2(1.0 + params.tx_snr / ap_dist**params.gamma)

    dist = topology.pair_distances()
    n = topology.n
    off = ~np.eye(n, dtype=bool)
    dist = np.where(off, np.maximum(dist, MIN_DISTANCE), 1.0)
    pair = np.log2(1.0 + params.tx_snr / dist**params.gamma)
    pair[~off] = 0.0
    return RateTable(direct=direct, pair=pair)


def save_topology(topology: Topology, dest: str | IO[str]) -> None:
    """Write a layout as plain text: header comments with the generation
    parameters, then one ``id x y`` line per node."""
    lines = ["# coopsim topology v1", f"# n={topology.n}"]
    if topology.seed is not None:
        lines.append(f"# seed={topology.seed}")
    for i, (x, y) in enumerate(topology.positions):
        lines.append(f"{i} {float(x)!r} {float(y)!r}")
    text = "\n".join(lines) + "\n"
    if isinstance(dest, str):
        with open(dest, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        dest.write(text)


def load_topology(src: str | IO[str] | Iterable[str]) -> Topology:
    """Parse the text format written by :func:`save_topology`."""
    if isinstance(src, str):
        with open(src, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    else:
        lines = list(src)

    seed: int | None = None
    rows: dict[int, tuple[float, float]] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line.lstrip("#").strip()
            if body.startswith("seed="):
                seed = int(body.split("=", 1)[1])
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ConfigurationError(f"line {lineno}: expected 'id x y', got {line!r}")
        idx = int(parts[0])
        if idx in rows:
            raise ConfigurationError(f"line {lineno}: duplicate node id {idx}")
        rows[idx] = (float(parts[1]), float(parts[2]))
    if not rows:
        raise ConfigurationError("topology file holds no nodes")
    if sorted(rows) != list(range(len(rows))):
        raise ConfigurationError("node ids must be 0..n-1 without gaps")
    pos = np.array([rows[i] for i in range(len(rows))], dtype=float)
    return Topology(positions=pos, seed=seed)
