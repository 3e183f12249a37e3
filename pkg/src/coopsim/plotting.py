"""File-output figure rendering for sweep results and layouts."""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .topology import Topology

_AXIS_LABEL = {
    "tx_snr": "transmit SNR at unit distance (linear)",
    "d": "target rate per packet",
    "q_limit": "unacknowledged-packet limit Q",
    "n": "number of nodes",
}


def save_gain_figure(agg_rows: Sequence[dict], path: str, title: str | None = None) -> None:
    """Plot mean gain over the baseline (with standard-error bars) per scheme,
    plus the analytic-bound gain as a dashed reference."""
    if not agg_rows:
        raise ValueError("no rows to plot")
    variable = agg_rows[0]["variable"]
    schemes = []
    for row in agg_rows:
        if row["scheme"] not in schemes:
            schemes.append(row["scheme"])

    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for scheme in schemes:
        rows = [r for r in agg_rows if r["scheme"] == scheme and r["regime_mode"] != "error"]
        if not rows:
            continue
        xs = [r["value"] for r in rows]
        ys = [r["gain_percent_mean"] for r in rows]
        es = [r["gain_percent_se"] for r in rows]
        ax.errorbar(xs, ys, yerr=es, marker="o", markersize=3.5, capsize=2, label=scheme)
        bound_gain = [
            100.0 * (r["bound_mean"] - r["baseline_mean"]) / r["baseline_mean"] for r in rows
        ]
        ax.plot(xs, bound_gain, linestyle="--", linewidth=0.9, alpha=0.6,
                label=f"{scheme} bound")
    if variable == "tx_snr":
        ax.set_xscale("log")
    ax.axhline(0.0, color="black", linewidth=0.6)
    ax.set_xlabel(_AXIS_LABEL.get(variable, variable))
    ax.set_ylabel("min-throughput gain over direct link [%]")
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_topology_figure(topology: Topology, path: str, title: str | None = None) -> None:
    """Scatter the node layout with the AP marked at the origin."""
    fig, ax = plt.subplots(figsize=(4.6, 4.6))
    xs, ys = topology.positions[:, 0], topology.positions[:, 1]
    ax.scatter(xs, ys, s=18, label="nodes")
    ax.scatter([0.0], [0.0], marker="^", s=70, color="red", label="AP")
    for i, (x, y) in enumerate(topology.positions):
        ax.annotate(str(i), (x, y), fontsize=7, xytext=(3, 3), textcoords="offset points")
    circle = plt.Circle((0, 0), 1.0, fill=False, linestyle=":", color="gray")
    ax.add_patch(circle)
    ax.set_aspect("equal")
    ax.set_xlim(-1.15, 1.15)
    ax.set_ylim(-1.15, 1.15)
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8, loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
