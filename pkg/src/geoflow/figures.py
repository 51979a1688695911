"""Figure rendering for reports and trajectory exports.

Figures are written next to the machine-readable outputs; everything
uses the Agg backend so the CLI works headless.
"""

from __future__ import annotations

import numpy as np

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt


def residual_histogram(values, title: str, path) -> None:
    values = np.asarray(values, dtype=float).ravel()
    fig, ax = plt.subplots(figsize=(5, 3.2))
    finite = values[np.isfinite(values)]
    if finite.size:
        floor = 1e-18
        ax.hist(np.log10(np.maximum(np.abs(finite), floor)), bins=24,
                color="#4878a8", edgecolor="black", linewidth=0.4)
    ax.set_xlabel("log10 |residual|")
    ax.set_ylabel("samples")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def trajectory_figure(times, diagnostics, title: str, path) -> None:
    times = np.asarray(times, dtype=float)
    min_det = np.array([d["min_det"] for d in diagnostics])
    energy = np.array([d["energy"] for d in diagnostics])
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(5, 4.4), sharex=True)
    ax1.plot(times, min_det, marker="o", ms=3, color="#a85048")
    ax1.set_ylabel("min |det g|")
    ax2.plot(times, energy, marker="o", ms=3, color="#48a860")
    ax2.set_ylabel("velocity energy")
    ax2.set_xlabel("t")
    ax1.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def constancy_figure(quantities: dict, title: str, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for name, vals in quantities.items():
        vals = np.asarray(vals, dtype=float)
        ax.plot(np.arange(len(vals)), vals, marker=".", ms=4, lw=0.8, label=name)
    ax.set_xlabel("sample index")
    ax.set_ylabel("value")
    ax.set_title(title)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
