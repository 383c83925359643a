"""Static SVG line plots of per-timestep cost with error bars."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed ids and no timestamp so reruns produce identical files
matplotlib.rcParams["svg.hashsalt"] = "filtered-pilco"

COLORS = {"pilco": "tab:blue", "dallaire": "tab:orange", "deisenroth2013": "tab:green", "ours": "tab:red"}


def plot_costs(curves: dict, path, title: str):
    """``curves`` maps a label to ``(mean, sd)`` arrays indexed by timestep."""
    fig, ax = plt.subplots(figsize=(7, 4.2))
    for k, (label, (mean, sd)) in enumerate(curves.items()):
        t = np.arange(len(mean))
        ax.errorbar(
            t + 0.15 * k, mean, yerr=sd, label=label, color=COLORS.get(label),
            linewidth=1.4, elinewidth=0.6, capsize=1.5, alpha=0.9,
        )
    ax.set_xlabel("timestep")
    ax.set_ylabel("cost")
    ax.set_ylim(-0.05, 1.25)
    ax.set_title(title)
    ax.legend(loc="lower left", frameon=False)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
