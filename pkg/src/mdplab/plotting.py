"""Optional figures for the CLI (headless Agg backend)."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.figsize": (5.0, 3.2),
}


def navigation_figure(curve, path) -> None:
    """Distance of the empirical exploration measure to the minor's invariant set against T."""
    pts = [(T, d) for T, d in zip(curve.horizons, curve.distances) if not math.isnan(d)]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        if pts:
            T, d = zip(*pts)
            ax.plot(T, d, marker="o", color="#1f4e79")
        ax.set_xscale("log")
        ax.set_xlabel("horizon T")
        ax.set_ylabel("L-inf distance")
        ax.set_ylim(bottom=0)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def mu_figure(report, path) -> None:
    """Bar chart of the optimal exploration measure, one bar per action (infinite bars hatched)."""
    names = list(report.model.actions)
    values = [float(v) for v in report.mu]
    finite = [v for v in values if math.isfinite(v)]
    cap = 1.1 * max(finite) if finite and max(finite) > 0 else 1.0
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(4.0, 0.6 * len(names) + 1.5), 3.2))
        bars = ax.bar(names, [v if math.isfinite(v) else cap for v in values], color="#1f4e79")
        for bar, v in zip(bars, values):
            if not math.isfinite(v):
                bar.set_hatch("//")
                bar.set_facecolor("white")
                bar.set_edgecolor("#1f4e79")
        ax.set_ylabel("mu*(x)")
        ax.set_title(f"{report.method}: value {report.value:.6g}", fontsize=9)
        ax.tick_params(axis="x", rotation=45)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
