"""Figure rendering over the delimited results: progress curves with quartile
bands plus a kernel-density portrait of the final-solution distribution."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from scipy.stats import gaussian_kde

from .harness import Aggregate

_COLORS = ("#d62728", "#2ca02c", "#9467bd", "#1f77b4", "#ff7f0e")


def _density_portrait(ax, finals: dict[str, np.ndarray], colors: dict[str, str]) -> None:
    """Vertical KDE (Silverman bandwidth) of each method's final values."""
    for method, values in finals.items():
        values = values[np.isfinite(values)]
        if values.size < 2 or np.ptp(values) < 1e-12:
            if values.size:
                ax.axhline(values.mean(), color=colors[method], lw=1.0)
            continue
        span = np.ptp(values)
        grid = np.linspace(values.min() - 0.2 * span, values.max() + 0.2 * span, 200)
        density = gaussian_kde(values, bw_method="silverman")(grid)
        ax.plot(density, grid, color=colors[method], lw=1.2)
        ax.fill_betweenx(grid, 0, density, color=colors[method], alpha=0.25)
    ax.set_xticks([])
    ax.set_xlabel("final density")


def _render_metric(
    aggregates: dict[str, Aggregate],
    finals: dict[str, dict[str, np.ndarray]],
    metric: str,
    ylabel: str,
    ground_energy: float | None,
    out_path: Path,
) -> None:
    fig, (ax, side) = plt.subplots(
        1, 2, figsize=(7.2, 4.0), sharey=True, gridspec_kw={"width_ratios": [4, 1]}
    )
    colors = {m: _COLORS[i % len(_COLORS)] for i, m in enumerate(aggregates)}
    for method, agg in aggregates.items():
        med = getattr(agg, f"{metric}_med")
        lo = getattr(agg, f"{metric}_q25")
        hi = getattr(agg, f"{metric}_q75")
        ax.plot(agg.n_obs, med, color=colors[method], label=method, lw=1.6)
        ax.fill_between(agg.n_obs, lo, hi, color=colors[method], alpha=0.2)
    if metric == "energy" and ground_energy is not None:
        ax.axhline(ground_energy, color="k", ls="--", lw=1.0, label="ground energy")
    if metric == "fidelity":
        ax.set_ylim(0.0, 1.02)
    ax.set_xlabel("observed points")
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=8)
    _density_portrait(side, {m: f[metric] for m, f in finals.items()}, colors)
    fig.tight_layout()
    fig.savefig(out_path, format="svg")
    plt.close(fig)


def render_report(
    aggregates: dict[str, Aggregate],
    finals: dict[str, dict[str, np.ndarray]],
    ground_energy: float | None,
    out_dir: Path,
) -> list[Path]:
    """Write energy.svg and fidelity.svg next to the CSV output."""
    paths = []
    for metric, ylabel, name in (
        ("energy", "energy", "energy.svg"),
        ("fidelity", "fidelity", "fidelity.svg"),
    ):
        path = Path(out_dir) / name
        _render_metric(aggregates, finals, metric, ylabel, ground_energy, path)
        paths.append(path)
    return paths
