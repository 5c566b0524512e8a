"""SVG figures for a finished experiment."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams["svg.hashsalt"] = "didsim"

_SVG_META = {"Date": None}


def _save(fig, path: Path) -> str:
    fig.savefig(path, format="svg", metadata=_SVG_META, bbox_inches="tight")
    plt.close(fig)
    return path.name


def plot_bias(paired, codings, out_dir: Path, size: str = "large") -> str:
    """Percent directional bias against the number of treated states, one line per model."""
    fig, axes = plt.subplots(1, len(codings), figsize=(5 * len(codings), 4), sharey=True, squeeze=False)
    sub = paired[(paired["effect_size"] == size)]
    # bias does not depend on the SE method, so take one row per model and n_trt
    sub = sub.drop_duplicates(["coding", "model", "n_trt"])
    for ax, speed in zip(axes[0], codings):
        for model, grp in sub[sub["coding"] == speed].groupby("model", sort=True):
            grp = grp.sort_values("n_trt")
            ax.plot(grp["n_trt"], grp["pct_bias"], marker="o", label=model)
        ax.axhline(0.0, color="grey", lw=0.8)
        ax.set_title(f"{speed} coding, {size} effect")
        ax.set_xlabel("treated states")
    axes[0][0].set_ylabel("directional bias, % of target")
    axes[0][-1].legend(fontsize="small")
    return _save(fig, out_dir / f"bias_{size}.svg")


def plot_type_i(null_summary, codings, out_dir: Path) -> str:
    """Null rejection rate against the number of treated states, per model and SE method."""
    fig, axes = plt.subplots(1, len(codings), figsize=(5 * len(codings), 4), sharey=True, squeeze=False)
    for ax, speed in zip(axes[0], codings):
        sub = null_summary[null_summary["coding"] == speed]
        for (model, se), grp in sub.groupby(["model", "se_adj"], sort=True):
            grp = grp.sort_values("n_trt")
            ax.plot(grp["n_trt"], grp["type_i"], marker=".", label=f"{model} / {se}")
        ax.axhline(0.05, color="grey", ls="--", lw=0.8)
        ax.set_title(f"{speed} coding")
        ax.set_xlabel("treated states")
    axes[0][0].set_ylabel("Type I error rate")
    axes[0][-1].legend(fontsize="x-small")
    return _save(fig, out_dir / "type_i.svg")


def plot_power_heatmap(paired, codings, out_dir: Path) -> list[str]:
    """Corrected rejection rate, models by (effect size, treated states), one figure per coding."""
    names = []
    sizes = [s for s in ("small", "medium", "large") if s in set(paired["effect_size"])]
    for speed in codings:
        sub = paired[paired["coding"] == speed]
        rows = sorted({(m, se) for m, se in zip(sub["model"], sub["se_adj"])})
        cols = [(s, n) for s in sizes for n in sorted(set(sub["n_trt"]))]
        grid = np.full((len(rows), len(cols)), np.nan)
        idx = sub.set_index(["model", "se_adj", "effect_size", "n_trt"])["power"]
        for i, (m, se) in enumerate(rows):
            for j, (s, n) in enumerate(cols):
                grid[i, j] = idx.get((m, se, s, n), np.nan)
        fig, ax = plt.subplots(figsize=(1 + 0.6 * len(cols), 1 + 0.35 * len(rows)))
        im = ax.imshow(grid, vmin=0, vmax=1, cmap="viridis", aspect="auto")
        ax.set_yticks(range(len(rows)), [f"{m} / {se}" for m, se in rows], fontsize="x-small")
        ax.set_xticks(range(len(cols)), [f"{s[0]}{n}" for s, n in cols], fontsize="x-small")
        ax.set_xlabel("effect size initial and treated states")
        ax.set_title(f"corrected rejection rate, {speed} coding")
        fig.colorbar(im, ax=ax)
        names.append(_save(fig, out_dir / f"power_{speed}.svg"))
    return names


def write_plots(results, out_dir) -> list[str]:
    out_dir = Path(out_dir)
    codings = list(results.config.coding_speeds)
    files = [plot_type_i(results.null_summary, codings, out_dir)]
    if len(results.paired):
        files.append(plot_bias(results.paired, codings, out_dir))
        files.extend(plot_power_heatmap(results.paired, codings, out_dir))
    return files
