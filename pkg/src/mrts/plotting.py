"""Figures for reproduction runs, written next to the CSV tables."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

DPI = 120


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp.png")
    fig.savefig(tmp, dpi=DPI, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    tmp.replace(path)
    return path


def plot_sweep(x, y, xlabel, path, title=None) -> Path:
    """ISE against a scalar basis parameter."""
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.plot(x, y, "o-", ms=3, lw=1)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("ISE")
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_surfaces(grid, surfaces: dict, path) -> Path:
    """Heat maps of covariance functions on a 1-D grid, one panel each."""
    names = list(surfaces)
    vmin = min(float(np.min(s)) for s in surfaces.values())
    vmax = max(float(np.max(s)) for s in surfaces.values())
    fig, axes = plt.subplots(1, len(names), figsize=(3.0 * len(names), 3.0), squeeze=False)
    ext = (grid[0], grid[-1], grid[0], grid[-1])
    for ax, name in zip(axes[0], names):
        im = ax.imshow(surfaces[name], origin="lower", extent=ext, vmin=vmin, vmax=vmax, cmap="viridis")
        ax.set_title(name)
        ax.set_xlabel("s")
    axes[0][0].set_ylabel("s*")
    fig.colorbar(im, ax=axes[0].tolist(), shrink=0.8)
    return _save(fig, path)


def plot_table1(rows, path) -> Path:
    K = [r[0] for r in rows]
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.semilogy(K, [r[2] for r in rows], "s-", label="TPS grid")
    ax.semilogy(K, [r[3] for r in rows], "o-", label="MRTS")
    ax.set_xlabel("number of basis functions")
    ax.set_ylabel("ISE")
    ax.legend()
    ax.grid(alpha=0.3, which="both")
    return _save(fig, path)


def plot_mspe(summary, K_hat, path) -> Path:
    """Mean MSPE per method with 2-SE bars, plus the histogram of selected K."""
    names = [r[0] for r in summary]
    means = np.array([r[1] for r in summary])
    se = np.array([r[2] for r in summary])
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.4), gridspec_kw={"width_ratios": [2, 1]})
    a1.bar(range(len(names)), means, yerr=2 * np.nan_to_num(se), capsize=3, color="0.6")
    a1.set_xticks(range(len(names)), names, rotation=45, ha="right")
    a1.set_ylabel("mean MSPE")
    a1.set_yscale("log")
    k = np.asarray(K_hat)
    a2.hist(k, bins=np.arange(k.min() - 0.5, k.max() + 1.5), color="0.4")
    a2.set_xlabel("selected K")
    return _save(fig, path)


def render(result, outdir) -> list[Path]:
    """Draw the figures for a :class:`~mrts.experiments.ReproductionResult`."""
    outdir = Path(outdir)
    name, rows = result.name, result.rows
    if name == "fig2a":
        return [plot_sweep([r[0] for r in rows], [r[1] for r in rows], "radius r", outdir / "fig2a.png")]
    if name == "fig2b":
        return [plot_sweep([r[0] for r in rows], [r[1] for r in rows], "shift", outdir / "fig2b.png")]
    if name == "table1":
        return [plot_table1(rows, outdir / "table1.png")]
    if name == "table3":
        return [plot_mspe(result.summary, result.extras["K_hat"], outdir / "table3.png")]
    if name in ("fig1", "multires_demo"):
        ex = result.extras
        return [plot_surfaces(ex["grid"], ex["surfaces"], outdir / f"{name}.png")]
    return []
