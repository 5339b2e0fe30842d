"""Matplotlib figures written next to the CSV and JSON report files."""
from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)


def field_png(path, domain, values, title: str, cmap: str = "viridis") -> None:
    a = np.where(domain.inside, values, np.nan)
    if domain.n == 3:
        a = a[:, :, a.shape[2] // 2]
    x0, x1 = domain.axis_coords(0)[[0, -1]]
    y0, y1 = domain.axis_coords(1)[[0, -1]]
    fig, ax = plt.subplots(figsize=(5, 4.2))
    im = ax.imshow(a.T, origin="lower", extent=(x0, x1, y0, y1), cmap=cmap, interpolation="nearest")
    fig.colorbar(im, ax=ax)
    ax.set_title(title)
    ax.set_aspect("equal")
    _save(fig, path)


def bars_png(path, labels, values, title: str, ylabel: str = "", log: bool = False) -> None:
    vals = np.array([v if math.isfinite(v) else np.nan for v in values], dtype=float)
    fig, ax = plt.subplots(figsize=(max(4.0, 0.25 * len(vals) + 2), 3.5))
    ax.bar(np.arange(len(vals)), vals, color="0.3")
    if log and np.nanmin(vals) > 0:
        ax.set_yscale("log")
    if len(vals) <= 40:
        ax.set_xticks(np.arange(len(vals)))
        ax.set_xticklabels([str(s)[:14] for s in labels], rotation=60, ha="right", fontsize=7)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    _save(fig, path)


def ladder_png(path, xs, series: dict, title: str, xlabel: str, ylabel: str, logx=True, logy=True) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for name, ys in series.items():
        ax.plot(xs, ys, marker="o", label=name)
    if logx:
        ax.set_xscale("log", base=2)
    if logy:
        ax.set_yscale("log", base=2)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if len(series) > 1:
        ax.legend(fontsize=8)
    _save(fig, path)


def decay_png(path, fit) -> None:
    js = np.asarray(fit.js)
    e = np.log2(np.asarray(fit.energies))
    fig, ax = plt.subplots(figsize=(5, 3.6))
    ax.plot(js, e, "o", color="0.2", label="log2 energy")
    if fit.slope is not None:
        b = np.polyfit(js, e, 1)
        ax.plot(js, np.polyval(b, js), "-", color="0.5", label=f"fit slope {fit.slope:.3f}")
    ax.set_xlabel("j")
    ax.set_ylabel("log2 energy(u_j)")
    ax.set_title(f"p={fit.p:g}, beta={fit.beta:g}, expected slope {fit.expected:g}")
    ax.legend(fontsize=8)
    _save(fig, path)
