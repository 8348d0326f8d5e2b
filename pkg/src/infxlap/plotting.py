"""Static figures written next to the CSV/JSON outputs (Agg backend, no display)."""

from __future__ import annotations

import os
import tempfile

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .grid import GridFunction  # noqa: E402

__all__ = ["plot_solution", "plot_loglog", "plot_triple", "plot_harnack", "plot_history"]

_RC = {
    "figure.dpi": 100,
    "savefig.dpi": 120,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "svg.hashsalt": "infxlap",
}


def _save(fig, path):
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.splitext(path)[1])
    os.close(fd)
    try:
        # fixed metadata keeps repeated runs byte-identical
        fig.savefig(tmp, metadata={"Software": None})
        os.replace(tmp, path)
    finally:
        plt.close(fig)
        if os.path.exists(tmp):
            os.unlink(tmp)


def _masked(u: GridFunction) -> np.ndarray:
    return np.ma.masked_invalid(np.where(u.domain.active_mask, u.values, np.nan)).T


def _extent(u: GridFunction):
    d = u.domain
    x0, y0 = d.origin
    return (x0, x0 + (d.nx - 1) * d.h, y0, y0 + (d.ny - 1) * d.h)


def plot_solution(u: GridFunction, path, title: str = "solution"):
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.2, 3.6))
        im = ax.imshow(_masked(u), origin="lower", extent=_extent(u), cmap="viridis")
        ax.contour(_masked(u), levels=12, origin="lower", extent=_extent(u), colors="k", linewidths=0.4)
        ax.set_xlabel("x")
        ax.set_ylabel("y")
        ax.set_title(title)
        ax.grid(False)
        fig.colorbar(im, ax=ax)
        fig.tight_layout()
        _save(fig, path)


def plot_triple(um: GridFunction, h: GridFunction, up: GridFunction, path):
    """The three solutions side by side plus ``u_plus - u_minus``."""
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, 4, figsize=(12, 3.0))
        for ax, f, t in zip(axes, (um, h, up, up - um), ("u_minus", "h", "u_plus", "u_plus - u_minus")):
            im = ax.imshow(_masked(f), origin="lower", extent=_extent(f), cmap="viridis")
            ax.set_title(t)
            ax.grid(False)
            fig.colorbar(im, ax=ax, shrink=0.8)
        fig.tight_layout()
        _save(fig, path)


def plot_loglog(x, series: dict, path, xlabel: str, ylabel: str, title: str = None):
    """One line per entry of ``series``; nonpositive values are dropped."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.2, 3.4))
        x = np.asarray(x, float)
        for name, ys in series.items():
            ys = np.asarray(ys, float)
            ok = np.isfinite(ys) & (ys > 0)
            if ok.any():
                ax.loglog(x[ok], ys[ok], "o-", label=name, ms=4)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        if ax.get_legend_handles_labels()[0]:
            ax.legend(frameon=False)
        fig.tight_layout()
        _save(fig, path)


def plot_harnack(sups, ratios, path, bound: dict = None):
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.2, 3.4))
        s = np.asarray(sups, float)
        ax.plot(s, ratios, "o", ms=4, label="sup/(inf+R)")
        if bound and bound.get("finite"):
            xs = np.linspace(0.0, max(1e-12, float(s.max())) * 1.05, 50)
            ax.plot(xs, bound["a"] + bound["b"] * xs, "-", lw=1, label="fitted bound")
        ax.set_xlabel("sup over B_2R")
        ax.set_ylabel("Harnack ratio")
        ax.legend(frameon=False)
        fig.tight_layout()
        _save(fig, path)


def plot_history(values, path, ylabel: str = "residual"):
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.2, 3.0))
        v = np.asarray(values, float)
        ok = np.isfinite(v) & (v > 0)
        if ok.any():
            ax.semilogy(np.arange(v.size)[ok], v[ok], "-")
        ax.set_xlabel("check")
        ax.set_ylabel(ylabel)
        fig.tight_layout()
        _save(fig, path)
