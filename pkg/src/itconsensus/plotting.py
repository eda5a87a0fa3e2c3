"""Figures written next to the CSV outputs."""

from __future__ import annotations

import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

log = logging.getLogger(__name__)

OFF_COLOR = "0.85"


def off_intervals(t: np.ndarray, mode: np.ndarray) -> list[tuple[float, float]]:
    """Contiguous OFF stretches of a sampled mode signal."""
    off = np.asarray(mode) == 0
    if not off.any():
        return []
    edges = np.diff(off.astype(int))
    starts = list(np.flatnonzero(edges == 1) + 1)
    ends = list(np.flatnonzero(edges == -1) + 1)
    if off[0]:
        starts.insert(0, 0)
    if off[-1]:
        ends.append(len(off) - 1)
    return [(float(t[a]), float(t[b])) for a, b in zip(starts, ends)]


def shade_off(ax, t, mode):
    for a, b in off_intervals(t, mode):
        ax.axvspan(a, b, color=OFF_COLOR, lw=0, zorder=0)


def _save(fig, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    log.info("wrote %s", path)
    return path


def plot_virtual_tracking(t, mode, eta, zbar, path):
    """``eta_{i,q}`` against the matching leader derivative, one panel per ``q``."""
    n = eta.shape[2]
    fig, axes = plt.subplots(n, 1, figsize=(7, 2.6 * n), sharex=True, squeeze=False)
    for q in range(n):
        ax = axes[q, 0]
        shade_off(ax, t, mode)
        for i in range(eta.shape[1]):
            ax.plot(t, eta[:, i, q], lw=1.0, label=rf"$\eta_{{{i + 1},{q + 1}}}$")
        ax.plot(t, zbar[:, q], "k--", lw=1.2, label=r"$z_r$" if q == 0 else rf"$z_r^{{({q})}}$")
        ax.legend(loc="upper right", fontsize=7, ncol=3)
    axes[-1, 0].set_xlabel("t [s]")
    return _save(fig, Path(path))


def plot_output_tracking(t, mode, x, z_r, path):
    fig, ax = plt.subplots(figsize=(7, 3))
    shade_off(ax, t, mode)
    for i in range(x.shape[1]):
        ax.plot(t, x[:, i, 0], lw=1.0, label=rf"$x_{{{i + 1},1}}$")
    ax.plot(t, z_r, "k--", lw=1.2, label=r"$z_r$")
    ax.set_xlabel("t [s]")
    ax.legend(loc="upper right", fontsize=7, ncol=5)
    return _save(fig, Path(path))


def plot_lyapunov(t, mode, Ve, bound, path):
    fig, ax = plt.subplots(figsize=(7, 3))
    shade_off(ax, t, mode)
    ax.semilogy(t, np.maximum(Ve, 1e-16), lw=1.0, label=r"$V_e$")
    if bound is not None:
        ax.semilogy(t, bound, "r:", lw=1.0, label="global envelope")
    ax.set_xlabel("t [s]")
    ax.legend(fontsize=7)
    return _save(fig, Path(path))


def plot_ensemble(t, mode, abs_err, band, fraction, path):
    """Spread of the worst-follower error across runs and the in-band fraction."""
    worst = abs_err.max(axis=2)
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    shade_off(ax1, t, mode)
    lo, med, hi = np.percentile(worst, [5, 50, 95], axis=0)
    ax1.fill_between(t, lo, hi, alpha=0.3, label="5-95 %")
    ax1.plot(t, med, lw=1.0, label="median")
    if band is not None:
        ax1.plot(t, band, "r--", lw=1.0, label="band")
    ax1.set_yscale("log")
    ax1.set_ylabel(r"$\max_i |z_i - z_r|$")
    ax1.legend(fontsize=7)
    ax2.plot(t, fraction, lw=1.0)
    ax2.set_ylim(-0.02, 1.02)
    ax2.set_ylabel("fraction in band")
    ax2.set_xlabel("t [s]")
    return _save(fig, Path(path))


def trace_figures(trace, out_dir, envelope_bound=None) -> list[Path]:
    out = Path(out_dir)
    n = trace.eta.shape[2]
    zbar = np.stack([trace.setup.leader.derivative(trace.t, l) for l in range(n)], axis=1) if trace.setup else None
    paths = []
    if zbar is not None:
        paths.append(plot_virtual_tracking(trace.t, trace.mode, trace.eta, zbar, out / "virtual_tracking.png"))
    paths.append(plot_output_tracking(trace.t, trace.mode, trace.x, trace.z_r, out / "output_tracking.png"))
    paths.append(plot_lyapunov(trace.t, trace.mode, trace.Ve, envelope_bound, out / "lyapunov.png"))
    return paths
