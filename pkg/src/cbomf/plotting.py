"""Figure rendering for CLI reports.

Everything draws on the non-interactive Agg canvas and writes straight to
files; nothing here is needed by the numerical modules.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 6.0 * (math.sqrt(5) - 1) / 2),
    "figure.dpi": 120,
    "font.size": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "lines.linewidth": 1.4,
    "savefig.bbox": "tight",
}


def _save(fig, path: Path) -> Path:
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_optimize(path: Path, t: np.ndarray, variance: np.ndarray, dist: Optional[np.ndarray]) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.semilogy(t, np.maximum(variance, 1e-300), label="ensemble variance")
        if dist is not None:
            ax.semilogy(t, np.maximum(dist, 1e-300), label=r"$|X_\alpha - x^*|$")
        ax.set_xlabel("t")
        ax.legend()
        return _save(fig, path)


def plot_fphi(path: Path, n_list, mean_sq, stderr, slope: float, intercept: Optional[float]) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.errorbar(n_list, mean_sq, yerr=2 * np.asarray(stderr), fmt="o", capsize=3, label=r"$E|F_\varphi|^2$")
        if intercept is not None and math.isfinite(slope):
            n = np.asarray(n_list, dtype=float)
            ax.plot(n, np.exp(intercept) * n**slope, "--", label=f"fit, slope {slope:.3f}")
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("N")
        ax.legend()
        return _save(fig, path)


def plot_convergence(path: Path, rows: Sequence[tuple], medians: dict, ylabel: str) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ns = np.array([r[0] for r in rows], dtype=float)
        vs = np.array([r[2] for r in rows], dtype=float)
        ax.plot(ns, vs, ".", alpha=0.4, label="seeds")
        keys = np.array(list(medians), dtype=float)
        ax.plot(keys, list(medians.values()), "o-", label="median")
        ax.plot(keys, medians[int(keys[0])] * np.sqrt(keys[0] / keys), ":", label=r"$N^{-1/2}$")
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("N")
        ax.set_ylabel(ylabel)
        ax.legend()
        return _save(fig, path)


def plot_laplace(path: Path, alphas, gaps: np.ndarray, n_points: int) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        a = np.asarray(alphas, dtype=float)
        for g in gaps:
            ax.plot(a, np.maximum(g, 1e-300), color="0.6", alpha=0.3)
        ax.plot(a, math.log(n_points) / a, "k--", label=r"$\log n/\alpha$")
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel(r"$\alpha$")
        ax.set_ylabel(r"$L_\alpha - \min$")
        ax.legend()
        return _save(fig, path)


def plot_density(path: Path, centers, masses, h: float, sample: Optional[np.ndarray], edges=None) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(centers, np.asarray(masses) / h, label="grid density")
        if sample is not None and edges is not None:
            ax.hist(sample, bins=edges, density=True, alpha=0.4, label="particles")
        ax.set_xlabel("x")
        ax.legend()
        return _save(fig, path)


def plot_pso(path: Path, t, m4, x_alpha) -> Path:
    with plt.rc_context(STYLE):
        fig, (a0, a1) = plt.subplots(2, 1, sharex=True)
        a0.plot(t, m4)
        a0.set_ylabel(r"$m_4(X) + m_4(V)$")
        a1.plot(t, x_alpha)
        a1.set_ylabel(r"$X_\alpha$")
        a1.set_xlabel("t")
        return _save(fig, path)


def plot_growth(path: Path, r: np.ndarray, values: np.ndarray, c_u: Optional[float], c_l: Optional[float], m: Optional[float]) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(r, values, ".", ms=2, alpha=0.5, label="samples")
        grid = np.linspace(0, r.max(), 200)
        if c_u is not None:
            ax.plot(grid, c_u * (1 + grid**2), "--", label=r"$C_u(1+|x|^2)$")
        if c_l is not None and m is not None:
            far = grid[grid >= m]
            ax.plot(far, c_l * far**2, ":", label=r"$C_l|x|^2$, $|x|\geq M$")
        ax.set_xlabel("|x|")
        ax.set_ylabel("E(x) - min")
        ax.legend()
        return _save(fig, path)


def plot_increments(path: Path, deltas, mean_sq, stderr, c_fit: float) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        d = np.asarray(deltas, dtype=float)
        ax.errorbar(d, mean_sq, yerr=2 * np.asarray(stderr), fmt="o", capsize=3, label=r"$E|\Delta X|^2$")
        ax.plot(d, c_fit * (np.sqrt(d) + d), "--", label=r"$C(\delta^{1/2}+\delta)$")
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel(r"$\delta$")
        ax.legend()
        return _save(fig, path)
