"""PNG figures for pipeline artifacts (Agg backend)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)


def plot_profile(path, x, U, labels=None):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for j in range(U.shape[1]):
        ax.plot(x, U[:, j], label=labels[j] if labels else f"U[{j}]")
    ax.set_xlabel("x")
    ax.legend()
    ax.grid(alpha=0.3)
    _save(fig, path)


def plot_spectrum(path, eigenvalues, selected=()):
    lam = np.asarray(eigenvalues)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(lam.real, lam.imag, ".", ms=2, color="0.5")
    sel = np.asarray(selected, complex)
    if sel.size:
        ax.plot(sel.real, sel.imag, "o", mfc="none", color="C3")
    ax.axvline(0.0, color="k", lw=0.5)
    ax.set_xlim(max(lam.real.min(), -5.0), max(1.0, 1.2 * lam.real.max()))
    ax.set_ylim(-5, 5)
    ax.set_xlabel("Re")
    ax.set_ylabel("Im")
    _save(fig, path)


def plot_decay(path, t, series: dict, fits: dict = None):
    fig, ax = plt.subplots(figsize=(6, 4))
    for i, (name, y) in enumerate(series.items()):
        y = np.asarray(y)
        ok = (y > 0) & (t > 0)
        ax.loglog(1 + t[ok], y[ok], color=f"C{i}", label=name)
        if fits and name in fits and fits[name] is not None:
            slope, icpt = fits[name]
            if np.isfinite(slope) and np.isfinite(icpt):
                ax.loglog(1 + t[ok], np.exp(icpt) * (1 + t[ok]) ** slope, "--", color=f"C{i}", lw=0.8)
    ax.set_xlabel("1 + t")
    ax.legend()
    ax.grid(alpha=0.3, which="both")
    _save(fig, path)


def plot_xy(path, x, ys: dict, logx=False, logy=False, xlabel="", hline=None):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, y in ys.items():
        ax.plot(x, y, ".-", label=name)
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    if hline is not None:
        ax.axhline(hline, color="k", lw=0.6, ls=":")
    ax.set_xlabel(xlabel)
    ax.legend()
    ax.grid(alpha=0.3)
    _save(fig, path)
