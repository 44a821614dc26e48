"""PNG figures written next to the CSV outputs (Agg canvas, no display needed)."""
from __future__ import annotations

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

# no timestamps or version strings, so repeated runs give identical files
_META = {"Software": None}


def _figure():
    fig = Figure(figsize=(6.0, 4.0), dpi=100)
    FigureCanvasAgg(fig)
    return fig, fig.add_subplot(1, 1, 1)


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata=_META)


def plot_trace(path, t, y, yerr=None, model=None, xlabel="t", ylabel="transferred population",
               title=None):
    fig, ax = _figure()
    if yerr is not None:
        ax.fill_between(t, y - yerr, y + yerr, color="C0", alpha=0.25, lw=0)
    ax.plot(t, y, ".", ms=3, color="C0", label="simulated")
    if model is not None:
        tt = np.linspace(t[0], t[-1], 2000)
        ax.plot(tt, model(tt), "-", color="C3", lw=1, label="fit")
        ax.legend(loc="best")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    _save(fig, path)


def plot_scan(path, x, y, yerr=None, reference=None, xlabel="value", ylabel="objective", logy=False):
    fig, ax = _figure()
    ax.errorbar(x, y, yerr=yerr, fmt="o-", ms=4, capsize=2)
    if reference is not None:
        ax.axhline(reference, ls="--", color="m", label="no signal")
        ax.legend(loc="best")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    _save(fig, path)


def plot_loglog(path, t, curves: dict, xlabel="total measurement time t (s)", ylabel="dB_min (T)"):
    fig, ax = _figure()
    for label, y in curves.items():
        ax.loglog(t, y, "o-", ms=3, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend(loc="best")
    _save(fig, path)
