"""PNG figures for the CLI's ``--plot`` option.

Figures are built on bare :class:`matplotlib.figure.Figure` objects with the
Agg canvas, so nothing touches pyplot's global state or needs a display.
The CSV files remain the data of record; these are conveniences.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .dsp import Spectrum


def _new_figure(width=7.0, height=4.0):
    fig = Figure(figsize=(width, height))
    FigureCanvasAgg(fig)
    return fig, fig.add_subplot(111)


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    return path


def plot_spectra(path: Path, spectra: Mapping[str, Spectrum], noise_floor_dbm: float | None = None,
                 max_bin: int = 60, title: str = "") -> Path:
    """Overlay positive-frequency spectra (first ``max_bin`` bins)."""
    fig, ax = _new_figure()
    for label, s in spectra.items():
        k = np.arange(1, min(max_bin, s.n // 2))
        p = s.power_dbm[k]
        ax.plot(s.freqs[k] / 1e3, np.where(np.isfinite(p), p, np.nan), marker=".", lw=1,
                label=label)
    if noise_floor_dbm is not None:
        ax.axhline(noise_floor_dbm, color="0.5", ls="--", lw=0.8, label="thermal floor")
    ax.set_xlabel("beat frequency [kHz]")
    ax.set_ylabel("power [dBm]")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_trace(path: Path, trace: Sequence[tuple[float, float]], xlabel: str, ylabel: str,
               title: str = "", log_y: bool = True, mark_min: bool = True) -> Path:
    """One calibration sweep trace (candidate value vs metric)."""
    x = np.array([v for v, _ in trace], dtype=float)
    y = np.array([m for _, m in trace], dtype=float)
    fig, ax = _new_figure(6.0, 3.5)
    ok = np.isfinite(y) & ((y > 0) if log_y else True)
    ax.plot(x[ok], y[ok], marker=".", lw=1)
    if log_y:
        ax.set_yscale("log")
    if mark_min and ok.any():
        i = np.flatnonzero(ok)[np.argmin(y[ok])]
        ax.axvline(x[i], color="C3", lw=0.8, ls=":")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_sweep(path: Path, x: Sequence[float], columns: Mapping[str, Sequence[float]],
               xlabel: str, title: str = "") -> Path:
    """Sweep metrics against the swept parameter, one subplot per column."""
    fig = Figure(figsize=(6.0, 2.4 * len(columns)))
    FigureCanvasAgg(fig)
    axes = fig.subplots(len(columns), 1, sharex=True, squeeze=False)[:, 0]
    for ax, (name, ys) in zip(axes, columns.items()):
        y = np.asarray(ys, dtype=float)
        ax.plot(x, np.where(np.isfinite(y), y, np.nan), marker=".", lw=1)
        ax.set_ylabel(name, fontsize=8)
        ax.grid(alpha=0.3)
    axes[-1].set_xlabel(xlabel)
    axes[0].set_title(title)
    return _save(fig, path)
