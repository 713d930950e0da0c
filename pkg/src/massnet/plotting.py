"""Report figures rendered to PNG with the non-interactive Agg backend.

Figures carry no timestamps or version strings, so reruns write identical
bytes; ``note`` is stored as the PNG comment.
"""

from __future__ import annotations

from pathlib import Path
from typing import Dict, Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .network import GateCurve  # noqa: E402

def _save(fig, path, note: str = "") -> Path:
    path = Path(path)
    meta = {"Software": None}
    if note:
        meta["Comment"] = note
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=meta)
    plt.close(fig)
    return path


def annual_boxplot(values: Mapping[str, Sequence[float]], path, title: str = "",
                   note: str = "") -> Path:
    """One box of annual KGE_ss per model."""
    fig, ax = plt.subplots(figsize=(1.6 + 1.2 * len(values), 4))
    labels = list(values)
    ax.boxplot([np.asarray(values[k], dtype=float) for k in labels], whis=(5, 95))
    ax.set_xticks(range(1, len(labels) + 1), labels, rotation=20, ha="right")
    ax.set_ylabel("annual KGE$_{ss}$")
    ax.axhline(0.0, color="0.6", lw=0.8, ls=":")
    if title:
        ax.set_title(title)
    return _save(fig, path, note)


def hydrograph(dates, obs, sim, path, title: str = "", note: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(10, 3.5))
    t = np.asarray(dates, dtype="datetime64[D]")
    ax.plot(t, obs, color="k", lw=0.8, label="observed")
    ax.plot(t, sim, color="tab:red", lw=0.8, label="simulated")
    ax.set_ylabel("streamflow (mm/day)")
    ax.legend(loc="upper right", frameon=False)
    if title:
        ax.set_title(title)
    return _save(fig, path, note)


def gate_curves(curves: Mapping[str, GateCurve], path, title: str = "",
                note: str = "") -> Path:
    """Output gate against own storage, one line per node."""
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    for label, curve in curves.items():
        (line,) = ax.plot(curve.x, curve.g_out, lw=1.0, label=label)
        if np.isfinite(curve.threshold):
            ax.axvline(curve.threshold, color=line.get_color(), lw=0.6, ls=":")
    ax.set_xlabel("cell state X (mm)")
    ax.set_ylabel("output gate $G^O$")
    ax.legend(fontsize=7, frameon=False)
    if title:
        ax.set_title(title)
    return _save(fig, path, note)


def timeseries_panels(cols: Dict[str, np.ndarray], path, title: str = "",
                      note: str = "") -> Path:
    """States, output gates and cumulative path shares of one water year."""
    groups = [("X_", "cell state (mm)"), ("GO_", "output gate"), ("Qratio_", "path share")]
    fig, axes = plt.subplots(len(groups) + 1, 1, figsize=(9, 9), sharex=True)
    t = np.asarray(cols["date"], dtype="datetime64[D]")
    axes[0].plot(t, cols["q_sim"], color="k", lw=0.8)
    axes[0].set_ylabel("q (mm/day)")
    for ax, (prefix, ylabel) in zip(axes[1:], groups):
        for name, series in cols.items():
            if name.startswith(prefix):
                ax.plot(t, series, lw=0.8, label=name[len(prefix):])
        ax.set_ylabel(ylabel)
        ax.legend(loc="upper right", fontsize=7, ncol=4, frameon=False)
    if title:
        axes[0].set_title(title)
    return _save(fig, path, note)


def training_curves(history: np.ndarray, path, note: str = "") -> Path:
    """Training KGE per epoch, one line per restart."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    h = np.asarray(history, dtype=float).reshape(-1, 5)
    for r in np.unique(h[:, 0]):
        rows = h[h[:, 0] == r]
        ax.plot(rows[:, 1], rows[:, 3], lw=0.8, label=f"restart {int(r)}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("training KGE")
    if h.shape[0] and len(np.unique(h[:, 0])) <= 10:
        ax.legend(fontsize=7, frameon=False)
    return _save(fig, path, note)
