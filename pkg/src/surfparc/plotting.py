"""Report figures, rendered off-screen to PNG."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

SURFACE_COLORS = {"inner": "tab:blue", "central": "tab:green", "outer": "tab:red"}

# no timestamps in the files, so repeated runs write identical bytes
_PNG_METADATA = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=120, metadata=_PNG_METADATA)
    plt.close(fig)
    return path


def dsc_boxplot(per_surface: dict[str, list[float]], path, title: str = "Per-label Dice") -> Path:
    """One box per surface over all per-label DSC values."""
    names = [n for n in ("inner", "central", "outer") if n in per_surface]
    fig, ax = plt.subplots(figsize=(5, 4))
    data = [np.asarray(per_surface[n], dtype=float) for n in names]
    box = ax.boxplot(data, patch_artist=True)
    ax.set_xticks(range(1, len(names) + 1), names)
    for patch, name in zip(box["boxes"], names):
        patch.set_facecolor(SURFACE_COLORS[name])
        patch.set_alpha(0.5)
    ax.set_ylabel("DSC")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title(title)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def metric_scatter(scan, rescan, path, metric: str, unit: str, r: float | None = None) -> Path:
    """Scan against rescan values with the identity line."""
    scan = np.asarray(scan, dtype=float)
    rescan = np.asarray(rescan, dtype=float)
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.scatter(scan, rescan, s=14, alpha=0.7, color="tab:purple")
    if len(scan):
        lo = float(min(scan.min(), rescan.min()))
        hi = float(max(scan.max(), rescan.max()))
        ax.plot([lo, hi], [lo, hi], color="0.4", lw=1, ls="--")
    ax.set_xlabel(f"scan {metric} ({unit})")
    ax.set_ylabel(f"rescan {metric} ({unit})")
    ax.set_title(metric if r is None else f"{metric}, r = {r:.3f}")
    fig.tight_layout()
    return _save(fig, path)
