"""Figure rendering for run reports (Agg backend, deterministic PNG output)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

TAP_LABELS = {"aec": "AEC", "bf": "AEC+BF", "pf": "AEC+BF+PF"}
# no timestamps or version strings, so reruns are byte-identical
_PNG_META = {"Software": None}


def _save(fig, path) -> None:
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)


def plot_erle(path, curves: dict, fs: int, onset: int | None = None, title: str = "") -> None:
    """ERLE over time for each tap point; a dashed line marks the talker onset."""
    fig, ax = plt.subplots(figsize=(8, 3.5))
    for tap, curve in curves.items():
        t = np.arange(len(curve)) / fs
        ax.plot(t, curve, lw=1.0, label=TAP_LABELS.get(tap, tap))
    if onset is not None and onset > 0:
        ax.axvline(onset / fs, color="k", ls="--", lw=0.8)
    ax.set_xlabel("time / s")
    ax.set_ylabel("ERLE / dB")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="lower right")
    fig.tight_layout()
    _save(fig, path)


def mean_curves(curve_sets: list[dict]) -> dict:
    """Average per-tap curves over scenarios, truncated to the shortest."""
    out = {}
    taps = [t for t in curve_sets[0]] if curve_sets else []
    for tap in taps:
        arrs = [c[tap] for c in curve_sets if tap in c]
        n = min(len(a) for a in arrs)
        out[tap] = np.nanmean(np.stack([a[:n] for a in arrs]), axis=0)
    return out


def plot_summary(path, summary: dict, keys=("E_dB", "N_dB")) -> None:
    """Grouped bars of the scenario-averaged metrics per tap and phase."""
    taps = [t for t in TAP_LABELS if any(k[0] == t for k in summary)]
    phases = ("single", "double")
    fig, axes = plt.subplots(1, len(keys), figsize=(4 * len(keys), 3.5), squeeze=False)
    width = 0.8 / max(len(taps), 1)
    for ax, key in zip(axes[0], keys):
        for i, tap in enumerate(taps):
            vals = [summary.get((tap, ph), {}).get(key, np.nan) for ph in phases]
            ax.bar(np.arange(len(phases)) + i * width, np.nan_to_num(vals), width, label=TAP_LABELS[tap])
        ax.set_xticks(np.arange(len(phases)) + width * (len(taps) - 1) / 2)
        ax.set_xticklabels(["single-talk", "double-talk"])
        ax.set_ylabel(key.replace("_dB", " / dB"))
        ax.grid(True, axis="y", alpha=0.3)
    axes[0][0].legend(loc="upper left", fontsize="small")
    fig.tight_layout()
    _save(fig, path)
