"""Figure rendering for the pipeline's report outputs.

All plots are rasterized through the Agg backend with fixed style
parameters and stripped PNG metadata, so identical inputs produce
bit-identical files (golden-file friendly).
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .contact import ContactForceSignal  # noqa: E402
from .spectrum import PowerSpectrum  # noqa: E402

_RC = {
    "figure.figsize": (7.0, 4.0),
    "figure.dpi": 110,
    "savefig.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
}


def _save(fig: plt.Figure, path: str | Path) -> None:
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)


def save_spectrum_plot(ps: PowerSpectrum, selected_bins: np.ndarray,
                       path: str | Path) -> None:
    """Mean amplitude vs frequency with the selected modal band marked."""
    selected_bins = np.asarray(selected_bins, dtype=int)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        ax.plot(ps.bin_frequencies, ps.amplitudes, color="tab:blue", lw=1.0,
                label="mean amplitude")
        ax.plot(ps.bin_frequencies[selected_bins], ps.amplitudes[selected_bins],
                "o", color="tab:orange", ms=3.5, label="selected modes")
        if selected_bins.size:
            ax.axvspan(ps.bin_frequencies[selected_bins[0]],
                       ps.bin_frequencies[selected_bins[-1]],
                       color="tab:orange", alpha=0.12)
        ax.set_xlabel("frequency [Hz]")
        ax.set_ylabel("mean amplitude")
        ax.set_title("Motion spectrum")
        ax.legend(loc="upper right")
        fig.tight_layout()
        _save(fig, path)


def save_signal_plot(signal: ContactForceSignal, path: str | Path) -> None:
    """Contact force components and norm over time."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        t = signal.times
        ax.plot(t, signal.u, lw=0.9, label="u", color="tab:blue")
        ax.plot(t, signal.v, lw=0.9, label="v", color="tab:green")
        ax.plot(t, signal.norm, lw=1.2, label="norm", color="tab:red")
        ax.set_xlabel("time [s]")
        ax.set_ylabel("contact force [a.u.]")
        ax.set_title("Estimated contact force")
        ax.legend(loc="upper right")
        fig.tight_layout()
        _save(fig, path)


def save_alignment_plot(pred: np.ndarray, ref: np.ndarray, lag: int, cc: float,
                        fps: float, path: str | Path) -> None:
    """Z-normalized prediction vs reference at the optimal lag."""
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        t = np.arange(pred.shape[0]) / fps
        ax.plot(t, pred, lw=1.0, label="prediction", color="tab:red")
        ax.plot(t - lag / fps, ref, lw=1.0, label=f"reference (lag {lag})",
                color="tab:gray")
        ax.set_xlabel("time [s]")
        ax.set_ylabel("z-normalized force")
        ax.set_title(f"Alignment, CC = {cc:.3f}")
        ax.legend(loc="upper right")
        fig.tight_layout()
        _save(fig, path)
