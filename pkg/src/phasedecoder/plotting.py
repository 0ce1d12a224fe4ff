"""Heatmaps and curves written next to the numeric outputs.

Figures are for people, not for checking results: every numeric quantity
that matters is also written to a PFM or CSV file.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

#: cyclic, perceptually uniform colormap used for all phase maps
PHASE_CMAP = "twilight"

_RC = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "savefig.dpi": 120,
    "figure.dpi": 120,
}


def _extent(n_x, n_y, step):
    return [0, n_x * step, n_y * step, 0]


def _save(fig, path):
    # no timestamps in the file, so identical inputs give identical bytes
    fig.savefig(path, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)


def phase_heatmap(path, phase: np.ndarray, pixel_size: float = 1.0, title: str = "phase"):
    """Phase map wrapped to [0, 2 pi) with a fixed colour range."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.2, 3.6))
        wrapped = np.mod(phase, 2 * np.pi)
        im = ax.imshow(wrapped, cmap=PHASE_CMAP, vmin=0, vmax=2 * np.pi,
                       extent=_extent(phase.shape[1], phase.shape[0], pixel_size))
        cb = fig.colorbar(im, ax=ax, ticks=[0, np.pi, 2 * np.pi])
        cb.ax.set_yticklabels(["0", "π", "2π"])
        cb.set_label("rad")
        ax.set_xlabel("x (µm)")
        ax.set_ylabel("y (µm)")
        ax.set_title(title)
        _save(fig, path)


def pupil_phase_heatmap(path, pupil: np.ndarray, cutoff: float, freq_step: float,
                        title: str = "pupil phase"):
    """Centered pupil phase; pixels outside the aperture are left blank."""
    centered = np.fft.fftshift(pupil)
    ph = np.mod(np.angle(centered), 2 * np.pi)
    ph[np.abs(centered) == 0] = np.nan
    ny, nx = ph.shape
    half = 1.3 * cutoff
    ext = [-nx / 2 * freq_step, nx / 2 * freq_step, ny / 2 * freq_step, -ny / 2 * freq_step]
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.2, 3.6))
        im = ax.imshow(ph, cmap=PHASE_CMAP, vmin=0, vmax=2 * np.pi, extent=ext)
        cb = fig.colorbar(im, ax=ax, ticks=[0, np.pi, 2 * np.pi])
        cb.ax.set_yticklabels(["0", "π", "2π"])
        ax.set_xlim(-half, half)
        ax.set_ylim(half, -half)
        ax.set_xlabel("fx (cycles/µm)")
        ax.set_ylabel("fy (cycles/µm)")
        ax.set_title(title)
        _save(fig, path)


def loss_curve(path, iterations, losses, title: str = "loss"):
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        losses = np.asarray(losses, dtype=float)
        ax.semilogy(iterations, np.maximum(losses, np.finfo(float).tiny), lw=1.2)
        ax.set_xlabel("iteration")
        ax.set_ylabel("‖Y − G‖²")
        ax.set_title(title)
        ax.grid(True, which="both", alpha=0.3)
        _save(fig, path)


def comparison_panel(path, reconstructed: np.ndarray, truth: np.ndarray,
                     pixel_size: float = 1.0, rmse: float = None):
    """Truth, reconstruction (offset-aligned to the truth) and their wrapped difference."""
    diff = np.angle(np.exp(1j * (reconstructed - truth)))
    offset = np.angle(np.mean(np.exp(1j * diff)))
    aligned = reconstructed - offset
    resid = np.angle(np.exp(1j * (aligned - truth)))
    ext = _extent(truth.shape[1], truth.shape[0], pixel_size)
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, 3, figsize=(10, 3.2))
        for ax, img, name in zip(axes[:2], (truth, aligned), ("truth", "reconstruction")):
            im = ax.imshow(np.mod(img, 2 * np.pi), cmap=PHASE_CMAP, vmin=0,
                           vmax=2 * np.pi, extent=ext)
            ax.set_title(name)
        fig.colorbar(im, ax=axes[:2], shrink=0.8, label="rad")
        lim = max(np.max(np.abs(resid)), 1e-6)
        im = axes[2].imshow(resid, cmap="RdBu_r", vmin=-lim, vmax=lim, extent=ext)
        fig.colorbar(im, ax=axes[2], shrink=0.8, label="rad")
        axes[2].set_title("difference" if rmse is None else f"difference (rmse {rmse:.3g} rad)")
        _save(fig, path)
