"""Synthetic phase targets, through-focus stacks, noise and reconstruction metrics."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .field import FocusStack, Grid2D, GridError, RealImage
from .forward import MeasurementModel, forward_stack
from .zernike import PupilGeometry, ZernikeBasis, defocus_phase, defocus_pupil, project_phase

TARGET_KINDS = ("flat", "disk-array", "bar-groups", "siemens-star", "custom-from-file")
NOISE_MODELS = ("none", "gaussian-on-intensity", "poisson")

#: through-focus schedule of the reference experiment, micrometers
REFERENCE_DEFOCUS_UM = (0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0)
#: four-plane subset used for the blind reconstruction
SUBSET_DEFOCUS_UM = (4.0, 8.0, 16.0, 32.0)


@dataclass(frozen=True)
class TargetSpec:
    kind: str = "disk-array"
    contrast: float = 0.95
    feature_scale: int = 8
    path: Optional[str] = None

    def __post_init__(self):
        if self.kind not in TARGET_KINDS:
            raise ValueError(f"unknown target kind {self.kind!r}; choose from {TARGET_KINDS}")
        if not 0 < self.contrast < 2 * np.pi:
            raise ValueError(f"contrast must lie in (0, 2 pi), got {self.contrast}")
        if self.feature_scale < 1:
            raise ValueError("feature_scale must be >= 1 pixel")
        if self.kind == "custom-from-file" and not self.path:
            raise ValueError("custom-from-file targets need a path")


@dataclass(frozen=True)
class NoiseSpec:
    model: str = "none"
    parameter: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.model not in NOISE_MODELS:
            raise ValueError(f"unknown noise model {self.model!r}; choose from {NOISE_MODELS}")
        if self.parameter < 0:
            raise ValueError("noise parameter must be >= 0")
        if self.model == "poisson" and self.parameter <= 0:
            raise ValueError("poisson noise needs a positive photon count")


@dataclass(frozen=True)
class MetricsReport:
    rmse_offset_free: float
    psnr: float
    zernike_error: Optional[np.ndarray] = None
    loss_final: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "rmse_offset_free": self.rmse_offset_free,
            "psnr": None if np.isinf(self.psnr) else self.psnr,
            "zernike_error": None if self.zernike_error is None
            else [float(e) for e in self.zernike_error],
            "loss_final": self.loss_final,
        }


# -------------------------------------------------------------------- targets

def _disk_array(grid: Grid2D, radius: int) -> np.ndarray:
    pitch = 4 * radius
    y, x = np.mgrid[:grid.height, :grid.width]
    mask = np.zeros(grid.shape, dtype=bool)

    def centers(n):
        count = max(1, n // pitch)
        start = (n - (count - 1) * pitch) / 2.0
        return start + pitch * np.arange(count)

    for cy in centers(grid.height):
        for cx in centers(grid.width):
            mask |= (x - cx + 0.5) ** 2 + (y - cy + 0.5) ** 2 <= radius ** 2
    return mask


def _bar_groups(grid: Grid2D, width: int) -> np.ndarray:
    """Groups of three vertical bars with widths ``w, 2w, 4w, ...``, separated by gaps of ``w``."""
    mask = np.zeros(grid.shape, dtype=bool)
    top, bottom = grid.height // 4, 3 * grid.height // 4
    x = width
    w = width
    while x + 5 * w <= grid.width - width:
        for b in range(3):
            mask[top:bottom, x + 2 * b * w: x + (2 * b + 1) * w] = True
        x += 5 * w + 2 * width
        w *= 2
    if not mask.any():
        raise GridError(f"bar width {width} does not fit into a {grid.width}-pixel grid")
    return mask


def _siemens_star(grid: Grid2D, spokes: int) -> np.ndarray:
    y, x = np.mgrid[:grid.height, :grid.width]
    y = y - grid.height / 2 + 0.5
    x = x - grid.width / 2 + 0.5
    theta = np.arctan2(y, x)
    radius = 0.45 * min(grid.shape)
    sector = np.floor((theta + np.pi) / (2 * np.pi) * 2 * spokes).astype(int) % 2 == 0
    return sector & (np.hypot(x, y) <= radius)


def make_target(spec: TargetSpec, grid: Grid2D) -> RealImage:
    """Binary phase target with values in ``{0, contrast}`` (custom targets are loaded as-is)."""
    if spec.kind == "flat":
        return RealImage(grid, np.zeros(grid.shape))
    if spec.kind == "custom-from-file":
        from .io import read_pfm
        values = read_pfm(spec.path)
        if values.shape != grid.shape:
            raise GridError(f"{spec.path}: shape {values.shape} does not match grid {grid.shape}")
        return RealImage(grid, values)
    if spec.kind == "disk-array":
        mask = _disk_array(grid, spec.feature_scale)
    elif spec.kind == "bar-groups":
        mask = _bar_groups(grid, spec.feature_scale)
    else:
        mask = _siemens_star(grid, max(2, spec.feature_scale))
    return RealImage(grid, np.where(mask, spec.contrast, 0.0))


# -------------------------------------------------------------------- stacks

def apply_noise(amplitudes: np.ndarray, noise: NoiseSpec) -> np.ndarray:
    """Noise acts on intensity; the result is floored at zero and returned as amplitude."""
    if noise.model == "none":
        return amplitudes
    rng = np.random.default_rng(noise.rng_seed)
    intensity = amplitudes ** 2
    if noise.model == "poisson":
        photons = noise.parameter
        noisy = rng.poisson(intensity * photons) / photons
    else:
        std = noise.parameter * intensity.mean(axis=(-2, -1), keepdims=True)
        noisy = intensity + std * rng.standard_normal(intensity.shape)
    return np.sqrt(np.maximum(noisy, 0.0))


def defocus_model(geometry: PupilGeometry, defocus_list: Sequence[float]) -> MeasurementModel:
    return MeasurementModel(geometry, [defocus_pupil(geometry, z) for z in defocus_list])


def simulate_stack(phase: RealImage, geometry: PupilGeometry, defocus_list: Sequence[float],
                   noise: NoiseSpec = NoiseSpec()) -> Tuple[FocusStack, MeasurementModel]:
    defocus_list = list(defocus_list)
    if not defocus_list:
        raise ValueError("defocus list must not be empty")
    model = defocus_model(geometry, defocus_list)
    labels = [f"z={z:g}um" for z in defocus_list]
    clean = forward_stack(phase, model, labels)
    if noise.model == "none":
        return clean, model
    amps = apply_noise(clean.as_array(), noise)
    return FocusStack.from_array(phase.grid, amps, labels), model


def defocus_zernike_truth(basis: ZernikeBasis, defocus_list: Sequence[float]) -> np.ndarray:
    """Least-squares Zernike coefficients of each exact defocus phase, shape ``(N, M)``."""
    return np.stack([project_phase(basis, defocus_phase(basis.geometry, z))
                     for z in defocus_list])


# ------------------------------------------------------------------- metrics

def offset_free_rmse(diff: np.ndarray) -> float:
    """``min_delta RMS(wrap(diff - delta))`` computed exactly.

    Every offset induces a cut of the circle; for each cut the wrapped values
    are a fixed unwrapped set whose optimal offset is its mean, so the
    minimum is the smallest variance over the ``n`` cyclic unwrappings.
    """
    d = np.sort(np.mod(np.ravel(diff) + np.pi, 2 * np.pi) - np.pi)
    n = d.size
    s1, s2 = np.sum(d), np.sum(d * d)
    # moving the first j sorted values up by 2 pi
    c1 = np.concatenate([[0.0], np.cumsum(d)])
    c2 = np.concatenate([[0.0], np.cumsum(d * d)])
    j = np.arange(n)
    t1 = s1 + 2 * np.pi * j
    t2 = s2 + 4 * np.pi * c1[:-1] + 4 * np.pi ** 2 * j
    var = t2 / n - (t1 / n) ** 2
    # the one-pass formula picks the cut; the variance itself is recomputed in
    # two passes so that a pure offset gives exactly zero
    best = int(np.argmin(var))
    unwrapped = d.copy()
    unwrapped[:best] += 2 * np.pi
    return float(np.sqrt(np.mean((unwrapped - unwrapped.mean()) ** 2)))


def compare_phase(reconstructed: RealImage, truth: RealImage,
                  zernike: Optional[np.ndarray] = None,
                  zernike_truth: Optional[np.ndarray] = None,
                  loss_final: Optional[float] = None) -> MetricsReport:
    if reconstructed.grid.shape != truth.grid.shape:
        raise GridError("reconstruction and truth grids differ")
    rmse = offset_free_rmse(reconstructed.values - truth.values)
    psnr = float("inf") if rmse == 0 else 20 * np.log10(2 * np.pi / rmse)
    zerr = None
    if zernike is not None and zernike_truth is not None:
        zerr = np.linalg.norm(np.asarray(zernike) - np.asarray(zernike_truth), axis=1)
    return MetricsReport(rmse, psnr, zerr, loss_final)


def passband_limited(phase: RealImage, geometry: PupilGeometry) -> RealImage:
    """Phase of the object after an ideal pupil: the best any known-pupil solver can see."""
    from .field import fft2c, ifft2c
    o = ifft2c(geometry.disk() * fft2c(np.exp(1j * phase.values)))
    return RealImage(phase.grid, np.angle(o))
