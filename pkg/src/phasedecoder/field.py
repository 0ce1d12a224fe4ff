"""Pixel grids, frequency grids and the field containers shared by every module.

All arrays are kept in FFT order (DC at index ``[0, 0]``). Centered views are
only produced at the I/O boundary (see :mod:`phasedecoder.plotting`).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np


class GridError(ValueError):
    """Raised when a grid or field violates its shape/value invariants."""


@dataclass(frozen=True)
class Grid2D:
    """Uniform sample-plane grid.

    Attributes:
        width, height: pixel counts (even, >= 2).
        pixel_size: micrometers per pixel in the sample plane.
        wavelength: illumination wavelength in micrometers.
    """

    width: int
    height: int
    pixel_size: float
    wavelength: float

    def __post_init__(self):
        for name in ("width", "height"):
            n = getattr(self, name)
            if int(n) != n or n < 2 or n % 2:
                raise GridError(f"{name} must be an even integer >= 2, got {n}")
        if not self.pixel_size > 0:
            raise GridError(f"pixel_size must be positive, got {self.pixel_size}")
        if not self.wavelength > 0:
            raise GridError(f"wavelength must be positive, got {self.wavelength}")

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)

    @property
    def nyquist(self) -> float:
        """Nyquist frequency in cycles/um."""
        return 0.5 / self.pixel_size


def _check_values(grid: Grid2D, values: np.ndarray, kind: str):
    if values.shape != grid.shape:
        raise GridError(f"{kind} shape {values.shape} does not match grid {grid.shape}")
    if not np.all(np.isfinite(values)):
        raise GridError(f"{kind} contains non-finite entries")


@dataclass(frozen=True)
class ComplexField:
    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.complex128)
        _check_values(self.grid, values, "ComplexField")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class RealImage:
    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        _check_values(self.grid, values, "RealImage")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class FocusStack:
    """Measured amplitudes ``sqrt(y_n)`` for ``N`` differently aberrated images."""

    grid: Grid2D
    amplitudes: List[RealImage]
    labels: List[str] = field(default_factory=list)

    def __post_init__(self):
        amps = list(self.amplitudes)
        if not amps:
            raise GridError("FocusStack needs at least one measurement")
        for a in amps:
            if a.grid != self.grid:
                raise GridError("all stack images must share the stack grid")
            if np.any(a.values < 0):
                raise GridError("amplitudes must be nonnegative")
        labels = list(self.labels) or [f"m{n:03d}" for n in range(len(amps))]
        if len(labels) != len(amps):
            raise GridError("one label per measurement required")
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.amplitudes)

    def as_array(self) -> np.ndarray:
        """Amplitudes stacked to shape ``(N, height, width)``."""
        return np.stack([a.values for a in self.amplitudes])

    @classmethod
    def from_array(cls, grid: Grid2D, amps: np.ndarray,
                   labels: Sequence[str] = ()) -> "FocusStack":
        return cls(grid, [RealImage(grid, a) for a in amps], list(labels))


def frequency_coordinates(grid: Grid2D) -> Tuple[np.ndarray, np.ndarray]:
    """FFT-ordered spatial frequencies ``(fx, fy)`` in cycles/um, shape ``grid.shape``."""
    fx = np.fft.fftfreq(grid.width, d=grid.pixel_size)
    fy = np.fft.fftfreq(grid.height, d=grid.pixel_size)
    return np.meshgrid(fx, fy)


def fft2c(values: np.ndarray) -> np.ndarray:
    """Unitary 2-D DFT over the last two axes."""
    return np.fft.fft2(values, norm="ortho")


def ifft2c(values: np.ndarray) -> np.ndarray:
    """Unitary inverse 2-D DFT over the last two axes (the exact adjoint of :func:`fft2c`)."""
    return np.fft.ifft2(values, norm="ortho")


def fft2_unitary(f: ComplexField) -> ComplexField:
    return ComplexField(f.grid, fft2c(f.values))


def ifft2_unitary(f: ComplexField) -> ComplexField:
    return ComplexField(f.grid, ifft2c(f.values))
