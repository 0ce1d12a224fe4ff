"""Zernike pupil basis and pupil synthesis.

Modes follow Noll ordering and normalization (unit RMS over the unit disk).
Piston (Noll 1) is never part of a basis, so mode ``m`` of a basis of size
``M`` is Noll index ``m + 2``.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import factorial
from typing import Tuple

import numpy as np

from .field import Grid2D, GridError, frequency_coordinates

#: largest Noll index we tabulate (piston excluded -> 36 usable modes)
MAX_NOLL = 37


class UnsupportedModeError(ValueError):
    pass


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class PupilGeometry:
    grid: Grid2D
    na: float

    def __post_init__(self):
        if not 0 < self.na < 1.5:
            raise GridError(f"numerical aperture must lie in (0, 1.5), got {self.na}")
        if self.cutoff >= self.grid.nyquist:
            raise GridError(
                f"pupil cutoff {self.cutoff:.4g} cycles/um does not fit inside the "
                f"grid Nyquist frequency {self.grid.nyquist:.4g}; use a smaller pixel_size"
            )

    @property
    def cutoff(self) -> float:
        """Coherent cutoff NA/lambda in cycles/um."""
        return self.na / self.grid.wavelength

    def polar(self) -> Tuple[np.ndarray, np.ndarray]:
        """Normalized pupil radius and azimuth on the FFT-ordered frequency grid."""
        fx, fy = frequency_coordinates(self.grid)
        return np.hypot(fx, fy) / self.cutoff, np.arctan2(fy, fx)

    def disk(self) -> np.ndarray:
        rho, _ = self.polar()
        return rho <= 1.0


@dataclass(frozen=True)
class Pupil:
    geometry: PupilGeometry
    values: np.ndarray


@dataclass(frozen=True)
class ZernikeBasis:
    geometry: PupilGeometry
    modes: np.ndarray  # (M, height, width), zero outside the disk

    @property
    def mode_count(self) -> int:
        return self.modes.shape[0]

    @property
    def noll_indices(self) -> Tuple[int, ...]:
        return tuple(range(2, self.mode_count + 2))


def noll_to_nm(j: int) -> Tuple[int, int]:
    """Radial order ``n`` and signed azimuthal frequency ``m`` of Noll index ``j``.

    Odd ``j`` carry ``sin`` terms (negative ``m``), even ``j`` carry ``cos``.
    """
    if j < 1:
        raise UnsupportedModeError(f"Noll indices start at 1, got {j}")
    n = 0
    while (n + 1) * (n + 2) // 2 < j:
        n += 1
    k = j - n * (n + 1) // 2 - 1  # position within radial order n
    m = n % 2 + 2 * ((k + (n + 1) % 2) // 2)
    return n, (-m if j % 2 else m) if m else 0


def radial_polynomial(n: int, m: int, rho: np.ndarray) -> np.ndarray:
    m = abs(m)
    out = np.zeros_like(rho, dtype=np.float64)
    for s in range((n - m) // 2 + 1):
        c = (-1) ** s * factorial(n - s) / (
            factorial(s) * factorial((n + m) // 2 - s) * factorial((n - m) // 2 - s))
        out += c * rho ** (n - 2 * s)
    return out


def zernike_noll(j: int, rho: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Unit-RMS Zernike polynomial of Noll index ``j`` (not masked)."""
    n, m = noll_to_nm(j)
    r = radial_polynomial(n, m, rho)
    if m == 0:
        return np.sqrt(n + 1) * r
    ang = np.cos(m * theta) if m > 0 else np.sin(-m * theta)
    return np.sqrt(2 * (n + 1)) * r * ang


def mode_parity(basis: ZernikeBasis) -> np.ndarray:
    """+1 for modes even under ``f -> -f``, -1 for odd ones."""
    return np.array([1 if noll_to_nm(j)[0] % 2 == 0 else -1 for j in basis.noll_indices])


def make_circ_pupil(geometry: PupilGeometry) -> Pupil:
    return Pupil(geometry, geometry.disk().astype(np.complex128))


def make_zernike_basis(geometry: PupilGeometry, mode_count: int) -> ZernikeBasis:
    if mode_count < 1:
        raise UnsupportedModeError("need at least one Zernike mode")
    if mode_count + 1 > MAX_NOLL:
        raise UnsupportedModeError(
            f"{mode_count} modes requested; at most {MAX_NOLL - 1} are supported")
    rho, theta = geometry.polar()
    disk = rho <= 1.0
    modes = np.stack([np.where(disk, zernike_noll(j, rho, theta), 0.0)
                      for j in range(2, mode_count + 2)])
    modes.setflags(write=False)
    return ZernikeBasis(geometry, modes)


def aberration_phase(basis: ZernikeBasis, coeffs) -> np.ndarray:
    """Pupil phase ``sum_m c_m z_m`` in radians."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape != (basis.mode_count,):
        raise DimensionError(
            f"expected {basis.mode_count} coefficients, got shape {coeffs.shape}")
    if not np.all(np.isfinite(coeffs)):
        raise ValueError("Zernike coefficients must be finite")
    return np.tensordot(coeffs, basis.modes, axes=1)


def synthesize_pupil(basis: ZernikeBasis, coeffs) -> Pupil:
    circ = basis.geometry.disk()
    values = np.where(circ, np.exp(1j * aberration_phase(basis, coeffs)), 0.0)
    return Pupil(basis.geometry, values)


def pupil_jvp(basis: ZernikeBasis, pupil: np.ndarray, dc: np.ndarray) -> np.ndarray:
    """Linearization of :func:`synthesize_pupil`: ``dP = j P sum_m dc_m z_m``."""
    return 1j * pupil * np.tensordot(dc, basis.modes, axes=1)


def pupil_vjp(basis: ZernikeBasis, pupil: np.ndarray, cotangent: np.ndarray) -> np.ndarray:
    """Real adjoint of :func:`pupil_jvp` under ``<a, b> = Re sum conj(a) b``.

    ``cotangent`` may carry leading batch axes; they are kept in the output.
    """
    w = np.real(np.conj(cotangent) * 1j * pupil)
    return np.tensordot(w, basis.modes.astype(w.dtype, copy=False), axes=([-2, -1], [-2, -1]))


def defocus_phase(geometry: PupilGeometry, z: float) -> np.ndarray:
    """Angular-spectrum defocus phase ``(2 pi / lambda) z sqrt(1 - lambda^2 f^2)``, zero outside the disk."""
    fx, fy = frequency_coordinates(geometry.grid)
    lam = geometry.grid.wavelength
    disk = geometry.disk()
    arg = np.where(disk, 1.0 - lam ** 2 * (fx ** 2 + fy ** 2), 1.0)
    return np.where(disk, 2 * np.pi / lam * z * np.sqrt(arg), 0.0)


def defocus_pupil(geometry: PupilGeometry, z: float) -> Pupil:
    disk = geometry.disk()
    values = np.where(disk, np.exp(1j * defocus_phase(geometry, z)), 0.0)
    return Pupil(geometry, values)


def project_phase(basis: ZernikeBasis, phase: np.ndarray) -> np.ndarray:
    """Least-squares Zernike coefficients of a pupil phase over the disk (piston absorbed)."""
    disk = basis.geometry.disk()
    a = np.column_stack([np.ones(disk.sum())] + [m[disk] for m in basis.modes])
    sol, *_ = np.linalg.lstsq(a, phase[disk], rcond=None)
    return sol[1:]
