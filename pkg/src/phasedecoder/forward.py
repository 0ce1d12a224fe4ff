"""Discrete measurement operator: phase -> transmission -> aberrated propagation -> amplitude."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .field import ComplexField, FocusStack, GridError, RealImage, fft2c, ifft2c
from .zernike import Pupil, PupilGeometry


@dataclass(frozen=True)
class MeasurementModel:
    geometry: PupilGeometry
    pupils: List[Pupil]

    def __post_init__(self):
        if not self.pupils:
            raise GridError("a measurement model needs at least one pupil")
        if any(p.geometry != self.geometry for p in self.pupils):
            raise GridError("all pupils must share the model geometry")

    def pupil_array(self) -> np.ndarray:
        return np.stack([p.values for p in self.pupils])


def transmission(phase: RealImage) -> ComplexField:
    return ComplexField(phase.grid, np.exp(1j * phase.values))


def coherent_image(obj: np.ndarray, pupils: np.ndarray) -> np.ndarray:
    """``F^-1 P_n F o`` for every pupil in ``pupils`` (shape ``(N, h, w)``)."""
    return ifft2c(pupils * fft2c(obj)[None])


def propagate_amplitude(obj: ComplexField, pupil: Pupil) -> RealImage:
    if obj.grid != pupil.geometry.grid:
        raise GridError("object and pupil grids differ")
    return RealImage(obj.grid, np.abs(coherent_image(obj.values, pupil.values[None])[0]))


def forward_stack(phase: RealImage, model: MeasurementModel,
                  labels: Sequence[str] = ()) -> FocusStack:
    if phase.grid != model.geometry.grid:
        raise GridError("phase grid does not match the model grid")
    o = transmission(phase).values
    amps = np.abs(coherent_image(o, model.pupil_array()))
    return FocusStack.from_array(phase.grid, amps, labels)
