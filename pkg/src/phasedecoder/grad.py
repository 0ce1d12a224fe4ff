"""Reverse-mode gradients of the amplitude least-squares losses.

Complex cotangents follow one convention everywhere: for a real loss ``L`` of
a complex array ``z`` we carry ``g = dL/d conj(z)`` (half the real gradient),
so that ``dL = 2 Re <g, dz>`` with ``<a, b> = sum conj(a) b``. Solvers that
step on complex variables use ``2 g``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np

from .decoder import (DecoderCache, DecoderConfig, DecoderWeights, SeedTensor,
                      decoder_backward, decoder_forward_array)
from .field import ComplexField, FocusStack, GridError, fft2c, ifft2c
from .forward import MeasurementModel
from .zernike import DimensionError, ZernikeBasis, pupil_vjp

#: floor on |z| in the modulus subgradient z/|z|
MODULUS_FLOOR = 1e-12


@dataclass(frozen=True)
class LossReport:
    total: float
    per_measurement: np.ndarray

    @classmethod
    def from_terms(cls, per_measurement: np.ndarray) -> "LossReport":
        per = np.asarray(per_measurement, dtype=np.float64)
        return cls(float(per.sum()), per)


class GradTape:
    """Ordered forward-pass record: ``(stage name, cached intermediates)``.

    The tape also keeps a closure over the forward inputs so the recorded loss
    can be recomputed from scratch with :meth:`replay`.
    """

    def __init__(self):
        self.stages: List[Tuple[str, dict]] = []
        self.loss: Optional[LossReport] = None
        self._forward: Optional[Callable[[], LossReport]] = None

    def record(self, name: str, **cache):
        self.stages.append((name, cache))

    def __getitem__(self, name: str) -> dict:
        for stage, cache in self.stages:
            if stage == name:
                return cache
        raise KeyError(name)

    @property
    def names(self) -> List[str]:
        return [s for s, _ in self.stages]

    def replay(self) -> LossReport:
        return self._forward()


def _modulus_residual(z: np.ndarray, target: np.ndarray):
    """Per-measurement loss terms and the cotangent ``(|z| - y) z / max(|z|, tau)``."""
    amp = np.abs(z)
    res = amp - target
    terms = np.sum(res * res, axis=(-2, -1), dtype=np.float64)
    g = res * z / np.maximum(amp, MODULUS_FLOOR)
    return terms, g


def zernike_pupils(basis: ZernikeBasis, zernike_weights: np.ndarray,
                   dtype=np.float64) -> np.ndarray:
    """Pupils ``circ * exp(j Z c_n)`` for every row of ``zernike_weights``."""
    zw = np.asarray(zernike_weights, dtype=dtype)
    if zw.ndim != 2 or zw.shape[1] != basis.mode_count:
        raise DimensionError(
            f"Zernike weights must be (N, {basis.mode_count}), got {zw.shape}")
    phase = np.tensordot(zw, basis.modes.astype(dtype, copy=False), axes=1)
    return np.exp(1j * phase) * basis.geometry.disk()


def _physics_forward(o, pupils, target, tape):
    spec = fft2c(o)
    z = ifft2c(pupils * spec[None])
    terms, g = _modulus_residual(z, target)
    if tape is not None:
        tape.record("transmission", o=o)
        tape.record("spectrum", spectrum=spec)
        tape.record("pupils", pupils=pupils)
        tape.record("modulus", z=z, cotangent=g)
    return terms, g, spec


def dpd_forward(stack: FocusStack, seed: SeedTensor, weights: DecoderWeights,
                zernike_weights: np.ndarray, basis: ZernikeBasis, config: DecoderConfig,
                tape: Optional[GradTape] = None) -> LossReport:
    if basis.geometry.grid.shape != stack.grid.shape or config.output_side != stack.grid.width \
            or stack.grid.width != stack.grid.height:
        raise GridError("decoder output, Zernike basis and stack grids must agree")
    if np.shape(zernike_weights)[0] != len(stack):
        raise DimensionError("one Zernike coefficient row per measurement required")
    cache = DecoderCache() if tape is not None else None
    dtype = seed.values.dtype
    phi = decoder_forward_array(seed, weights, config, cache)
    o = np.exp(1j * phi)
    pupils = zernike_pupils(basis, zernike_weights, dtype)
    target = stack.as_array().astype(dtype, copy=False)
    terms, _, _ = _physics_forward(o, pupils, target, tape)
    if tape is not None:
        tape.stages.insert(0, ("decoder", {"cache": cache, "phase": phi}))
    return LossReport.from_terms(terms)


def dpd_loss_and_grad(stack: FocusStack, seed: SeedTensor, weights: DecoderWeights,
                      zernike_weights: np.ndarray, basis: ZernikeBasis, config: DecoderConfig,
                      tape: Optional[GradTape] = None):
    """Loss ``sum_n || sqrt(y_n) - |F^-1 P_n(W^a) F exp(j G_p(W^p))| ||^2`` and its exact gradients.

    Returns ``(LossReport, decoder weight gradients, Zernike weight gradient (N, M))``.
    """
    weights.check(config)
    tape = tape if tape is not None else GradTape()
    zw = np.array(zernike_weights, dtype=seed.values.dtype)
    report = dpd_forward(stack, seed, weights, zw, basis, config, tape)
    tape.loss = report
    tape._forward = lambda: dpd_forward(stack, seed, weights, zw, basis, config)

    # backward, last stage first
    g = tape["modulus"]["cotangent"]
    r_spec = fft2c(g)
    pupils = tape["pupils"]["pupils"]
    spec = tape["spectrum"]["spectrum"]
    gz = 2.0 * pupil_vjp(basis, pupils, r_spec * np.conj(spec)[None])
    g_obj = ifft2c(np.sum(np.conj(pupils) * r_spec, axis=0))
    o = tape["transmission"]["o"]
    gphi = 2.0 * np.imag(np.conj(o) * g_obj)
    gw = decoder_backward(gphi, weights, config, tape["decoder"]["cache"])
    return report, gw, gz


def wf_forward(stack: FocusStack, obj: ComplexField, model: MeasurementModel,
               tape: Optional[GradTape] = None) -> LossReport:
    if obj.grid != stack.grid or model.geometry.grid != stack.grid:
        raise GridError("object, model and stack grids must agree")
    if len(model.pupils) != len(stack):
        raise DimensionError("one pupil per measurement required")
    terms, _, _ = _physics_forward(obj.values, model.pupil_array(), stack.as_array(), tape)
    return LossReport.from_terms(terms)


def wf_loss_and_grad(stack: FocusStack, obj: ComplexField, model: MeasurementModel,
                     tape: Optional[GradTape] = None) -> Tuple[LossReport, np.ndarray]:
    """Amplitude loss of a complex object and its Wirtinger gradient.

    The gradient is ``2 sum_n A_n^H (z_n - sqrt(y_n) z_n / |z_n|)``; its real and
    imaginary parts are the partial derivatives with respect to ``Re o`` and ``Im o``.
    """
    tape = tape if tape is not None else GradTape()
    report = wf_forward(stack, obj, model, tape)
    tape.loss = report
    tape._forward = lambda: wf_forward(stack, obj, model)
    g = tape["modulus"]["cotangent"]
    pupils = tape["pupils"]["pupils"]
    grad = 2.0 * ifft2c(np.sum(np.conj(pupils) * fft2c(g), axis=0))
    return report, grad
