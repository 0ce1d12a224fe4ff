"""Reconstruction algorithms.

* :func:`solve_dpd` fits decoder and Zernike weights jointly with RMSProp,
  starting from random values and with no knowledge of the pupils.
* :func:`solve_wirtinger` is the known-pupil baseline: Nesterov-accelerated
  gradient descent on the complex object.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, TextIO

import numpy as np

from .decoder import (DecoderConfig, DecoderWeights, SeedTensor, decoder_forward_array,
                      init_decoder)
from .field import ComplexField, FocusStack, GridError, RealImage, fft2c, ifft2c
from .forward import MeasurementModel
from .grad import LossReport, dpd_loss_and_grad, wf_forward, wf_loss_and_grad
from .zernike import ZernikeBasis, defocus_phase, mode_parity, project_phase


class DivergenceError(RuntimeError):
    def __init__(self, iteration: int, message: str = ""):
        self.iteration = iteration
        super().__init__(message or f"solver diverged at iteration {iteration}")


@dataclass(frozen=True)
class RmsPropConfig:
    learning_rate: float = 1e-3
    decay: float = 0.99
    epsilon: float = 1e-8
    iterations: int = 50_000
    log_every: int = 100
    # multiplies learning_rate for the Zernike weights only
    zernike_lr_scale: float = 1.0

    def __post_init__(self):
        if not (self.learning_rate > 0 and self.epsilon > 0 and self.zernike_lr_scale > 0):
            raise ValueError("learning_rate, epsilon and zernike_lr_scale must be positive")
        if not 0 < self.decay < 1:
            raise ValueError("decay must lie in (0, 1)")
        if self.iterations < 0 or self.log_every < 1:
            raise ValueError("iterations must be >= 0 and log_every >= 1")


@dataclass(frozen=True)
class WirtingerConfig:
    """Accelerated Wirtinger flow settings.

    ``step_size=None`` selects ``0.5 / L`` with ``L`` the power-iteration
    estimate of ``||sum_n A_n^H A_n||``.
    """

    step_size: Optional[float] = None
    iterations: int = 500
    tolerance: float = 1e-12
    log_every: int = 10
    max_halvings: int = 20

    def __post_init__(self):
        if self.step_size is not None and self.step_size < 0:
            raise ValueError("step_size must be nonnegative")
        if self.iterations < 0 or self.log_every < 1 or self.tolerance < 0:
            raise ValueError("invalid Wirtinger iteration settings")


@dataclass
class ReconstructionResult:
    phase: RealImage
    loss_history: List[LossReport]
    logged_iterations: List[int]
    iterations_run: int
    wall_time: float
    zernike_coeffs: Optional[np.ndarray] = None
    obj: Optional[ComplexField] = None
    seed: Optional[SeedTensor] = None
    weights: Optional[DecoderWeights] = None
    twin_flipped: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def final_loss(self) -> float:
        return self.loss_history[-1].total


def _log(stream, it, loss, t0):
    if stream is not None:
        stream.write(f"{it}\t{loss:.9g}\t{time.perf_counter() - t0:.3f}\n")
        stream.flush()


# ------------------------------------------------------------------- RMSProp

def rmsprop_step(weights: Sequence[np.ndarray], grads: Sequence[np.ndarray],
                 state: Optional[List[np.ndarray]], opt: RmsPropConfig,
                 lr_scales: Optional[Sequence[float]] = None):
    """One RMSProp update ``v <- a v + (1-a) g^2 ; w <- w - lr g / (sqrt(v) + eps)``.

    Returns new weight arrays and the new state; the inputs are not modified.
    """
    if state is None:
        state = [np.zeros_like(w) for w in weights]
    if lr_scales is None:
        lr_scales = [1.0] * len(weights)
    new_w, new_v = [], []
    for w, g, v, s in zip(weights, grads, state, lr_scales):
        if w.shape != g.shape or w.shape != v.shape:
            raise ValueError("weight, gradient and state shapes differ")
        v = opt.decay * v + (1.0 - opt.decay) * g * g
        new_v.append(v)
        new_w.append(w - (opt.learning_rate * s) * g / (np.sqrt(v) + opt.epsilon))
    return new_w, new_v


# ----------------------------------------------------------------------- DPD

def twin_flip(weights: DecoderWeights, zernike_weights: np.ndarray,
              basis: ZernikeBasis):
    """Map a DPD solution to its conjugate twin, which produces identical amplitudes.

    Amplitudes are unchanged under ``o -> conj(o)`` together with
    ``P(f) -> conj(P(-f))``. Negating the head turns the phase ``phi`` into
    ``2 pi - phi``; Zernike coefficients of even modes change sign and those
    of odd modes are kept.
    """
    flipped = weights.copy()
    flipped.out = -flipped.out
    zw = np.asarray(zernike_weights) * -mode_parity(basis)[None, :]
    return flipped, zw


def _noll4_column(basis: ZernikeBasis) -> Optional[int]:
    return 2 if basis.mode_count >= 3 else None


def defocus_coefficient_sign(basis: ZernikeBasis) -> float:
    """Sign of the Noll-4 coefficient produced by a positive defocus distance."""
    c = project_phase(basis, defocus_phase(basis.geometry, 1.0))
    return float(np.sign(c[_noll4_column(basis)]))


def solve_dpd(stack: FocusStack, basis: ZernikeBasis, decoder_config: DecoderConfig,
              opt: RmsPropConfig, zernike_init_std: float = 0.1,
              defocus_sign: Optional[int] = None, precision: str = "single",
              progress: Optional[TextIO] = None,
              callback: Optional[Callable] = None) -> ReconstructionResult:
    """Blind reconstruction by fitting decoder and Zernike weights to the stack.

    ``defocus_sign`` (+1 or -1) optionally states the direction of focus travel.
    Blind data cannot tell a solution from its conjugate twin; when the sign is
    given, the twin whose mean Noll-4 coefficient matches a defocus of that
    sign is returned.

    ``precision`` selects float32 ("single", the fast default) or float64
    ("double") arithmetic for the decoder and propagation. ``callback`` is
    called as ``callback(iteration, weights, zernike_weights, report)`` at
    every logged iteration.
    """
    t0 = time.perf_counter()
    if basis.geometry.grid != stack.grid:
        raise GridError("Zernike basis grid differs from the stack grid")
    if decoder_config.output_side != stack.grid.width or stack.grid.width != stack.grid.height:
        raise GridError("decoder output side must equal the (square) stack grid side")
    dtype = {"single": np.float32, "double": np.float64}[precision]
    seed, weights = init_decoder(decoder_config)
    seed = SeedTensor(seed.values.astype(dtype))
    weights = weights.astype(dtype)
    zrng = np.random.default_rng([decoder_config.rng_seed, 1])
    zw = zrng.normal(0.0, zernike_init_std, size=(len(stack), basis.mode_count)).astype(dtype)

    params = weights.arrays() + [zw]
    n_dec = len(params) - 1
    scales = [1.0] * n_dec + [opt.zernike_lr_scale]
    state = None
    d = decoder_config.layers
    history, logged = [], []
    initial = None
    for it in range(opt.iterations + 1):
        w = DecoderWeights.from_arrays(params[:n_dec], d)
        report, gw, gz = dpd_loss_and_grad(stack, seed, w, params[-1], basis, decoder_config)
        if not np.isfinite(report.total):
            raise DivergenceError(it, f"non-finite loss at iteration {it}")
        if initial is None:
            initial = report.total
        elif report.total > 10.0 * initial:
            raise DivergenceError(
                it, f"loss {report.total:.4g} exceeded 10x its initial value at iteration {it}")
        if it % opt.log_every == 0 or it == opt.iterations:
            history.append(report)
            logged.append(it)
            _log(progress, it, report.total, t0)
            if callback is not None:
                callback(it, w, params[-1], report)
        if it == opt.iterations:
            break
        params, state = rmsprop_step(params, gw.arrays() + [gz], state, opt, scales)

    weights = DecoderWeights.from_arrays(params[:n_dec], d)
    zw = params[-1]
    flipped = False
    col = _noll4_column(basis)
    if defocus_sign is not None and col is not None:
        wanted = np.sign(defocus_sign) * defocus_coefficient_sign(basis)
        if np.sign(np.mean(zw[:, col])) == -wanted:
            weights, zw = twin_flip(weights, zw, basis)
            flipped = True
    phi = decoder_forward_array(seed, weights, decoder_config).astype(np.float64)
    return ReconstructionResult(
        phase=RealImage(stack.grid, phi), loss_history=history, logged_iterations=logged,
        iterations_run=opt.iterations, wall_time=time.perf_counter() - t0,
        zernike_coeffs=zw, seed=seed, weights=weights, twin_flipped=flipped)


# --------------------------------------------------------- Wirtinger flow

def normal_operator_norm(model: MeasurementModel, iterations: int = 30,
                         rng_seed: int = 0) -> float:
    """Power-iteration estimate of ``||sum_n A_n^H A_n||`` with ``A_n = F^-1 P_n F``."""
    pupils = model.pupil_array()
    rng = np.random.default_rng(rng_seed)
    shape = model.geometry.grid.shape
    x = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(iterations):
        y = ifft2c(np.sum(np.abs(pupils) ** 2, axis=0) * fft2c(x))
        lam = float(np.linalg.norm(y))
        if lam == 0.0:
            break
        x = y / lam
    return lam


# relative loss below which failed line searches count as convergence
_ROUNDOFF = 1e-20


def solve_wirtinger(stack: FocusStack, model: MeasurementModel, opt: WirtingerConfig,
                    progress: Optional[TextIO] = None) -> ReconstructionResult:
    """Known-pupil accelerated Wirtinger flow from the all-ones object.

    A step is accepted only if it does not increase the loss. On an increase
    the momentum is restarted first, then the step size is halved; more than
    ``max_halvings`` consecutive halvings raise :class:`DivergenceError`, unless
    the loss is already at rounding level, in which case the run stops there.
    """
    t0 = time.perf_counter()
    grid = stack.grid
    step = opt.step_size
    if step is None:
        step = 0.5 / normal_operator_norm(model)
    x = np.ones(grid.shape, dtype=np.complex128)
    x_prev = x
    loss_x = wf_forward(stack, ComplexField(grid, x), model).total
    initial = loss_x
    history = [wf_forward(stack, ComplexField(grid, x), model)]
    logged = [0]
    _log(progress, 0, loss_x, t0)
    t = 1
    it = 0
    stalled = False
    for it in range(1, opt.iterations + 1):
        halvings = 0
        beta = (t - 1) / (t + 2)
        while True:
            v = x + beta * (x - x_prev)
            _, g = wf_loss_and_grad(stack, ComplexField(grid, v), model)
            x_new = v - step * g
            rep = wf_forward(stack, ComplexField(grid, x_new), model)
            if not np.isfinite(rep.total) or rep.total > 10.0 * initial:
                raise DivergenceError(it)
            if rep.total <= loss_x:
                break
            if beta > 0:
                beta, t = 0.0, 1
                continue
            halvings += 1
            if halvings > opt.max_halvings:
                if loss_x <= _ROUNDOFF * initial:
                    # nothing left to decrease but rounding noise
                    stalled = True
                    break
                raise DivergenceError(
                    it, f"step size halved {opt.max_halvings} times without decrease "
                        f"at iteration {it}")
            step *= 0.5
        if stalled:
            it -= 1
            break
        x_prev, x = x, x_new
        t += 1
        change = (loss_x - rep.total) / loss_x if loss_x > 0 else 0.0
        loss_x = rep.total
        stop = loss_x == 0.0 or change < opt.tolerance
        if it % opt.log_every == 0 or it == opt.iterations or stop:
            history.append(rep)
            logged.append(it)
            _log(progress, it, loss_x, t0)
        if stop:
            break
    if stalled and logged[-1] != it:
        history.append(wf_forward(stack, ComplexField(grid, x), model))
        logged.append(it)
        _log(progress, it, loss_x, t0)
    return ReconstructionResult(
        phase=RealImage(grid, np.angle(x)), loss_history=history, logged_iterations=logged,
        iterations_run=it, wall_time=time.perf_counter() - t0,
        obj=ComplexField(grid, x), extra={"step_size": step})
