"""Untrained deep-decoder phase generator.

A fixed random tensor ``B0`` of shape ``(n0, n0, k)`` is pushed through ``d``
layers of ``cn(relu(U_i B_i W_i))`` and a sigmoid head that maps the ``k``
channels to a phase image in ``(0, 2 pi)``. Arrays are channels-last so the
pixelwise channel mix is a plain matrix product.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Optional, Tuple

import numpy as np

from .field import Grid2D, RealImage
from .zernike import DimensionError

CN_EPS = 1e-6


@dataclass(frozen=True)
class DecoderConfig:
    channels: int = 32
    seed_side: int = 16
    output_side: int = 512
    layers: int = 6
    upsample_factor: int = 2
    rng_seed: int = 0

    def __post_init__(self):
        if self.channels < 1 or self.layers < 1:
            raise DimensionError("channels and layers must be >= 1")
        if self.upsample_factor < 1 or self.seed_side < 1:
            raise DimensionError("upsample_factor and seed_side must be >= 1")
        n, ups = self.seed_side, 0
        if self.upsample_factor > 1:
            while n < self.output_side:
                n *= self.upsample_factor
                ups += 1
        if n != self.output_side:
            raise DimensionError(
                f"seed side {self.seed_side} x {self.upsample_factor}^k never equals "
                f"output side {self.output_side}")
        if ups > self.layers:
            raise DimensionError(
                f"{ups} upsampling layers needed but only {self.layers} layers configured")

    @property
    def upsampling_layers(self) -> int:
        """Layers ``0 .. upsampling_layers-1`` upsample; later layers keep full resolution."""
        n, ups = self.seed_side, 0
        while n < self.output_side:
            n *= self.upsample_factor
            ups += 1
        return ups

    def side_after(self, layer: int) -> int:
        return self.seed_side * self.upsample_factor ** min(layer + 1, self.upsampling_layers)


@dataclass(frozen=True)
class SeedTensor:
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values)
        if v.dtype not in (np.float32, np.float64):
            v = v.astype(np.float64)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


@dataclass
class DecoderWeights:
    mix: List[np.ndarray]
    out: np.ndarray
    cn_scale: List[np.ndarray]
    cn_bias: List[np.ndarray]

    def arrays(self) -> List[np.ndarray]:
        """All weight arrays in declared (checkpoint) order."""
        return [*self.mix, self.out, *self.cn_scale, *self.cn_bias]

    @classmethod
    def from_arrays(cls, arrays, layers: int) -> "DecoderWeights":
        arrays = list(arrays)
        return cls(arrays[:layers], arrays[layers],
                   arrays[layers + 1:2 * layers + 1], arrays[2 * layers + 1:3 * layers + 1])

    def copy(self) -> "DecoderWeights":
        return DecoderWeights.from_arrays([a.copy() for a in self.arrays()], len(self.mix))

    def astype(self, dtype) -> "DecoderWeights":
        return DecoderWeights.from_arrays([a.astype(dtype) for a in self.arrays()],
                                          len(self.mix))

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays())

    def check(self, config: DecoderConfig):
        k, d = config.channels, config.layers
        ok = (len(self.mix) == d and len(self.cn_scale) == d and len(self.cn_bias) == d
              and all(w.shape == (k, k) for w in self.mix) and self.out.shape == (k,)
              and all(s.shape == (k,) for s in self.cn_scale + self.cn_bias))
        if not ok:
            raise DimensionError("decoder weights do not match the decoder config")


def parameter_count(config: DecoderConfig) -> int:
    k, d = config.channels, config.layers
    return d * k * k + k + 2 * d * k


def init_decoder(config: DecoderConfig) -> Tuple[SeedTensor, DecoderWeights]:
    k, d, n0 = config.channels, config.layers, config.seed_side
    if parameter_count(config) >= config.output_side ** 2:
        raise DimensionError("decoder is not under-parameterized for its output size")
    rng = np.random.default_rng(config.rng_seed)
    seed = SeedTensor(rng.uniform(0.0, 1.0, size=(n0, n0, k)))
    std = np.sqrt(2.0 / k)
    mix = [rng.normal(0.0, std, size=(k, k)) for _ in range(d)]
    out = rng.normal(0.0, std, size=k)
    weights = DecoderWeights(mix, out, [np.ones(k) for _ in range(d)],
                             [np.zeros(k) for _ in range(d)])
    return seed, weights


@lru_cache(maxsize=64)
def upsample_matrix(n: int, factor: int, dtype=np.float64) -> np.ndarray:
    """Corner-aligned linear interpolation matrix of shape ``(factor*n, n)``."""
    m = factor * n
    u = np.zeros((m, n), dtype=dtype)
    if n == 1:
        u[:, 0] = 1.0
        return u
    pos = np.arange(m) * (n - 1) / (m - 1)
    lo = np.minimum(np.floor(pos).astype(int), n - 2)
    t = pos - lo
    u[np.arange(m), lo] = 1.0 - t
    u[np.arange(m), lo + 1] += t
    u.setflags(write=False)
    return u


def bilinear_upsample(x: np.ndarray, factor: int) -> np.ndarray:
    """Upsample a ``(h, w, k)`` channel stack by ``factor`` along both spatial axes."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if factor == 1:
        return x
    uh = upsample_matrix(x.shape[0], factor, x.dtype)
    uw = upsample_matrix(x.shape[1], factor, x.dtype)
    tmp = np.tensordot(uh, x, axes=(1, 0))
    return np.matmul(uw, tmp)


def bilinear_upsample_adjoint(y: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return y
    uh = upsample_matrix(y.shape[0] // factor, factor, y.dtype)
    uw = upsample_matrix(y.shape[1] // factor, factor, y.dtype)
    tmp = np.matmul(uw.T, y)
    return np.tensordot(uh.T, tmp, axes=(1, 0))


def channel_mix(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    return x @ w


def channel_mix_adjoint(y: np.ndarray, w: np.ndarray) -> np.ndarray:
    return y @ w.T


def channel_norm(a: np.ndarray, scale: np.ndarray, bias: np.ndarray):
    """Per-channel standardization over spatial pixels followed by ``scale * x + bias``.

    Returns the output, the standardized activations and the inverse std.
    """
    flat = a.reshape(-1, a.shape[-1])
    centered = flat - flat.mean(axis=0)
    var = np.einsum("pk,pk->k", centered, centered) / flat.shape[0]
    inv_std = (1.0 / np.sqrt(var + CN_EPS)).astype(a.dtype)
    centered *= inv_std
    xhat = centered
    out = xhat * scale
    out += bias
    return out.reshape(a.shape), xhat.reshape(a.shape), inv_std


def channel_norm_backward(gout, xhat, inv_std, scale):
    k = gout.shape[-1]
    g2, x2 = gout.reshape(-1, k), xhat.reshape(-1, k)
    p = g2.shape[0]
    gscale = np.einsum("pk,pk->k", g2, x2)
    gbias = g2.sum(axis=0)
    a = scale * inv_std
    ga = g2 * a
    ga -= a * gbias / p
    ga -= x2 * (a * gscale / p)
    return ga.reshape(gout.shape), gscale, gbias


# |pre-activation| beyond which sigmoid rounds to 0 or 1 in the given precision
_HEAD_CLAMP = {np.dtype(np.float32): 15.0, np.dtype(np.float64): 35.0}


def _sigmoid(h):
    return 0.5 * (1.0 + np.tanh(0.5 * h))


@dataclass
class DecoderCache:
    inputs: List[np.ndarray] = field(default_factory=list)
    masks: List[np.ndarray] = field(default_factory=list)
    xhats: List[np.ndarray] = field(default_factory=list)
    inv_stds: List[np.ndarray] = field(default_factory=list)
    last: Optional[np.ndarray] = None
    sig: Optional[np.ndarray] = None
    unclamped: Optional[np.ndarray] = None


def decoder_forward_array(seed: SeedTensor, weights: DecoderWeights, config: DecoderConfig,
                          cache: Optional[DecoderCache] = None) -> np.ndarray:
    x = seed.values
    ups = config.upsampling_layers
    for i in range(config.layers):
        if cache is not None:
            cache.inputs.append(x)
        u = channel_mix(x, weights.mix[i])
        if i < ups:
            u = bilinear_upsample(u, config.upsample_factor)
        a = np.maximum(u, 0, out=u)
        mask = a > 0
        x, xhat, inv_std = channel_norm(a, weights.cn_scale[i], weights.cn_bias[i])
        if cache is not None:
            cache.masks.append(mask)
            cache.xhats.append(xhat)
            cache.inv_stds.append(inv_std)
    h = x @ weights.out
    bound = _HEAD_CLAMP.get(h.dtype, 35.0)
    s = _sigmoid(np.clip(h, -bound, bound))
    if cache is not None:
        cache.last = x
        cache.sig = s
        cache.unclamped = np.abs(h) < bound
    return 2 * np.pi * s


def decoder_backward(gphase: np.ndarray, weights: DecoderWeights, config: DecoderConfig,
                     cache: DecoderCache) -> DecoderWeights:
    """Vector-Jacobian product of :func:`decoder_forward_array` w.r.t. all weights."""
    s = cache.sig
    gh = gphase * (2 * np.pi) * s * (1.0 - s) * cache.unclamped
    k = config.channels
    gout = cache.last.reshape(-1, k).T @ gh.ravel()
    gx = gh[..., None] * weights.out
    ups = config.upsampling_layers
    d = config.layers
    gmix, gscale, gbias = [None] * d, [None] * d, [None] * d
    for i in reversed(range(d)):
        ga, gscale[i], gbias[i] = channel_norm_backward(
            gx, cache.xhats[i], cache.inv_stds[i], weights.cn_scale[i])
        gu = ga * cache.masks[i]
        if i < ups:
            gu = bilinear_upsample_adjoint(gu, config.upsample_factor)
        x_in = cache.inputs[i]
        gmix[i] = x_in.reshape(-1, k).T @ gu.reshape(-1, k)
        if i:
            gx = channel_mix_adjoint(gu, weights.mix[i])
    return DecoderWeights(gmix, gout, gscale, gbias)


def decoder_forward(seed: SeedTensor, weights: DecoderWeights, config: DecoderConfig,
                    grid: Optional[Grid2D] = None) -> RealImage:
    """Phase image generated by the decoder, values in ``(0, 2 pi)``.

    ``grid`` supplies the sample-plane metadata; a unit-pitch grid is used when omitted.
    """
    weights.check(config)
    phi = decoder_forward_array(seed, weights, config)
    if grid is None:
        grid = Grid2D(config.output_side, config.output_side, 1.0, 1.0)
    return RealImage(grid, phi)


# ---------------------------------------------------------------- checkpoints

_MAGIC = b"PDDECW01"
_HEADER = struct.Struct("<8s6q2q")


def save_checkpoint(path, config: DecoderConfig, weights: DecoderWeights,
                    zernike_weights: np.ndarray):
    zw = np.asarray(zernike_weights, dtype="<f8")
    n, m = zw.shape
    header = _HEADER.pack(_MAGIC, config.channels, config.seed_side, config.output_side,
                          config.layers, config.upsample_factor, config.rng_seed, n, m)
    with open(path, "wb") as f:
        f.write(header)
        for a in weights.arrays():
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
        f.write(zw.tobytes())


def load_checkpoint(path) -> Tuple[DecoderConfig, DecoderWeights, np.ndarray]:
    with open(path, "rb") as f:
        raw = f.read()
    magic, k, n0, nd, d, uf, seed, n, m = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ValueError(f"{path}: not a decoder checkpoint")
    config = DecoderConfig(k, n0, nd, d, uf, seed)
    shapes = [(k, k)] * d + [(k,)] + [(k,)] * (2 * d) + [(n, m)]
    pos = _HEADER.size
    arrays = []
    for shape in shapes:
        cnt = int(np.prod(shape))
        arrays.append(np.frombuffer(raw, dtype="<f8", count=cnt, offset=pos)
                      .reshape(shape).astype(np.float64))
        pos += 8 * cnt
    if pos != len(raw):
        raise ValueError(f"{path}: checkpoint size does not match its header")
    return config, DecoderWeights.from_arrays(arrays[:-1], d), arrays[-1]
