"""Fourier-operator building blocks.

A layer maps a latent field ``v`` of shape [batch, width, *grid] to
``act(W v + b + spectral_conv(v, R))`` where the spectral convolution
multiplies retained low-frequency modes by learned complex matrices and
zeroes the rest.  Mode retention follows the usual convention for real
transforms: the ``k1`` lowest non-negative frequencies on the
real-transformed (last) axis, and in 2-D the ``k2`` lowest-|frequency|
bins of the other axis, alternating signs (0, +1, -1, +2, ...).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

__all__ = [
    "FourierLayerParams", "LiftProjectParams",
    "spectral_conv", "fourier_layer", "channel_affine", "lift", "project",
    "init_fourier_layer", "init_lift_project", "glorot_uniform",
    "full_axis_mode_indices", "coordinate_channels", "activation_fn",
    "PROJECT_HIDDEN",
]

PROJECT_HIDDEN = 128  # fixed hidden width of the projection head

_ACTIVATIONS = {"gelu": T.gelu, "tanh": T.tanh, "sigmoid": T.sigmoid}


def activation_fn(name: str):
    try:
        return _ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; choose from {sorted(_ACTIVATIONS)}")


@dataclass
class FourierLayerParams:
    """One layer: complex mode weights, pointwise channel map, bias."""

    r: np.ndarray          # [width, width, k1] or [width, width, k1, k2], complex
    w: np.ndarray          # [width, width]
    b: np.ndarray          # [width]


@dataclass
class LiftProjectParams:
    """Channel-wise lift into the latent width and two-stage projection head."""

    p: np.ndarray          # [d_in (+ coords), width]
    p_b: np.ndarray        # [width]
    q1: np.ndarray         # [width, PROJECT_HIDDEN]
    q1_b: np.ndarray       # [PROJECT_HIDDEN]
    q2: np.ndarray         # [PROJECT_HIDDEN, d_out]
    q2_b: np.ndarray       # [d_out]


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   shape=None, dtype=np.float64) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    if shape is None:
        shape = (fan_in, fan_out)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def init_fourier_layer(rng: np.random.Generator, width: int, modes, spatial_dims: int,
                       dtype=np.float32) -> FourierLayerParams:
    """Spectral entries: Re and Im each uniform on [0, 1/width**2)."""
    k = _mode_counts(modes, spatial_dims)
    shape = (width, width) + k
    scl = 1.0 / (width * width)
    r = scl * (rng.random(shape) + 1j * rng.random(shape))
    cplx = np.complex64 if np.dtype(dtype) == np.float32 else np.complex128
    return FourierLayerParams(
        r=r.astype(cplx),
        w=glorot_uniform(rng, width, width).astype(dtype),
        b=np.zeros(width, dtype=dtype),
    )


def init_lift_project(rng: np.random.Generator, d_in: int, d_out: int, width: int,
                      dtype=np.float32) -> LiftProjectParams:
    return LiftProjectParams(
        p=glorot_uniform(rng, d_in, width).astype(dtype),
        p_b=np.zeros(width, dtype=dtype),
        q1=glorot_uniform(rng, width, PROJECT_HIDDEN).astype(dtype),
        q1_b=np.zeros(PROJECT_HIDDEN, dtype=dtype),
        q2=glorot_uniform(rng, PROJECT_HIDDEN, d_out).astype(dtype),
        q2_b=np.zeros(d_out, dtype=dtype),
    )


def _mode_counts(modes, spatial_dims: int) -> tuple[int, ...]:
    if isinstance(modes, int):
        return (modes,) * spatial_dims
    modes = tuple(int(m) for m in modes)
    if len(modes) != spatial_dims:
        raise ValueError(f"need {spatial_dims} mode counts, got {modes}")
    return modes


def full_axis_mode_indices(k: int, n: int) -> np.ndarray:
    """Bins of the k lowest-|frequency| modes on a full FFT axis of extent n.

    Frequencies are taken in the order 0, +1, -1, +2, -2, ... so k=5 on
    n=8 selects bins [0, 1, 7, 2, 6].
    """
    if k > n:
        raise ValueError(f"cannot retain {k} modes on an axis of extent {n}")
    freqs = []
    f = 0
    while len(freqs) < k:
        if f == 0:
            freqs.append(0)
        else:
            freqs.append(f)
            if len(freqs) < k:
                freqs.append(-f)
        f += 1
    return np.asarray([f % n for f in freqs], dtype=np.intp)


def channel_affine(v: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Pointwise channel map on axis 1 of [batch, channels, *grid]."""
    moved = T.moveaxis(v, 1, -1)
    out = T.matmul(moved, w)
    if b is not None:
        out = T.add(out, b)
    return T.moveaxis(out, -1, 1)


def spectral_conv(v: Tensor, r: Tensor) -> Tensor:
    """Multiply retained Fourier modes of ``v`` by ``r``, zero the rest.

    ``v`` is [batch, width, n] or [batch, width, n1, n2]; ``r`` carries
    the retained mode counts in its trailing axes.
    """
    spatial = v.ndim - 2
    if spatial == 1:
        n = v.shape[-1]
        k1 = r.shape[-1]
        if k1 > n // 2 + 1:
            raise T.ShapeError(f"k1={k1} exceeds {n // 2 + 1} real-axis bins")
        vhat = T.rfft(v, axes=(-1,))
        sel = T.take(vhat, np.arange(k1), -1)
        mixed = T.mode_mix(sel, r)
        full = T.put(mixed, np.arange(k1), -1, n // 2 + 1)
        return T.irfft(full, axes=(-1,), n=n)
    if spatial == 2:
        n1, n2 = v.shape[-2], v.shape[-1]
        k1, k2 = r.shape[-2], r.shape[-1]
        if k1 > n2 // 2 + 1:
            raise T.ShapeError(f"k1={k1} exceeds {n2 // 2 + 1} real-axis bins")
        idx_full = full_axis_mode_indices(k2, n1)
        vhat = T.rfft(v, axes=(-2, -1))
        sel = T.take(T.take(vhat, np.arange(k1), -1), idx_full, -2)
        # r is stored [w, w, k1, k2]; the field block is [b, w, k2, k1]
        mixed = T.mode_mix(sel, T.moveaxis(r, -1, -2))
        full = T.put(T.put(mixed, idx_full, -2, n1), np.arange(k1), -1, n2 // 2 + 1)
        return T.irfft(full, axes=(-2, -1), n=n2)
    raise T.ShapeError(f"spectral_conv expects 1 or 2 spatial axes, got {spatial}")


def fourier_layer(v: Tensor, p: FourierLayerParams, activation: str = "gelu") -> Tensor:
    act = activation_fn(activation)
    local = channel_affine(v, p.w, p.b)
    return act(T.add(local, spectral_conv(v, p.r)))


def coordinate_channels(batch: int, grid: tuple[int, ...], dtype=np.float32) -> np.ndarray:
    """Normalized grid coordinates in [0, 1), one channel per axis."""
    channels = []
    for ax, n in enumerate(grid):
        line = (np.arange(n, dtype=np.float64) / n).astype(dtype)
        shape = [1] * len(grid)
        shape[ax] = n
        channels.append(np.broadcast_to(line.reshape(shape), grid))
    coords = np.stack(channels, axis=0)
    return np.broadcast_to(coords[None], (batch, len(grid)) + grid).astype(dtype).copy()


def lift(f: Tensor, p: LiftProjectParams, with_coords: bool = True) -> Tensor:
    """Append coordinate channels (optional) and apply the channel lift."""
    if with_coords:
        grid = f.shape[2:]
        coords = Tensor(coordinate_channels(f.shape[0], grid, dtype=f.data.real.dtype))
        f = T.concat([f, coords], 1)
    return channel_affine(f, p.p, p.p_b)


def project(v: Tensor, p: LiftProjectParams) -> Tensor:
    """Two-stage head: width -> 128 -> d_out with a GELU in between."""
    hidden = T.gelu(channel_affine(v, p.q1, p.q1_b))
    return channel_affine(hidden, p.q2, p.q2_b)
