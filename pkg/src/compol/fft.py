"""Iterative radix-2 FFT kernels for power-of-two grids.

Forward transforms are unnormalized; inverse transforms carry the 1/N
factor per transformed axis.  The real-input variant keeps only the
``N//2 + 1`` non-negative frequency bins of the last transformed axis,
and ``irfft`` rebuilds the full spectrum from Hermitian symmetry before
inverting.

All kernels are vectorized over leading axes: the decimation-in-time
butterflies run as whole-array numpy operations, one pass per stage, so
a batch of transforms costs log2(N) vector operations.
"""

from __future__ import annotations

import numpy as np

__all__ = ["fft", "ifft", "rfft", "irfft", "UnsupportedLengthError"]


class UnsupportedLengthError(ValueError):
    """Raised when a transform extent is not a power of two (>= 2)."""


_bitrev_cache: dict[int, np.ndarray] = {}
_twiddle_cache: dict[tuple[int, bool, str], np.ndarray] = {}


def _check_pow2(n: int) -> None:
    if n < 2 or (n & (n - 1)) != 0:
        raise UnsupportedLengthError(
            f"transform extent must be a power of two >= 2, got {n}"
        )


def _bitrev_indices(n: int) -> np.ndarray:
    """Bit-reversal permutation of 0..n-1 for n a power of two."""
    rev = _bitrev_cache.get(n)
    if rev is None:
        bits = n.bit_length() - 1
        idx = np.arange(n, dtype=np.intp)
        rev = np.zeros(n, dtype=np.intp)
        for _ in range(bits):
            rev = (rev << 1) | (idx & 1)
            idx >>= 1
        _bitrev_cache[n] = rev
    return rev


def _twiddles(m: int, inverse: bool, dtype: np.dtype) -> np.ndarray:
    """Stage-m twiddle factors exp(sign*2*pi*i*j/m), j < m/2."""
    key = (m, inverse, np.dtype(dtype).str)
    tw = _twiddle_cache.get(key)
    if tw is None:
        sign = 1.0 if inverse else -1.0
        tw = np.exp(sign * 2j * np.pi * np.arange(m // 2) / m)
        tw = tw.astype(dtype)
        _twiddle_cache[key] = tw
    return tw


def _as_complex(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    if np.iscomplexobj(a):
        return a
    out_dtype = np.complex64 if a.dtype == np.float32 else np.complex128
    return a.astype(out_dtype)


def _transform_last(x: np.ndarray, inverse: bool) -> np.ndarray:
    """Radix-2 DIT transform of the last axis of a complex array.

    Works on the transposed layout [n, batch] so every butterfly touches
    contiguous runs of the full batch, and ping-pongs between two buffers
    to keep each stage down to three allocation-free vector operations.
    """
    n = x.shape[-1]
    _check_pow2(n)
    shape = x.shape
    flat = x.reshape(-1, n)
    lead = flat.shape[0]
    # Fancy-indexing rows of the transpose fuses bit reversal with the
    # layout change and yields a fresh C-contiguous [n, lead] array.
    a = flat.T[_bitrev_indices(n)]
    if not a.flags.c_contiguous:
        a = np.ascontiguousarray(a)
    b = np.empty_like(a)
    tmp = np.empty((n // 2, lead), dtype=a.dtype)
    m = 2
    while m <= n:
        half = m // 2
        tw = _twiddles(m, inverse, a.dtype)[:, None]
        av = a.reshape(n // m, m, lead)
        bv = b.reshape(n // m, m, lead)
        tv = tmp.reshape(n // m, half, lead)
        np.multiply(av[:, half:, :], tw, out=tv)
        np.add(av[:, :half, :], tv, out=bv[:, :half, :])
        np.subtract(av[:, :half, :], tv, out=bv[:, half:, :])
        a, b = b, a
        m *= 2
    out = np.ascontiguousarray(a.T)
    if inverse:
        out *= np.asarray(1.0 / n, dtype=out.real.dtype)
    return out.reshape(shape)


def _normalize_axes(ndim: int, axes) -> tuple[int, ...]:
    if isinstance(axes, int):
        axes = (axes,)
    out = []
    for ax in axes:
        ax = int(ax)
        if ax < 0:
            ax += ndim
        if not 0 <= ax < ndim:
            raise ValueError(f"axis {ax} out of range for ndim {ndim}")
        out.append(ax)
    if len(set(out)) != len(out):
        raise ValueError(f"duplicate axes in {axes}")
    return tuple(out)


def _apply_along(x: np.ndarray, axes: tuple[int, ...], inverse: bool) -> np.ndarray:
    for ax in axes:
        moved = np.moveaxis(x, ax, -1)
        x = np.moveaxis(_transform_last(moved, inverse), -1, ax)
    return np.ascontiguousarray(x)


def fft(a: np.ndarray, axes=(-1,)) -> np.ndarray:
    """Unnormalized complex FFT along ``axes``."""
    x = _as_complex(a)
    return _apply_along(x, _normalize_axes(x.ndim, axes), inverse=False)


def ifft(a: np.ndarray, axes=(-1,)) -> np.ndarray:
    """Inverse FFT along ``axes`` with 1/N per axis."""
    x = _as_complex(a)
    return _apply_along(x, _normalize_axes(x.ndim, axes), inverse=True)


def rfft(a: np.ndarray, axes=(-1,)) -> np.ndarray:
    """FFT of a real array keeping bins 0..N/2 of the last of ``axes``.

    The remaining axes, if any, get the full complex transform.
    """
    a = np.asarray(a)
    if np.iscomplexobj(a):
        raise ValueError("rfft expects a real array")
    axes = _normalize_axes(a.ndim, axes)
    x = _as_complex(a)
    last = axes[-1]
    moved = np.moveaxis(x, last, -1)
    n = moved.shape[-1]
    half = _transform_last(moved, inverse=False)[..., : n // 2 + 1]
    x = np.moveaxis(half, -1, last)
    if axes[:-1]:
        x = _apply_along(x, axes[:-1], inverse=False)
    return np.ascontiguousarray(x)


def _hermitian_extend(x: np.ndarray, n: int) -> np.ndarray:
    """Rebuild the full spectrum of a real signal from bins 0..n/2."""
    k = x.shape[-1]
    if k != n // 2 + 1:
        raise ValueError(f"expected {n // 2 + 1} half-spectrum bins, got {k}")
    mid = x[..., 1:-1]
    return np.concatenate([x, np.conj(mid[..., ::-1])], axis=-1)


def irfft(a: np.ndarray, axes=(-1,), n: int | None = None) -> np.ndarray:
    """Inverse of :func:`rfft`; ``n`` is the last-axis output extent."""
    x = _as_complex(a)
    axes = _normalize_axes(x.ndim, axes)
    last = axes[-1]
    if n is None:
        n = 2 * (x.shape[last] - 1)
    _check_pow2(n)
    if axes[:-1]:
        x = _apply_along(x, axes[:-1], inverse=True)
    moved = np.moveaxis(x, last, -1)
    full = _hermitian_extend(moved, n)
    out = _transform_last(full, inverse=True).real
    return np.ascontiguousarray(np.moveaxis(out, -1, last))
