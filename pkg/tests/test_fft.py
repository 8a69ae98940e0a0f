"""FFT primitives against a direct O(N^2) DFT oracle.

The oracle below is deliberately naive — an explicit twiddle-matrix
multiply — so the fast radix-2 path and the check share no code.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compol import fft as F


def dft_matrix(n: int, inverse: bool = False) -> np.ndarray:
    k = np.arange(n)
    sign = 2j if inverse else -2j
    w = np.exp(sign * np.pi * np.outer(k, k) / n)
    return w / n if inverse else w


def naive_dft(x: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Direct matrix DFT along the last axis."""
    return x @ dft_matrix(x.shape[-1], inverse).T


# ---------------------------------------------------------------------------
# forward/inverse against the oracle


@pytest.mark.parametrize("n", [2, 4, 8, 16, 64, 256])
def test_fft_matches_naive_dft(n):
    rng = np.random.default_rng(n)
    x = rng.normal(size=(3, n)) + 1j * rng.normal(size=(3, n))
    got = F.fft(x, axes=(-1,))
    want = naive_dft(x)
    assert np.max(np.abs(got - want)) < 1e-10 * n


@pytest.mark.parametrize("n", [2, 8, 32, 128])
def test_ifft_matches_naive_inverse(n):
    rng = np.random.default_rng(n + 1)
    x = rng.normal(size=(2, n)) + 1j * rng.normal(size=(2, n))
    got = F.ifft(x, axes=(-1,))
    want = naive_dft(x, inverse=True)
    assert np.max(np.abs(got - want)) < 1e-10


def test_roundtrip_many_shapes():
    rng = np.random.default_rng(0)
    for shape in [(8,), (4, 16), (2, 3, 32), (5, 1, 64), (2, 8, 8)]:
        x = rng.normal(size=shape) + 1j * rng.normal(size=shape)
        back = F.ifft(F.fft(x, axes=(-1,)), axes=(-1,))
        assert np.max(np.abs(back - x)) < 1e-12, shape


def test_multi_axis_matches_sequential():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(3, 8, 16)) + 1j * rng.normal(size=(3, 8, 16))
    both = F.fft(x, axes=(-2, -1))
    seq = F.fft(F.fft(x, axes=(-1,)), axes=(-2,))
    assert np.max(np.abs(both - seq)) < 1e-12
    # and the oracle along each axis
    want = naive_dft(np.moveaxis(naive_dft(x), -1, -2))
    want = np.moveaxis(want, -1, -2)
    assert np.max(np.abs(both - want)) < 1e-9


def test_parseval():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(4, 128)) + 1j * rng.normal(size=(4, 128))
    X = F.fft(x, axes=(-1,))
    lhs = np.sum(np.abs(x) ** 2, axis=-1)
    rhs = np.sum(np.abs(X) ** 2, axis=-1) / 128
    assert np.max(np.abs(lhs - rhs)) < 1e-10 * 128


# ---------------------------------------------------------------------------
# real transforms


def test_rfft_is_truncated_fft():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(3, 32))
    half = F.rfft(x, axes=(-1,))
    full = F.fft(x.astype(complex), axes=(-1,))
    assert half.shape == (3, 17)
    assert np.max(np.abs(half - full[:, :17])) < 1e-12


def test_irfft_roundtrip_and_hermitian_consistency():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(2, 4, 16))
    back = F.irfft(F.rfft(x, axes=(-1,)), axes=(-1,))
    assert np.max(np.abs(back - x)) < 1e-12
    # 2-D round trip
    y = rng.normal(size=(2, 8, 8))
    back2 = F.irfft(F.rfft(y, axes=(-2, -1)), axes=(-2, -1))
    assert np.max(np.abs(back2 - y)) < 1e-12


def test_irfft_explicit_n():
    rng = np.random.default_rng(7)
    spec = rng.normal(size=(2, 9)) + 1j * rng.normal(size=(2, 9))
    out = F.irfft(spec, axes=(-1,), n=16)
    assert out.shape == (2, 16)
    assert out.dtype == np.float64


def test_single_precision_stays_single():
    x = np.random.default_rng(1).normal(size=(2, 16)).astype(np.float32)
    assert F.rfft(x, axes=(-1,)).dtype == np.complex64
    assert F.irfft(F.rfft(x, axes=(-1,)), axes=(-1,)).dtype == np.float32


def test_non_power_of_two_rejected():
    x = np.zeros(12, dtype=complex)
    with pytest.raises(F.UnsupportedLengthError):
        F.fft(x, axes=(-1,))
    with pytest.raises(F.UnsupportedLengthError):
        F.rfft(np.zeros(10), axes=(-1,))


# ---------------------------------------------------------------------------
# algebraic properties


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=1, max_value=5),
       st.floats(min_value=-3, max_value=3, allow_nan=False),
       st.floats(min_value=-3, max_value=3, allow_nan=False))
def test_linearity(log2n, a, b):
    n = 2 ** log2n
    rng = np.random.default_rng(n)
    x = rng.normal(size=n) + 1j * rng.normal(size=n)
    y = rng.normal(size=n) + 1j * rng.normal(size=n)
    lhs = F.fft(a * x + b * y, axes=(-1,))
    rhs = a * F.fft(x, axes=(-1,)) + b * F.fft(y, axes=(-1,))
    assert np.max(np.abs(lhs - rhs)) < 1e-9


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=2, max_value=6), st.integers(min_value=0, max_value=63))
def test_shift_theorem(log2n, shift):
    """Circular shift in space is a phase ramp in frequency."""
    n = 2 ** log2n
    s = shift % n
    rng = np.random.default_rng(log2n * 100 + s)
    x = rng.normal(size=n)
    lhs = F.fft(np.roll(x, s).astype(complex), axes=(-1,))
    k = np.arange(n)
    rhs = F.fft(x.astype(complex), axes=(-1,)) * np.exp(-2j * np.pi * k * s / n)
    assert np.max(np.abs(lhs - rhs)) < 1e-9


def test_impulse_and_constant_spectra():
    n = 16
    impulse = np.zeros(n, dtype=complex)
    impulse[0] = 1.0
    assert np.max(np.abs(F.fft(impulse, axes=(-1,)) - 1.0)) < 1e-14
    const = np.ones(n, dtype=complex)
    spec = F.fft(const, axes=(-1,))
    assert abs(spec[0] - n) < 1e-12
    assert np.max(np.abs(spec[1:])) < 1e-12


def test_fortran_ordered_input():
    rng = np.random.default_rng(11)
    x = np.asfortranarray(rng.normal(size=(8, 16)) + 1j * rng.normal(size=(8, 16)))
    assert np.max(np.abs(F.fft(x, axes=(-1,)) - naive_dft(np.ascontiguousarray(x)))) < 1e-10
