"""
Autodiff tape and spectral primitives
=====================================

Everything downstream (Fourier layers, aggregation, training) sits on a
small reverse-mode tape over numpy arrays plus a radix-2 FFT.  This demo
pokes both with the checks we trust day to day: a finite-difference
gradient probe, round trips, Parseval, and the brute-force DFT.
"""

import numpy as np

from compol import fft
from compol import tensor as T

rng = np.random.default_rng(0)

# --- a tiny composite function, differentiated by the tape -----------------
# f(x, w) = mean(gelu(x @ w) ** 2); gradients come from backward()
tape = T.Tape()
x = tape.leaf(rng.standard_normal((4, 3)))
w = tape.leaf(rng.standard_normal((3, 5)))
y = T.gelu(T.matmul(x, w))
loss = T.reduce_mean(T.mul(y, y))
grads = T.backward(tape, loss)
print("loss:", float(loss.data.reshape(-1)[0]))
print("grad shapes:", grads[x].shape, grads[w].shape)

# the same function through the finite-difference helper (it takes tensor
# arguments and rebuilds the graph per probe); reported is the worst
# relative error across every input entry


def f(tx, tw):
    h = T.gelu(T.matmul(tx, tw))
    return T.reduce_mean(T.mul(h, h))


err = T.finite_diff_check(f, [x.data, w.data])
print("finite-difference relative error:", err)

# --- FFT: round trip, Parseval, and the O(N^2) definition ------------------
u = rng.standard_normal(256)
U = fft.fft(u)
print("round trip max |ifft(fft(u)) - u|:", np.abs(fft.ifft(U) - u).max())

# Parseval with the unnormalized-forward convention: sum|u|^2 = sum|U|^2 / N
lhs, rhs = np.sum(np.abs(u) ** 2), np.sum(np.abs(U) ** 2) / len(u)
print("Parseval relative gap:", abs(lhs - rhs) / lhs)

# the radix-2 butterflies must agree with the plain definition
n = 64
k, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
dft = np.exp(-2j * np.pi * k * j / n) @ u[:n]
print("vs direct DFT max abs:", np.abs(fft.fft(u[:n]) - dft).max())

# real-input transforms store only the nonnegative frequencies
half = fft.rfft(u)
print("rfft keeps", half.shape[-1], "of", len(u), "modes;",
      "irfft round trip:", np.abs(fft.irfft(half) - u).max())

# non-power-of-two lengths are rejected rather than silently padded
try:
    fft.fft(np.zeros(48))
except fft.UnsupportedLengthError as exc:
    print("length 48 ->", exc)

# --- spectral ops are differentiable too ------------------------------------
tape = T.Tape()
v = tape.leaf(rng.standard_normal((2, 32)))
spec = T.rfft(v)
power = T.reduce_sum(T.mul(T.real(spec), T.real(spec)))
g = T.backward(tape, power)[v]
print("d(spectral power)/dv shape:", g.shape, "finite:", np.isfinite(g).all())
