"""Dense tensors on a reverse-mode differentiation tape.

Values are contiguous row-major numpy arrays in one of four dtypes
(float32/float64/complex64/complex128).  Operations on raw tensors just
compute; as soon as an operand carries a tape node, the result is
recorded so :func:`backward` can sweep the chain once in reverse,
accumulating cotangents at fan-out points.

Complex cotangents use the ``d/dRe + i*d/dIm`` convention.  Under it the
backward of the unnormalized DFT is the conjugate-transposed DFT, i.e.
``N * ifft``, which keeps real-in/real-out spectral pipelines exactly
consistent with finite differences.

Tensors are treated as immutable once created, and a tape must only be
used from the thread that recorded it.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from . import fft as _kernels

__all__ = [
    "Tensor", "Tape", "GradientMap", "ShapeError", "DtypeError", "TapeError",
    "add", "sub", "mul", "scale", "tanh", "sigmoid", "gelu", "sqrt",
    "elementwise", "matmul", "reduce_sum", "reduce_mean", "reduce",
    "fft", "ifft", "rfft", "irfft", "mode_mix", "softmax",
    "take", "put", "concat", "moveaxis", "reshape", "real", "imag",
    "backward", "finite_diff_check", "finite_diff_report",
]

_REAL = (np.dtype(np.float32), np.dtype(np.float64))
_COMPLEX = (np.dtype(np.complex64), np.dtype(np.complex128))
_SUPPORTED = _REAL + _COMPLEX
_SUPPORTED_SET = frozenset(_SUPPORTED)


class ShapeError(ValueError):
    """Shape or broadcast mismatch between operands."""


class DtypeError(TypeError):
    """Unsupported dtype or real/complex mixing."""


class TapeError(RuntimeError):
    """Tensors recorded on different (or no) tapes."""


class Tensor:
    """A numpy array plus an optional node id on one tape."""

    __slots__ = ("data", "tape", "node_id")

    def __init__(self, data, tape: "Tape | None" = None, node_id: int | None = None):
        if type(data) is np.ndarray and data.dtype in _SUPPORTED_SET and data.flags.c_contiguous:
            self.data = data
        else:
            arr = np.asarray(data)
            if arr.dtype.kind in "iub":
                arr = arr.astype(np.float64)
            if arr.dtype not in _SUPPORTED_SET:
                raise DtypeError(f"unsupported dtype {arr.dtype}")
            self.data = np.ascontiguousarray(arr)
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_complex(self) -> bool:
        return self.data.dtype in _COMPLEX

    def item(self) -> float:
        return self.data.item()

    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float, complex)) and not isinstance(other, bool):
            return scale(self, other)
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self):
        tag = f" node={self.node_id}" if self.node_id is not None else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag})"


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("name", "parents", "backward")

    def __init__(self, name, parents, backward):
        self.name = name
        self.parents = parents
        self.backward = backward


class Tape:
    """Append-only record of operations, replayed in reverse by backward."""

    def __init__(self):
        self._nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def leaf(self, data) -> Tensor:
        """Register an input/parameter tensor on this tape."""
        t = Tensor(data)
        t.tape = self
        t.node_id = self._add(_Node("leaf", (), None))
        return t

    def _add(self, node: _Node) -> int:
        self._nodes.append(node)
        return len(self._nodes) - 1


def _result_tape(inputs: Sequence[Tensor]) -> Tape | None:
    tape = None
    for t in inputs:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise TapeError("operands recorded on different tapes")
    return tape


def _record(name: str, out_data: np.ndarray, inputs: Sequence[Tensor],
            backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
    tape = _result_tape(inputs)
    out = Tensor(out_data)
    if tape is None:
        return out
    parent_ids = tuple(t.node_id if t.tape is not None else None for t in inputs)
    out.tape = tape
    out.node_id = tape._add(_Node(name, parent_ids, backward_fn))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over axes produced by trailing-rule broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _require_same_kind(a: Tensor, b: Tensor, op: str) -> None:
    if a.is_complex != b.is_complex:
        raise DtypeError(f"{op}: cannot mix real and complex operands")


def _require_real(t: Tensor, op: str) -> None:
    if t.is_complex:
        raise DtypeError(f"{op}: complex input not supported")


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from e


# ---------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _require_same_kind(a, b, "add")
    _check_broadcast(a, b, "add")
    out = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record("add", out, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _require_same_kind(a, b, "sub")
    _check_broadcast(a, b, "sub")
    out = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record("sub", out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _require_same_kind(a, b, "mul")
    _check_broadcast(a, b, "mul")
    out = a.data * b.data
    ad, bd = a.data, b.data

    def bwd(g):
        return _unbroadcast(g * np.conj(bd), a.shape), _unbroadcast(g * np.conj(ad), b.shape)

    return _record("mul", out, (a, b), bwd)


def scale(a: Tensor, c: float | complex) -> Tensor:
    a = _wrap(a)
    if isinstance(c, complex) and not a.is_complex:
        raise DtypeError("scale: complex factor on a real tensor")
    out = a.data * c

    def bwd(g):
        return (g * np.conj(c),)

    return _record("scale", out, (a,), bwd)


def tanh(a: Tensor) -> Tensor:
    a = _wrap(a)
    _require_real(a, "tanh")
    t = np.tanh(a.data)

    def bwd(g):
        return (g * (1.0 - t * t),)

    return _record("tanh", t, (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    a = _wrap(a)
    _require_real(a, "sigmoid")
    # Clipping at |x| = 60 avoids exp overflow; the result is already
    # saturated to within 1e-26 there, far below float64 resolution of 1.
    x = np.clip(a.data, -60.0, 60.0)
    s = 1.0 / (1.0 + np.exp(-x))
    if s.dtype != a.data.dtype:
        s = s.astype(a.data.dtype)

    def bwd(g):
        return (g * (s * (1.0 - s)),)

    return _record("sigmoid", s, (a,), bwd)


_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_K = 0.044715


def gelu(a: Tensor) -> Tensor:
    """Tanh-approximation GELU with its exact analytic derivative."""
    a = _wrap(a)
    _require_real(a, "gelu")
    x = a.data
    inner = _GELU_C * (x + _GELU_K * x * x * x)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def bwd(g):
        d_inner = _GELU_C * (1.0 + 3.0 * _GELU_K * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner),)

    return _record("gelu", out, (a,), bwd)


def sqrt(a: Tensor) -> Tensor:
    a = _wrap(a)
    _require_real(a, "sqrt")
    r = np.sqrt(a.data)

    def bwd(g):
        return (g * (0.5 / r),)

    return _record("sqrt", r, (a,), bwd)


_ELEMENTWISE_BINARY = {"add": add, "sub": sub, "mul": mul}
_ELEMENTWISE_UNARY = {"tanh": tanh, "sigmoid": sigmoid, "gelu": gelu}


def elementwise(kind: str, a: Tensor, b=None) -> Tensor:
    """Dispatch by kind; unary kinds ignore ``b``."""
    if kind in _ELEMENTWISE_BINARY:
        if b is None:
            raise ValueError(f"elementwise {kind!r} needs two operands")
        return _ELEMENTWISE_BINARY[kind](a, b)
    if kind == "scale":
        return scale(a, b)
    if kind in _ELEMENTWISE_UNARY:
        return _ELEMENTWISE_UNARY[kind](a)
    raise ValueError(f"unknown elementwise kind {kind!r}")


# ---------------------------------------------------------------------------
# matmul and reductions


def _conj_t(x: np.ndarray) -> np.ndarray:
    if x.dtype.kind != "c":
        return x.swapaxes(-1, -2)
    return np.conj(x).swapaxes(-1, -2)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands need at least two dims")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    _require_same_kind(a, b, "matmul")
    out = np.matmul(a.data, b.data)
    ad, bd = a.data, b.data

    def bwd(g):
        ga = _unbroadcast(np.matmul(g, _conj_t(bd)), ad.shape)
        gb = _unbroadcast(np.matmul(_conj_t(ad), g), bd.shape)
        return ga, gb

    return _record("matmul", out, (a, b), bwd)


def _normalize_axes(t: Tensor, axes) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(t.ndim))
    if isinstance(axes, int):
        axes = (axes,)
    out = []
    for ax in axes:
        ax = int(ax)
        if ax < 0:
            ax += t.ndim
        if not 0 <= ax < t.ndim:
            raise ShapeError(f"reduce axis out of range for shape {t.shape}")
        out.append(ax)
    if len(set(out)) != len(out):
        raise ShapeError("duplicate reduce axes")
    return tuple(sorted(out))


def _expand_reduced(g: np.ndarray, shape: tuple[int, ...], axes: tuple[int, ...]) -> np.ndarray:
    kept = list(shape)
    for ax in axes:
        kept[ax] = 1
    return np.broadcast_to(g.reshape(kept), shape)


def reduce_sum(a: Tensor, axes=None) -> Tensor:
    a = _wrap(a)
    ax = _normalize_axes(a, axes)
    out = a.data.sum(axis=ax)
    shape = a.shape

    def bwd(g):
        return (_expand_reduced(g, shape, ax),)

    return _record("reduce_sum", out, (a,), bwd)


def reduce_mean(a: Tensor, axes=None) -> Tensor:
    a = _wrap(a)
    ax = _normalize_axes(a, axes)
    out = a.data.mean(axis=ax) if ax else a.data.copy()
    shape = a.shape
    count = 1
    for i in ax:
        count *= shape[i]

    def bwd(g):
        return (_expand_reduced(g / count, shape, ax),)

    return _record("reduce_mean", out, (a,), bwd)


def reduce(kind: str, a: Tensor, axes=None) -> Tensor:
    if kind == "sum":
        return reduce_sum(a, axes)
    if kind == "mean":
        return reduce_mean(a, axes)
    raise ValueError(f"unknown reduce kind {kind!r}")


# ---------------------------------------------------------------------------
# Fourier transforms


def _axes_extent(shape, axes) -> int:
    p = 1
    for ax in axes:
        p *= shape[ax]
    return p


def fft(a: Tensor, axes=(-1,)) -> Tensor:
    a = _wrap(a)
    out = _kernels.fft(a.data, axes)
    was_real = not a.is_complex
    norm_axes = _kernels._normalize_axes(out.ndim, axes)
    n_total = _axes_extent(out.shape, norm_axes)

    def bwd(g):
        gi = _kernels.ifft(g, norm_axes) * n_total
        return (gi.real.copy() if was_real else gi,)

    return _record("fft", out, (a,), bwd)


def ifft(a: Tensor, axes=(-1,)) -> Tensor:
    a = _wrap(a)
    out = _kernels.ifft(a.data, axes)
    was_real = not a.is_complex
    norm_axes = _kernels._normalize_axes(out.ndim, axes)
    n_total = _axes_extent(out.shape, norm_axes)

    def bwd(g):
        gi = _kernels.fft(g, norm_axes) * (1.0 / n_total)
        return (gi.real.copy() if was_real else gi,)

    return _record("ifft", out, (a,), bwd)


def rfft(a: Tensor, axes=(-1,)) -> Tensor:
    a = _wrap(a)
    if a.is_complex:
        raise DtypeError("rfft expects a real tensor")
    out = _kernels.rfft(a.data, axes)
    norm_axes = _kernels._normalize_axes(a.ndim, axes)
    last = norm_axes[-1]
    n_last = a.shape[last]
    n_total = _axes_extent(a.shape, norm_axes)
    in_shape = a.shape

    def bwd(g):
        pad = list(in_shape)
        full = np.zeros(pad, dtype=g.dtype)
        sl = [slice(None)] * len(pad)
        sl[last] = slice(0, n_last // 2 + 1)
        full[tuple(sl)] = g
        gi = _kernels.ifft(full, norm_axes) * n_total
        return (gi.real.copy(),)

    return _record("rfft", out, (a,), bwd)


def irfft(a: Tensor, axes=(-1,), n: int | None = None) -> Tensor:
    a = _wrap(a)
    if not a.is_complex:
        raise DtypeError("irfft expects a complex tensor")
    norm_axes = _kernels._normalize_axes(a.ndim, axes)
    last = norm_axes[-1]
    n_last = 2 * (a.shape[last] - 1) if n is None else int(n)
    out = _kernels.irfft(a.data, norm_axes, n_last)
    n_other = _axes_extent(out.shape, norm_axes[:-1])
    k_last = a.shape[last]

    def bwd(g):
        # Adjoint in reverse order of the forward pipeline: last axis
        # transform, Hermitian fold, then the remaining axes.  The fold
        # conjugates mirrored bins, so it must precede the other axes.
        gf = _kernels.fft(g, (last,)) * (1.0 / n_last)
        moved = np.moveaxis(gf, last, -1)
        folded = moved[..., :k_last].copy()
        if n_last > 2:
            folded[..., 1:-1] += np.conj(moved[..., : n_last // 2 : -1])
        folded = np.moveaxis(folded, -1, last)
        if norm_axes[:-1]:
            folded = _kernels.fft(folded, norm_axes[:-1]) * (1.0 / n_other)
        return (np.ascontiguousarray(folded),)

    return _record("irfft", out, (a,), bwd)


def _modes_last_to_batch(x: np.ndarray) -> np.ndarray:
    """View ``[a, b, k..]`` as ``[k.., a, b]`` so matmul batches over modes."""
    return np.moveaxis(x, (0, 1), (-2, -1))


def _modes_batch_to_last(x: np.ndarray) -> np.ndarray:
    return np.moveaxis(x, (-2, -1), (0, 1))


def mode_mix(v: Tensor, r: Tensor) -> Tensor:
    """Per-mode channel mixing ``out[b,o,k..] = sum_i v[b,i,k..] r[i,o,k..]``."""
    v, r = _wrap(v), _wrap(r)
    if not (v.is_complex and r.is_complex):
        raise DtypeError("mode_mix expects complex tensors")
    rank = v.ndim - 2
    if rank not in (1, 2):
        raise ShapeError(f"mode_mix supports 1 or 2 mode axes, got rank {rank}")
    if r.ndim != rank + 2 or v.shape[1] != r.shape[0] or v.shape[2:] != r.shape[2:]:
        raise ShapeError(f"mode_mix shapes incompatible: {v.shape} with {r.shape}")
    vd, rd = v.data, r.data
    # Stacked matmul over the mode axes hits BLAS; einsum on complex does not.
    vb = np.ascontiguousarray(_modes_last_to_batch(vd))  # [k.., b, i]
    rb = np.ascontiguousarray(_modes_last_to_batch(rd))  # [k.., i, o]
    out = np.ascontiguousarray(_modes_batch_to_last(vb @ rb))

    def bwd(g):
        gb = np.ascontiguousarray(_modes_last_to_batch(g))  # [k.., b, o]
        gv = gb @ np.conj(np.swapaxes(rb, -2, -1))          # [k.., b, i]
        gr = np.conj(np.swapaxes(vb, -2, -1)) @ gb          # [k.., i, o]
        return (
            np.ascontiguousarray(_modes_batch_to_last(gv)),
            np.ascontiguousarray(_modes_batch_to_last(gr)),
        )

    return _record("mode_mix", out, (v, r), bwd)


# ---------------------------------------------------------------------------
# shape surgery


def take(a: Tensor, indices, axis: int) -> Tensor:
    a = _wrap(a)
    idx = np.asarray(indices, dtype=np.intp)
    out = np.take(a.data, idx, axis=axis)
    shape = a.shape

    def bwd(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(np.moveaxis(full, axis, 0), idx, np.moveaxis(g, axis, 0))
        return (full,)

    return _record("take", out, (a,), bwd)


def put(a: Tensor, indices, axis: int, size: int) -> Tensor:
    """Embed ``a`` into zeros of extent ``size`` along ``axis``."""
    a = _wrap(a)
    idx = np.asarray(indices, dtype=np.intp)
    if len(idx) != a.shape[axis]:
        raise ShapeError("put: index count must match the source extent")
    shape = list(a.shape)
    shape[axis] = int(size)
    out = np.zeros(shape, dtype=a.data.dtype)
    np.moveaxis(out, axis, 0)[idx] = np.moveaxis(a.data, axis, 0)

    def bwd(g):
        return (np.take(g, idx, axis=axis),)

    return _record("put", out, (a,), bwd)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    ts = [_wrap(t) for t in tensors]
    if not ts:
        raise ShapeError("concat of an empty list")
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]

    def bwd(g):
        pieces = []
        start = 0
        for s in sizes:
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, start + s)
            pieces.append(g[tuple(sl)])
            start += s
        return pieces

    return _record("concat", out, ts, bwd)


def moveaxis(a: Tensor, src: int, dst: int) -> Tensor:
    a = _wrap(a)
    out = np.moveaxis(a.data, src, dst)

    def bwd(g):
        return (np.moveaxis(g, dst, src),)

    return _record("moveaxis", out, (a,), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    a = _wrap(a)
    out = a.data.reshape(shape)
    old = a.shape

    def bwd(g):
        return (np.reshape(g, old),)

    return _record("reshape", out, (a,), bwd)


def real(a: Tensor) -> Tensor:
    a = _wrap(a)
    out = a.data.real.copy()
    was_complex = a.is_complex
    cdtype = a.data.dtype

    def bwd(g):
        return (g.astype(cdtype) if was_complex else g,)

    return _record("real", out, (a,), bwd)


def imag(a: Tensor) -> Tensor:
    a = _wrap(a)
    out = a.data.imag.copy() if a.is_complex else np.zeros_like(a.data)
    was_complex = a.is_complex
    cdtype = a.data.dtype

    def bwd(g):
        if was_complex:
            return ((1j * g).astype(cdtype),)
        return (np.zeros_like(g),)

    return _record("imag", out, (a,), bwd)


def softmax(a: Tensor, axis: int) -> Tensor:
    a = _wrap(a)
    _require_real(a, "softmax")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - dot),)

    return _record("softmax", s, (a,), bwd)


# ---------------------------------------------------------------------------
# reverse sweep and finite differences


class GradientMap:
    """Gradients keyed by tape node; nodes the loss never reached read as zero."""

    def __init__(self, table: dict[int, np.ndarray]):
        self._table = table

    def __getitem__(self, t: Tensor) -> np.ndarray:
        if t.node_id is None:
            raise TapeError("tensor is not on a tape")
        g = self._table.get(t.node_id)
        if g is None:
            return np.zeros_like(t.data)
        return g


def backward(tape: Tape, loss: Tensor) -> GradientMap:
    """One reverse sweep from a real scalar loss over the whole tape."""
    if loss.tape is not tape or loss.node_id is None:
        raise TapeError("loss is not recorded on this tape")
    if loss.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    if loss.is_complex:
        raise DtypeError("loss must be real")
    table: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for nid in range(loss.node_id, -1, -1):
        g = table.get(nid)
        if g is None:
            continue
        node = tape._nodes[nid]
        if node.backward is None:
            continue
        parts = node.backward(g)
        for pid, pg in zip(node.parents, parts):
            if pid is None or pg is None:
                continue
            acc = table.get(pid)
            table[pid] = pg if acc is None else acc + pg
    return GradientMap(table)


def _eval_raw(f, arrays: list[np.ndarray]) -> float:
    out = f(*[Tensor(a) for a in arrays])
    val = out.data if isinstance(out, Tensor) else np.asarray(out)
    if val.size != 1:
        raise ShapeError("finite-difference target must return a scalar")
    return float(val.real.reshape(()))


def finite_diff_report(f, xs, eps: float = 1e-5):
    """Compare tape gradients of ``f`` against central differences.

    ``f`` maps one or more tensors to a real scalar tensor and must be
    deterministic.  Returns ``(max_rel_err, (leaf, flat_index, part))``
    where part is 're' or 'im'.  Relative error uses
    ``max(|analytic|, |numeric|, 1e-12)`` as denominator.
    """
    single = isinstance(xs, (Tensor, np.ndarray))
    xs_list = [xs] if single else list(xs)
    arrays = [np.asarray(x.data if isinstance(x, Tensor) else x, dtype=None) for x in xs_list]
    tape = Tape()
    leaves = [tape.leaf(a) for a in arrays]
    loss = f(*leaves)
    grads = backward(tape, loss)
    analytic = [grads[leaf] for leaf in leaves]

    worst = 0.0
    where = (0, 0, "re")
    for li, base in enumerate(arrays):
        flat = base.reshape(-1)
        a_flat = analytic[li].reshape(-1)
        parts = ("re", "im") if np.iscomplexobj(base) else ("re",)
        for j in range(flat.size):
            for part in parts:
                delta = eps if part == "re" else 1j * eps
                bumped = [a.copy() for a in arrays]
                bumped[li].reshape(-1)[j] = flat[j] + delta
                hi = _eval_raw(f, bumped)
                bumped[li].reshape(-1)[j] = flat[j] - delta
                lo = _eval_raw(f, bumped)
                numeric = (hi - lo) / (2.0 * eps)
                a_val = a_flat[j].real if part == "re" else a_flat[j].imag
                err = abs(a_val - numeric) / max(abs(a_val), abs(numeric), 1e-12)
                if err > worst:
                    worst = err
                    where = (li, j, part)
    return worst, where


def finite_diff_check(f, xs, eps: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences."""
    err, _ = finite_diff_report(f, xs, eps)
    return err
