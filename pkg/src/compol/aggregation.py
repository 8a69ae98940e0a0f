"""Latent aggregation across coupled process branches.

After every operator layer the per-process latent fields are fused into
one shared state z which is re-injected into each branch before the next
layer.  Four mechanisms are provided:

* ``gru``       -- a convex gated update driven by the mixed latents,
                   carrying state across layers,
* ``attention`` -- scaled dot-product attention over the process tokens
                   at every grid location (weights shared across space),
* ``skip``      -- running sum of pointwise-mapped mixed latents,
* ``none``      -- no shared state; branches stay independent.

All maps act pointwise on channels, so every mechanism commutes with
spatial translations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import channel_affine, glorot_uniform
from .tensor import Tensor

__all__ = [
    "MixParams", "GruParams", "AttentionParams", "SkipParams", "InjectParams",
    "mix_processes", "gru_step", "attention_aggregate", "skip_aggregate", "inject",
    "init_mix", "init_gru", "init_attention", "init_skip", "init_inject",
]


@dataclass
class MixParams:
    """Learned pointwise map from the stacked process channels."""

    w: np.ndarray   # [n_proc * width, d_mix]
    b: np.ndarray   # [d_mix]


@dataclass
class GruParams:
    """Gated recurrent update z_l = q * z_{l-1} + (1 - q) * cand."""

    wq: np.ndarray  # [d_mix, width]
    uq: np.ndarray  # [width, width]
    bq: np.ndarray  # [width]
    wr: np.ndarray
    ur: np.ndarray
    br: np.ndarray
    wz: np.ndarray
    uz: np.ndarray
    bz: np.ndarray


@dataclass
class AttentionParams:
    """Shared query/key/value maps for per-location process attention.

    The key map deliberately has no bias: a shared key offset shifts all
    scores by the same amount and cancels inside the softmax, so it
    could never receive gradient.
    """

    wq: np.ndarray  # [width, d_k]
    bq: np.ndarray  # [d_k]
    wk: np.ndarray  # [width, d_k]
    wa: np.ndarray  # [width, width]
    ba: np.ndarray  # [width]
    heads: int = 1


@dataclass
class SkipParams:
    w: np.ndarray   # [d_mix, width]
    b: np.ndarray   # [width]


@dataclass
class InjectParams:
    """Pointwise reduction for concat-style injection, [2*width] -> [width]."""

    w: np.ndarray
    b: np.ndarray


def init_mix(rng, n_proc: int, width: int, d_mix: int, dtype=np.float32) -> MixParams:
    return MixParams(
        w=glorot_uniform(rng, n_proc * width, d_mix).astype(dtype),
        b=np.zeros(d_mix, dtype=dtype),
    )


def init_gru(rng, d_mix: int, width: int, dtype=np.float32) -> GruParams:
    def pair():
        return (glorot_uniform(rng, d_mix, width).astype(dtype),
                glorot_uniform(rng, width, width).astype(dtype),
                np.zeros(width, dtype=dtype))

    wq, uq, bq = pair()
    wr, ur, br = pair()
    wz, uz, bz = pair()
    return GruParams(wq, uq, bq, wr, ur, br, wz, uz, bz)


def init_attention(rng, width: int, d_k: int, heads: int = 1, dtype=np.float32) -> AttentionParams:
    if d_k % heads or width % heads:
        raise ValueError(f"head count {heads} must divide d_k={d_k} and width={width}")
    return AttentionParams(
        wq=glorot_uniform(rng, width, d_k).astype(dtype),
        bq=np.zeros(d_k, dtype=dtype),
        wk=glorot_uniform(rng, width, d_k).astype(dtype),
        wa=glorot_uniform(rng, width, width).astype(dtype),
        ba=np.zeros(width, dtype=dtype),
        heads=heads,
    )


def init_skip(rng, d_mix: int, width: int, dtype=np.float32) -> SkipParams:
    return SkipParams(w=glorot_uniform(rng, d_mix, width).astype(dtype),
                      b=np.zeros(width, dtype=dtype))


def init_inject(rng, width: int, dtype=np.float32) -> InjectParams:
    return InjectParams(w=glorot_uniform(rng, 2 * width, width).astype(dtype),
                        b=np.zeros(width, dtype=dtype))


def mix_processes(fields: list[Tensor], kind: str, params: MixParams | None = None) -> Tensor:
    """Fuse per-process latents into one field.

    ``linear`` concatenates channels and applies a learned pointwise map;
    ``add`` sums the fields (widths must match).
    """
    if not fields:
        raise ValueError("mix_processes needs at least one field")
    if kind == "add":
        out = fields[0]
        for f in fields[1:]:
            out = T.add(out, f)
        return out
    if kind == "linear":
        if params is None:
            raise ValueError("linear mixing requires parameters")
        return channel_affine(T.concat(fields, 1), params.w, params.b)
    raise ValueError(f"unknown mix kind {kind!r}")


def gru_step(mixed: Tensor, z_prev: Tensor, p: GruParams) -> Tensor:
    """One gated update; ``z_prev`` is the zero field on the first call."""
    q = T.sigmoid(T.add(channel_affine(mixed, p.wq, p.bq), channel_affine(z_prev, p.uq)))
    r = T.sigmoid(T.add(channel_affine(mixed, p.wr, p.br), channel_affine(z_prev, p.ur)))
    cand = T.tanh(T.add(channel_affine(mixed, p.wz, p.bz),
                        channel_affine(T.mul(r, z_prev), p.uz)))
    one_minus_q = T.sub(Tensor(np.ones((), dtype=q.data.dtype)), q)
    return T.add(T.mul(q, z_prev), T.mul(one_minus_q, cand))


def _split_heads(t: Tensor, heads: int) -> list[Tensor]:
    per = t.shape[1] // heads
    return [T.take(t, np.arange(h * per, (h + 1) * per), 1) for h in range(heads)]


def attention_aggregate(fields: list[Tensor], p: AttentionParams) -> Tensor:
    """Scaled dot-product attention over process tokens, per grid location.

    The query comes from the mean latent, keys/values from each token;
    attention weights are softmax(q . k / sqrt(d_k)) over tokens.
    """
    m = len(fields)
    mean = fields[0]
    for f in fields[1:]:
        mean = T.add(mean, f)
    mean = T.scale(mean, 1.0 / m)

    query = channel_affine(mean, p.wq, p.bq)                      # [b, d_k, *grid]
    keys = [channel_affine(f, p.wk) for f in fields]
    values = [channel_affine(f, p.wa, p.ba) for f in fields]

    heads = p.heads
    d_head = p.wq.shape[1] // heads
    inv = 1.0 / math.sqrt(d_head)

    q_h = _split_heads(query, heads)
    k_h = [_split_heads(k, heads) for k in keys]
    v_h = [_split_heads(v, heads) for v in values]

    grid_shape = None
    out_heads = []
    for h in range(heads):
        scores = []
        for j in range(m):
            s = T.reduce_sum(T.mul(q_h[h], k_h[j][h]), axes=(1,))   # [b, *grid]
            if grid_shape is None:
                grid_shape = s.shape
            scores.append(T.reshape(T.scale(s, inv), (s.shape[0], 1) + s.shape[1:]))
        alpha = T.softmax(T.concat(scores, 1), 1)                   # [b, m, *grid]
        z_h = None
        for j in range(m):
            a_j = T.take(alpha, np.asarray([j]), 1)                 # [b, 1, *grid]
            term = T.mul(a_j, v_h[j][h])
            z_h = term if z_h is None else T.add(z_h, term)
        out_heads.append(z_h)
    return out_heads[0] if heads == 1 else T.concat(out_heads, 1)


def skip_aggregate(mixed: Tensor, z_prev: Tensor, p: SkipParams) -> Tensor:
    """Running sum of pointwise-mapped mixed latents."""
    return T.add(z_prev, channel_affine(mixed, p.w, p.b))


def inject(v: Tensor, z: Tensor, kind: str, params: InjectParams | None = None) -> Tensor:
    """Fold the shared state back into one process branch."""
    if kind == "add":
        return T.add(v, z)
    if kind == "concat_reduce":
        if params is None:
            raise ValueError("concat_reduce injection requires parameters")
        return channel_affine(T.concat([v, z], 1), params.w, params.b)
    raise ValueError(f"unknown inject kind {kind!r}")
