"""Finite-difference verification of every differentiable building block.

Each check compares tape gradients against central differences on small
fixed random probes (float64).  Probes are generic — drawn once from
seeded streams, never structured — because special inputs such as
all-ones have zero gradient through most spectral coefficients and can
mask real bugs.

Run via ``compol gradcheck`` or :func:`run`, which returns a list of
:class:`CheckResult` and an overall pass flag.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass

import numpy as np

from . import aggregation as agg
from . import layers as L
from . import model as M
from . import params as P
from . import tensor as T

__all__ = ["CheckResult", "run", "SUITES", "TOLERANCE"]

TOLERANCE = 1e-4
_EPS = 1e-5


@dataclass
class CheckResult:
    suite: str
    name: str
    max_rel_err: float
    location: tuple
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < TOLERANCE

    def line(self) -> str:
        status = "ok  " if self.passed else "FAIL"
        return (f"[{status}] {self.suite}/{self.name}: "
                f"max rel err {self.max_rel_err:.3e} at {self.location} "
                f"({self.seconds:.2f}s)")


def _rng(tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([20259, tag]))


def _substitute(obj, table: dict, prefix: str = ""):
    """Clone a parameter tree, replacing each array with table[dotted-name].

    The replacement values are leaf tensors, so forward passes through
    the cloned tree are recorded on their tape.
    """
    if isinstance(obj, np.ndarray):
        return table[prefix]
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        kwargs = {
            f.name: _substitute(getattr(obj, f.name), table,
                                f"{prefix}.{f.name}" if prefix else f.name)
            for f in dataclasses.fields(obj)}
        return dataclasses.replace(obj, **kwargs)
    if isinstance(obj, list):
        return [_substitute(v, table, f"{prefix}.{i}" if prefix else str(i))
                for i, v in enumerate(obj)]
    if isinstance(obj, tuple):
        return tuple(_substitute(v, table, f"{prefix}.{i}" if prefix else str(i))
                     for i, v in enumerate(obj))
    if isinstance(obj, dict):
        return {k: _substitute(v, table, f"{prefix}.{k}" if prefix else str(k))
                for k, v in obj.items()}
    return obj


def _real(rng, *shape):
    return rng.normal(size=shape)


def _cplx(rng, *shape):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


def _check(suite, name, f, xs, results):
    t0 = time.perf_counter()
    err, where = T.finite_diff_report(f, xs, _EPS)
    results.append(CheckResult(suite, name, err, where, time.perf_counter() - t0))


# ---------------------------------------------------------------------------
# tensor ops


def _suite_tensor(results):
    rng = _rng(1)
    x = _real(rng, 3, 5)
    y = _real(rng, 3, 5)
    pr = _real(rng, 3, 5)          # fixed probe for non-scalar outputs
    prT = T.Tensor(pr)

    _check("tensor", "add", lambda a, b: T.reduce_sum((a + b) * prT), [x, y], results)
    _check("tensor", "sub", lambda a, b: T.reduce_sum((a - b) * prT), [x, y], results)
    _check("tensor", "mul", lambda a, b: T.reduce_sum((a * b) * prT), [x, y], results)
    _check("tensor", "scale", lambda a: T.reduce_sum(T.scale(a, -1.7) * prT), [x], results)
    _check("tensor", "tanh", lambda a: T.reduce_sum(T.tanh(a) * prT), [x], results)
    _check("tensor", "sigmoid", lambda a: T.reduce_sum(T.sigmoid(a) * prT), [x], results)
    _check("tensor", "gelu", lambda a: T.reduce_sum(T.gelu(a) * prT), [x], results)
    xp = np.abs(x) + 0.5
    _check("tensor", "sqrt", lambda a: T.reduce_sum(T.sqrt(a) * prT), [xp], results)

    a34, b45 = _real(rng, 3, 4), _real(rng, 4, 5)
    pr35 = T.Tensor(_real(rng, 3, 5))
    _check("tensor", "matmul", lambda a, b: T.reduce_sum(T.matmul(a, b) * pr35),
           [a34, b45], results)
    ca, cb = _cplx(rng, 2, 3, 4), _cplx(rng, 2, 4, 5)
    prc = T.Tensor(_cplx(rng, 2, 3, 5))
    _check("tensor", "matmul_complex",
           lambda a, b: T.reduce_sum(T.real(T.matmul(a, b) * prc)), [ca, cb], results)

    pr3 = T.Tensor(_real(rng, 3))
    _check("tensor", "reduce_sum_axis",
           lambda a: T.reduce_sum(T.reduce_sum(a, (1,)) * pr3), [x], results)
    _check("tensor", "reduce_mean",
           lambda a: T.reduce_sum(T.reduce_mean(a, (1,)) * pr3), [x], results)

    x8 = _real(rng, 2, 8)
    pc8 = T.Tensor(_cplx(rng, 2, 8))
    pc5 = T.Tensor(_cplx(rng, 2, 5))
    p8 = T.Tensor(_real(rng, 2, 8))
    _check("tensor", "fft",
           lambda a: T.reduce_sum(T.real(T.fft(a, (-1,)) * pc8)), [x8 + 0j], results)
    _check("tensor", "ifft",
           lambda a: T.reduce_sum(T.real(T.ifft(a, (-1,)) * pc8)),
           [_cplx(rng, 2, 8)], results)
    _check("tensor", "rfft",
           lambda a: T.reduce_sum(T.real(T.rfft(a, (-1,)) * pc5)), [x8], results)
    _check("tensor", "irfft",
           lambda a: T.reduce_sum(T.irfft(a, (-1,)) * p8),
           [_cplx(rng, 2, 5)], results)
    _check("tensor", "rfft_irfft_chain",
           lambda a: T.reduce_sum(T.irfft(T.rfft(a, (-1,)), (-1,)) * p8),
           [x8], results)
    x2d = _real(rng, 2, 4, 4)
    p2d = T.Tensor(_real(rng, 2, 4, 4))
    _check("tensor", "irfft_rfft_2d",
           lambda a: T.reduce_sum(T.irfft(T.rfft(a, (-2, -1)), (-2, -1)) * p2d),
           [x2d], results)

    v = _cplx(rng, 2, 3, 6)
    r = _cplx(rng, 3, 3, 6)
    pv = T.Tensor(_cplx(rng, 2, 3, 6))
    _check("tensor", "mode_mix",
           lambda a, b: T.reduce_sum(T.real(T.mode_mix(a, b) * pv)), [v, r], results)

    _check("tensor", "softmax",
           lambda a: T.reduce_sum(T.softmax(a, -1) * prT), [x], results)
    idx = np.array([2, 0, 1])
    pr_t = T.Tensor(_real(rng, 3, 5))
    _check("tensor", "take",
           lambda a: T.reduce_sum(T.take(a, idx, 0) * pr_t), [x], results)
    pr27 = T.Tensor(_real(rng, 2, 7))
    _check("tensor", "concat",
           lambda a, b: T.reduce_sum(T.concat([a, b], 1) * pr27),
           [_real(rng, 2, 3), _real(rng, 2, 4)], results)
    pr_mv = T.Tensor(_real(rng, 5, 3))
    _check("tensor", "moveaxis",
           lambda a: T.reduce_sum(T.moveaxis(a, 0, 1) * pr_mv), [x], results)
    pr_rs = T.Tensor(_real(rng, 15))
    _check("tensor", "reshape",
           lambda a: T.reduce_sum(T.reshape(a, (15,)) * pr_rs), [x], results)


# ---------------------------------------------------------------------------
# layers


def _suite_layers(results):
    rng = _rng(2)
    b, w, n, m = 2, 4, 8, 3

    vw = _real(rng, b, w, n)
    ww = _real(rng, w, w)
    bw = _real(rng, w)
    pr = T.Tensor(_real(rng, b, w, n))
    _check("layers", "channel_affine",
           lambda v_, w_, b_: T.reduce_sum(L.channel_affine(v_, w_, b_) * pr),
           [vw, ww, bw], results)

    r = _cplx(rng, w, w, m)
    _check("layers", "spectral_conv",
           lambda v_, r_: T.reduce_sum(L.spectral_conv(v_, r_) * pr),
           [vw, r], results)

    p1 = L.init_fourier_layer(_rng(21), w, m, 1, dtype=np.float64)
    arrs_fl = P.named_arrays(p1, "p")

    def fl(*leaves):
        tree = _substitute(p1, dict(zip([k for k, _ in arrs_fl], leaves)), "p")
        return T.reduce_sum(L.fourier_layer(T.Tensor(vw), tree) * pr)

    _check("layers", "fourier_layer", fl, [a for _, a in arrs_fl], results)

    r2 = _cplx(rng, w, w, 2, 3)
    v2 = _real(rng, b, w, 8, 8)
    pr2 = T.Tensor(_real(rng, b, w, 8, 8))
    _check("layers", "spectral_conv_2d",
           lambda v_, r_: T.reduce_sum(L.spectral_conv(v_, r_) * pr2),
           [v2, r2], results)

    hp = L.init_lift_project(_rng(22), d_in=2, d_out=1, width=w, dtype=np.float64)
    arrs_h = P.named_arrays(hp, "h")
    fin = _real(rng, b, 1, n)
    prl = T.Tensor(_real(rng, b, w, n))

    def lift_f(*leaves):
        tree = _substitute(hp, dict(zip([k for k, _ in arrs_h], leaves)), "h")
        return T.reduce_sum(L.lift(T.Tensor(fin), tree) * prl)

    _check("layers", "lift", lift_f, [a for _, a in arrs_h], results)

    prq = T.Tensor(_real(rng, b, 1, n))

    def project_f(*leaves):
        tree = _substitute(hp, dict(zip([k for k, _ in arrs_h], leaves)), "h")
        return T.reduce_sum(L.project(T.Tensor(vw), tree) * prq)

    _check("layers", "project", project_f, [a for _, a in arrs_h], results)


# ---------------------------------------------------------------------------
# aggregation


def _suite_aggregation(results):
    rng = _rng(3)
    b, w, n = 2, 4, 8
    fields = [_real(rng, b, w, n) for _ in range(3)]
    pr = T.Tensor(_real(rng, b, w, n))

    mixp = agg.init_mix(_rng(31), 3, w, w, dtype=np.float64)
    arrs = P.named_arrays(mixp, "mix")

    def mix_f(f0, f1, f2, *leaves):
        tree = _substitute(mixp, dict(zip([k for k, _ in arrs], leaves)), "mix")
        return T.reduce_sum(agg.mix_processes([f0, f1, f2], "linear", tree) * pr)

    _check("aggregation", "mix_linear", mix_f,
           fields + [a for _, a in arrs], results)
    _check("aggregation", "mix_add",
           lambda f0, f1, f2: T.reduce_sum(
               agg.mix_processes([f0, f1, f2], "add") * pr),
           fields, results)

    gp = agg.init_gru(_rng(32), w, w, dtype=np.float64)
    arrs_g = P.named_arrays(gp, "gru")
    mixed = _real(rng, b, w, n)
    zprev = _real(rng, b, w, n)

    def gru_f(m_, z_, *leaves):
        tree = _substitute(gp, dict(zip([k for k, _ in arrs_g], leaves)), "gru")
        return T.reduce_sum(agg.gru_step(m_, z_, tree) * pr)

    _check("aggregation", "gru_step", gru_f,
           [mixed, zprev] + [a for _, a in arrs_g], results)

    ap = agg.init_attention(_rng(33), w, w, heads=1, dtype=np.float64)
    arrs_a = P.named_arrays(ap, "attn")

    def attn_f(f0, f1, f2, *leaves):
        tree = _substitute(ap, dict(zip([k for k, _ in arrs_a], leaves)), "attn")
        return T.reduce_sum(agg.attention_aggregate([f0, f1, f2], tree) * pr)

    _check("aggregation", "attention", attn_f,
           fields + [a for _, a in arrs_a], results)

    ap2 = agg.init_attention(_rng(34), w, w, heads=2, dtype=np.float64)
    arrs_a2 = P.named_arrays(ap2, "attn2")

    def attn2_f(f0, f1, f2, *leaves):
        tree = _substitute(ap2, dict(zip([k for k, _ in arrs_a2], leaves)), "attn2")
        return T.reduce_sum(agg.attention_aggregate([f0, f1, f2], tree) * pr)

    _check("aggregation", "attention_2head", attn2_f,
           fields + [a for _, a in arrs_a2], results)

    sp = agg.init_skip(_rng(35), w, w, dtype=np.float64)
    arrs_s = P.named_arrays(sp, "skip")

    def skip_f(m_, z_, *leaves):
        tree = _substitute(sp, dict(zip([k for k, _ in arrs_s], leaves)), "skip")
        return T.reduce_sum(agg.skip_aggregate(m_, z_, tree) * pr)

    _check("aggregation", "skip", skip_f,
           [mixed, zprev] + [a for _, a in arrs_s], results)

    ip = agg.init_inject(_rng(36), w, dtype=np.float64)
    arrs_i = P.named_arrays(ip, "inject")
    _check("aggregation", "inject_add",
           lambda v_, z_: T.reduce_sum(agg.inject(v_, z_, "add") * pr),
           [mixed, zprev], results)

    def inj_f(v_, z_, *leaves):
        tree = _substitute(ip, dict(zip([k for k, _ in arrs_i], leaves)), "inject")
        return T.reduce_sum(agg.inject(v_, z_, "concat_reduce", tree) * pr)

    _check("aggregation", "inject_concat_reduce", inj_f,
           [mixed, zprev] + [a for _, a in arrs_i], results)


# ---------------------------------------------------------------------------
# full model


def _model_config(aggregation: str) -> M.CompolConfig:
    return M.CompolConfig(
        processes=2, channels=[1, 1], layers=2, width=8, modes=4,
        spatial_dims=1, aggregation=aggregation, mix="add",
        dtype="real64", seed=5)


def _suite_model(results, grid: int = 32):
    rng = _rng(4)
    for kind in ("gru", "attention"):
        cfg = _model_config(kind)
        model = M.init_params(cfg)
        named = model.named_parameters()
        names = [k for k, _ in named]
        xs = [_real(rng, 2, 1, grid) for _ in range(2)]
        probes = [T.Tensor(_real(rng, 2, 1, grid)) for _ in range(2)]

        def full(*leaves, _names=names, _model=model, _xs=xs, _probes=probes):
            table = dict(zip(_names, leaves))
            proc = _substitute(_model.processes, table, "processes")
            ag = _substitute(_model.aggregation, table, "aggregation")
            bound = dataclasses.replace(_model, processes=proc, aggregation=ag)
            outs = M.forward(bound, _xs, None)
            total = T.reduce_sum(outs[0] * _probes[0])
            return total + T.reduce_sum(outs[1] * _probes[1])

        _check("model", f"compol_{kind}", full, [a for _, a in named], results)


SUITES = {
    "tensor": _suite_tensor,
    "layers": _suite_layers,
    "aggregation": _suite_aggregation,
    "model": _suite_model,
}


def run(module: str = "all", verbose: bool = True) -> tuple[list[CheckResult], bool]:
    """Run one named suite or all of them; returns (results, all_passed)."""
    if module != "all" and module not in SUITES:
        raise ValueError(f"unknown gradcheck module {module!r}; "
                         f"choose from {('all',) + tuple(SUITES)}")
    selected = SUITES if module == "all" else {module: SUITES[module]}
    results: list[CheckResult] = []
    for fn in selected.values():
        fn(results)
    for res in results:
        if verbose:
            print(res.line())
    ok = all(r.passed for r in results)
    if verbose:
        worst = max(results, key=lambda r: r.max_rel_err)
        print(f"{'PASS' if ok else 'FAIL'}: {len(results)} checks, "
              f"worst {worst.max_rel_err:.3e} ({worst.suite}/{worst.name}), "
              f"tolerance {TOLERANCE:.0e}")
    return results, ok
