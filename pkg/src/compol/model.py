"""Coupled-operator model assembly, forward pass, and checkpoints.

A model holds one lift/Fourier-stack/projection branch per physical
process plus per-layer aggregation parameters.  Each forward layer first
fuses the previous latents into a shared state z (GRU, attention, skip,
or nothing), injects z into every branch, and applies that branch's
Fourier layer.  With aggregation ``none`` the branches never talk, which
makes an M=1 model exactly the plain FNO used as the channel-concatenated
baseline.

Checkpoints are a single binary file: magic ``CMPLCKPT``, little-endian
u32 format version, u32 length-prefixed JSON header (config, extra
metadata, named parameter table with offsets), then raw array payloads.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass

import numpy as np

from . import aggregation as agg
from . import layers as L
from . import tensor as T
from .params import bind, named_arrays
from .tensor import Tape, Tensor

__all__ = [
    "CompolConfig", "CompolModel", "init_params", "forward",
    "make_fno_concat", "forward_fno_concat",
    "param_count", "total_params", "PARAM_COUNT_CONVENTION",
    "save_checkpoint", "load_checkpoint", "CheckpointError",
    "MODEL_KINDS", "config_for_kind",
]

_DTYPES = {"real32": np.float32, "real64": np.float64}

AGGREGATION_KINDS = ("gru", "attention", "skip", "none")
MIX_KINDS = ("linear", "add")
INJECT_KINDS = ("add", "concat_reduce")

PARAM_COUNT_CONVENTION = "complex entries count as two reals; biases included"

# CLI-facing model names mapped onto configuration choices.
MODEL_KINDS = ("compol-rnn", "compol-atn", "compol-skip", "fno-c")


@dataclass
class CompolConfig:
    """Architecture and initialization choices for one model."""

    processes: int
    channels: list[int]
    layers: int = 4
    width: int = 64
    modes: int | tuple[int, ...] = 16
    spatial_dims: int = 1
    aggregation: str = "attention"
    mix: str = "linear"
    d_mix: int | None = None
    inject: str = "add"
    activation: str = "gelu"
    coords: bool = True
    key_width: int | None = None
    heads: int = 1
    attend_history: bool = False
    dtype: str = "real32"
    seed: int = 0
    process_seed_offset: int = 0

    def __post_init__(self):
        self.channels = [int(c) for c in self.channels]
        if isinstance(self.modes, list):
            self.modes = tuple(self.modes)
        self.validate()

    def validate(self) -> None:
        if self.processes < 1 or len(self.channels) != self.processes:
            raise ValueError("need one channel count per process")
        if self.spatial_dims not in (1, 2):
            raise ValueError("spatial_dims must be 1 or 2")
        if self.aggregation not in AGGREGATION_KINDS:
            raise ValueError(f"aggregation must be one of {AGGREGATION_KINDS}")
        if self.mix not in MIX_KINDS:
            raise ValueError(f"mix must be one of {MIX_KINDS}")
        if self.inject not in INJECT_KINDS:
            raise ValueError(f"inject must be one of {INJECT_KINDS}")
        if self.dtype not in _DTYPES:
            raise ValueError("dtype must be real32 or real64")
        if self.layers < 1 or self.width < 1:
            raise ValueError("layers and width must be positive")
        L.activation_fn(self.activation)
        if self.mix == "add" and self.effective_d_mix != self.width:
            raise ValueError("additive mixing requires d_mix == width")

    @property
    def np_dtype(self):
        return _DTYPES[self.dtype]

    @property
    def effective_d_mix(self) -> int:
        return self.width if self.d_mix is None else self.d_mix

    @property
    def effective_key_width(self) -> int:
        return self.width if self.key_width is None else self.key_width

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if isinstance(d["modes"], tuple):
            d["modes"] = list(d["modes"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CompolConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ProcessParams:
    head: L.LiftProjectParams
    layers: list[L.FourierLayerParams]


@dataclass
class LayerAggregation:
    mix: agg.MixParams | None = None
    gru: agg.GruParams | None = None
    attn: agg.AttentionParams | None = None
    skip: agg.SkipParams | None = None
    inject: list[agg.InjectParams] | None = None


@dataclass
class CompolModel:
    config: CompolConfig
    processes: list[ProcessParams]
    aggregation: list[LayerAggregation]

    def named_parameters(self) -> list[tuple[str, np.ndarray]]:
        return (named_arrays(self.processes, "processes")
                + named_arrays(self.aggregation, "aggregation"))


def _process_rng(seed: int, m: int, offset: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 0, m + offset]))


def _aggregation_rng(seed: int, layer: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 1, layer]))


def init_params(config: CompolConfig, seed: int | None = None) -> CompolModel:
    """Build a model with per-branch parameter streams.

    Process m draws from a stream keyed by (seed, m + process_seed_offset)
    alone, so a separately constructed single-process model with a
    matching offset reproduces that branch bit-for-bit.
    """
    cfg = dataclasses.replace(config) if seed is None else dataclasses.replace(config, seed=seed)
    dtype = cfg.np_dtype
    n_coords = cfg.spatial_dims if cfg.coords else 0

    processes = []
    for m in range(cfg.processes):
        rng = _process_rng(cfg.seed, m, cfg.process_seed_offset)
        head = L.init_lift_project(rng, cfg.channels[m] + n_coords, cfg.channels[m],
                                   cfg.width, dtype=dtype)
        stack = [L.init_fourier_layer(rng, cfg.width, cfg.modes, cfg.spatial_dims, dtype=dtype)
                 for _ in range(cfg.layers)]
        processes.append(ProcessParams(head=head, layers=stack))

    layer_aggs: list[LayerAggregation] = []
    if cfg.aggregation != "none":
        for l in range(cfg.layers):
            rng = _aggregation_rng(cfg.seed, l)
            la = LayerAggregation()
            if cfg.aggregation in ("gru", "skip") and cfg.mix == "linear":
                la.mix = agg.init_mix(rng, cfg.processes, cfg.width, cfg.effective_d_mix, dtype)
            if cfg.aggregation == "gru":
                la.gru = agg.init_gru(rng, cfg.effective_d_mix, cfg.width, dtype)
            elif cfg.aggregation == "attention":
                la.attn = agg.init_attention(rng, cfg.width, cfg.effective_key_width,
                                             cfg.heads, dtype)
            elif cfg.aggregation == "skip":
                la.skip = agg.init_skip(rng, cfg.effective_d_mix, cfg.width, dtype)
            if cfg.inject == "concat_reduce":
                la.inject = [agg.init_inject(rng, cfg.width, dtype) for _ in range(cfg.processes)]
            layer_aggs.append(la)

    return CompolModel(config=cfg, processes=processes, aggregation=layer_aggs)


def _as_input_tensors(model: CompolModel, inputs) -> list[Tensor]:
    cfg = model.config
    if len(inputs) != cfg.processes:
        raise T.ShapeError(f"expected {cfg.processes} process inputs, got {len(inputs)}")
    ts = []
    for m, x in enumerate(inputs):
        t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=cfg.np_dtype))
        want = cfg.spatial_dims + 2
        if t.ndim != want or t.shape[1] != cfg.channels[m]:
            raise T.ShapeError(
                f"process {m}: expected [batch, {cfg.channels[m]}, grid...] with "
                f"{cfg.spatial_dims} spatial axes, got {t.shape}")
        ts.append(t)
    return ts


def forward(model: CompolModel, inputs, tape: Tape | None = None,
            return_latents: bool = False):
    """Run the coupled forward pass.

    ``inputs`` is one [batch, channels_m, *grid] array or tensor per
    process.  Returns per-process outputs, plus the per-layer latents
    (list indexed [layer][process], layer 0 = post-lift) when asked.
    """
    cfg = model.config
    xs = _as_input_tensors(model, inputs)
    procs = bind(model.processes, tape)
    aggs = bind(model.aggregation, tape)

    v = [L.lift(xs[m], procs[m].head, cfg.coords) for m in range(cfg.processes)]
    latents = [list(v)]
    z_state: Tensor | None = None

    for l in range(cfg.layers):
        if cfg.aggregation != "none":
            la = aggs[l]
            if z_state is None:
                z_state = Tensor(np.zeros(v[0].shape, dtype=cfg.np_dtype))
            if cfg.aggregation == "gru":
                mixed = agg.mix_processes(v, cfg.mix, la.mix)
                z = agg.gru_step(mixed, z_state, la.gru)
            elif cfg.aggregation == "skip":
                mixed = agg.mix_processes(v, cfg.mix, la.mix)
                z = agg.skip_aggregate(mixed, z_state, la.skip)
            else:  # attention
                tokens = [t for step in latents for t in step] if cfg.attend_history else v
                z = agg.attention_aggregate(tokens, la.attn)
            z_state = z
            v = [L.fourier_layer(
                    agg.inject(v[m], z, cfg.inject, la.inject[m] if la.inject else None),
                    procs[m].layers[l], cfg.activation)
                 for m in range(cfg.processes)]
        else:
            v = [L.fourier_layer(v[m], procs[m].layers[l], cfg.activation)
                 for m in range(cfg.processes)]
        latents.append(list(v))

    outs = [L.project(v[m], procs[m].head) for m in range(cfg.processes)]
    if return_latents:
        return outs, latents
    return outs


def make_fno_concat(total_channels: int, layers: int = 4, width: int = 64,
                    modes=16, spatial_dims: int = 1, **kwargs) -> CompolModel:
    """Single-branch FNO over all process channels stacked together."""
    cfg = CompolConfig(processes=1, channels=[total_channels], layers=layers,
                       width=width, modes=modes, spatial_dims=spatial_dims,
                       aggregation="none", **kwargs)
    return init_params(cfg)


def forward_fno_concat(model: CompolModel, stacked, tape: Tape | None = None) -> Tensor:
    if model.config.processes != 1:
        raise ValueError("baseline forward expects a single-branch model")
    return forward(model, [stacked], tape)[0]


def config_for_kind(kind: str, base: CompolConfig) -> CompolConfig:
    """Translate a CLI model name into configuration overrides."""
    if kind == "compol-rnn":
        return dataclasses.replace(base, aggregation="gru")
    if kind == "compol-atn":
        return dataclasses.replace(base, aggregation="attention")
    if kind == "compol-skip":
        return dataclasses.replace(base, aggregation="skip")
    if kind == "fno-c":
        total = sum(base.channels)
        return dataclasses.replace(base, processes=1, channels=[total], aggregation="none")
    raise ValueError(f"unknown model kind {kind!r}; choose from {MODEL_KINDS}")


# ---------------------------------------------------------------------------
# parameter counting


def param_count(model: CompolModel) -> dict[str, int]:
    """Real-valued parameter count per named array."""
    counts = {}
    for name, arr in model.named_parameters():
        n = arr.size
        if np.iscomplexobj(arr):
            n *= 2
        counts[name] = int(n)
    return counts


def total_params(model: CompolModel) -> int:
    return sum(param_count(model).values())


# ---------------------------------------------------------------------------
# checkpoints


class CheckpointError(ValueError):
    """Malformed, mismatched, or truncated checkpoint file."""


CKPT_MAGIC = b"CMPLCKPT"
CKPT_VERSION = 1

_DTYPE_CODES = {
    np.dtype(np.float32): "<f4",
    np.dtype(np.float64): "<f8",
    np.dtype(np.complex64): "<c8",
    np.dtype(np.complex128): "<c16",
}


def save_checkpoint(path, model: CompolModel, extra: dict | None = None) -> None:
    entries = []
    payload = bytearray()
    for name, arr in model.named_parameters():
        arr = np.ascontiguousarray(arr)
        entries.append({
            "name": name,
            "dtype": _DTYPE_CODES[arr.dtype],
            "shape": list(arr.shape),
            "offset": len(payload),
        })
        payload.extend(arr.tobytes())
    header = {
        "config": model.config.to_dict(),
        "extra": extra or {},
        "params": entries,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", CKPT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(bytes(payload))


def load_checkpoint(path) -> tuple[CompolModel, dict]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    version = struct.unpack_from("<I", raw, 8)[0]
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {CKPT_VERSION}")
    hlen = struct.unpack_from("<I", raw, 12)[0]
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt header: {e}") from e
    body = raw[16 + hlen:]

    model = init_params(CompolConfig.from_dict(header["config"]))
    table = {}
    for entry in header["params"]:
        dt = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        start = entry["offset"]
        end = start + count * dt.itemsize
        if end > len(body):
            raise CheckpointError(f"{path}: truncated payload for {entry['name']}")
        table[entry["name"]] = np.frombuffer(body[start:end], dtype=dt).reshape(shape).copy()
    try:
        current = dict(model.named_parameters())
        load_named_pairs(current, table)
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"{path}: {e}") from e
    return model, header.get("extra", {})


def load_named_pairs(current: dict[str, np.ndarray], table: dict[str, np.ndarray]) -> None:
    if set(current) != set(table):
        missing = sorted(set(current) - set(table))
        extra = sorted(set(table) - set(current))
        raise KeyError(f"parameter names differ: missing={missing} unexpected={extra}")
    for name, arr in current.items():
        new = table[name]
        if new.shape != arr.shape or new.dtype != arr.dtype:
            raise ValueError(f"{name}: stored {new.dtype}{new.shape} != expected {arr.dtype}{arr.shape}")
        arr[...] = new
