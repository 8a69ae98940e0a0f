"""Parameter-tree helpers.

Model parameters live in nested dataclasses holding numpy arrays.  These
helpers flatten a tree into dotted names (for the optimizer, checkpoints
and parameter counting) and clone it with every array registered as a
leaf on a tape (for one forward/backward pass).
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .tensor import Tape, Tensor

__all__ = ["named_arrays", "named_tensors", "bind", "load_named", "as_param_dict"]


def named_arrays(obj, prefix: str = "") -> list[tuple[str, np.ndarray]]:
    """Flatten every ndarray in a nested structure to (dotted-name, array)."""
    out: list[tuple[str, np.ndarray]] = []
    _walk_read(obj, prefix, out, np.ndarray)
    return out


def named_tensors(obj, prefix: str = "") -> list[tuple[str, Tensor]]:
    """Flatten every Tensor in a bound tree; names mirror named_arrays."""
    out: list[tuple[str, Tensor]] = []
    _walk_read(obj, prefix, out, Tensor)
    return out


def _walk_read(obj, prefix, out, kind):
    if isinstance(obj, kind):
        out.append((prefix, obj))
    elif dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        for f in dataclasses.fields(obj):
            _walk_read(getattr(obj, f.name), f"{prefix}.{f.name}" if prefix else f.name,
                       out, kind)
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            _walk_read(item, f"{prefix}.{i}" if prefix else str(i), out, kind)
    elif isinstance(obj, dict):
        for k in obj:
            _walk_read(obj[k], f"{prefix}.{k}" if prefix else str(k), out, kind)
    # scalars / strings / None are configuration, not parameters


def bind(obj, tape: Tape | None):
    """Clone a parameter tree with each ndarray registered on ``tape``.

    With ``tape=None`` the arrays are wrapped as raw tensors instead, so
    the same forward code runs without recording (inference mode).
    """
    if isinstance(obj, np.ndarray):
        return tape.leaf(obj) if tape is not None else Tensor(obj)
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        kwargs = {f.name: bind(getattr(obj, f.name), tape) for f in dataclasses.fields(obj)}
        return dataclasses.replace(obj, **kwargs)
    if isinstance(obj, list):
        return [bind(item, tape) for item in obj]
    if isinstance(obj, tuple):
        return tuple(bind(item, tape) for item in obj)
    if isinstance(obj, dict):
        return {k: bind(v, tape) for k, v in obj.items()}
    return obj


def load_named(obj, table: dict[str, np.ndarray], prefix: str = "") -> None:
    """Overwrite every array in the tree with its entry from ``table``."""
    current = dict(named_arrays(obj, prefix))
    if set(current) != set(table):
        missing = sorted(set(current) - set(table))
        extra = sorted(set(table) - set(current))
        raise KeyError(f"parameter names differ: missing={missing} unexpected={extra}")
    for name, arr in current.items():
        new = table[name]
        if new.shape != arr.shape:
            raise ValueError(f"{name}: shape {new.shape} != expected {arr.shape}")
        if new.dtype != arr.dtype:
            raise ValueError(f"{name}: dtype {new.dtype} != expected {arr.dtype}")
        arr[...] = new


def as_param_dict(obj, prefix: str = "") -> dict[str, np.ndarray]:
    return dict(named_arrays(obj, prefix))
