"""Binary field containers, manifests, and config hashing.

One ``.cmpd`` file stores every sample of a dataset: an 8-byte magic,
a little-endian u32 version, a u32 length-prefixed canonical-JSON
header, then raw float32 fields ordered sample-major, process-major,
group-major (group order comes from the header), each field row-major.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

__all__ = [
    "MAGIC", "FORMAT_VERSION", "DataFormatError",
    "canonical_json", "config_hash", "sha256_file",
    "write_fields", "read_fields",
    "write_manifest", "read_manifest",
    "FieldDataset", "write_dataset", "load_dataset",
]

MAGIC = b"CMPLDATA"
FORMAT_VERSION = 1
DATA_FILENAME = "data.cmpd"
MANIFEST_FILENAME = "manifest.json"


class DataFormatError(ValueError):
    """Corrupt, truncated, or incompatible data file."""


def canonical_json(obj) -> str:
    """Stable, whitespace-free JSON; rejects NaN so hashes stay portable."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# raw container


def write_fields(path: str, header: dict, fields: "list[list[list[np.ndarray]]]") -> None:
    """Write ``fields[sample][process][group]`` float32 arrays under ``header``.

    The header must carry ``groups`` (names, one per innermost slot) and
    ``shapes[process][group]`` so the reader can reassemble the payload.
    """
    head = dict(header)
    head.setdefault("format", MAGIC.decode("ascii"))
    head.setdefault("version", FORMAT_VERSION)
    blob = canonical_json(head).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.uint32(FORMAT_VERSION).tobytes())
        fh.write(np.uint32(len(blob)).tobytes())
        fh.write(blob)
        for sample in fields:
            for proc in sample:
                for arr in proc:
                    a = np.ascontiguousarray(arr, dtype="<f4")
                    fh.write(a.tobytes())


def read_fields(path: str) -> "tuple[dict, list[list[list[np.ndarray]]]]":
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise DataFormatError(f"{path}: bad magic {magic!r}")
        version = int(np.frombuffer(fh.read(4), "<u4")[0])
        if version != FORMAT_VERSION:
            raise DataFormatError(f"{path}: unsupported version {version}")
        hlen = int(np.frombuffer(fh.read(4), "<u4")[0])
        raw = fh.read(hlen)
        if len(raw) != hlen:
            raise DataFormatError(f"{path}: truncated header")
        header = json.loads(raw.decode("utf-8"))
        groups = header["groups"]
        shapes = header["shapes"]
        n = int(header["samples"])
        samples = []
        for _ in range(n):
            sample = []
            for proc_shapes in shapes:
                proc = []
                for g in groups:
                    shape = tuple(proc_shapes[g])
                    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
                    buf = fh.read(4 * count)
                    if len(buf) != 4 * count:
                        raise DataFormatError(f"{path}: truncated payload")
                    proc.append(np.frombuffer(buf, "<f4").reshape(shape).copy())
                sample.append(proc)
            samples.append(sample)
        if fh.read(1):
            raise DataFormatError(f"{path}: trailing bytes after payload")
    return header, samples


# ---------------------------------------------------------------------------
# dataset = inputs + outputs + manifest


@dataclass
class FieldDataset:
    """In-memory dataset: one [n, channels, *grid] pair per process."""

    inputs: list[np.ndarray]
    outputs: list[np.ndarray]
    manifest: dict

    @property
    def n_samples(self) -> int:
        return int(self.inputs[0].shape[0]) if self.inputs else 0

    @property
    def processes(self) -> int:
        return len(self.inputs)

    @property
    def channels(self) -> tuple[int, ...]:
        return tuple(int(x.shape[1]) for x in self.inputs)

    def subset(self, indices) -> "FieldDataset":
        idx = np.asarray(indices, dtype=np.intp)
        return FieldDataset(
            inputs=[x[idx] for x in self.inputs],
            outputs=[y[idx] for y in self.outputs],
            manifest=self.manifest,
        )


def _channel_stats(arrays: "list[np.ndarray]") -> "list[dict]":
    """Per-process, per-channel mean/std over all samples and grid points."""
    out = []
    for arr in arrays:
        if arr.shape[0] == 0:
            c = arr.shape[1]
            out.append({"mean": [0.0] * c, "std": [1.0] * c})
            continue
        axes = (0,) + tuple(range(2, arr.ndim))
        mean = arr.astype(np.float64).mean(axis=axes)
        std = arr.astype(np.float64).std(axis=axes)
        std = np.where(std > 0, std, 1.0)
        out.append({"mean": mean.tolist(), "std": std.tolist()})
    return out


def write_dataset(out_dir: str, inputs: "list[np.ndarray]", outputs: "list[np.ndarray]",
                  meta: dict) -> dict:
    """Write data file plus manifest; returns the manifest dict.

    ``inputs[m]``/``outputs[m]`` are [n, channels_m, *grid] float arrays.
    ``meta`` supplies system/seed/config fields recorded verbatim.
    """
    os.makedirs(out_dir, exist_ok=True)
    n = int(inputs[0].shape[0]) if inputs else 0
    for m, (x, y) in enumerate(zip(inputs, outputs)):
        if x.shape[0] != n or y.shape[0] != n:
            raise DataFormatError(f"process {m}: sample counts differ")
        if x.shape != y.shape:
            raise DataFormatError(f"process {m}: input/output shapes differ")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise DataFormatError(f"process {m}: non-finite field values")

    shapes = [{"input": list(x.shape[1:]), "output": list(y.shape[1:])}
              for x, y in zip(inputs, outputs)]
    header = {
        "samples": n,
        "groups": ["input", "output"],
        "shapes": shapes,
        "processes": len(inputs),
        "system": meta.get("system"),
        "seed": meta.get("seed"),
    }
    fields = [[[inputs[m][i], outputs[m][i]] for m in range(len(inputs))]
              for i in range(n)]
    data_path = os.path.join(out_dir, DATA_FILENAME)
    write_fields(data_path, header, fields)

    stats = {"input": _channel_stats(inputs), "output": _channel_stats(outputs)}
    manifest = dict(meta)
    manifest.update({
        "format": MAGIC.decode("ascii"),
        "version": FORMAT_VERSION,
        "files": [{"name": DATA_FILENAME, "sha256": sha256_file(data_path), "samples": n}],
        "counts": {
            "samples": n,
            "processes": len(inputs),
            "channels": [int(x.shape[1]) for x in inputs],
        },
        "stats": stats,
        "stat_convention": "empty datasets record mean 0, std 1 per channel",
    })
    manifest["config_hash"] = config_hash(
        {k: manifest[k] for k in ("system", "seed", "counts") if k in manifest})
    write_manifest(os.path.join(out_dir, MANIFEST_FILENAME), manifest)
    return manifest


def write_manifest(path: str, manifest: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def read_manifest(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def load_dataset(directory: str, verify: bool = True) -> FieldDataset:
    manifest = read_manifest(os.path.join(directory, MANIFEST_FILENAME))
    entry = manifest["files"][0]
    data_path = os.path.join(directory, entry["name"])
    if verify and sha256_file(data_path) != entry["sha256"]:
        raise DataFormatError(f"{data_path}: checksum mismatch against manifest")
    header, samples = read_fields(data_path)
    n = int(header["samples"])
    procs = int(header["processes"])
    inputs, outputs = [], []
    for m in range(procs):
        shp = tuple(header["shapes"][m]["input"])
        if n:
            inputs.append(np.stack([samples[i][m][0] for i in range(n)]))
            outputs.append(np.stack([samples[i][m][1] for i in range(n)]))
        else:
            inputs.append(np.zeros((0,) + shp, dtype=np.float32))
            outputs.append(np.zeros((0,) + shp, dtype=np.float32))
    return FieldDataset(inputs=inputs, outputs=outputs, manifest=manifest)
