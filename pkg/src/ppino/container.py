"""Binary container: ``PPNO0001`` magic, u64 little-endian header length, UTF-8 JSON header,
then contiguous row-major float64 little-endian arrays in header order."""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .benchmarks import GENERATOR_VERSION, Dataset, check_benchmark
from .errors import ValidationError
from .grid import GridSpec

MAGIC = b"PPNO0001"
DTYPE = "f64le"
_LE = np.dtype("<f8")


class ContainerError(ValidationError):
    pass


def encode(meta: dict, arrays: dict[str, np.ndarray]) -> bytes:
    """Serialize ``arrays`` (in insertion order) with ``meta`` merged into the header."""
    if "fields" in meta:
        raise ContainerError("'fields' is reserved for the array table")
    fields, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if not np.issubdtype(arr.dtype, np.number) or np.iscomplexobj(arr):
            raise ContainerError(f"field {name!r} is not real numeric")
        raw = np.ascontiguousarray(arr, dtype=_LE).tobytes()
        fields.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw), "dtype": DTYPE})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({**meta, "fields": fields}, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<Q", len(header)) + header + b"".join(chunks)


def decode(blob: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if blob[:8] != MAGIC:
        raise ContainerError("not a PPNO0001 container (bad magic)")
    if len(blob) < 16:
        raise ContainerError("truncated container header")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    if 16 + hlen > len(blob):
        raise ContainerError("header length exceeds file size")
    try:
        header = json.loads(blob[16:16 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"unreadable header: {exc}") from exc
    payload = memoryview(blob)[16 + hlen:]
    arrays, expect = {}, 0
    for fd in header.get("fields", []):
        shape = tuple(fd["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8
        if fd.get("dtype") != DTYPE or fd["offset"] != expect or fd["nbytes"] != nbytes:
            raise ContainerError(f"field {fd.get('name')!r} does not tile the payload")
        if expect + nbytes > len(payload):
            raise ContainerError(f"payload truncated inside field {fd['name']!r}")
        arrays[fd["name"]] = np.frombuffer(payload[expect:expect + nbytes], dtype=_LE).reshape(shape).astype(float)
        expect += nbytes
    if expect != len(payload):
        raise ContainerError(f"payload has {len(payload)} bytes, header declares {expect}")
    meta = {k: v for k, v in header.items() if k != "fields"}
    return meta, arrays


def write(path, meta: dict, arrays: dict[str, np.ndarray]) -> str:
    """Write a container and return its sha256 hex digest."""
    blob = encode(meta, arrays)
    try:
        Path(path).write_bytes(blob)
    except OSError as exc:
        raise ValidationError(f"cannot write {path}: {exc}") from exc
    return hashlib.sha256(blob).hexdigest()


def read(path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc
    return decode(blob)


# -- datasets ------------------------------------------------------------------------

def dataset_meta(ds: Dataset) -> dict:
    return {
        "kind": "dataset",
        "benchmark": ds.benchmark,
        "grid": list(ds.grid.shape),
        "bounds": [list(b) for b in ds.grid.bounds],
        "n_train": ds.n_train,
        "n_test": ds.n_test,
        "seed": ds.seed,
        "generator_version": GENERATOR_VERSION,
    }


def save_dataset(path, ds: Dataset) -> str:
    return write(path, dataset_meta(ds), {"f": ds.f, "u": ds.u, **ds.extras})


def load_dataset(path) -> Dataset:
    meta, arrays = read(path)
    if meta.get("kind") != "dataset":
        raise ContainerError(f"{path} is not a dataset container")
    check_benchmark(meta["benchmark"])
    grid = GridSpec(tuple(meta["grid"]), tuple(tuple(b) for b in meta["bounds"]))
    f, u = arrays.pop("f"), arrays.pop("u")
    n = meta["n_train"] + meta["n_test"]
    if f.shape != (n, *grid.shape) or u.shape != f.shape:
        raise ContainerError(f"arrays {f.shape}/{u.shape} do not match header sizes {n} x {grid.shape}")
    return Dataset(meta["benchmark"], grid, f, u, meta["n_train"], meta["n_test"], meta["seed"], arrays)
