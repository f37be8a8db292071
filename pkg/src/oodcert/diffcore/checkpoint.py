"""Checkpoint file format.

Layout:
  bytes 0..3   magic b"OODC"
  bytes 4..7   format version, unsigned 32-bit little-endian
  bytes 8..11  header length, unsigned 32-bit little-endian
  header       UTF-8 JSON: {"params": [table], "ema": [table], "meta": {...}}
               where each table entry is {name, shape, dtype, offset} with
               offsets into the data blob
  data         raw little-endian parameter values, params table first,
               EMA shadow table second
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..fileio import atomic_write_bytes
from .params import ParamSet

__all__ = ["Checkpoint", "save_checkpoint", "load_checkpoint", "MAGIC", "FORMAT_VERSION"]

MAGIC = b"OODC"
FORMAT_VERSION = 1

_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8")}


@dataclass
class Checkpoint:
    """Trained parameters plus their EMA shadow and provenance metadata."""

    params: ParamSet
    ema: ParamSet
    meta: dict = field(default_factory=dict)

    def save(self, path: str | Path) -> None:
        save_checkpoint(path, self.params, self.ema, self.meta)

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        params, ema, meta = load_checkpoint(path)
        return cls(params=params, ema=ema, meta=meta)


def _dtype_tag(arr: np.ndarray) -> str:
    if arr.dtype == np.float32:
        return "<f4"
    if arr.dtype == np.float64:
        return "<f8"
    raise ValueError(f"unsupported checkpoint dtype {arr.dtype}")


def _build_table(params: ParamSet, offset: int) -> tuple[list[dict], list[bytes], int]:
    table, blobs = [], []
    for name, t in params.items():
        arr = np.ascontiguousarray(t.data)
        tag = _dtype_tag(arr)
        raw = arr.astype(tag).tobytes()
        table.append({"name": name, "shape": list(arr.shape), "dtype": tag, "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    return table, blobs, offset


def save_checkpoint(path: str | Path, params: ParamSet, ema: ParamSet, meta: dict | None = None) -> None:
    ptable, pblobs, offset = _build_table(params, 0)
    etable, eblobs, _ = _build_table(ema, offset)
    header = json.dumps(
        {"params": ptable, "ema": etable, "meta": meta or {}},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", FORMAT_VERSION)
    out += struct.pack("<I", len(header))
    out += header
    for blob in pblobs:
        out += blob
    for blob in eblobs:
        out += blob
    atomic_write_bytes(path, bytes(out))


def _read_table(table: list[dict], data: memoryview) -> ParamSet:
    out = ParamSet()
    for entry in table:
        dtype = _DTYPES[entry["dtype"]]
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=start).reshape(shape)
        out.add(entry["name"], arr.copy())
    return out


def load_checkpoint(path: str | Path) -> tuple[ParamSet, ParamSet, dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic {raw[:4]!r})")
    version = struct.unpack("<I", raw[4:8])[0]
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    hlen = struct.unpack("<I", raw[8:12])[0]
    header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    data = memoryview(raw)[12 + hlen:]
    params = _read_table(header["params"], data)
    ema = _read_table(header["ema"], data)
    return params, ema, header.get("meta", {})
