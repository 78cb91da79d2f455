"""Binary checkpoints and newline-delimited series records.

Checkpoint layout (little-endian)::

    b"TTLB" | u32 version | i64 d | i64 n | f64 L | f64 t
    | (d+1) n^d complex coefficients as interleaved f64 (re, im)
    | u64 blake2b-8 checksum of the payload bytes
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from pathlib import Path

import numpy as np

from .models import State
from .spectral import GridSpec

MAGIC = b"TTLB"
VERSION = 1
_HEADER = struct.Struct("<4sIqqdd")


class CheckpointError(IOError):
    pass


def _checksum(payload: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


def encode_checkpoint(state: State) -> bytes:
    grid = state.grid
    payload = np.ascontiguousarray(state.stacked(), dtype="<c16").tobytes()
    head = _HEADER.pack(MAGIC, VERSION, grid.d, grid.n, grid.box_length, state.t)
    return head + payload + struct.pack("<Q", _checksum(payload))


def decode_checkpoint(blob: bytes, dealias: str = "one-half", source="<bytes>") -> State:
    if len(blob) < _HEADER.size:
        raise CheckpointError(f"{source}: truncated header ({len(blob)} bytes)")
    magic, version, d, n, L, t = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError(f"{source}: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"{source}: version {version} unsupported (expected {VERSION})")
    if d not in (2, 3) or n < 2:
        raise CheckpointError(f"{source}: implausible header d={d}, n={n}")
    count = (d + 1) * n**d
    expected = _HEADER.size + 16 * count + 8
    if len(blob) != expected:
        raise CheckpointError(f"{source}: length {len(blob)} != expected {expected}")
    payload = blob[_HEADER.size : _HEADER.size + 16 * count]
    (stored,) = struct.unpack_from("<Q", blob, expected - 8)
    if stored != _checksum(payload):
        raise CheckpointError(f"{source}: checksum mismatch")
    grid = GridSpec(d, n, L, dealias)
    X = np.frombuffer(payload, dtype="<c16").astype(complex).reshape((d + 1,) + grid.shape)
    return State.from_stacked(grid, X, t)


def write_checkpoint(state: State, path) -> Path:
    path = Path(path)
    try:
        path.write_bytes(encode_checkpoint(state))
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def read_checkpoint(path, dealias: str = "one-half") -> State:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode_checkpoint(blob, dealias, source=str(path))


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.floating, np.integer)):
        x = x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    return x


def dumps_record(record: dict) -> str:
    return json.dumps(_clean(record), sort_keys=True)


class RecordWriter:
    """Append-and-flush writer for newline-delimited records."""

    def __init__(self, path, header: dict | None = None):
        self.path = Path(path)
        try:
            self._fh = self.path.open("w")
        except OSError as exc:
            raise OSError(f"cannot open series file {self.path}: {exc}") from exc
        self.count = 0
        if header is not None:
            self._fh.write(dumps_record({"header": header}) + "\n")
            self._fh.flush()

    def write(self, record: dict) -> None:
        self._fh.write(dumps_record(record) + "\n")
        self._fh.flush()
        self.count += 1

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_records(records, path, header: dict | None = None) -> Path:
    with RecordWriter(path, header) as w:
        for r in records:
            w.write(r)
    return Path(path)


def read_records(path) -> tuple[dict | None, list[dict]]:
    """``(header, records)`` from a series file."""
    header, out = None, []
    with Path(path).open() as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            if "header" in obj and header is None and not out:
                header = obj["header"]
            else:
                out.append(obj)
    return header, out
