"""Checkpoint and trajectory containers, flat views and the TGCK v1 file format.

A TGCK v1 file is laid out as (all integers little-endian)::

    b"TGCK"                       magic, 4 bytes
    u16 version                   always 1
    u8  dtype code                0 = float32, 1 = float64
    u32 tensor count
    per tensor:
        u16 name length, UTF-8 name bytes
        u8  rank, u64 dims[rank]
    payloads                      every tensor, row-major, concatenated in order

Timestamps are not stored in the file; trajectories carry them in a JSON
manifest ``{"step": int, "checkpoints": [{"t": int, "path": str}, ...]}``
whose paths are resolved relative to the manifest.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import (
    CongruenceError,
    EmptyTrajectory,
    FormatError,
    LayoutMismatch,
    NonFiniteError,
)

MAGIC = b"TGCK"
VERSION = 1
DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
CODE_DTYPES = {code: dt for dt, code in DTYPE_CODES.items()}


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


class Checkpoint:
    """Named float tensors for one model at one integer timestamp.

    Tensors are copied on construction, stored little-endian and made
    read-only. Construction rejects mixed dtypes and non-finite values, so
    every arithmetic result that goes through here is checked.
    """

    __slots__ = ("_tensors", "timestamp", "dtype")

    def __init__(
        self,
        tensors: Mapping[str, np.ndarray],
        timestamp: int = 0,
        dtype: np.dtype | type | str | None = None,
    ):
        arrays = {}
        for name, value in tensors.items():
            if not isinstance(name, str):
                raise TypeError(f"tensor name must be str, got {type(name).__name__}")
            arrays[name] = np.asarray(value)

        if dtype is None:
            kinds = {a.dtype.newbyteorder("<") for a in arrays.values() if a.dtype.kind == "f"}
            if len(kinds) > 1:
                raise CongruenceError(f"mixed dtypes in one checkpoint: {sorted(map(str, kinds))}")
            dtype = kinds.pop() if kinds else np.float64
        dt = np.dtype(dtype).newbyteorder("<")
        if dt not in DTYPE_CODES:
            raise TypeError(f"unsupported dtype {dt}; use float32 or float64")

        frozen = {}
        for name, a in arrays.items():
            if a.dtype.kind != "f" and a.dtype.kind not in "iub":
                raise TypeError(f"tensor {name!r} is not numeric")
            if a.dtype.kind == "f" and a.dtype.newbyteorder("<") != dt:
                raise CongruenceError(f"tensor {name!r} has dtype {a.dtype}, expected {dt}")
            out = np.array(a, dtype=dt, order="C", copy=True)
            if not np.all(np.isfinite(out)):
                raise NonFiniteError(f"tensor {name!r} contains NaN or Inf")
            frozen[name] = _freeze(out)

        self._tensors = frozen
        self.timestamp = int(timestamp)
        self.dtype = dt

    @property
    def tensors(self) -> Mapping[str, np.ndarray]:
        return dict(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def items(self):
        return self._tensors.items()

    @property
    def size(self) -> int:
        return sum(a.size for a in self._tensors.values())

    def signature(self) -> tuple:
        return (self.dtype.str, tuple((n, a.shape) for n, a in self._tensors.items()))

    def with_timestamp(self, timestamp: int) -> "Checkpoint":
        return Checkpoint(self._tensors, timestamp=timestamp, dtype=self.dtype)

    def __eq__(self, other: object) -> bool:
        # Bit-exact: names and order, shapes, dtype, payload bytes, timestamp.
        if not isinstance(other, Checkpoint):
            return NotImplemented
        if self.timestamp != other.timestamp or self.signature() != other.signature():
            return False
        return all(
            a.tobytes() == b.tobytes()
            for a, b in zip(self._tensors.values(), other._tensors.values())
        )

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        shapes = ", ".join(f"{n}{tuple(a.shape)}" for n, a in self._tensors.items())
        return f"Checkpoint(t={self.timestamp}, dtype={self.dtype.name}, [{shapes}])"


def check_congruent(a: Checkpoint, b: Checkpoint) -> None:
    if a.signature() != b.signature():
        raise CongruenceError(
            f"checkpoint structures differ: {a.signature()} vs {b.signature()}"
        )


@dataclass(frozen=True)
class FlatView:
    values: np.ndarray
    layout: tuple[tuple[str, int, tuple[int, ...]], ...]

    @property
    def n(self) -> int:
        return int(self.values.size)


def flatten(c: Checkpoint) -> FlatView:
    """Concatenate the tensors of ``c`` row-major, in manifest order."""
    layout = []
    offset = 0
    parts = []
    for name, arr in c.items():
        layout.append((name, offset, tuple(arr.shape)))
        offset += arr.size
        parts.append(arr.ravel())
    values = np.concatenate(parts) if parts else np.zeros(0, dtype=c.dtype)
    return FlatView(values=_freeze(values.astype(c.dtype, copy=False)), layout=tuple(layout))


def unflatten(v: FlatView | np.ndarray, template: Checkpoint, timestamp: int | None = None) -> Checkpoint:
    """Inverse of :func:`flatten`, shaped like ``template``.

    ``v`` may be a FlatView (its layout must equal the template's) or a raw
    vector of the right length. Values are cast to the template dtype.
    """
    expected = flatten_layout(template)
    if isinstance(v, FlatView):
        if tuple(v.layout) != expected:
            raise LayoutMismatch(f"layout {v.layout} does not match template {expected}")
        values = v.values
    else:
        values = np.asarray(v)
    if values.ndim != 1 or values.size != template.size:
        raise LayoutMismatch(f"vector of size {values.size} for template with {template.size} elements")
    tensors = {
        name: values[off:off + int(np.prod(shape, dtype=np.int64))].reshape(shape).astype(template.dtype)
        for name, off, shape in expected
    }
    t = template.timestamp if timestamp is None else timestamp
    return Checkpoint(tensors, timestamp=t, dtype=template.dtype)


def flatten_layout(c: Checkpoint) -> tuple[tuple[str, int, tuple[int, ...]], ...]:
    out, off = [], 0
    for name, arr in c.items():
        out.append((name, off, tuple(arr.shape)))
        off += arr.size
    return tuple(out)


def as_vector(c: Checkpoint) -> np.ndarray:
    """Flat float64 copy of the parameters."""
    return flatten(c).values.astype(np.float64)


def l2_norm(c: Checkpoint) -> float:
    v = as_vector(c)
    return float(np.sqrt(np.dot(v, v)))


def zeros_like(c: Checkpoint, timestamp: int | None = None) -> Checkpoint:
    return unflatten(np.zeros(c.size), c, timestamp=timestamp)


# --- TGCK v1 -----------------------------------------------------------------

def dumps(c: Checkpoint) -> bytes:
    header = [MAGIC, struct.pack("<HBI", VERSION, DTYPE_CODES[c.dtype], len(c))]
    for name, arr in c.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError(f"tensor name too long: {len(raw)} bytes")
        if arr.ndim > 0xFF:
            raise ValueError(f"tensor {name!r} rank {arr.ndim} exceeds 255")
        header.append(struct.pack("<H", len(raw)) + raw)
        header.append(struct.pack(f"<B{arr.ndim}Q", arr.ndim, *arr.shape))
    payload = [arr.astype(c.dtype, copy=False).tobytes(order="C") for arr in c._tensors.values()]
    return b"".join(header + payload)


def loads(data: bytes, timestamp: int = 0) -> Checkpoint:
    mv = memoryview(data)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(mv):
            raise FormatError(f"truncated file: need {n} bytes at offset {pos}, have {len(mv) - pos}")
        chunk = mv[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise FormatError("bad magic, not a TGCK file")
    version, code, count = struct.unpack("<HBI", take(7))
    if version != VERSION:
        raise FormatError(f"unsupported TGCK version {version}")
    if code not in CODE_DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    dt = CODE_DTYPES[code]

    specs = []
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        try:
            name = bytes(take(nlen)).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"tensor name is not UTF-8: {exc}") from None
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank))
        specs.append((name, dims))

    tensors = {}
    for name, dims in specs:
        if name in tensors:
            raise FormatError(f"duplicate tensor name {name!r}")
        n = int(np.prod(dims, dtype=np.uint64))
        buf = take(n * dt.itemsize)
        tensors[name] = np.frombuffer(buf, dtype=dt).reshape(dims)
    if pos != len(mv):
        raise FormatError(f"{len(mv) - pos} trailing bytes after payload")
    return Checkpoint(tensors, timestamp=timestamp, dtype=dt)


def save(c: Checkpoint, path: str | os.PathLike) -> None:
    _atomic_write_bytes(Path(path), dumps(c))


def load(path: str | os.PathLike, timestamp: int = 0) -> Checkpoint:
    return loads(Path(path).read_bytes(), timestamp=timestamp)


def _atomic_write_bytes(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


# --- trajectories -------------------------------------------------------------

@dataclass(frozen=True)
class Trajectory:
    """Time-ordered, structurally congruent checkpoints with a uniform step."""

    checkpoints: tuple[Checkpoint, ...]
    step: int = 1
    _matrix: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        cks = tuple(self.checkpoints)
        object.__setattr__(self, "checkpoints", cks)
        if not cks:
            raise EmptyTrajectory("a trajectory needs at least one checkpoint")
        if int(self.step) < 1:
            raise ValueError(f"step must be a positive integer, got {self.step}")
        object.__setattr__(self, "step", int(self.step))
        for prev, cur in zip(cks, cks[1:]):
            if cur.timestamp <= prev.timestamp:
                raise ValueError(
                    f"timestamps must strictly increase: {prev.timestamp} then {cur.timestamp}"
                )
            check_congruent(cks[0], cur)

    def __len__(self) -> int:
        return len(self.checkpoints)

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return Trajectory(self.checkpoints[idx], step=self.step)
        return self.checkpoints[idx]

    def __iter__(self) -> Iterator[Checkpoint]:
        return iter(self.checkpoints)

    @property
    def last(self) -> Checkpoint:
        return self.checkpoints[-1]

    @property
    def timestamps(self) -> list[int]:
        return [c.timestamp for c in self.checkpoints]

    def matrix(self) -> np.ndarray:
        """(time x N) float64 stack of flattened checkpoints."""
        if self._matrix is None:
            m = np.stack([as_vector(c) for c in self.checkpoints]) if self.checkpoints[0].size else \
                np.zeros((len(self), 0))
            m.setflags(write=False)
            object.__setattr__(self, "_matrix", m)
        return self._matrix


def save_trajectory(traj: Trajectory, directory: str | os.PathLike, manifest_name: str = "trajectory.json") -> Path:
    """Write one TGCK file per checkpoint plus the JSON manifest; returns the manifest path."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    entries = []
    for c in traj:
        fname = f"ckpt_t{c.timestamp:06d}.tgck"
        save(c, d / fname)
        entries.append({"t": c.timestamp, "path": fname})
    manifest = d / manifest_name
    text = json.dumps({"step": traj.step, "checkpoints": entries}, indent=2) + "\n"
    _atomic_write_bytes(manifest, text.encode("utf-8"))
    return manifest


def load_trajectory(manifest: str | os.PathLike) -> Trajectory:
    path = Path(manifest)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(doc, dict) or set(doc) - {"step", "checkpoints"} or "checkpoints" not in doc:
        raise FormatError(f"{path}: manifest must be an object with 'step' and 'checkpoints'")
    entries: Sequence = doc["checkpoints"]
    cks = []
    for i, e in enumerate(entries):
        if not isinstance(e, dict) or set(e) != {"t", "path"}:
            raise FormatError(f"{path}: checkpoints[{i}] must have exactly 't' and 'path'")
        cks.append(load(path.parent / e["path"], timestamp=int(e["t"])))
    return Trajectory(tuple(cks), step=int(doc.get("step", 1)))
