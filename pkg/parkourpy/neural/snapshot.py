"""Binary policy snapshots.

Layout, little-endian::

    b"PKPOLICY1"
    u32 record count
    per record: u16 name length, utf-8 name, u8 ndim, ndim x u32 dims,
                float32 data
    u64 version

Parameters are stored as 32-bit floats; :func:`quantize` rounds a module to
that precision so that a save/load cycle reproduces it bit for bit.
"""

__all__ = [
    "SNAPSHOT_MAGIC",
    "Snapshot",
    "load_snapshot",
    "parse_snapshot",
    "quantize",
    "save_snapshot",
    "snapshot_bytes",
]

import struct
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Mapping, Union

import numpy as np
from numpy.typing import NDArray

from parkourpy.errors import DataCorruptionError, InputError
from parkourpy.neural.layers import Module
from parkourpy.utils import atomic_write_bytes

SNAPSHOT_MAGIC = b"PKPOLICY1"

FloatArray = NDArray[np.float64]


@dataclass(frozen=True)
class Snapshot:
    params: Mapping[str, FloatArray]
    version: int

    def load_into(self, module: Module) -> None:
        module.load_state_dict(dict(self.params))


def quantize(module: Module) -> None:
    """Round every parameter to float32 precision in place."""
    for p in module.parameters():
        p.data = p.data.astype(np.float32).astype(np.float64)


def snapshot_bytes(params: Mapping[str, FloatArray], version: int) -> bytes:
    if version < 0:
        raise InputError(f"snapshot version must be nonnegative, got {version}")
    chunks = [SNAPSHOT_MAGIC, struct.pack("<I", len(params))]
    for name, value in params.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(value, dtype="<f4")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(arr.tobytes())
    chunks.append(struct.pack("<Q", version))
    return b"".join(chunks)


def parse_snapshot(payload: bytes) -> Snapshot:
    """Decode a snapshot, checking magic, lengths and the trailing version."""
    if not payload.startswith(SNAPSHOT_MAGIC):
        raise DataCorruptionError("policy snapshot has a bad magic header")
    view = memoryview(payload)
    offset = len(SNAPSHOT_MAGIC)

    def take(fmt: str) -> tuple:  # type: ignore[type-arg]
        nonlocal offset
        size = struct.calcsize(fmt)
        if offset + size > len(view):
            raise DataCorruptionError("policy snapshot is truncated")
        values = struct.unpack_from(fmt, view, offset)
        offset += size
        return values

    (count,) = take("<I")
    params: Dict[str, FloatArray] = OrderedDict()
    for _ in range(count):
        (length,) = take("<H")
        if offset + length > len(view):
            raise DataCorruptionError("policy snapshot is truncated")
        try:
            name = bytes(view[offset : offset + length]).decode("utf-8")
        except UnicodeDecodeError:
            raise DataCorruptionError("policy snapshot has a malformed parameter name") from None
        offset += length
        (ndim,) = take("<B")
        shape = take(f"<{ndim}I")
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(view):
            raise DataCorruptionError(f"policy snapshot is truncated inside {name!r}")
        data = np.frombuffer(payload, dtype="<f4", count=nbytes // 4, offset=offset)
        params[name] = data.reshape(shape).astype(np.float64)
        offset += nbytes
    (version,) = take("<Q")
    if offset != len(view):
        raise DataCorruptionError(f"policy snapshot has {len(view) - offset} trailing bytes")
    return Snapshot(params, int(version))


def save_snapshot(path: Union[str, Path], module: Module, version: int) -> Path:
    return atomic_write_bytes(path, snapshot_bytes(module.state_dict(), version))


def load_snapshot(path: Union[str, Path]) -> Snapshot:
    return parse_snapshot(Path(path).read_bytes())
