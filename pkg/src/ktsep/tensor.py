"""Labeled complex tensors, the KTB binary format, and FE-row splitting.

Arrays are stored row-major with TIME as the fastest axis among
(PE, COIL, TIME), so temporal passes run over contiguous memory.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "Axis",
    "Domain",
    "ComplexTensor",
    "KTVolume",
    "KTSlice2D",
    "TensorFormatError",
    "BadMagicError",
    "VersionMismatchError",
    "TruncatedPayloadError",
    "save_tensor",
    "load_tensor",
    "split_rows",
    "stitch_rows",
]


class Axis(enum.IntEnum):
    FE = 0
    PE = 1
    COIL = 2
    TIME = 3
    CHANNEL = 4
    GENERIC = 5


class Domain(enum.Enum):
    KSPACE = "KSPACE"
    HYBRID = "HYBRID"
    IMAGE = "IMAGE"


KSPACE_AXES = (Axis.FE, Axis.PE, Axis.COIL, Axis.TIME)
IMAGE_AXES = (Axis.FE, Axis.PE, Axis.TIME)

_DTYPE_CODES = {
    np.dtype(np.complex128): 0,
    np.dtype(np.complex64): 1,
    np.dtype(np.bool_): 2,
}
_CODE_DTYPES = {code: dt for dt, code in _DTYPE_CODES.items()}

MAGIC = b"KTB1"
VERSION = 1


def _as_axes(axes: Sequence) -> tuple[Axis, ...]:
    out = []
    for a in axes:
        if isinstance(a, str):
            out.append(Axis[a])
        else:
            out.append(Axis(a))
    return tuple(out)


@dataclass(frozen=True, eq=False)
class ComplexTensor:
    """An n-dimensional array with one label per axis.

    The array is copied on construction and marked read-only. Boolean
    arrays are accepted so masks can share the same container and file
    format.
    """

    data: np.ndarray
    axes: tuple[Axis, ...]

    def __post_init__(self):
        data = np.array(self.data, copy=True)
        if data.dtype.kind not in "cb":
            data = data.astype(np.complex128)
        if data.dtype not in _DTYPE_CODES:
            raise TypeError(f"unsupported dtype {data.dtype}")
        axes = _as_axes(self.axes)
        if len(axes) != data.ndim:
            raise ValueError(f"{len(axes)} axis labels for a {data.ndim}-d array")
        if any(n < 1 for n in data.shape):
            raise ValueError(f"extents must be positive, got {data.shape}")
        if data.dtype.kind == "c" and not np.all(np.isfinite(data)):
            raise ValueError("tensor contains non-finite values")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "axes", axes)

    @property
    def extents(self) -> tuple[int, ...]:
        return self.data.shape

    def axis_index(self, label: Axis) -> int:
        try:
            return self.axes.index(Axis(label))
        except ValueError:
            raise ValueError(f"tensor has no {Axis(label).name} axis "
                             f"(axes: {[a.name for a in self.axes]})") from None

    def expect_axes(self, *labels: Axis) -> None:
        if self.axes != tuple(labels):
            raise ValueError(f"expected axes {[Axis(a).name for a in labels]}, "
                             f"got {[a.name for a in self.axes]}")

    def __eq__(self, other):
        if not isinstance(other, ComplexTensor):
            return NotImplemented
        return (type(self) is type(other) and self.axes == other.axes
                and self.data.dtype == other.data.dtype
                and np.array_equal(self.data, other.data))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class KTVolume(ComplexTensor):
    """A whole acquisition: (FE, PE, COIL, TIME) data or (FE, PE, TIME) images."""

    domain: Domain = Domain.IMAGE

    def __post_init__(self):
        super().__post_init__()
        object.__setattr__(self, "domain", Domain(self.domain))
        if self.axes not in (KSPACE_AXES, IMAGE_AXES):
            raise ValueError(f"volume axes must be FE,PE,COIL,TIME or FE,PE,TIME; "
                             f"got {[a.name for a in self.axes]}")
        if self.domain is not Domain.IMAGE and self.axes != KSPACE_AXES:
            raise ValueError(f"{self.domain.value} volumes need a COIL axis")

    def __eq__(self, other):
        base = super().__eq__(other)
        if base is NotImplemented or not base:
            return base
        return self.domain is other.domain


@dataclass(frozen=True, eq=False)
class KTSlice2D(ComplexTensor):
    """One FE row: (PE, COIL, TIME) k-t data or a (PE, TIME) image."""

    row_index: int = 0
    domain: Domain = Domain.IMAGE

    def __post_init__(self):
        super().__post_init__()
        object.__setattr__(self, "domain", Domain(self.domain))
        if self.axes not in (KSPACE_AXES[1:], IMAGE_AXES[1:]):
            raise ValueError(f"slice axes must be PE,COIL,TIME or PE,TIME; "
                             f"got {[a.name for a in self.axes]}")
        if self.row_index < 0:
            raise ValueError("row_index must be non-negative")

    def __eq__(self, other):
        base = super().__eq__(other)
        if base is NotImplemented or not base:
            return base
        return self.domain is other.domain and self.row_index == other.row_index


class TensorFormatError(ValueError):
    """Raised for malformed KTB files."""


class BadMagicError(TensorFormatError):
    pass


class VersionMismatchError(TensorFormatError):
    pass


class TruncatedPayloadError(TensorFormatError):
    pass


_HEADER = struct.Struct("<4sHBB")


def save_tensor(t: ComplexTensor, path) -> None:
    """Write ``t`` to ``path`` in KTB format (little-endian throughout)."""
    data = t.data
    if data.dtype.kind == "c" and not np.all(np.isfinite(data)):
        raise ValueError("refusing to save non-finite values")
    code = _DTYPE_CODES[data.dtype]
    header = _HEADER.pack(MAGIC, VERSION, code, data.ndim)
    header += struct.pack(f"<{data.ndim}Q", *data.shape)
    header += bytes(int(a) for a in t.axes)
    payload = np.ascontiguousarray(data, dtype=data.dtype.newbyteorder("<"))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes(order="C"))


def load_tensor(path) -> ComplexTensor:
    """Read a KTB file written by :func:`save_tensor`."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < _HEADER.size:
        raise TruncatedPayloadError(f"{path}: header truncated")
    _, version, code, ndim = _HEADER.unpack_from(raw)
    if version != VERSION:
        raise VersionMismatchError(f"{path}: version {version}, expected {VERSION}")
    if code not in _CODE_DTYPES:
        raise TensorFormatError(f"{path}: unknown dtype code {code}")
    off = _HEADER.size
    need = off + 9 * ndim
    if len(raw) < need:
        raise TruncatedPayloadError(f"{path}: header truncated")
    shape = struct.unpack_from(f"<{ndim}Q", raw, off)
    off += 8 * ndim
    axes = tuple(Axis(b) for b in raw[off:off + ndim])
    off += ndim
    dtype = _CODE_DTYPES[code]
    nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(raw) - off < nbytes:
        raise TruncatedPayloadError(
            f"{path}: payload has {len(raw) - off} bytes, header declares {nbytes}")
    if len(raw) - off > nbytes:
        raise TensorFormatError(f"{path}: {len(raw) - off - nbytes} trailing bytes")
    data = np.frombuffer(raw, dtype=dtype.newbyteorder("<"), count=int(np.prod(shape)),
                         offset=off).reshape(shape).astype(dtype)
    return ComplexTensor(data, axes)


def split_rows(v: KTVolume) -> list[KTSlice2D]:
    """Split a HYBRID or IMAGE volume into its FE rows.

    Rows are only decoupled after the inverse transform along FE, so
    k-space volumes are rejected.
    """
    if v.domain is Domain.KSPACE:
        raise ValueError("split_rows needs a HYBRID or IMAGE volume; "
                         "hybridize k-space first")
    fe = v.axis_index(Axis.FE)
    return [KTSlice2D(np.take(v.data, m, axis=fe), v.axes[1:], row_index=m, domain=v.domain)
            for m in range(v.data.shape[fe])]


def stitch_rows(slices: Sequence[KTSlice2D]) -> KTVolume:
    """Inverse of :func:`split_rows`; placement follows ``row_index``."""
    if not slices:
        raise ValueError("no slices to stitch")
    first = slices[0]
    rows = sorted(s.row_index for s in slices)
    if rows != list(range(len(slices))):
        raise ValueError(f"row indices must be 0..{len(slices) - 1} exactly once, got {rows}")
    for s in slices:
        if s.extents != first.extents or s.axes != first.axes:
            raise ValueError("slice extents or axes differ")
        if s.domain is not first.domain or s.data.dtype != first.data.dtype:
            raise ValueError("slice domains or dtypes differ")
    ordered = sorted(slices, key=lambda s: s.row_index)
    data = np.stack([s.data for s in ordered], axis=0)
    return KTVolume(data, (Axis.FE,) + first.axes, domain=first.domain)
