"""Bit-exact binary file formats and 8-bit slice export.

Volume files ("KVOL") and projection files ("KPRJ") share a 16-byte
header: 4-byte magic, version byte (= 1), dtype byte (0 = float32,
1 = float64), two zero pad bytes, then three little-endian uint32
dimensions (nx, ny, nz resp. nu, nv, n_views).  Payload is little-endian,
fastest axis first (x resp. u).  Geometry metadata travels in the sidecar
config file, never in the binary.

PGM slice export writes binary P5 with values linearly windowed from
[lo, hi] onto [0, 255]; for z slices the row index v increases downward
(image convention).
"""

from __future__ import annotations

import struct

import numpy as np

from .geometry import VolumeGeometry
from .operator import ProjectionStack
from .phantom import Volume

__all__ = [
    "FormatError",
    "BadMagicError",
    "UnsupportedVersionError",
    "UnknownDtypeError",
    "TruncatedFileError",
    "DimensionMismatchError",
    "write_volume",
    "read_volume",
    "write_projections",
    "read_projections",
    "export_slice_pgm",
]

_HEADER = struct.Struct("<4sBBxxIII")
_VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class FormatError(ValueError):
    """Base for malformed volume/projection files."""


class BadMagicError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class UnknownDtypeError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class DimensionMismatchError(FormatError):
    """File dimensions disagree with the expected geometry."""


def _dtype_code(dtype) -> int:
    dt = np.dtype(dtype)
    for code, candidate in _DTYPES.items():
        if candidate == dt.newbyteorder("<"):
            return code
    raise UnknownDtypeError(f"unsupported dtype {dtype!r} (use float32 or float64)")


def _write(path, magic: bytes, dims, data: np.ndarray, dtype) -> None:
    code = _dtype_code(dtype)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(magic, _VERSION, code, *dims))
        fh.write(np.ascontiguousarray(data, dtype=_DTYPES[code]).tobytes())


def _read(path, magic: bytes):
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise TruncatedFileError(f"{path}: header truncated")
        got_magic, version, code, d0, d1, d2 = _HEADER.unpack(header)
        if got_magic != magic:
            raise BadMagicError(f"{path}: bad magic {got_magic!r}, expected {magic!r}")
        if version != _VERSION:
            raise UnsupportedVersionError(f"{path}: version {version}, expected {_VERSION}")
        if code not in _DTYPES:
            raise UnknownDtypeError(f"{path}: unknown dtype code {code}")
        payload = fh.read()
    expected = d0 * d1 * d2 * _DTYPES[code].itemsize
    if len(payload) < expected:
        raise TruncatedFileError(
            f"{path}: payload is {len(payload)} bytes, header promises {expected}"
        )
    if len(payload) > expected:
        raise FormatError(f"{path}: {len(payload) - expected} trailing bytes")
    data = np.frombuffer(payload, dtype=_DTYPES[code]).astype(np.float64)
    return (d0, d1, d2), data


def write_volume(path, vol: Volume, dtype=np.float64) -> None:
    g = vol.geometry
    _write(path, b"KVOL", (g.nx, g.ny, g.nz), vol.data, dtype)


def read_volume(path, geometry: VolumeGeometry | None = None) -> Volume:
    """Read a KVOL file.  With a geometry argument the file dimensions are
    checked against it; otherwise a unit-voxel geometry is synthesized."""
    (nx, ny, nz), data = _read(path, b"KVOL")
    if geometry is None:
        geometry = VolumeGeometry(nx, ny, nz)
    elif (geometry.nx, geometry.ny, geometry.nz) != (nx, ny, nz):
        raise DimensionMismatchError(
            f"{path}: file is {nx}x{ny}x{nz}, geometry expects "
            f"{geometry.nx}x{geometry.ny}x{geometry.nz}"
        )
    return Volume(geometry=geometry, data=data)


def write_projections(path, proj: ProjectionStack, dtype=np.float64) -> None:
    det = proj.trajectory.detector
    _write(path, b"KPRJ", (det.nu, det.nv, proj.trajectory.n_views), proj.data, dtype)


def read_projections(path, trajectory) -> ProjectionStack:
    """Read a KPRJ file; dimensions must match the supplied trajectory."""
    (nu, nv, n_views), data = _read(path, b"KPRJ")
    det = trajectory.detector
    if (det.nu, det.nv, trajectory.n_views) != (nu, nv, n_views):
        raise DimensionMismatchError(
            f"{path}: file is {nu}x{nv}x{n_views}, trajectory expects "
            f"{det.nu}x{det.nv}x{trajectory.n_views}"
        )
    return ProjectionStack(trajectory=trajectory, data=data)


def export_slice_pgm(vol: Volume, axis: str, index: int, window, path) -> None:
    """Write one slice as binary PGM (P5), windowed [lo, hi] -> [0, 255]."""
    lo, hi = float(window[0]), float(window[1])
    if not lo < hi:
        raise ValueError("window must satisfy lo < hi")
    cube = vol.as_3d()  # (nz, ny, nx)
    g = vol.geometry
    if axis == "x":
        if not 0 <= index < g.nx:
            raise IndexError(f"x index {index} out of range [0, {g.nx})")
        img = cube[:, :, index]
    elif axis == "y":
        if not 0 <= index < g.ny:
            raise IndexError(f"y index {index} out of range [0, {g.ny})")
        img = cube[:, index, :]
    elif axis == "z":
        if not 0 <= index < g.nz:
            raise IndexError(f"z index {index} out of range [0, {g.nz})")
        img = cube[index, :, :]
    else:
        raise ValueError(f"axis must be one of x, y, z, got {axis!r}")
    scaled = (img - lo) / (hi - lo) * 255.0
    pixels = np.clip(np.floor(scaled + 0.5), 0, 255).astype(np.uint8)  # round half up
    with open(path, "wb") as fh:
        fh.write(f"P5\n{pixels.shape[1]} {pixels.shape[0]}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())
