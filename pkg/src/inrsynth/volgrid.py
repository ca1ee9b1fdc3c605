"""Volumetric grids, normalized coordinates and the VOL1 on-disk format.

Arrays are held as ``(Dz, Dy, Dx)`` in C order, so the flattened payload is
x-fastest. ``dims`` is always reported as ``(Dx, Dy, Dz)``.
"""
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, InvalidArgumentError

MAGIC = b"VOL1\0\0\0\0"
KIND_INTENSITY = 0
KIND_MASK = 1
_HEADER = struct.Struct("<8s3I3dB")


def _check_dims(dims):
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3:
        raise InvalidArgumentError(f"dims must have 3 entries, got {dims}")
    if any(d < 1 for d in dims):
        raise InvalidArgumentError(f"dims must be positive, got {dims}")
    return dims


@dataclass
class Volume:
    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    intensity_max: float = 1.0

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise InvalidArgumentError("volume data must be 3D (Dz, Dy, Dx)")
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3 or any(not s > 0 for s in self.spacing):
            raise InvalidArgumentError(f"spacing must be three positive values, got {self.spacing}")

    @property
    def dims(self):
        dz, dy, dx = self.data.shape
        return (dx, dy, dz)

    @property
    def is_mask(self):
        return self.data.dtype == np.uint8


@dataclass
class MaskSet:
    myo: np.ndarray
    fib: np.ndarray
    spacing: tuple = field(default=(1.0, 1.0, 1.0))

    def __post_init__(self):
        self.myo = np.asarray(self.myo)
        self.fib = np.asarray(self.fib)
        if self.myo.shape != self.fib.shape or self.myo.ndim != 3:
            raise InvalidArgumentError("myo and fib must be 3D grids of the same shape")
        for name, arr in (("myo", self.myo), ("fib", self.fib)):
            if not np.isin(arr, (0, 1)).all():
                raise InvalidArgumentError(f"{name} mask must contain only 0 and 1")
        self.myo = self.myo.astype(np.uint8)
        self.fib = self.fib.astype(np.uint8)

    @property
    def dims(self):
        dz, dy, dx = self.myo.shape
        return (dx, dy, dz)

    def contained(self):
        """Return a copy with fibrosis restricted to the myocardium."""
        return MaskSet(self.myo, self.fib & self.myo, self.spacing)


def axis_coords(n):
    if n < 1:
        raise InvalidArgumentError(f"axis length must be >= 1, got {n}")
    if n == 1:
        return np.zeros(1)
    return 2.0 * np.arange(n) / (n - 1) - 1.0


def normalize_coords(dims):
    """Voxel-center coordinates in [-1, 1]^3, one row per voxel in data order.

    Each axis is mapped independently (spacing is ignored); a size-1 axis maps
    to 0.
    """
    dx, dy, dz = _check_dims(dims)
    zz, yy, xx = np.meshgrid(axis_coords(dz), axis_coords(dy), axis_coords(dx), indexing="ij")
    return np.stack([xx.ravel(), yy.ravel(), zz.ravel()], axis=1)


def check_coords(coords):
    coords = np.asarray(coords)
    if coords.ndim != 2 or coords.shape[1] != 3:
        raise InvalidArgumentError(f"coords must have shape (n, 3), got {coords.shape}")
    if not np.isfinite(coords).all() or np.abs(coords).max(initial=0.0) > 1.0:
        raise InvalidArgumentError("coordinates must lie in [-1, 1]^3")
    return coords


def normalize_intensity(volume):
    """Min-max scale a volume to [0, intensity_max]."""
    data = volume.data.astype(np.float64)
    lo, hi = data.min(), data.max()
    scaled = np.zeros_like(data) if hi <= lo else (data - lo) / (hi - lo)
    return Volume((scaled * volume.intensity_max).astype(np.float32), volume.spacing, volume.intensity_max)


def write_vol(path, volume):
    if isinstance(volume, MaskSet):
        raise InvalidArgumentError("write one mask channel at a time (see write_masks)")
    data = volume.data
    if data.dtype == np.uint8:
        kind, payload = KIND_MASK, data
    else:
        kind, payload = KIND_INTENSITY, data.astype("<f4")
    dx, dy, dz = volume.dims
    header = _HEADER.pack(MAGIC, dx, dy, dz, *volume.spacing, kind)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(payload).tobytes())


def read_vol(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[: len(MAGIC)] != MAGIC:
        raise FormatError("magic", f"expected {MAGIC!r}, got {raw[:len(MAGIC)]!r}")
    if len(raw) < _HEADER.size:
        raise FormatError("header", f"expected {_HEADER.size} header bytes, got {len(raw)}")
    _, dx, dy, dz, sx, sy, sz, kind = _HEADER.unpack_from(raw)
    if min(dx, dy, dz) < 1:
        raise FormatError("dims", f"non-positive dimension in {(dx, dy, dz)}")
    if not min(sx, sy, sz) > 0:
        raise FormatError("spacing", f"non-positive spacing {(sx, sy, sz)}")
    if kind == KIND_INTENSITY:
        dtype = np.dtype("<f4")
    elif kind == KIND_MASK:
        dtype = np.dtype(np.uint8)
    else:
        raise FormatError("kind", f"unknown channel kind {kind}")
    count = dx * dy * dz
    payload = raw[_HEADER.size:]
    expected = count * dtype.itemsize
    if len(payload) < expected:
        raise FormatError("payload", f"truncated: {len(payload)} bytes for {count} elements ({expected} bytes)")
    if len(payload) > expected:
        raise FormatError("payload", f"{len(payload) - expected} trailing bytes after {count} elements")
    data = np.frombuffer(payload, dtype=dtype).reshape(dz, dy, dx)
    if kind == KIND_MASK:
        if not np.isin(data, (0, 1)).all():
            raise FormatError("payload", "mask channel holds values other than 0/1")
        return Volume(data.copy(), (sx, sy, sz))
    return Volume(data.astype(np.float32), (sx, sy, sz))


def write_masks(myo_path, fib_path, masks):
    write_vol(myo_path, Volume(masks.myo, masks.spacing))
    write_vol(fib_path, Volume(masks.fib, masks.spacing))


def read_masks(myo_path, fib_path):
    myo = read_vol(myo_path)
    fib = read_vol(fib_path)
    if not (myo.is_mask and fib.is_mask):
        raise FormatError("kind", "mask files must use the mask channel kind")
    if myo.dims != fib.dims:
        raise FormatError("dims", f"myo {myo.dims} and fib {fib.dims} disagree")
    return MaskSet(myo.data, fib.data, myo.spacing)


def write_case(prefix, volume, masks):
    """Write ``<prefix>_img.vol``, ``_myo.vol``, ``_fib.vol``; return the three paths."""
    paths = (f"{prefix}_img.vol", f"{prefix}_myo.vol", f"{prefix}_fib.vol")
    write_vol(paths[0], volume)
    write_masks(paths[1], paths[2], masks)
    return paths


def read_case(prefix):
    volume = read_vol(f"{prefix}_img.vol")
    masks = read_masks(f"{prefix}_myo.vol", f"{prefix}_fib.vol")
    if masks.dims != volume.dims:
        raise FormatError("dims", f"image {volume.dims} and masks {masks.dims} disagree")
    return volume, masks
