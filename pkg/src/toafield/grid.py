"""Axis-aligned voxel grids of scalars and their binary field format.

Grid geometry follows the cell-center convention: a grid with origin o and
spacing h stores values at o + (i + 0.5) h per axis.  Serialized channels
are little-endian float32 with x varying fastest; +inf is stored as IEEE
infinity so impassable cells survive a round trip.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from toafield.fileio import atomic_write_bytes

_MAGIC = b"TOAF"
_VERSION = 1


@dataclass
class ScalarGrid3:
    """A scalar sampled at the cell centers of a regular 3D grid."""

    origin: np.ndarray          # (3,) low corner of the covered region
    spacing: float
    values: np.ndarray          # (nx, ny, nz)

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float).reshape(3)
        self.values = np.asarray(self.values)
        if self.values.ndim != 3:
            raise ValueError("grid values must be a 3D array")
        if not (self.spacing > 0.0):
            raise ValueError("grid spacing must be positive")

    @property
    def dims(self):
        return self.values.shape

    def center_of(self, ijk):
        """World position of a cell center; ijk may be an (..., 3) array."""
        return self.origin + (np.asarray(ijk, dtype=float) + 0.5) * self.spacing

    def index_of(self, p):
        """Cell index containing world position p (no bounds clipping)."""
        return np.floor((np.asarray(p, dtype=float) - self.origin)
                        / self.spacing).astype(int)

    def in_bounds(self, ijk):
        ijk = np.asarray(ijk)
        return bool(np.all(ijk >= 0) and np.all(ijk < np.array(self.dims)))

    def centers(self):
        """All cell centers as an (nx, ny, nz, 3) array."""
        nx, ny, nz = self.dims
        ax = [self.origin[k] + (np.arange(n) + 0.5) * self.spacing
              for k, n in ((0, nx), (1, ny), (2, nz))]
        gx, gy, gz = np.meshgrid(*ax, indexing="ij")
        return np.stack([gx, gy, gz], axis=-1)

    def like(self, values):
        return ScalarGrid3(self.origin.copy(), self.spacing, values)


def grid_shape(lo, hi, h):
    """Cell counts needed so the grid covers [lo, hi] at spacing h."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    ext = hi - lo
    if np.any(ext < h):
        raise ValueError("region too small to contain a cell")
    return tuple(int(n) for n in np.maximum(1, np.ceil(ext / h - 1e-9)))


def trilinear(grid: ScalarGrid3, p, out_of_range="clamp"):
    """Trilinearly interpolate grid values at world positions p (..., 3).

    Positions outside the cell-center lattice are clamped to the edge.
    """
    p = np.asarray(p, dtype=float)
    u = (p - grid.origin) / grid.spacing - 0.5
    dims = np.array(grid.dims)
    if out_of_range != "clamp":
        raise ValueError(out_of_range)
    u = np.clip(u, 0.0, dims - 1.0)
    i0 = np.minimum(np.floor(u).astype(int), np.maximum(dims - 2, 0))
    f = np.clip(u - i0, 0.0, 1.0)
    i1 = np.minimum(i0 + 1, dims - 1)
    v = grid.values
    ix0, iy0, iz0 = i0[..., 0], i0[..., 1], i0[..., 2]
    ix1, iy1, iz1 = i1[..., 0], i1[..., 1], i1[..., 2]
    fx, fy, fz = f[..., 0], f[..., 1], f[..., 2]
    c00 = v[ix0, iy0, iz0] * (1 - fx) + v[ix1, iy0, iz0] * fx
    c10 = v[ix0, iy1, iz0] * (1 - fx) + v[ix1, iy1, iz0] * fx
    c01 = v[ix0, iy0, iz1] * (1 - fx) + v[ix1, iy0, iz1] * fx
    c11 = v[ix0, iy1, iz1] * (1 - fx) + v[ix1, iy1, iz1] * fx
    c0 = c00 * (1 - fy) + c10 * fy
    c1 = c01 * (1 - fy) + c11 * fy
    return c0 * (1 - fz) + c1 * fz


def save_toaf(path, channels) -> None:
    """Write one or more co-registered grids to the binary field format."""
    channels = list(channels)
    if not channels:
        raise ValueError("no channels to write")
    g0 = channels[0]
    for g in channels[1:]:
        if g.dims != g0.dims or g.spacing != g0.spacing \
                or not np.array_equal(g.origin, g0.origin):
            raise ValueError("channels must share grid geometry")
    nx, ny, nz = g0.dims
    head = _MAGIC + struct.pack(
        "<IIIIffffI", _VERSION, nx, ny, nz,
        g0.origin[0], g0.origin[1], g0.origin[2], g0.spacing, len(channels))
    body = b"".join(
        np.ascontiguousarray(g.values.transpose(2, 1, 0), dtype="<f4").tobytes()
        for g in channels)
    atomic_write_bytes(path, head + body)


def load_toaf(path):
    """Read a binary field file back into a list of ScalarGrid3."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != _MAGIC:
        raise ValueError("not a field file (bad magic)")
    ver, nx, ny, nz, ox, oy, oz, h, nchan = struct.unpack_from("<IIIIffffI", raw, 4)
    if ver != _VERSION:
        raise ValueError(f"unsupported field file version {ver}")
    off = 4 + struct.calcsize("<IIIIffffI")
    n = nx * ny * nz
    out = []
    for c in range(nchan):
        flat = np.frombuffer(raw, dtype="<f4", count=n, offset=off + 4 * n * c)
        vals = flat.reshape(nz, ny, nx).transpose(2, 1, 0).astype(float)
        out.append(ScalarGrid3(np.array([ox, oy, oz], dtype=float), float(h), vals))
    expect = off + 4 * n * nchan
    if len(raw) != expect:
        raise ValueError("field file truncated or oversized")
    return out
