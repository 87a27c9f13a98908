"""First-order upwind fast marching on voxel grids.

Solves ||grad phi|| = 1 / speed(x) with Dirichlet sources, 6-neighbor
stencil.  Cells with non-positive or non-finite speed are impassable and
keep phi = +inf, as do cells unreachable from every source.
"""

from __future__ import annotations

import warnings

import numpy as np

from toafield._marchkern import march
from toafield.grid import ScalarGrid3


def fmm_solve(speed: ScalarGrid3, sources, return_order=False):
    """March outward from sources over a speed grid.

    Parameters
    ----------
    speed : ScalarGrid3
        Propagation speed per cell; <= 0 or non-finite marks impassable.
    sources : iterable of ((i, j, k), value)
        Seed cells with their initial arrival values (>= 0, finite).  When
        several sources hit one cell the smallest value wins; insertion
        order never affects the result.  The 26-neighborhood of each source
        is seeded with straight-segment arrivals (wall-aware), which keeps
        the usual point-source error of the first-order stencil down.
    return_order : bool
        Also return accepted flat indices (C order) in acceptance order.

    Returns
    -------
    ScalarGrid3, or (ScalarGrid3, ndarray) with return_order.
    """
    nx, ny, nz = speed.dims
    src_idx = []
    src_val = []
    for cell, value in sources:
        i, j, k = (int(c) for c in cell)
        if not (0 <= i < nx and 0 <= j < ny and 0 <= k < nz):
            raise ValueError(f"source cell {cell} outside the grid")
        v = float(value)
        if not (np.isfinite(v) and v >= 0.0):
            raise ValueError(f"source value {value!r} must be finite and >= 0")
        src_idx.append((i * ny + j) * nz + k)
        src_val.append(v)
    if not src_idx:
        raise ValueError("no sources given")
    speed_flat = np.ascontiguousarray(speed.values, dtype=float).ravel()
    order = np.empty(nx * ny * nz, np.int64)
    arrival_flat = march(speed_flat, nx, ny, nz, float(speed.spacing),
                         np.asarray(src_idx, np.int64),
                         np.asarray(src_val, float), order)
    if order[0] < 0:
        warnings.warn("all fast-marching sources are impassable; "
                      "arrival field is +inf everywhere", stacklevel=2)
    out = speed.like(arrival_flat.reshape(nx, ny, nz))
    if return_order:
        return out, order[order >= 0]
    return out
