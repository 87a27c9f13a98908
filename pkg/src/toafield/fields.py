"""The three planning fields: inverse target, obstacle and time-of-arrival.

All three live on one object-centric grid over the scene bounds.  Inverse
distances are clipped at EPS_D (meters) and inverse arrival times at EPS_T
(seconds), so values stay in (0, 1/eps] with 0 reserved for cells inside
solids or unreachable from the sources.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from toafield.fastmarch import fmm_solve
from toafield.grid import ScalarGrid3, grid_shape
from toafield.scene import Scene
from toafield.trajectory import Trajectory6

EPS_D = 0.025          # spatial clip, 1/EPS_D = 40 per meter
EPS_T = 1.0 / 60.0     # temporal clip, 1/EPS_T = 60 per second
DEFAULT_H = 0.025
DEFAULT_SIGMA = 0.05
WALK_SPEED = 1.0
CHANNEL_CAPS = (1.0 / EPS_D, 1.0 / EPS_D, 1.0 / EPS_T)

# inverse arrivals below this are treated as unreachable when converting
# back to a time grid for planning
TOA_FLOOR = 0.1


def _empty_grid(scene: Scene, h: float) -> ScalarGrid3:
    dims = grid_shape(scene.bounds_lo, scene.bounds_hi, h)
    return ScalarGrid3(scene.bounds_lo.copy(), h, np.zeros(dims))


def _base_grid(scene: Scene, h: float, grid) -> ScalarGrid3:
    if grid is None:
        return _empty_grid(scene, h)
    return ScalarGrid3(grid.origin.copy(), grid.spacing, np.zeros(grid.dims))


def object_cube_grid(center, half: float = 0.4, h: float = DEFAULT_H) -> ScalarGrid3:
    """Axis-aligned cube grid centered on an object, cell-center sampled.

    The cube spans center +- half per axis; with the defaults that is the
    0.8 m region at 2.5 cm resolution the decoder network trains on.
    """
    center = np.asarray(center, dtype=float).reshape(3)
    n = max(1, int(round(2.0 * half / h)))
    origin = center - 0.5 * n * h
    return ScalarGrid3(origin, h, np.zeros((n, n, n)))


def invert_clipped(d, eps):
    """1 / max(d, eps) with +inf mapping to 0."""
    d = np.asarray(d, dtype=float)
    out = np.zeros(d.shape)
    ok = np.isfinite(d)
    out[ok] = 1.0 / np.maximum(d[ok], eps)
    return out


def build_target_field(scene: Scene, h: float = DEFAULT_H,
                       grid: ScalarGrid3 | None = None) -> ScalarGrid3:
    """Inverse geodesic distance to the target surface, obstacles impassable."""
    target = scene.target()
    grid = _base_grid(scene, h, grid)
    pts = grid.centers()
    occ = np.zeros(grid.dims, dtype=bool)
    for s in scene.solids:
        occ |= s.contains(pts)
    sdf_t = target.signed_distance(pts)
    src_mask = (~occ) & (sdf_t < grid.spacing)
    speed = grid.like(np.where(occ, 0.0, 1.0))
    sources = [(tuple(c), max(float(sdf_t[tuple(c)]), 0.0))
               for c in np.argwhere(src_mask)]
    if not sources:
        d = np.full(grid.dims, np.inf)
    else:
        d = fmm_solve(speed, sources).values
    return grid.like(invert_clipped(d, EPS_D))


def build_obstacle_field(scene: Scene, h: float = DEFAULT_H,
                         grid: ScalarGrid3 | None = None) -> ScalarGrid3:
    """Inverse exact distance to the nearest non-target solid."""
    grid = _base_grid(scene, h, grid)
    obstacles = scene.obstacles()
    if not obstacles:
        return grid
    d = scene.unsigned_distance(grid.centers(), obstacles)
    return grid.like(invert_clipped(d, EPS_D))


def build_toa_field(scene: Scene, demo: Trajectory6, h: float = DEFAULT_H,
                    sigma: float = DEFAULT_SIGMA,
                    grid: ScalarGrid3 | None = None) -> ScalarGrid3:
    """Inverse time of arrival guided by a demonstration trajectory.

    Speed at a free cell is the demo speed at the nearest demo sample,
    attenuated by a Gaussian in the distance to that sample; the wavefront
    starts at the demo contact position.
    """
    if sigma <= 0.0:
        raise ValueError("sigma must be positive")
    grid = _base_grid(scene, h, grid)
    pts = grid.centers()
    occ = np.zeros(grid.dims, dtype=bool)
    for s in scene.solids:
        occ |= s.contains(pts)
    tree = cKDTree(demo.positions)
    dist, idx = tree.query(pts.reshape(-1, 3))
    dist = dist.reshape(grid.dims)
    idx = idx.reshape(grid.dims)
    speed = demo.speeds[idx] * np.exp(-dist ** 2 / (2.0 * sigma ** 2))
    speed[occ] = 0.0
    goal = demo.contact_position
    gcell = tuple(grid.index_of(goal))
    if not grid.in_bounds(gcell) or occ[gcell]:
        free = np.argwhere(~occ)
        if len(free) == 0:
            raise ValueError("no free cell available for the arrival source")
        centers = grid.center_of(free)
        gcell = tuple(free[np.argmin(np.linalg.norm(centers - goal, axis=1))])
    phi = fmm_solve(grid.like(speed), [(gcell, 0.0)]).values
    return grid.like(invert_clipped(phi, EPS_T))


def phi_from_toa(toa: ScalarGrid3, floor: float = TOA_FLOOR) -> ScalarGrid3:
    """Back to an arrival-time grid; inverse values <= floor become +inf.

    The floor keeps barely-reachable slow cells (and decoded near-zero
    values inside solids) out of start selection and path integration.
    """
    v = toa.values
    phi = np.full(v.shape, np.inf)
    ok = v > floor
    phi[ok] = 1.0 / v[ok]
    return toa.like(phi)


@dataclass
class FieldTriple:
    """Co-registered target, obstacle and time-of-arrival channels."""

    d_target: ScalarGrid3
    d_obstacle: ScalarGrid3
    d_toa: ScalarGrid3

    def __post_init__(self):
        g = self.d_target
        for other in (self.d_obstacle, self.d_toa):
            if other.dims != g.dims or other.spacing != g.spacing \
                    or not np.array_equal(other.origin, g.origin):
                raise ValueError("field channels must share grid geometry")
        for ch, cap in zip(self.channels(), CHANNEL_CAPS):
            v = ch.values
            if not np.all(np.isfinite(v)):
                raise ValueError("field values must be finite")
            if v.min() < 0.0 or v.max() > cap * (1.0 + 1e-9):
                raise ValueError("field values outside [0, 1/eps]")

    def channels(self):
        return [self.d_target, self.d_obstacle, self.d_toa]

    @property
    def grid(self) -> ScalarGrid3:
        return self.d_target


def build_fields(scene: Scene, demo: Trajectory6, h: float = DEFAULT_H,
                 sigma: float = DEFAULT_SIGMA,
                 grid: ScalarGrid3 | None = None) -> FieldTriple:
    return FieldTriple(build_target_field(scene, h, grid),
                       build_obstacle_field(scene, h, grid),
                       build_toa_field(scene, demo, h, sigma, grid))
