"""Procedural cluttered-container scenes with synthetic demonstrations.

Three archetypes: an open-front shelf, the same shelf behind a hinged door
(generated swung open), and a pulled-out drawer tray reached from above.
A generated scene always comes with a demonstration: a collision-free hand
path from a sampled exterior start to the target surface, built by marching
a clearance-weighted wavefront out of the target and walking back down it.

Generation is a pure function of (seed, params): the same call yields
bit-identical scenes and demonstrations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from toafield.errors import GenerationFailure
from toafield.fastmarch import fmm_solve
from toafield.fields import DEFAULT_H
from toafield.grid import ScalarGrid3, grid_shape
from toafield.rotations import matrix_to_quat, rotation_about_axis, rotation_between
from toafield.scene import Scene, Solid
from toafield.trajectory import Trajectory6, path_tangents, resample_arclength

ARCHETYPES = ("shelf", "cabinet-with-door", "drawer")

# interior width whose 0.8x scale lands on the quoted narrow-shelf width
BASE_WIDTH = 0.36875
WALL = 0.02

# demonstration synthesis
CLEARANCE_REF = 0.1        # speed = min(1, clearance / this)
APPROACH_RAMP = 0.15       # meters over which speed falls 1.0 -> 0.2
MIN_DEMO_SPEED = 0.2
SHORTCUT_CLEARANCE = 0.02


@dataclass(frozen=True)
class GenParams:
    archetype: str = "shelf"
    n_obstacles_lo: int = 2
    n_obstacles_hi: int = 4
    scale_lo: float = 0.8
    scale_hi: float = 1.25
    shift: float = 0.05
    h: float = DEFAULT_H
    max_attempts: int = 64

    def __post_init__(self):
        if self.archetype not in ARCHETYPES:
            raise ValueError(f"unknown archetype {self.archetype!r}")


@dataclass
class _PlacementBox:
    """Region target and obstacles may occupy: centered (cx, cy), extents
    (x_extent, y_extent), objects sit on floor_z."""

    cx: float
    cy: float
    x_extent: float
    y_extent: float
    floor_z: float


class _Reject(Exception):
    pass


def generate_scene(seed: int, params: GenParams = GenParams()):
    """Return (scene, demo) for this seed, or raise GenerationFailure."""
    for attempt in range(params.max_attempts):
        rng = np.random.default_rng([int(seed), attempt, 0x70AF])
        try:
            scene = _layout(rng, params)
        except _Reject:
            continue
        demo = _synthesize_demo(rng, scene, params.h)
        if demo is not None:
            return scene, demo
    raise GenerationFailure(
        f"no reachable layout for seed {seed} "
        f"within {params.max_attempts} attempts")


# -- layout ------------------------------------------------------------------


def _layout(rng, params: GenParams) -> Scene:
    bounds_lo = np.zeros(3)
    bounds_hi = np.array([1.2, 1.2, 1.2])
    scale = rng.uniform(params.scale_lo, params.scale_hi)
    center = np.array([0.78, 0.6]) + rng.uniform(-0.02, 0.02, 2)

    width = BASE_WIDTH * scale            # interior extent along y
    depth = 0.32                          # interior extent along x
    height = 0.38                         # interior extent along z
    floor_z = 0.45

    shell, box = _container(params.archetype, center, width, depth, height,
                            floor_z, rng)
    solids = list(shell)
    target = _make_target(rng, box)
    solids.append(target)
    n_obs = int(rng.integers(params.n_obstacles_lo, params.n_obstacles_hi + 1))
    for i in range(n_obs):
        solids.append(_make_obstacle(rng, box, solids, params.shift, i))
    return Scene(bounds_lo, bounds_hi, solids)


def _container(archetype, center, width, depth, height, floor_z, rng):
    cx, cy = center
    w2, d2 = width / 2.0, depth / 2.0
    top_z = floor_z + height
    ident = [1.0, 0.0, 0.0, 0.0]

    def plate(sid, pos, dims, role="container-shell", articulation=None):
        return Solid(sid, "aabox", pos, ident, dims, role=role,
                     articulation=articulation)

    if archetype == "drawer":
        # fixed chest, tray pieces share one prismatic joint pulled out
        # toward the front; the exposed tray section is open from above
        pull = float(rng.uniform(0.75, 0.95)) * depth
        tray_h = 0.14

        def tray(sid, pos, dims):
            art = {"kind": "prismatic", "axis": [-1.0, 0.0, 0.0],
                   "range": [0.0, depth], "value": pull}
            return Solid(sid, "aabox", pos, ident, dims, role="drawer",
                         articulation=art)

        shell = [
            plate("chest-top", [cx, cy, top_z + WALL / 2],
                  [depth, width + 2 * WALL, WALL]),
            plate("chest-left", [cx, cy - w2 - WALL / 2, floor_z + height / 2],
                  [depth, WALL, height]),
            plate("chest-right", [cx, cy + w2 + WALL / 2, floor_z + height / 2],
                  [depth, WALL, height]),
            plate("chest-back", [cx + d2 + WALL / 2, cy, floor_z + height / 2],
                  [WALL, width + 2 * WALL, height]),
            tray("tray-floor", [cx, cy, floor_z - WALL / 2],
                 [depth, width, WALL]),
            tray("tray-front", [cx - d2 + WALL / 2, cy, floor_z + tray_h / 2],
                 [WALL, width, tray_h]),
            tray("tray-rear", [cx + d2 - WALL / 2, cy, floor_z + tray_h / 2],
                 [WALL, width, tray_h]),
            tray("tray-left", [cx, cy - w2 + WALL / 2, floor_z + tray_h / 2],
                 [depth, WALL, tray_h]),
            tray("tray-right", [cx, cy + w2 - WALL / 2, floor_z + tray_h / 2],
                 [depth, WALL, tray_h]),
        ]
        # placeable region: the tray section sticking out past the chest
        exposed_lo = cx - d2 - pull + WALL + 0.02
        exposed_hi = cx - d2 - 0.03
        box = _PlacementBox((exposed_lo + exposed_hi) / 2, cy,
                            exposed_hi - exposed_lo, width - 2 * WALL - 0.04,
                            floor_z)
        return shell, box

    shell = [
        plate("floor", [cx, cy, floor_z - WALL / 2],
              [depth, width + 2 * WALL, WALL]),
        plate("roof", [cx, cy, top_z + WALL / 2],
              [depth, width + 2 * WALL, WALL]),
        plate("wall-left", [cx, cy - w2 - WALL / 2, floor_z + height / 2],
              [depth, WALL, height]),
        plate("wall-right", [cx, cy + w2 + WALL / 2, floor_z + height / 2],
              [depth, WALL, height]),
        plate("wall-back", [cx + d2 + WALL / 2, cy, floor_z + height / 2],
              [WALL, width + 2 * WALL, height]),
    ]
    if archetype == "cabinet-with-door":
        # hinged at the front-left vertical edge, swung well past open so
        # the panel hugs the cabinet's left flank
        span = width + 2 * WALL
        hinge = [cx - d2 - WALL / 2, cy - w2 - WALL, floor_z + height / 2]
        shell.append(Solid(
            "door", "box", hinge, ident, [WALL, span, height], role="door",
            articulation={"kind": "hinge", "axis": [0.0, 0.0, 1.0],
                          "range": [0.0, 2.4],
                          "value": float(rng.uniform(1.9, 2.4)),
                          "arm": [0.0, span / 2, 0.0]}))
    box = _PlacementBox(cx, cy, depth - 0.04, width - 0.04, floor_z)
    return shell, box


def _make_target(rng, box: _PlacementBox):
    kind = rng.integers(0, 3)
    mx = min(0.06, box.x_extent / 2)
    my = min(0.06, box.y_extent / 2)
    x = float(rng.uniform(box.cx - box.x_extent / 2 + mx,
                          box.cx + box.x_extent / 2 - mx))
    y = float(rng.uniform(box.cy - box.y_extent / 2 + my,
                          box.cy + box.y_extent / 2 - my))
    if kind == 0:
        r, hgt = 0.035, 0.11
        return Solid("target", "cylinder", [x, y, box.floor_z + hgt / 2],
                     [1, 0, 0, 0], [r, hgt], role="target")
    if kind == 1:
        r = 0.045
        return Solid("target", "sphere", [x, y, box.floor_z + r],
                     [1, 0, 0, 0], [r], role="target")
    dims = np.array([0.06, 0.06, 0.11])
    yaw = float(rng.uniform(-np.pi / 2, np.pi / 2))
    quat = matrix_to_quat(rotation_about_axis([0, 0, 1], yaw))
    return Solid("target", "box", [x, y, box.floor_z + dims[2] / 2],
                 quat, dims, role="target")


def _make_obstacle(rng, box: _PlacementBox, placed, shift, index):
    target = next(s for s in placed if s.role == "target")
    probes = target.surface_points(48)
    for _ in range(40):
        kind = rng.integers(0, 3)
        sc = rng.uniform(0.8, 1.25)
        x = float(rng.uniform(box.cx - box.x_extent / 2 + 0.02,
                              box.cx + box.x_extent / 2 - 0.02))
        y = float(rng.uniform(box.cy - box.y_extent / 2 + 0.02,
                              box.cy + box.y_extent / 2 - 0.02))
        x += float(rng.uniform(-shift, shift))
        y += float(rng.uniform(-shift, shift))
        if kind == 0:
            dims = np.array([rng.uniform(0.04, 0.1), rng.uniform(0.04, 0.1),
                             rng.uniform(0.06, 0.16)]) * sc
            yaw = float(rng.uniform(-np.pi / 2, np.pi / 2))
            quat = matrix_to_quat(rotation_about_axis([0, 0, 1], yaw))
            cand = Solid(f"obs{index}", "box",
                         [x, y, box.floor_z + dims[2] / 2], quat, dims)
        elif kind == 1:
            r = float(rng.uniform(0.03, 0.055) * sc)
            cand = Solid(f"obs{index}", "sphere", [x, y, box.floor_z + r],
                         [1, 0, 0, 0], [r])
        else:
            r = float(rng.uniform(0.025, 0.05) * sc)
            hgt = float(rng.uniform(0.08, 0.16) * sc)
            cand = Solid(f"obs{index}", "cylinder",
                         [x, y, box.floor_z + hgt / 2], [1, 0, 0, 0], [r, hgt])
        if np.min(cand.signed_distance(probes)) < 0.01:
            continue          # would crowd or swallow the target
        if any(cand.contains(s.pos) or s.contains(cand.pos)
               for s in placed if s.role == "obstacle"):
            continue
        return cand
    raise _Reject


# -- demonstration synthesis -------------------------------------------------


def _synthesize_demo(rng, scene: Scene, h: float):
    dims = grid_shape(scene.bounds_lo, scene.bounds_hi, h)
    grid = ScalarGrid3(scene.bounds_lo.copy(), h, np.zeros(dims))
    pts = grid.centers()
    occ = np.zeros(dims, dtype=bool)
    for s in scene.solids:
        occ |= s.contains(pts)
    clearance = scene.unsigned_distance(pts.reshape(-1, 3)).reshape(dims)
    speed = np.minimum(1.0, clearance / CLEARANCE_REF)
    speed[occ] = 0.0

    target = scene.target()
    sdf_t = target.signed_distance(pts)
    src = np.argwhere((~occ) & (sdf_t < h))
    if len(src) == 0:
        return None
    arrival = fmm_solve(grid.like(speed),
                        [(tuple(c), 0.0) for c in src]).values

    start = _sample_start(rng, arrival, clearance, sdf_t)
    if start is None:
        return None
    cells = _backtrace(arrival, start)
    path = grid.center_of(np.array(cells))
    contact = target.closest_surface_point(path[-1])
    path = np.vstack([path, contact])
    path = _shortcut(path, scene, target)
    path = resample_arclength(path, ds=h / 2.0)
    if len(path) < 4:
        return None
    # snap the exact contact back on after resampling
    path[-1] = contact
    demo = _to_trajectory(path)
    return demo if _demo_is_clean(demo, scene, h) else None


def _sample_start(rng, arrival, clearance, sdf_t):
    ok = np.isfinite(arrival) & (clearance >= 0.1) \
        & (sdf_t > 0.35) & (sdf_t < 0.75)
    cand = np.argwhere(ok)
    if len(cand) == 0:
        return None
    pick = cand[rng.integers(0, len(cand))]
    return tuple(int(c) for c in pick)


def _backtrace(arrival, start, max_steps=100000):
    """Greedy 6-neighbor descent to a source cell of the arrival field."""
    dims = arrival.shape
    cur = start
    cells = [cur]
    for _ in range(max_steps):
        best = cur
        best_v = arrival[cur]
        for ax in range(3):
            for d in (-1, 1):
                nb = list(cur)
                nb[ax] += d
                if not (0 <= nb[ax] < dims[ax]):
                    continue
                nb = tuple(nb)
                if arrival[nb] < best_v:
                    best_v = arrival[nb]
                    best = nb
        if best == cur:
            break
        cur = best
        cells.append(cur)
    return cells


def _shortcut(path, scene: Scene, target: Solid):
    """Greedy string pulling over the voxel staircase."""
    others = [s for s in scene.solids if s.id != target.id]

    def segment_clear(a, b):
        n = max(2, int(np.linalg.norm(b - a) / 0.01) + 1)
        samples = a + np.linspace(0, 1, n)[:, None] * (b - a)
        for s in others:
            if np.min(s.signed_distance(samples)) < SHORTCUT_CLEARANCE:
                return False
        # stay out of the target too, bar the final touch
        return np.min(target.signed_distance(samples[:-1])) > 0.0

    out = [path[0]]
    i = 0
    while i < len(path) - 1:
        j = len(path) - 1
        while j > i + 1 and not segment_clear(path[i], path[j]):
            j -= 1
        out.append(path[j])
        i = j
    return np.asarray(out)


def _to_trajectory(path):
    seg = np.linalg.norm(np.diff(path, axis=0), axis=1)
    s_rem = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]])
    speeds = MIN_DEMO_SPEED + (1.0 - MIN_DEMO_SPEED) * np.minimum(
        1.0, s_rem / APPROACH_RAMP)
    mid_speed = 0.5 * (speeds[:-1] + speeds[1:])
    times = np.concatenate([[0.0], np.cumsum(seg / mid_speed)])
    tangents = path_tangents(path)
    rotations = _transported_frames(tangents)
    return Trajectory6(times, path, rotations, tangents, speeds,
                       contact_index=len(path) - 1)


def _transported_frames(tangents):
    """Minimal-rotation frames whose first column follows the tangent."""
    up = np.array([0.0, 0.0, 1.0])
    t0 = tangents[0]
    side = np.cross(up, t0)
    if np.linalg.norm(side) < 1e-6:
        side = np.cross(np.array([1.0, 0.0, 0.0]), t0)
    side /= np.linalg.norm(side)
    R = np.stack([t0, side, np.cross(t0, side)], axis=1)
    frames = [R]
    for k in range(1, len(tangents)):
        R = rotation_between(tangents[k - 1], tangents[k]) @ frames[-1]
        frames.append(R)
    return np.array(frames)


def _demo_is_clean(demo: Trajectory6, scene: Scene, h: float) -> bool:
    target = scene.target()
    others = [s for s in scene.solids if s.id != target.id]
    p = demo.positions
    for s in others:
        if np.min(s.signed_distance(p)) <= 0.0:
            return False
    sd = target.signed_distance(p)
    if np.min(sd[:-1]) <= 0.0:      # graze the target only at the end
        return False
    if abs(sd[-1]) > min(1e-6, h):
        return False
    return np.linalg.norm(p[0] - p[-1]) > 0.3
