"""High-level goal production: matching, 2D navigation and task scheduling.

The pieces chain into one pipeline: a pooled clearance descriptor indexes
a database of contact keyframes, a 2D cost-field planner routes the root
across the floor, walk snippets are matched onto path segments, a bimanual
scheduler assigns hands by minimizing a pose-deviation cost, and a small
state machine sequences the whole task including container opening and
obstacle removal.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from toafield.decoder import ConditionVector
from toafield.errors import MatchFailure, NavigationFailure, SchedulingFailure
from toafield.fastmarch import fmm_solve
from toafield.fields import object_cube_grid
from toafield.grid import ScalarGrid3
from toafield.phase import BODY_WIDTH, KEYJOINTS
from toafield.rotations import is_rotation, log_norm, rotation_to_6d
from toafield.scene import Scene

GOAL_JOINTS = KEYJOINTS + ("root-projection",)
ENV_BLOCKS = (2, 2, 4)
APPROACH_RADIUS = 0.4        # m, goal-direction cost cone
SEGMENT_LENGTH = 3.0         # m, navigation matching granularity
NAV_SAMPLES = 8              # uniform goal samples per segment
CHARACTER_RADIUS = 0.25      # m, 2D occupancy inflation
SLICE_BAND = (0.1, 1.8)      # m, height band mapped into the 2D grid
PUSH_MARGIN = 0.01           # m, clearance added when resolving collisions
MAX_PUSH_ROUNDS = 8
COST_WEIGHT_PAIR = 2.0       # weighting of the inter-hand coupling term


def unsigned_angle(u, v) -> float:
    """Angle between two 2D vectors in [0, pi]; zero vectors give 0."""
    u = np.asarray(u, dtype=float).reshape(2)
    v = np.asarray(v, dtype=float).reshape(2)
    cross = u[0] * v[1] - u[1] * v[0]
    dot = u[0] * v[0] + u[1] * v[1]
    if cross == 0.0 and dot == 0.0:
        return 0.0
    return float(np.arctan2(abs(cross), dot))


# -- domain types ------------------------------------------------------------

@dataclass
class KeyjointGoal:
    """A target transform for one keyjoint at one keyframe."""

    joint: str
    pos: np.ndarray
    rot: np.ndarray
    action: str = ""
    contact: bool = False
    time: float = 0.0
    flags: tuple = ()

    def __post_init__(self):
        if self.joint not in GOAL_JOINTS:
            raise ValueError(f"unknown keyjoint {self.joint!r}")
        self.pos = np.asarray(self.pos, dtype=float).reshape(3)
        self.rot = np.asarray(self.rot, dtype=float).reshape(3, 3)
        if not is_rotation(self.rot, tol=1e-6):
            raise ValueError("goal rotation must be orthonormal within 1e-6")


@dataclass
class MatchFeature:
    """KD-queryable descriptor: pooled environment plus task condition."""

    env: np.ndarray
    condition: ConditionVector

    def __post_init__(self):
        self.env = np.asarray(self.env, dtype=float).reshape(-1)
        if len(self.env) != int(np.prod(ENV_BLOCKS)):
            raise ValueError("environment descriptor must have 16 entries")
        if not np.all(np.isfinite(self.env)):
            raise ValueError("environment descriptor must be finite")


@dataclass
class NavFeature:
    """Walk-segment descriptor in the segment-start root frame.

    joints maps each keyjoint to (r6, p) with r6 the common 6-number
    rotation encoding; the flattened feature is 2 + 2 + 3 * 9 + 2 = 33
    numbers: goal heading, goal position, joints, root velocity.
    """

    d_g: np.ndarray
    p_g: np.ndarray
    joints: dict
    v: np.ndarray

    def __post_init__(self):
        self.d_g = np.asarray(self.d_g, dtype=float).reshape(2)
        self.p_g = np.asarray(self.p_g, dtype=float).reshape(2)
        self.v = np.asarray(self.v, dtype=float).reshape(2)
        if abs(np.linalg.norm(self.d_g) - 1.0) > 1e-6:
            raise ValueError("goal heading must be unit norm within 1e-6")
        for j in KEYJOINTS:
            if j not in self.joints:
                raise ValueError(f"missing keyjoint {j!r}")
            r6, p = self.joints[j]
            self.joints[j] = (np.asarray(r6, dtype=float).reshape(6),
                              np.asarray(p, dtype=float).reshape(3))

    def vector(self) -> np.ndarray:
        parts = [self.d_g, self.p_g]
        for j in KEYJOINTS:
            r6, p = self.joints[j]
            parts.append(r6)
            parts.append(p)
        parts.append(self.v)
        out = np.concatenate(parts)
        assert len(out) == 33
        return out


@dataclass
class Schedule:
    """Ordered keyframes with the hand assignment that produced them."""

    keyframes: list              # list of tuples of KeyjointGoal
    target_hand: str
    aux_hand: str
    mode: str                    # "sequential" | "co-temporal"

    def __post_init__(self):
        if self.mode not in ("sequential", "co-temporal"):
            raise ValueError(f"unknown schedule mode {self.mode!r}")
        for frame in self.keyframes:
            seen = set()
            for g in frame:
                if g.contact:
                    if g.joint in seen:
                        raise ValueError(
                            "one hand cannot take two simultaneous contacts")
                    seen.add(g.joint)


# -- environment descriptor --------------------------------------------------

def _boundary_distance(pts, lo, hi):
    """Distance to the axis-aligned room shell, clamped at zero outside."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    spans = np.minimum(pts - lo, hi - pts)
    return np.maximum(spans.min(axis=-1), 0.0)


def encode_environment(scene: Scene, object_id: str, half: float = 0.4,
                       h: float = 0.025) -> np.ndarray:
    """Pooled clearance descriptor on the cube around one object.

    Builds the obstacle-distance field on the object-centered cube by
    fast marching (walls and every other solid count as obstacles),
    average-pools it into 2 x 2 x 4 blocks and normalizes by the cube
    half-diagonal.  Rigid translations of the whole scene leave the
    descriptor unchanged because everything is measured from the object.
    """
    pivot = scene.solid(object_id)
    grid = object_cube_grid(pivot.pos, half, h)
    pts = grid.centers()
    others = [s for s in scene.solids if s.id != object_id]
    d = scene.unsigned_distance(pts, others) if others \
        else np.full(grid.dims, np.inf)
    d = np.minimum(d, _boundary_distance(pts, scene.bounds_lo,
                                         scene.bounds_hi))
    near = d <= 2.0 * h
    if np.any(near):
        sources = [(tuple(c), float(d[tuple(c)]))
                   for c in np.argwhere(near)]
        speed = grid.like(np.ones(grid.dims))
        marched = fmm_solve(speed, sources).values
        d = np.minimum(np.where(np.isfinite(marched), marched, np.inf), d)
    half_diag = half * np.sqrt(3.0)
    d = np.minimum(d, half_diag)
    bx, by, bz = ENV_BLOCKS
    nx, ny, nz = grid.dims
    pooled = d.reshape(bx, nx // bx, by, ny // by, bz, nz // bz)
    pooled = pooled.mean(axis=(1, 3, 5))
    return (pooled / half_diag).ravel()


# -- goal matching -----------------------------------------------------------

@dataclass
class Match:
    distance: float
    feature: MatchFeature
    goals: tuple


def match_goal(db, query: MatchFeature, k: int):
    """k nearest database entries under the exact-condition filter.

    db is a sequence of (MatchFeature, goal-set) pairs.  Entries whose
    categorical condition differs from the query are never considered;
    the survivors rank by Euclidean distance between environment
    descriptors, ties keeping insertion order.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    key = query.condition.key()
    ranked = []
    for order, (feat, goals) in enumerate(db):
        if feat.condition.key() != key:
            continue
        dist = float(np.linalg.norm(feat.env - query.env))
        ranked.append((dist, order, feat, goals))
    if not ranked:
        raise MatchFailure("no database entry matches the task condition")
    ranked.sort(key=lambda t: (t[0], t[1]))
    return [Match(dist, feat, tuple(goals))
            for dist, _, feat, goals in ranked[:k]]


# -- 2D occupancy and path planning ------------------------------------------

@dataclass
class Grid2:
    """Cell-centered boolean occupancy over a rectangle."""

    origin: np.ndarray
    spacing: float
    values: np.ndarray

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float).reshape(2)
        self.values = np.asarray(self.values, dtype=bool)
        if self.values.ndim != 2:
            raise ValueError("occupancy must be 2D")

    @property
    def dims(self):
        return self.values.shape

    def cell_of(self, p):
        return tuple(np.floor((np.asarray(p, dtype=float) - self.origin)
                              / self.spacing).astype(int))

    def center_of(self, cell):
        return self.origin + (np.asarray(cell, dtype=float) + 0.5) \
            * self.spacing

    def in_bounds(self, cell):
        return 0 <= cell[0] < self.dims[0] and 0 <= cell[1] < self.dims[1]


def occupancy_2d(scene: Scene, h: float = 0.05,
                 band=SLICE_BAND, inflate: float = CHARACTER_RADIUS,
                 exclude=()) -> Grid2:
    """Project solids within the character-height band and inflate.

    A column is occupied when any sample inside the band falls inside a
    solid; free cells closer than the character radius to an occupied
    cell are then marked occupied too.
    """
    lo, hi = scene.bounds_lo, scene.bounds_hi
    nx = max(1, int(round((hi[0] - lo[0]) / h)))
    ny = max(1, int(round((hi[1] - lo[1]) / h)))
    xs = lo[0] + (np.arange(nx) + 0.5) * h
    ys = lo[1] + (np.arange(ny) + 0.5) * h
    z0 = max(band[0], lo[2])
    z1 = min(band[1], hi[2])
    nz = max(2, int(np.ceil((z1 - z0) / h)) + 1)
    zs = np.linspace(z0, z1, nz)
    X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
    pts = np.stack([X, Y, Z], axis=-1)
    occ = np.zeros((nx, ny), dtype=bool)
    for s in scene.solids:
        if s.id in exclude:
            continue
        occ |= s.contains(pts).any(axis=2)
    if inflate > 0.0 and occ.any():
        gap = ndimage.distance_transform_edt(~occ) * h
        occ = gap <= inflate
    return Grid2(lo[:2], h, occ)


def _cost_field(occ: Grid2, p_g, d_g) -> np.ndarray:
    xs = occ.origin[0] + (np.arange(occ.dims[0]) + 0.5) * occ.spacing
    ys = occ.origin[1] + (np.arange(occ.dims[1]) + 0.5) * occ.spacing
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    rel = np.stack([X - p_g[0], Y - p_g[1]], axis=-1)
    r = np.linalg.norm(rel, axis=-1)
    cost = np.ones(occ.dims)
    cone = r <= APPROACH_RADIUS
    if np.any(cone):
        ang = np.array([unsigned_angle(v, d_g) for v in rel[cone]])
        cost[cone] = ang / np.pi + 0.5
    cost[occ.values] = np.inf
    return cost


_NEIGHBORS8 = [(di, dj) for di in (-1, 0, 1) for dj in (-1, 0, 1)
               if (di, dj) != (0, 0)]


def path_cost_integral(cost: np.ndarray, cells, spacing: float) -> float:
    """Sum of mean-endpoint-cost times step length along a cell path."""
    total = 0.0
    for a, b in zip(cells[:-1], cells[1:]):
        step = np.hypot(b[0] - a[0], b[1] - a[1]) * spacing
        total += 0.5 * (cost[a] + cost[b]) * step
    return total


def dijkstra_2d(cost: np.ndarray, start, goal, spacing: float):
    """Reference 8-neighbor shortest path on the cost graph.

    Edge weight is the endpoint-mean cost times Euclidean step length,
    matching path_cost_integral.  Returns (cell path, total cost).
    """
    nx, ny = cost.shape
    dist = np.full((nx, ny), np.inf)
    prev = {}
    dist[start] = 0.0
    heap = [(0.0, start)]
    while heap:
        d, cell = heapq.heappop(heap)
        if d > dist[cell]:
            continue
        if cell == goal:
            break
        for di, dj in _NEIGHBORS8:
            nb = (cell[0] + di, cell[1] + dj)
            if not (0 <= nb[0] < nx and 0 <= nb[1] < ny):
                continue
            if not np.isfinite(cost[nb]):
                continue
            w = 0.5 * (cost[cell] + cost[nb]) * np.hypot(di, dj) * spacing
            nd = d + w
            if nd < dist[nb]:
                dist[nb] = nd
                prev[nb] = cell
                heapq.heappush(heap, (nd, nb))
    if not np.isfinite(dist[goal]):
        return None, np.inf
    path = [goal]
    while path[-1] != start:
        path.append(prev[path[-1]])
    path.reverse()
    return path, float(dist[goal])


def plan_2d_path(occ: Grid2, start, goal, method: str = "fmm") -> np.ndarray:
    """Route the root across the floor toward an oriented goal.

    goal is (p_g, d_g): position plus preferred heading.  Cost is 1 in
    the open, infinite inside obstacles, and dips to [0.5, 1.5] with the
    angle to d_g inside the approach cone.  The arrival field comes from
    fast marching with slowness equal to the cost (or, with
    method="bfs", plain breadth-first hop counts for debugging); the
    waypoint list descends it from the start and ends in the goal cell.
    """
    p_g, d_g = goal
    p_g = np.asarray(p_g, dtype=float).reshape(2)
    d_g = np.asarray(d_g, dtype=float).reshape(2)
    n = np.linalg.norm(d_g)
    if n == 0.0:
        raise ValueError("goal heading must be nonzero")
    d_g = d_g / n
    start_cell = occ.cell_of(start)
    goal_cell = occ.cell_of(p_g)
    for name, cell in (("start", start_cell), ("goal", goal_cell)):
        if not occ.in_bounds(cell):
            raise NavigationFailure(f"{name} lies outside the grid")
        if occ.values[cell]:
            raise NavigationFailure(f"{name} cell is occupied")
    cost = _cost_field(occ, p_g, d_g)
    if method == "fmm":
        arrival = _fmm_arrival(occ, cost, goal_cell)
    elif method == "bfs":
        arrival = _bfs_arrival(occ, goal_cell)
    else:
        raise ValueError(f"unknown method {method!r}")
    if not np.isfinite(arrival[start_cell]):
        raise NavigationFailure("goal unreachable from the start")
    cells = _descend(occ, cost, arrival, start_cell, goal_cell)
    return np.array([occ.center_of(c) for c in cells])


def _shifted(arr, di, dj, fill):
    out = np.full_like(arr, fill)
    src_i = slice(max(di, 0), arr.shape[0] + min(di, 0))
    dst_i = slice(max(-di, 0), arr.shape[0] + min(-di, 0))
    src_j = slice(max(dj, 0), arr.shape[1] + min(dj, 0))
    dst_j = slice(max(-dj, 0), arr.shape[1] + min(-dj, 0))
    out[dst_i, dst_j] = arr[src_i, src_j]
    return out


def _descend(occ, cost, arrival, start_cell, goal_cell):
    """Cheapest wavefront-consistent cell path from start to goal.

    An edge is admissible when it does not climb the arrival field by
    more than its own traversal cost, which keeps the trace pinned to
    the marching solution while still allowing the short counter-front
    hops an 8-connected optimum sometimes needs.  Cost-to-goal settles
    by sweeping relaxation to a fixed point; the walk then follows it.
    """
    h = occ.spacing
    edges = []
    for di, dj in _NEIGHBORS8:
        c_nb = _shifted(cost, di, dj, np.inf)
        a_nb = _shifted(arrival, di, dj, np.inf)
        w = 0.5 * (cost + c_nb) * np.hypot(di, dj) * h
        ok = np.isfinite(w) & (a_nb <= arrival + w + 1e-12)
        edges.append((di, dj, np.where(ok, w, np.inf)))
    best = np.full(occ.dims, np.inf)
    best[goal_cell] = 0.0
    for _ in range(4 * sum(occ.dims) + 8):
        prev = best
        cand = [best]
        for di, dj, w in edges:
            cand.append(_shifted(best, di, dj, np.inf) + w)
        best = np.min(cand, axis=0)
        best[goal_cell] = 0.0
        if np.array_equal(best, prev):
            break
    if not np.isfinite(best[start_cell]):
        raise NavigationFailure("descent stalled before the goal")
    cells = [start_cell]
    while cells[-1] != goal_cell:
        here = cells[-1]
        step = None
        for di, dj, w in edges:
            nb = (here[0] + di, here[1] + dj)
            if not occ.in_bounds(nb) or not np.isfinite(w[here]):
                continue
            total = best[nb] + w[here]
            if step is None or total < step[0]:
                step = (total, nb)
        if step is None or step[0] >= best[here] + 1e-9 \
                or len(cells) > best.size:
            raise NavigationFailure("descent stalled before the goal")
        cells.append(step[1])
    return cells


def _fmm_arrival(occ: Grid2, cost: np.ndarray, goal_cell) -> np.ndarray:
    speed = np.zeros(occ.dims)
    open_mask = np.isfinite(cost)
    speed[open_mask] = 1.0 / cost[open_mask]
    grid3 = ScalarGrid3(np.array([*occ.origin, 0.0]), occ.spacing,
                        speed[:, :, None])
    sol = fmm_solve(grid3, [((goal_cell[0], goal_cell[1], 0), 0.0)])
    return sol.values[:, :, 0]


def _bfs_arrival(occ: Grid2, goal_cell) -> np.ndarray:
    hops = np.full(occ.dims, np.inf)
    hops[goal_cell] = 0.0
    q = deque([goal_cell])
    while q:
        cell = q.popleft()
        for di, dj in _NEIGHBORS8:
            nb = (cell[0] + di, cell[1] + dj)
            if occ.in_bounds(nb) and not occ.values[nb] \
                    and not np.isfinite(hops[nb]):
                hops[nb] = hops[cell] + 1.0
                q.append(nb)
    return hops


# -- navigation segment matching ---------------------------------------------

def _heading_frame(p0, d0):
    """3D frame: origin on the floor at p0, x-axis along the 2D heading."""
    R = np.array([[d0[0], -d0[1], 0.0],
                  [d0[1], d0[0], 0.0],
                  [0.0, 0.0, 1.0]])
    t = np.array([p0[0], p0[1], 0.0])
    return R, t


def split_segments(path, max_len: float = SEGMENT_LENGTH):
    """Partition a waypoint polyline into runs of at most max_len meters."""
    path = np.asarray(path, dtype=float)
    if len(path) < 2:
        return [path]
    steps = np.linalg.norm(np.diff(path, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(steps)])
    total = arc[-1]
    n_seg = max(1, int(np.ceil(total / max_len - 1e-9)))
    bounds = [min(i * max_len, total) for i in range(n_seg + 1)]
    segments = []
    for s0, s1 in zip(bounds[:-1], bounds[1:]):
        keep = (arc >= s0 - 1e-12) & (arc <= s1 + 1e-12)
        pts = [_point_at(path, arc, s0)]
        pts.extend(path[keep & (arc > s0 + 1e-12) & (arc < s1 - 1e-12)])
        pts.append(_point_at(path, arc, s1))
        segments.append(np.asarray(pts))
    return segments


def _point_at(path, arc, s):
    i = int(np.searchsorted(arc, s, side="right") - 1)
    i = min(max(i, 0), len(path) - 2)
    span = arc[i + 1] - arc[i]
    w = 0.0 if span == 0.0 else (s - arc[i]) / span
    return path[i] + w * (path[i + 1] - path[i])


@dataclass
class CharacterPose:
    """World keyjoint transforms plus the 2D root velocity."""

    joints: dict                 # keyjoint -> (R, t)
    velocity: np.ndarray

    def __post_init__(self):
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(2)
        for j in KEYJOINTS:
            if j not in self.joints:
                raise ValueError(f"missing keyjoint {j!r}")


def nav_query(segment, pose: CharacterPose, sample_s: float) -> NavFeature:
    """The query feature for one goal sample along a segment."""
    seg = np.asarray(segment, dtype=float)
    steps = np.linalg.norm(np.diff(seg, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(steps)])
    d0 = _segment_heading(seg, arc, 0.0)
    R0, t0 = _heading_frame(seg[0], d0)
    p = _point_at(seg, arc, sample_s)
    d = _segment_heading(seg, arc, sample_s)
    joints = {}
    for j in KEYJOINTS:
        R, t = pose.joints[j]
        joints[j] = (rotation_to_6d(R0.T @ np.asarray(R)),
                     R0.T @ (np.asarray(t, dtype=float) - t0))
    return NavFeature(d_g=R0[:2, :2].T @ d, p_g=R0[:2, :2].T @ (p - seg[0]),
                      joints=joints, v=R0[:2, :2].T @ pose.velocity)


def _segment_heading(seg, arc, s):
    i = int(np.searchsorted(arc, min(s, arc[-1] - 1e-12), side="right") - 1)
    i = min(max(i, 0), len(seg) - 2)
    d = seg[i + 1] - seg[i]
    n = np.linalg.norm(d)
    if n == 0.0:
        return np.array([1.0, 0.0])
    return d / n


@dataclass
class NavMatch:
    """Per-path result: chained world goals plus unmatched segment ids."""

    goals: list
    unmatched: list
    segment_count: int


def match_navigation(db, path, pose: CharacterPose, scene: Scene | None = None,
                     samples: int = NAV_SAMPLES) -> NavMatch:
    """Assign walk snippets to path segments by feature deviation.

    db is a sequence of (NavFeature, KeyjointGoal sequence) pairs with
    goals expressed in the feature's root frame.  Every segment tries all
    (candidate, goal sample) pairs and keeps the lowest-deviation
    candidate whose transformed goals stay out of the scene solids; a
    segment with no admissible candidate is reported unmatched.
    """
    db = list(db)
    if not db:
        raise MatchFailure("empty navigation database")
    segments = split_segments(path)
    out = []
    unmatched = []
    t_base = 0.0
    for si, seg in enumerate(segments):
        steps = np.linalg.norm(np.diff(seg, axis=0), axis=1)
        length = float(steps.sum())
        svals = np.linspace(0.0, length, samples)
        best = None
        d0 = _segment_heading(seg, np.concatenate([[0.0], np.cumsum(steps)]),
                              0.0)
        R0, t0 = _heading_frame(seg[0], d0)
        for order, (feat, goals) in enumerate(db):
            cvec = feat.vector()
            for s in svals:
                dev = float(np.linalg.norm(nav_query(seg, pose, s).vector()
                                           - cvec))
                if best is not None and dev >= best[0]:
                    continue
                placed = [replace(g, pos=R0 @ g.pos + t0, rot=R0 @ g.rot,
                                  time=g.time + t_base) for g in goals]
                if scene is not None and _any_inside(scene, placed):
                    continue
                best = (dev, order, placed)
        if best is None:
            unmatched.append(si)
        else:
            out.extend(best[2])
            t_base = max([g.time for g in best[2]], default=t_base)
    return NavMatch(out, unmatched, len(segments))


def _any_inside(scene: Scene, goals) -> bool:
    for g in goals:
        for s in scene.solids:
            if float(s.signed_distance(g.pos)) < 0.0:
                return True
    return False


# -- bimanual scheduling -----------------------------------------------------

HANDS = ("left-hand", "right-hand")


def _transform_dev(Ra, ta, Rb, tb, body_width: float) -> float:
    return log_norm(np.asarray(Ra).T @ np.asarray(Rb)) / np.pi \
        + float(np.linalg.norm(np.asarray(ta, dtype=float)
                               - np.asarray(tb, dtype=float))) / body_width


def _dev_to_pose(cand, pose, body_width: float) -> float:
    total = 0.0
    for g in cand:
        R, t = pose[g.joint] if g.joint in pose else pose["hip"]
        total += _transform_dev(g.rot, g.pos, R, t, body_width)
    return total


def _dev_between(ca, cb, body_width: float) -> float:
    total = 0.0
    for ga, gb in zip(ca, cb):
        total += _transform_dev(ga.rot, ga.pos, gb.rot, gb.pos, body_width)
    return total


def schedule_cost(cand_target, cand_aux, pose,
                  body_width: float = BODY_WIDTH) -> float:
    """Deviation of the target-hand goals from the pose plus the weighted
    coupling between the two hands' goal sets."""
    return _dev_to_pose(cand_target, pose, body_width) \
        + COST_WEIGHT_PAIR * _dev_between(cand_target, cand_aux, body_width)


def _retime(goals, hand, start, spacing=1.0):
    out = []
    for i, g in enumerate(goals):
        out.append(replace(g, joint=hand, time=start + i * spacing))
    return out


def schedule_bimanual(target_matches, aux_matches, pose, free_hands,
                      body_width: float = BODY_WIDTH) -> Schedule:
    """Assign hands to the target and auxiliary tasks.

    target_matches and aux_matches map each hand to its candidate goal
    sets.  With one free hand both tasks run sequentially on it; with
    both free, every (hand assignment, candidate pair) is enumerated and
    the minimal deviation cost wins, ties preferring the co-temporal
    assignment and then the right hand on the target.
    """
    free = [h for h in HANDS if h in set(free_hands)]
    if not free:
        raise SchedulingFailure("no free hand; insert a put-down task first")
    if len(free) == 1:
        hand = free[0]
        c_t = _best_single(target_matches[hand], pose, body_width)
        c_a = _best_single(aux_matches[hand], pose, body_width)
        frames = [(g,) for g in _retime(c_a, hand, 0.0)]
        start = len(frames) * 1.0
        frames += [(g,) for g in _retime(c_t, hand, start)]
        return Schedule(frames, target_hand=hand, aux_hand=hand,
                        mode="sequential")
    best = None
    for i_d in HANDS:
        for i_g in HANDS:
            for cd in target_matches.get(i_d, ()):
                for cg in aux_matches.get(i_g, ()):
                    cost = schedule_cost(cd, cg, pose, body_width)
                    rank = (cost, 0 if i_d != i_g else 1,
                            0 if i_d == "right-hand" else 1)
                    if best is None or rank < best[0]:
                        best = (rank, i_d, i_g, cd, cg)
    if best is None:
        raise SchedulingFailure("no candidate pair to schedule")
    _, i_d, i_g, cd, cg = best
    cd = _retime(cd, i_d, 0.0)
    cg = _retime(cg, i_g, 0.0)
    if i_d != i_g:
        frames = []
        for k in range(max(len(cd), len(cg))):
            frame = []
            if k < len(cg):
                frame.append(cg[k])
            if k < len(cd):
                frame.append(cd[k])
            frames.append(tuple(frame))
        return Schedule(frames, target_hand=i_d, aux_hand=i_g,
                        mode="co-temporal")
    frames = [(g,) for g in cg] + [(g,) for g in
                                   _retime(cd, i_d, float(len(cg)))]
    return Schedule(frames, target_hand=i_d, aux_hand=i_g, mode="sequential")


def _best_single(cands, pose, body_width):
    cands = list(cands)
    if not cands:
        raise SchedulingFailure("empty candidate set for the free hand")
    costs = [_dev_to_pose(c, pose, body_width) for c in cands]
    return list(cands[int(np.argmin(costs))])


# -- goal collision resolution -----------------------------------------------

def resolve_goal_collision(goals, scene: Scene,
                           margin: float = PUSH_MARGIN,
                           max_rounds: int = MAX_PUSH_ROUNDS):
    """Push penetrating non-contact goals out of the solids.

    Each round moves a penetrating goal along the deepest solid's
    distance gradient by the penetration depth plus a 1 cm margin.
    Contact goals are never touched.  Goals still inside after the round
    budget come back flagged "unresolved".
    """
    out = []
    for g in goals:
        if g.contact:
            out.append(g)
            continue
        p = g.pos.copy()
        resolved = False
        for _ in range(max_rounds):
            depths = [float(s.signed_distance(p)) for s in scene.solids]
            worst = int(np.argmin(depths)) if depths else -1
            if worst < 0 or depths[worst] >= 0.0:
                resolved = True
                break
            solid = scene.solids[worst]
            n = solid.surface_normal(p)
            p = p + (-depths[worst] + margin) * n
        if not resolved and all(float(s.signed_distance(p)) >= 0.0
                                for s in scene.solids):
            resolved = True
        if resolved:
            out.append(replace(g, pos=p))
        else:
            out.append(replace(g, pos=p, flags=g.flags + ("unresolved",)))
    return out


# -- task state machine ------------------------------------------------------

IDLE = "idle"
NAVIGATE = "navigate"
OPEN_CONTAINER = "open-container"
REMOVE_OBSTACLE = "remove-obstacle"
APPROACH = "approach"
CARRY = "carry"
PLACE = "place"

STATES = (IDLE, NAVIGATE, OPEN_CONTAINER, REMOVE_OBSTACLE, APPROACH, CARRY,
          PLACE)

EV_CLICKED = "object-clicked"
EV_ARRIVED = "navigation-arrived"
EV_CONTACT = "contact-reached"
EV_RELEASE = "release-done"
EV_PLAN_FAILED = "plan-failed"

EVENTS = (EV_CLICKED, EV_ARRIVED, EV_CONTACT, EV_RELEASE, EV_PLAN_FAILED)


@dataclass(frozen=True)
class MachineState:
    """Immutable machine snapshot: current phase plus the pending queue."""

    phase: str = IDLE
    queue: tuple = ()
    target: str | None = None
    note: str = ""


def closed_containers(scene: Scene, threshold: float = 0.5):
    """Articulated solids whose joint sits below the open threshold."""
    out = []
    for s in scene.solids:
        art = s.articulation
        if art is None:
            continue
        lo, hi = art.get("range", (0.0, 1.0))
        span = hi - lo
        openness = 0.0 if span <= 0.0 else (art["value"] - lo) / span
        if openness < threshold:
            out.append(s.id)
    return out


def default_goals(phase: str, scene: Scene, target_id: str):
    """Plain geometric goal batches for each manipulation phase."""
    solid = scene.solid(target_id)
    eye = np.eye(3)
    above = solid.pos + np.array([0.0, 0.0, 0.15])
    if phase == NAVIGATE:
        return [KeyjointGoal("root-projection",
                             [solid.pos[0], solid.pos[1], 0.0], eye,
                             action="walk")]
    if phase in (OPEN_CONTAINER, REMOVE_OBSTACLE, APPROACH):
        return [KeyjointGoal("right-hand", solid.pos, eye, action="grasp",
                             contact=True)]
    if phase == CARRY:
        return [KeyjointGoal("right-hand", above, eye, action="carry")]
    if phase == PLACE:
        return [KeyjointGoal("right-hand", above, eye, action="place")]
    return []


def step_state_machine(state: MachineState, event: str, scene: Scene = None,
                       target_id: str = None, containers=(), blockers=(),
                       goal_source=default_goals):
    """Advance the task machine and emit the new phase's goal batch.

    On a click the pending queue is built: navigation first, then one
    open-container phase per closed container, one remove-obstacle cycle
    per blocking solid, then approach, carry, place.  A plan failure in
    any phase falls back to idle.  Events that do not apply to the
    current phase leave the machine unchanged.
    """
    if event not in EVENTS:
        raise ValueError(f"unknown event {event!r}")
    if event == EV_PLAN_FAILED:
        return MachineState(IDLE, (), None, note="plan failed"), []

    def emit(phase, tid):
        if scene is None or tid is None:
            return []
        return goal_source(phase, scene, tid)

    if state.phase == IDLE and event == EV_CLICKED:
        queue = []
        for cid in containers:
            queue.append((OPEN_CONTAINER, cid))
        for bid in blockers:
            queue.append((REMOVE_OBSTACLE, bid))
        queue.append((APPROACH, target_id))
        queue.append((CARRY, target_id))
        queue.append((PLACE, target_id))
        new = MachineState(NAVIGATE, tuple(queue), target_id)
        return new, emit(NAVIGATE, target_id)
    if state.phase == NAVIGATE and event == EV_ARRIVED:
        return _pop_queue(state, scene, goal_source)
    if state.phase in (OPEN_CONTAINER, REMOVE_OBSTACLE) \
            and event == EV_RELEASE:
        return _pop_queue(state, scene, goal_source)
    if state.phase == APPROACH and event == EV_CONTACT:
        return _pop_queue(state, scene, goal_source)
    if state.phase == CARRY and event == EV_ARRIVED:
        return _pop_queue(state, scene, goal_source)
    if state.phase == PLACE and event == EV_RELEASE:
        return MachineState(IDLE, (), None, note="task complete"), []
    return state, []


def _pop_queue(state: MachineState, scene, goal_source):
    if not state.queue:
        return MachineState(IDLE, (), None, note="queue exhausted"), []
    (phase, tid), rest = state.queue[0], state.queue[1:]
    new = MachineState(phase, rest, state.target)
    goals = [] if scene is None else goal_source(phase, scene, tid)
    return new, goals
