"""Trajectory extraction from a time-of-arrival field.

The pipeline: pick a start cell trading arrival value against walking
distance, descend the interpolated field to the contact, dress the path
with orientations carried over from the prior demonstration, blend the
approach tail onto the prior so the contact frame is met exactly, and
audit the result against the scene.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from toafield.errors import PlanningFailure
from toafield.fields import EPS_T, FieldTriple, phi_from_toa
from toafield.grid import ScalarGrid3, trilinear
from toafield.rotations import polar_orthonormalize, rotation_between, slerp
from toafield.scene import Scene
from toafield.trajectory import Trajectory6, path_tangents

SPEED_CLAMP = (0.02, 2.0)
DEFAULT_VBAR = 1.0
DEFAULT_BLEND = 6


def select_start(phi: ScalarGrid3, wrist, v_bar: float = DEFAULT_VBAR):
    """Start position minimizing -phi(x) + d(x, wrist) / v_bar.

    Ties fall to the smaller wrist distance, then the lower flat cell
    index.  v_bar may be +inf, which reduces the cost to -phi.
    """
    if not (v_bar > 0.0):
        raise ValueError("v_bar must be positive")
    vals = phi.values.ravel()
    finite = np.isfinite(vals)
    if not finite.any():
        raise PlanningFailure("arrival field has no finite cell")
    centers = phi.centers().reshape(-1, 3)[finite]
    dist = np.linalg.norm(centers - np.asarray(wrist, dtype=float), axis=1)
    if np.isinf(v_bar):
        cost = -vals[finite]
    else:
        cost = -vals[finite] + dist / v_bar
    flat = np.flatnonzero(finite)
    best = np.lexsort((flat, dist, cost))[0]
    return centers[best]


def _interp_values(phi: ScalarGrid3):
    """phi with +inf replaced by a large finite ceiling, for interpolation."""
    v = phi.values
    finite = np.isfinite(v)
    if finite.all():
        return phi, np.inf
    big = 2.0 * v[finite].max() + 10.0
    return phi.like(np.where(finite, v, big)), big


def _gradient(interp: ScalarGrid3, x, eps):
    g = np.empty(3)
    for k in range(3):
        d = np.zeros(3)
        d[k] = eps
        g[k] = (trilinear(interp, x + d) - trilinear(interp, x - d)) / (2 * eps)
    return g


def integrate_path(phi: ScalarGrid3, x_s, step: float = None,
                   hadamard_literal: bool = False):
    """Gradient descent on the interpolated arrival field.

    Returns the (n, 3) positional path ending at the sink.  Direction is
    -grad/|grad|; the travel speed 1/|grad| only matters for timestamps and
    is recovered separately (speeds_along).  The literal flag instead forms
    the velocity as a component-wise reciprocal of the gradient, kept for
    comparison; zero components are dropped and large ones clamped.
    """
    if step is None:
        step = phi.spacing / 2.0
    if not (step > 0.0):
        raise ValueError("step must be positive")
    x = np.asarray(x_s, dtype=float).copy()
    cell = phi.index_of(x)
    if not phi.in_bounds(cell) or not np.isfinite(phi.values[tuple(cell)]):
        raise PlanningFailure("start cell has no finite arrival value",
                              last_position=x.copy())
    interp, big = _interp_values(phi)
    eps = phi.spacing / 4.0
    diag = np.linalg.norm(np.array(phi.dims) * phi.spacing)
    max_steps = int(10.0 * diag / step)
    path = [x.copy()]
    for _ in range(max_steps):
        if trilinear(interp, x) < 2.0 * EPS_T:
            break
        g = _gradient(interp, x, eps)
        gn = np.linalg.norm(g)
        if gn < 1e-9:
            raise PlanningFailure("stagnated on a flat arrival region",
                                  last_position=x.copy())
        if hadamard_literal:
            v = np.zeros(3)
            nz = np.abs(g) > 1e-12
            v[nz] = -1.0 / g[nz]
            v = np.clip(v, -SPEED_CLAMP[1], SPEED_CLAMP[1])
            if np.linalg.norm(v) < 1e-12:
                raise PlanningFailure("degenerate literal velocity",
                                      last_position=x.copy())
            direction = v / np.linalg.norm(v)
        else:
            direction = -g / gn
        # never step into an impassable cell; shrink if needed
        advance = step
        moved = False
        for _ in range(6):
            cand = x + direction * advance
            ccell = phi.index_of(cand)
            if phi.in_bounds(ccell) and np.isfinite(phi.values[tuple(ccell)]) \
                    and trilinear(interp, cand) < big:
                x = cand
                moved = True
                break
            advance /= 2.0
        if not moved:
            raise PlanningFailure("blocked against an impassable region",
                                  last_position=x.copy())
        path.append(x.copy())
    return np.asarray(path)


def speeds_along(phi: ScalarGrid3, path):
    """Field speed 1/|grad phi| at each sample, clamped to the hand range."""
    interp, _ = _interp_values(phi)
    eps = phi.spacing / 4.0
    out = np.empty(len(path))
    for i, p in enumerate(path):
        gn = np.linalg.norm(_gradient(interp, p, eps))
        out[i] = np.clip(1.0 / max(gn, 1e-12), *SPEED_CLAMP)
    return out


def _paired_prior_indices(n: int, new_contact: int, prior: Trajectory6):
    """Contact-synchronized pairing, clamped to the prior's range."""
    idx = prior.contact_index + (np.arange(n) - new_contact)
    return np.clip(idx, 0, len(prior) - 1)


def transfer_orientation(prior: Trajectory6, path,
                         literal_columns: bool = False) -> Trajectory6:
    """Carry the prior's orientations onto a new positional path.

    Default reading: the relative rotation taking the paired prior tangent
    onto the new tangent is applied to the whole prior frame, so identical
    tangents reproduce the prior rotations.  The literal flag instead
    rebuilds each column by rotating the new tangent through that column's
    offset from the prior tangent.
    """
    path = np.asarray(path, dtype=float)
    if len(path) < 2 or len(prior) < 2:
        raise ValueError("prior and path each need at least 2 samples")
    n = len(path)
    contact = n - 1
    paired = _paired_prior_indices(n, contact, prior)
    tangents = path_tangents(path)
    rotations = np.empty((n, 3, 3))
    for i in range(n):
        Rp = prior.rotations[paired[i]]
        tp = prior.tangents[paired[i]]
        tn = tangents[i]
        if literal_columns:
            cols = np.empty((3, 3))
            for j in range(3):
                cols[:, j] = rotation_between(tp, Rp[:, j]) @ tn
            R = cols
        else:
            R = rotation_between(tp, tn) @ Rp
        rotations[i] = polar_orthonormalize(R)
    # the touching frame keeps the prior's rotation as-is
    rotations[contact] = prior.rotations[prior.contact_index]
    speeds = prior.speeds[paired]
    seg = np.linalg.norm(np.diff(path, axis=0), axis=1)
    seg = np.maximum(seg, 1e-9)
    mid = 0.5 * (speeds[:-1] + speeds[1:])
    times = np.concatenate([[0.0], np.cumsum(seg / mid)])
    return Trajectory6(times, path, rotations, tangents, speeds, contact)


def blend_to_prior(traj: Trajectory6, prior: Trajectory6,
                   n_blend: int = DEFAULT_BLEND) -> Trajectory6:
    """Ease the approach tail onto the prior; contact frame becomes exact."""
    n_blend = int(n_blend)
    if not (1 <= n_blend <= min(len(traj), len(prior))):
        raise ValueError("n_blend out of range")
    n = len(traj)
    contact = traj.contact_index
    paired = _paired_prior_indices(n, contact, prior)
    positions = traj.positions.copy()
    rotations = traj.rotations.copy()
    speeds = traj.speeds.copy()
    first = contact - n_blend + 1
    for k in range(n_blend):
        i = first + k
        w = (k + 1) / n_blend
        j = paired[i]
        positions[i] = (1 - w) * positions[i] + w * prior.positions[j]
        rotations[i] = slerp(rotations[i], prior.rotations[j], w)
        speeds[i] = (1 - w) * speeds[i] + w * prior.speeds[j]
    positions[contact] = prior.contact_position
    rotations[contact] = prior.rotations[prior.contact_index]
    return Trajectory6(traj.times.copy(), positions,
                       rotations, path_tangents(positions), speeds, contact)


@dataclass
class CollisionReport:
    collision_free: bool
    min_distance: float
    offending_index: int | None = None


def audit_collision(traj: Trajectory6, scene: Scene,
                    clearance: float = 0.0) -> CollisionReport:
    """Min clearance of the hand path against everything but the target.

    Frames after the contact carry the target solid rigidly attached, so
    carry-away segments are tested with the object in hand.
    """
    target = scene.target()
    others = [s for s in scene.solids if s.id != target.id]
    if not others:
        return CollisionReport(True, np.inf)
    worst = np.inf
    worst_i = None
    attach = target.surface_points(64)
    Rc = traj.rotations[traj.contact_index]
    pc = traj.positions[traj.contact_index]
    local = (attach - pc) @ Rc            # rows: attach points in hand frame
    for i in range(len(traj)):
        d = float(scene.unsigned_distance(traj.positions[i], others))
        if i > traj.contact_index:
            carried = local @ traj.rotations[i].T + traj.positions[i]
            d = min(d, float(np.min(scene.unsigned_distance(carried, others))))
        if d < worst:
            worst = d
            worst_i = i
    free = worst > clearance
    return CollisionReport(free, worst, None if free else worst_i)


def plan_reach(fields: FieldTriple, prior: Trajectory6, wrist,
               v_bar: float = DEFAULT_VBAR, n_blend: int = DEFAULT_BLEND,
               segment: str = "approach", step: float = None) -> Trajectory6:
    """Field planning end to end: start, descend, orient, blend.

    segment "leave" plans the same approach geometry and reverses the
    frame order, putting the contact at index 0.
    """
    if segment not in ("approach", "leave"):
        raise ValueError(f"unknown segment {segment!r}")
    phi = phi_from_toa(fields.d_toa)
    start = select_start(phi, wrist, v_bar)
    path = integrate_path(phi, start, step=step)
    if len(path) < 2:
        path = np.vstack([path, path[-1] + [0.0, 0.0, 1e-6]])
    oriented = transfer_orientation(prior, path)
    speeds = speeds_along(phi, path)
    seg = np.maximum(np.linalg.norm(np.diff(path, axis=0), axis=1), 1e-9)
    mid = 0.5 * (speeds[:-1] + speeds[1:])
    times = np.concatenate([[0.0], np.cumsum(seg / mid)])
    traj = Trajectory6(times, path, oriented.rotations, oriented.tangents,
                       speeds, oriented.contact_index)
    blended = blend_to_prior(traj, prior, n_blend)
    return blended.reversed() if segment == "leave" else blended
