"""Scenes made of primitive solids with exact distance queries.

Shapes are axis-aligned boxes, oriented boxes, spheres and vertical
cylinders (axis along local z).  Every solid carries a pose (position plus
unit quaternion), full-extent dims, a role tag and an optional articulation
for doors and drawers.  Distances are exact signed distances evaluated in
the solid's local frame; the unsigned query clamps interiors to zero and
counts points exactly on a surface as inside.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from toafield.fileio import atomic_write_text
from toafield.grid import ScalarGrid3, grid_shape
from toafield.rotations import quat_to_matrix, rotation_about_axis

SHAPES = ("aabox", "box", "sphere", "cylinder")
ROLES = ("target", "obstacle", "container-shell", "door", "drawer")
_QUAT_TOL = 1e-9


@dataclass
class Solid:
    """One primitive solid.

    dims is full extents for boxes, [radius] for spheres and
    [radius, height] for cylinders.  The articulation mapping, when present,
    holds kind ("hinge" or "prismatic"), a local axis, a value range and the
    current value; hinges rotate about an axis through the pose position,
    prismatic joints slide along the axis.
    """

    id: str
    shape: str
    pos: np.ndarray
    quat: np.ndarray
    dims: np.ndarray
    role: str = "obstacle"
    articulation: dict | None = None

    def __post_init__(self):
        self.pos = np.asarray(self.pos, dtype=float).reshape(3)
        self.quat = np.asarray(self.quat, dtype=float).reshape(4)
        self.dims = np.atleast_1d(np.asarray(self.dims, dtype=float))
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape tag {self.shape!r}")
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if abs(np.linalg.norm(self.quat) - 1.0) > _QUAT_TOL:
            raise ValueError(f"solid {self.id}: quaternion is not unit length")
        need = {"aabox": 3, "box": 3, "sphere": 1, "cylinder": 2}[self.shape]
        if self.dims.shape != (need,):
            raise ValueError(f"solid {self.id}: {self.shape} needs {need} dims")
        if np.any(self.dims <= 0.0):
            raise ValueError(f"solid {self.id}: non-positive dimensions")
        if self.articulation is not None:
            a = self.articulation
            if a.get("kind") not in ("hinge", "prismatic"):
                raise ValueError(f"solid {self.id}: bad articulation kind")
            if self.role not in ("door", "drawer"):
                raise ValueError("articulation is only valid on doors and drawers")
            a.setdefault("value", float(a.get("range", (0.0, 0.0))[0]))

    # -- posed frame ---------------------------------------------------------

    def frame(self):
        """Effective (R, t) after applying the articulation value, if any.

        Hinges rotate about an axis through the pose position; the optional
        local "arm" offset carries the geometry center away from the hinge
        line, so an edge-hinged panel is pos=hinge, arm=hinge-to-center.
        """
        R = quat_to_matrix(self.quat)
        t = self.pos
        if self.articulation is not None:
            a = self.articulation
            axis = np.asarray(a["axis"], dtype=float)
            v = float(a.get("value", 0.0))
            if a["kind"] == "hinge":
                R = R @ rotation_about_axis(axis, v)
                arm = a.get("arm")
                if arm is not None:
                    t = t + R @ np.asarray(arm, dtype=float)
            else:
                t = t + R @ (axis / np.linalg.norm(axis) * v)
        return R, t

    def to_local(self, pts):
        R, t = self.frame()
        return (np.asarray(pts, dtype=float) - t) @ R

    def signed_distance(self, pts):
        """Exact signed distance, negative inside. pts is (..., 3)."""
        q = self.to_local(pts)
        if self.shape in ("aabox", "box"):
            d = np.abs(q) - self.dims / 2.0
            outside = np.linalg.norm(np.maximum(d, 0.0), axis=-1)
            inside = np.minimum(np.max(d, axis=-1), 0.0)
            return outside + inside
        if self.shape == "sphere":
            return np.linalg.norm(q, axis=-1) - self.dims[0]
        # vertical cylinder
        r, hgt = self.dims
        dr = np.hypot(q[..., 0], q[..., 1]) - r
        dz = np.abs(q[..., 2]) - hgt / 2.0
        outside = np.hypot(np.maximum(dr, 0.0), np.maximum(dz, 0.0))
        inside = np.minimum(np.maximum(dr, dz), 0.0)
        return outside + inside

    def contains(self, pts):
        """Surface points count as inside."""
        return self.signed_distance(pts) <= 0.0

    def surface_normal(self, p, eps=1e-6):
        """Outward normal by central differences of the signed distance."""
        g = np.empty(3)
        for k in range(3):
            d = np.zeros(3)
            d[k] = eps
            g[k] = self.signed_distance(p + d) - self.signed_distance(p - d)
        n = np.linalg.norm(g)
        if n < 1e-12:
            return np.array([0.0, 0.0, 1.0])
        return g / n

    def closest_surface_point(self, p):
        """Project p onto the solid surface (works from either side)."""
        p = np.asarray(p, dtype=float)
        x = p.copy()
        for _ in range(3):
            sd = float(self.signed_distance(x))
            x = x - sd * self.surface_normal(x)
        return x

    def surface_points(self, n=200):
        """Deterministic quasi-uniform surface samples for audits."""
        u = (np.arange(n) + 0.5) / n
        v = (u * 0.7548776662466927) % 1.0         # low-discrepancy pairing
        if self.shape == "sphere":
            r = self.dims[0]
            z = 1.0 - 2.0 * u
            th = 2.0 * np.pi * v
            s = np.sqrt(np.maximum(0.0, 1.0 - z * z))
            local = np.stack([r * s * np.cos(th), r * s * np.sin(th), r * z], -1)
        elif self.shape == "cylinder":
            r, hgt = self.dims
            a_side = 2 * np.pi * r * hgt
            a_cap = np.pi * r * r
            total = a_side + 2 * a_cap
            local = np.empty((n, 3))
            for i in range(n):
                pick = u[i] * total
                th = 2 * np.pi * v[i]
                if pick < a_side:
                    z = (pick / a_side - 0.5) * hgt
                    local[i] = (r * np.cos(th), r * np.sin(th), z)
                else:
                    rr = r * np.sqrt((pick - a_side) % a_cap / a_cap)
                    z = hgt / 2.0 if pick < a_side + a_cap else -hgt / 2.0
                    local[i] = (rr * np.cos(th), rr * np.sin(th), z)
        else:
            hx, hy, hz = self.dims / 2.0
            areas = np.array([hy * hz, hy * hz, hx * hz, hx * hz, hx * hy, hx * hy])
            areas = areas / areas.sum()
            cum = np.cumsum(areas)
            local = np.empty((n, 3))
            w = (u * 2.654435761) % 1.0
            for i in range(n):
                f = int(np.searchsorted(cum, u[i] * 0.999999))
                a = 2.0 * v[i] - 1.0
                b = 2.0 * w[i] - 1.0
                if f < 2:
                    local[i] = ((1 if f == 0 else -1) * hx, a * hy, b * hz)
                elif f < 4:
                    local[i] = (a * hx, (1 if f == 2 else -1) * hy, b * hz)
                else:
                    local[i] = (a * hx, b * hy, (1 if f == 4 else -1) * hz)
        R, t = self.frame()
        return local @ R.T + t


@dataclass
class Scene:
    """An axis-aligned working region plus a list of solids."""

    bounds_lo: np.ndarray
    bounds_hi: np.ndarray
    solids: list = field(default_factory=list)

    def __post_init__(self):
        self.bounds_lo = np.asarray(self.bounds_lo, dtype=float).reshape(3)
        self.bounds_hi = np.asarray(self.bounds_hi, dtype=float).reshape(3)
        if np.any(self.bounds_hi <= self.bounds_lo):
            raise ValueError("degenerate scene bounds")
        ids = [s.id for s in self.solids]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate solid ids")

    def solid(self, sid) -> Solid:
        for s in self.solids:
            if s.id == sid:
                return s
        raise KeyError(sid)

    def target(self) -> Solid:
        for s in self.solids:
            if s.role == "target":
                return s
        raise ValueError("scene has no target solid")

    def obstacles(self):
        """Everything that is not the reach target."""
        return [s for s in self.solids if s.role != "target"]

    def unsigned_distance(self, pts, solids=None):
        """Min over solids of the exact surface distance, 0 inside.

        pts is (..., 3); an empty solid list yields +inf everywhere.
        """
        if solids is None:
            solids = self.solids
        pts = np.asarray(pts, dtype=float)
        out = np.full(pts.shape[:-1], np.inf)
        for s in solids:
            np.minimum(out, np.maximum(s.signed_distance(pts), 0.0), out=out)
        return out

    def occupancy(self, h, solids=None, lo=None, hi=None):
        """Boolean cell-center occupancy grid over the bounds (or lo/hi)."""
        lo = self.bounds_lo if lo is None else np.asarray(lo, dtype=float)
        hi = self.bounds_hi if hi is None else np.asarray(hi, dtype=float)
        dims = grid_shape(lo, hi, h)
        g = ScalarGrid3(lo, h, np.zeros(dims, dtype=bool))
        pts = g.centers()
        occ = np.zeros(dims, dtype=bool)
        for s in (self.solids if solids is None else solids):
            occ |= s.contains(pts)
        g.values = occ
        return g

    def with_articulation(self, sid, value):
        """Copy of the scene with one articulation value replaced."""
        out = []
        for s in self.solids:
            if s.id == sid:
                if s.articulation is None:
                    raise ValueError(f"solid {sid} is not articulated")
                art = dict(s.articulation)
                art["value"] = float(value)
                s = Solid(s.id, s.shape, s.pos.copy(), s.quat.copy(),
                          s.dims.copy(), s.role, art)
            out.append(s)
        return Scene(self.bounds_lo.copy(), self.bounds_hi.copy(), out)


# -- JSON round trip ---------------------------------------------------------

def voxelize(scene: Scene, lo, hi, h) -> ScalarGrid3:
    """Occupancy over an explicit region; convenience over Scene.occupancy."""
    return scene.occupancy(h, lo=lo, hi=hi)


def scene_to_dict(scene: Scene) -> dict:
    solids = []
    for s in scene.solids:
        rec = {
            "id": s.id,
            "shape": s.shape,
            "pose": {"pos": list(s.pos), "quat": list(s.quat)},
            "dims": list(s.dims),
            "role": s.role,
        }
        if s.articulation is not None:
            a = s.articulation
            rec["articulation"] = {
                "kind": a["kind"],
                "axis": list(np.asarray(a["axis"], dtype=float)),
                "range": list(np.asarray(a["range"], dtype=float)),
                "value": float(a.get("value", 0.0)),
            }
            if a.get("arm") is not None:
                rec["articulation"]["arm"] = list(
                    np.asarray(a["arm"], dtype=float))
        solids.append(rec)
    return {"bounds": {"lo": list(scene.bounds_lo), "hi": list(scene.bounds_hi)},
            "solids": solids}


def scene_from_dict(d: dict) -> Scene:
    solids = []
    for rec in d["solids"]:
        art = None
        if "articulation" in rec and rec["articulation"] is not None:
            a = rec["articulation"]
            art = {"kind": a["kind"], "axis": list(a["axis"]),
                   "range": list(a["range"]), "value": float(a.get("value", 0.0))}
            if a.get("arm") is not None:
                art["arm"] = list(a["arm"])
        solids.append(Solid(rec["id"], rec["shape"],
                            rec["pose"]["pos"], rec["pose"]["quat"],
                            rec["dims"], rec.get("role", "obstacle"), art))
    return Scene(d["bounds"]["lo"], d["bounds"]["hi"], solids)


def save_scene(path, scene: Scene, extra=None) -> None:
    d = scene_to_dict(scene)
    if extra:
        d.update(extra)
    atomic_write_text(path, json.dumps(d, sort_keys=True, indent=1) + "\n")


def load_scene(path) -> Scene:
    with open(path, "r", encoding="utf-8") as f:
        return scene_from_dict(json.load(f))
