"""6-DoF hand trajectories: ordered frames plus a contact marker."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from toafield.fileio import atomic_write_text
from toafield.rotations import is_rotation


@dataclass
class Trajectory6:
    """Timestamped frames (t, p, R, tangent, speed) with a contact index.

    Times are strictly increasing, rotations proper (1e-6 tolerance),
    tangents unit length.  contact_index marks the frame where the hand
    touches (approach) or releases (leave) the object.
    """

    times: np.ndarray
    positions: np.ndarray
    rotations: np.ndarray
    tangents: np.ndarray
    speeds: np.ndarray
    contact_index: int

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).reshape(-1)
        n = len(self.times)
        self.positions = np.asarray(self.positions, dtype=float).reshape(n, 3)
        self.rotations = np.asarray(self.rotations, dtype=float).reshape(n, 3, 3)
        self.tangents = np.asarray(self.tangents, dtype=float).reshape(n, 3)
        self.speeds = np.asarray(self.speeds, dtype=float).reshape(n)
        self.contact_index = int(self.contact_index)
        if n == 0:
            raise ValueError("empty trajectory")
        if np.any(np.diff(self.times) <= 0.0):
            raise ValueError("timestamps must be strictly increasing")
        if not (0 <= self.contact_index < n):
            raise ValueError("contact_index out of range")
        if np.any(self.speeds < 0.0):
            raise ValueError("negative speed")
        norms = np.linalg.norm(self.tangents, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("tangents must be unit length")
        for R in self.rotations:
            if not is_rotation(R, tol=1e-6):
                raise ValueError("invalid rotation frame")

    def __len__(self):
        return len(self.times)

    @property
    def contact_position(self):
        return self.positions[self.contact_index]

    def reversed(self):
        """Same geometry walked the other way; timestamps re-accumulated."""
        dt = np.diff(self.times)[::-1]
        times = np.concatenate([[0.0], np.cumsum(dt)])
        return Trajectory6(
            times, self.positions[::-1].copy(), self.rotations[::-1].copy(),
            -self.tangents[::-1], self.speeds[::-1].copy(),
            len(self) - 1 - self.contact_index)


def path_tangents(positions):
    """Unit tangents by central differences, one-sided at the ends."""
    p = np.asarray(positions, dtype=float)
    n = len(p)
    if n == 1:
        return np.array([[1.0, 0.0, 0.0]])
    g = np.empty_like(p)
    g[0] = p[1] - p[0]
    g[-1] = p[-1] - p[-2]
    if n > 2:
        g[1:-1] = p[2:] - p[:-2]
    norms = np.linalg.norm(g, axis=1)
    # degenerate repeats inherit the previous direction
    for i in range(n):
        if norms[i] < 1e-12:
            g[i] = g[i - 1] if i > 0 else np.array([1.0, 0.0, 0.0])
            norms[i] = np.linalg.norm(g[i])
    return g / norms[:, None]


def resample_arclength(positions, ds):
    """Resample a polyline to uniform spacing ds, keeping both endpoints."""
    p = np.asarray(positions, dtype=float)
    seg = np.linalg.norm(np.diff(p, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    if total < 1e-12:
        return p[:1].copy()
    n = max(2, int(np.ceil(total / ds)) + 1)
    si = np.linspace(0.0, total, n)
    out = np.empty((n, 3))
    for k in range(3):
        out[:, k] = np.interp(si, s, p[:, k])
    return out


def trajectory_to_dict(traj: Trajectory6) -> dict:
    frames = []
    for i in range(len(traj)):
        frames.append({
            "t": float(traj.times[i]),
            "p": list(traj.positions[i]),
            "R": [float(x) for x in traj.rotations[i].ravel()],   # row-major
            "tangent": list(traj.tangents[i]),
            "speed": float(traj.speeds[i]),
        })
    return {"frames": frames, "contact_index": traj.contact_index}


def trajectory_from_dict(d: dict) -> Trajectory6:
    fr = d["frames"]
    n = len(fr)
    times = np.array([f["t"] for f in fr])
    pos = np.array([f["p"] for f in fr])
    rot = np.array([f["R"] for f in fr]).reshape(n, 3, 3)
    tan = np.array([f["tangent"] for f in fr])
    spd = np.array([f["speed"] for f in fr])
    return Trajectory6(times, pos, rot, tan, spd, d["contact_index"])


def save_trajectory(path, traj: Trajectory6, extra=None) -> None:
    d = trajectory_to_dict(traj)
    if extra:
        d.update(extra)
    atomic_write_text(path, json.dumps(d, sort_keys=True) + "\n")


def load_trajectory(path) -> Trajectory6:
    with open(path, "r", encoding="utf-8") as f:
        return trajectory_from_dict(json.load(f))
