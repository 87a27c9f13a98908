"""Trajectory quality metrics and the batch planning benchmark.

Unsmoothness is the mean second-difference acceleration magnitude of the
hand path; RMSC is the root mean square of the discrete three-point
curvature.  The benchmark runs a pluggable planner over a seed range and
aggregates success, safety clearance near the contact, and both path
metrics into a serializable report.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from toafield.errors import FAILURES
from toafield.planner import audit_collision
from toafield.trajectory import Trajectory6

NEAR_CONTACT_WINDOW = 0.2    # m, frames this close to the contact count
CONTACT_TOL = 0.025          # m, how near the target the contact must land
M_TO_CM = 100.0


def unsmoothness(traj: Trajectory6) -> float:
    """Mean second-difference acceleration magnitude in cm/s^2.

    Interior frames only; irregular timestamps use the matching
    non-uniform stencil, which reduces to (p_prev - 2p + p_next)/dt^2
    on an even grid.
    """
    p = traj.positions
    t = traj.times
    if len(p) < 3:
        raise ValueError("unsmoothness needs at least 3 frames")
    dt0 = (t[1:-1] - t[:-2])[:, None]
    dt1 = (t[2:] - t[1:-1])[:, None]
    acc = 2.0 * (dt1 * p[:-2] - (dt0 + dt1) * p[1:-1] + dt0 * p[2:]) \
        / (dt0 * dt1 * (dt0 + dt1))
    return float(np.linalg.norm(acc, axis=1).mean()) * M_TO_CM


def rms_curvature(traj: Trajectory6) -> float:
    """Root mean square of the circumscribed-circle curvature in 1/cm.

    Zero-length segments are collapsed first; endpoints carry no
    curvature under the three-point formula and are excluded.
    """
    p = traj.positions
    keep = np.concatenate([[True],
                           np.linalg.norm(np.diff(p, axis=0), axis=1) > 0.0])
    p = p[keep]
    if len(p) < 3:
        raise ValueError("every segment of the trajectory is degenerate")
    a = p[1:-1] - p[:-2]
    b = p[2:] - p[1:-1]
    c = p[2:] - p[:-2]
    area = 0.5 * np.linalg.norm(np.cross(a, b), axis=1)
    sides = (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
             * np.linalg.norm(c, axis=1))
    kappa = 4.0 * area / sides
    return float(np.sqrt(np.mean(kappa ** 2))) / M_TO_CM


@dataclass
class BenchRecord:
    """One scene's outcome; metric fields are NaN when unavailable."""

    scene_id: str
    success: bool
    unsmoothness: float = float("nan")
    safety: float = float("nan")
    rmsc: float = float("nan")
    note: str = ""


@dataclass
class BenchReport:
    """Per-scene records plus the documented aggregates.

    Safety averages only over successful collision-free cases; the path
    metrics likewise come from successful plans, since failures carry no
    trajectory.
    """

    records: list = field(default_factory=list)
    success_rate: float = 0.0
    mean_unsmoothness: float = float("nan")
    mean_safety: float = float("nan")
    mean_rmsc: float = float("nan")

    def to_json(self) -> str:
        return json.dumps({
            "records": [asdict(r) for r in self.records],
            "success_rate": self.success_rate,
            "mean_unsmoothness": self.mean_unsmoothness,
            "mean_safety": self.mean_safety,
            "mean_rmsc": self.mean_rmsc,
        }, indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["scene_id", "success", "unsmoothness", "safety",
                         "rmsc", "note"])
        for r in self.records:
            writer.writerow([r.scene_id, int(r.success),
                             repr(r.unsmoothness), repr(r.safety),
                             repr(r.rmsc), r.note])
        return buf.getvalue()


def safety_distance(traj: Trajectory6, scene,
                    window: float = NEAR_CONTACT_WINDOW) -> float:
    """Mean clearance to the nearest non-target solid, in cm, over the
    frames within `window` of the contact position."""
    target = scene.target()
    others = [s for s in scene.solids if s.id != target.id]
    contact = traj.positions[traj.contact_index]
    near = np.linalg.norm(traj.positions - contact, axis=1) <= window
    pts = traj.positions[near]
    if not others or len(pts) == 0:
        return float("nan")
    d = scene.unsigned_distance(pts, others)
    return float(np.mean(d)) * M_TO_CM


def benchmark(seeds, planner, window: float = NEAR_CONTACT_WINDOW,
              contact_tol: float = CONTACT_TOL) -> BenchReport:
    """Run `planner(seed) -> (scene, Trajectory6)` over every seed.

    A case succeeds when the collision audit passes and the contact
    frame lands within contact_tol of the target surface.  Planner
    domain failures are recorded, not raised.
    """
    records = []
    for seed in seeds:
        sid = f"seed-{seed}"
        try:
            scene, traj = planner(seed)
        except FAILURES as exc:
            records.append(BenchRecord(sid, False, note=str(exc)))
            continue
        report = audit_collision(traj, scene)
        contact_gap = abs(float(scene.target().signed_distance(
            traj.positions[traj.contact_index])))
        success = report.collision_free and contact_gap <= contact_tol
        note = "" if success else \
            ("collision" if not report.collision_free else "contact missed")
        rec = BenchRecord(sid, success, note=note)
        if success:
            rec.safety = safety_distance(traj, scene, window)
            try:
                rec.unsmoothness = unsmoothness(traj)
                rec.rmsc = rms_curvature(traj)
            except ValueError:
                pass
        records.append(rec)
    report = BenchReport(records)
    n = len(records)
    wins = [r for r in records if r.success]
    report.success_rate = 100.0 * len(wins) / n if n else 0.0
    for name in ("unsmoothness", "safety", "rmsc"):
        vals = [getattr(r, name) for r in wins
                if np.isfinite(getattr(r, name))]
        setattr(report, f"mean_{name}",
                float(np.mean(vals)) if vals else float("nan"))
    return report
