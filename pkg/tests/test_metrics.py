"""Path metrics against closed-form oracles.

Circle and helix curvatures come from the analytic formulas (1/r and
r/(r^2+c^2)); circular-motion acceleration from the centripetal identity
r*omega^2; irregular-sampling behavior is cross-checked by sampling the
same smooth curve on a uniform grid.
"""

import json

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from toafield.errors import PlanningFailure
from toafield.metrics import (
    BenchRecord,
    BenchReport,
    benchmark,
    rms_curvature,
    safety_distance,
    unsmoothness,
)
from toafield.scene import Scene, Solid
from toafield.trajectory import Trajectory6

QUAT_ID = [1.0, 0.0, 0.0, 0.0]


def make_traj(times, positions, contact=None):
    n = len(times)
    return Trajectory6(
        times=np.asarray(times, float),
        positions=np.asarray(positions, float),
        rotations=np.broadcast_to(np.eye(3), (n, 3, 3)).copy(),
        tangents=np.tile([1.0, 0.0, 0.0], (n, 1)),
        speeds=np.ones(n),
        contact_index=n - 1 if contact is None else contact,
    )


def circle_traj(r, omega, dt, turns=1.0, z=0.0):
    t = np.arange(0.0, 2.0 * np.pi * turns / omega, dt)
    p = np.stack([r * np.cos(omega * t), r * np.sin(omega * t),
                  np.full_like(t, z)], axis=1)
    return make_traj(t, p)


# -- unsmoothness ------------------------------------------------------------

def test_constant_velocity_line_is_perfectly_smooth():
    t = np.linspace(0.0, 2.0, 50)
    p = np.outer(t, [0.3, -0.1, 0.2]) + [1.0, 2.0, 0.5]
    assert unsmoothness(make_traj(t, p)) < 1e-9


def test_uniform_circular_motion_matches_centripetal_acceleration():
    r, omega = 0.4, 2.0
    got = unsmoothness(circle_traj(r, omega, dt=0.05))
    want = r * omega ** 2 * 100.0
    assert abs(got - want) / want < 0.01


def test_irregular_sampling_matches_uniform_oracle():
    rng = np.random.default_rng(8)

    def curve(t):
        return np.stack([np.sin(t), np.cos(2.0 * t), 0.1 * t ** 2], axis=-1)

    t_u = np.linspace(0.0, 3.0, 400)
    t_j = t_u[1:-1] + rng.uniform(-0.3, 0.3) * (t_u[1] - t_u[0])
    t_j = np.sort(np.concatenate([[t_u[0]], t_j, [t_u[-1]]]))
    uniform = unsmoothness(make_traj(t_u, curve(t_u)))
    jittered = unsmoothness(make_traj(t_j, curve(t_j)))
    assert abs(jittered - uniform) / uniform < 0.02


def test_unsmoothness_needs_three_frames():
    with pytest.raises(ValueError):
        unsmoothness(make_traj([0.0, 1.0], [[0, 0, 0], [1, 0, 0]]))


def test_unsmoothness_scales_inverse_square_with_time():
    t = np.linspace(0.0, 2.0, 80)
    p = np.stack([np.sin(t), t, np.zeros_like(t)], axis=1)
    base = unsmoothness(make_traj(t, p))
    s = 3.7
    scaled = unsmoothness(make_traj(s * t, p))
    assert abs(scaled - base / s ** 2) / (base / s ** 2) < 1e-6


def test_metrics_invariant_under_rigid_motion():
    t = np.linspace(0.0, 2.0, 60)
    p = np.stack([np.sin(t), np.cos(3.0 * t), 0.2 * t], axis=1)
    R = Rotation.from_rotvec([0.3, -1.1, 0.7]).as_matrix()
    moved = p @ R.T + np.array([5.0, -2.0, 1.0])
    assert abs(unsmoothness(make_traj(t, p))
               - unsmoothness(make_traj(t, moved))) < 1e-9
    assert abs(rms_curvature(make_traj(t, p))
               - rms_curvature(make_traj(t, moved))) < 1e-12


# -- curvature ---------------------------------------------------------------

def test_straight_line_has_zero_curvature():
    t = np.linspace(0.0, 1.0, 30)
    p = np.outer(t, [1.0, 1.0, 0.0])
    assert rms_curvature(make_traj(t, p)) == 0.0


def test_circle_half_meter_curvature():
    # three points of an exact circle reproduce its circumradius exactly
    got = rms_curvature(circle_traj(0.5, 1.0, dt=0.1))
    assert abs(got - 0.02) / 0.02 < 0.01


def test_helix_matches_analytic_curvature():
    r, c = 0.3, 0.2
    theta = np.arange(0.0, 4.0 * np.pi, 0.05)
    p = np.stack([r * np.cos(theta), r * np.sin(theta), c * theta], axis=1)
    got = rms_curvature(make_traj(theta, p))
    want = r / (r ** 2 + c ** 2) / 100.0
    assert abs(got - want) / want < 0.02


def test_degenerate_segments_are_dropped():
    t = np.linspace(0.0, 1.0, 9)
    circ = circle_traj(0.5, 1.0, dt=0.1)
    p = circ.positions[:5]
    doubled = np.repeat(p, 2, axis=0)[:9]
    got = rms_curvature(make_traj(t, doubled))
    want = rms_curvature(make_traj(np.linspace(0, 1, 5), p))
    assert abs(got - want) < 1e-12
    with pytest.raises(ValueError):
        rms_curvature(make_traj(t, np.tile([1.0, 2.0, 3.0], (9, 1))))


# -- benchmark ---------------------------------------------------------------

def open_scene():
    target = Solid("tgt", "sphere", [1.0, 0.0, 1.0], QUAT_ID, [0.05],
                   role="target")
    wall = Solid("wall", "aabox", [0.0, 1.5, 1.0], QUAT_ID, [2.0, 0.1, 2.0])
    return Scene([-2.0, -2.0, 0.0], [3.0, 3.0, 2.5], [target, wall])


def straight_planner(seed):
    sc = open_scene()
    t = np.linspace(0.0, 1.0, 25)
    start = np.array([-1.0, 0.0, 1.0])
    end = np.array([0.95, 0.0, 1.0])       # on the target sphere surface
    p = start + np.outer(t, end - start)
    return sc, make_traj(t, p)


def test_always_failing_planner_reports_zero_success():
    def hopeless(seed):
        raise PlanningFailure("unreachable")

    rep = benchmark(range(5), hopeless)
    assert rep.success_rate == 0.0
    assert len(rep.records) == 5
    assert all(not r.success and r.note == "unreachable" for r in rep.records)
    assert np.isnan(rep.mean_safety)


def test_straight_baseline_succeeds_perfectly_smoothly():
    rep = benchmark(range(4), straight_planner)
    assert rep.success_rate == 100.0
    assert rep.mean_unsmoothness < 1e-9
    assert np.isfinite(rep.mean_safety) and rep.mean_safety > 0.0


def test_benchmark_row_count_matches_seed_range():
    rep = benchmark(range(11), straight_planner)
    assert len(rep.records) == 11


def test_benchmark_is_deterministic():
    a = benchmark(range(6), straight_planner).to_json()
    b = benchmark(range(6), straight_planner).to_json()
    assert a == b


def test_collision_and_missed_contact_fail_without_polluting_safety():
    def sometimes(seed):
        sc = open_scene()
        t = np.linspace(0.0, 1.0, 25)
        if seed == 1:
            # drives straight through the wall
            p = np.outer(1 - t, [0.0, 2.5, 1.0]) + np.outer(t, [0.95, 0, 1.0])
            p[:, 2] = 1.0
            return sc, make_traj(t, p)
        if seed == 2:
            # stops 10 cm short of the target
            p = np.outer(t, [0.85, 0.0, 0.0]) + [-1.0, 0.0, 1.0]
            return sc, make_traj(t, p)
        return straight_planner(seed)

    rep = benchmark(range(3), sometimes)
    by_id = {r.scene_id: r for r in rep.records}
    assert by_id["seed-0"].success
    assert not by_id["seed-1"].success and by_id["seed-1"].note == "collision"
    assert not by_id["seed-2"].success
    assert by_id["seed-2"].note == "contact missed"
    assert np.isnan(by_id["seed-1"].safety)
    assert abs(rep.success_rate - 100.0 / 3.0) < 1e-9
    assert rep.mean_safety == by_id["seed-0"].safety


def test_safety_window_restricts_to_near_contact_frames():
    sc = open_scene()
    _, traj = straight_planner(0)
    got = safety_distance(traj, sc, window=0.2)
    contact = traj.positions[-1]
    near = np.linalg.norm(traj.positions - contact, axis=1) <= 0.2
    wall = sc.solids[1]
    want = np.mean([wall.signed_distance(p)
                    for p in traj.positions[near]]) * 100.0
    assert abs(got - want) < 1e-9


def test_report_serialization_round_trip():
    rep = benchmark(range(3), straight_planner)
    data = json.loads(rep.to_json())
    assert data["success_rate"] == 100.0
    assert len(data["records"]) == 3
    lines = rep.to_csv().strip().split("\n")
    assert len(lines) == 4
    assert lines[0].startswith("scene_id,success")
    assert lines[1].split(",")[1] == "1"
