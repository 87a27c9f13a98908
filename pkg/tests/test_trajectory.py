"""Trajectory container, tangent/resampling helpers and the JSON format."""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from toafield.trajectory import (
    Trajectory6,
    load_trajectory,
    path_tangents,
    resample_arclength,
    save_trajectory,
    trajectory_from_dict,
    trajectory_to_dict,
)


def line_traj(n=10, contact=None):
    pos = np.linspace([0, 0, 0], [1, 0, 0], n)
    rots = Rotation.random(n, random_state=np.random.RandomState(2)).as_matrix()
    return Trajectory6(np.arange(n) * 0.1, pos, rots, path_tangents(pos),
                       np.ones(n), n - 1 if contact is None else contact)


def test_validation_rejects_bad_frames():
    t = line_traj()
    with pytest.raises(ValueError):
        Trajectory6(t.times[::-1], t.positions, t.rotations, t.tangents,
                    t.speeds, t.contact_index)
    with pytest.raises(ValueError):
        Trajectory6(t.times, t.positions, t.rotations * 1.01, t.tangents,
                    t.speeds, t.contact_index)
    with pytest.raises(ValueError):
        Trajectory6(t.times, t.positions, t.rotations, t.tangents * 2.0,
                    t.speeds, t.contact_index)
    with pytest.raises(ValueError):
        Trajectory6(t.times, t.positions, t.rotations, t.tangents,
                    t.speeds - 2.0, t.contact_index)
    with pytest.raises(ValueError):
        Trajectory6(t.times, t.positions, t.rotations, t.tangents,
                    t.speeds, len(t))
    with pytest.raises(ValueError):
        Trajectory6([], np.zeros((0, 3)), np.zeros((0, 3, 3)),
                    np.zeros((0, 3)), [], 0)


def test_contact_position():
    t = line_traj(contact=3)
    np.testing.assert_array_equal(t.contact_position, t.positions[3])


def test_reversed_flips_geometry_and_contact():
    t = line_traj(n=8, contact=2)
    r = t.reversed()
    np.testing.assert_array_equal(r.positions, t.positions[::-1])
    np.testing.assert_array_equal(r.rotations, t.rotations[::-1])
    np.testing.assert_allclose(r.tangents, -t.tangents[::-1], atol=1e-15)
    assert r.contact_index == 5
    assert r.times[0] == 0.0
    assert r.times[-1] == pytest.approx(t.times[-1] - t.times[0])


def test_reversed_twice_is_identity():
    t = line_traj(n=8, contact=2)
    rr = t.reversed().reversed()
    np.testing.assert_allclose(rr.positions, t.positions, atol=1e-15)
    np.testing.assert_allclose(rr.times, t.times - t.times[0], atol=1e-12)
    assert rr.contact_index == t.contact_index


def test_path_tangents_straight_line():
    pos = np.linspace([0, 0, 0], [2, 1, 0], 9)
    tans = path_tangents(pos)
    d = np.array([2.0, 1.0, 0.0]) / np.sqrt(5)
    np.testing.assert_allclose(tans, np.tile(d, (9, 1)), atol=1e-12)


def test_path_tangents_circle_perpendicular_to_radius():
    th = np.linspace(0, 2 * np.pi, 200, endpoint=False)
    pos = np.stack([np.cos(th), np.sin(th), np.zeros_like(th)], 1)
    tans = path_tangents(pos)
    dots = np.einsum("ij,ij->i", tans[1:-1], pos[1:-1])
    np.testing.assert_allclose(dots, 0.0, atol=1e-12)


def test_path_tangents_handles_repeated_points():
    pos = np.array([[0, 0, 0], [1, 0, 0], [1, 0, 0], [1, 0, 0.0]])
    tans = path_tangents(pos)
    assert np.all(np.isfinite(tans))
    np.testing.assert_allclose(np.linalg.norm(tans, axis=1), 1.0, atol=1e-12)


def test_resample_arclength_uniform_spacing():
    th = np.linspace(0, 3 * np.pi, 400)
    pos = np.stack([0.4 * np.cos(th), 0.4 * np.sin(th), 0.05 * th], 1)
    out = resample_arclength(pos, ds=0.05)
    np.testing.assert_array_equal(out[0], pos[0])
    np.testing.assert_array_equal(out[-1], pos[-1])
    seg = np.linalg.norm(np.diff(out, axis=0), axis=1)
    # equal arc-length steps: chord lengths agree to curvature error
    assert seg.std() / seg.mean() < 0.01
    total_in = np.linalg.norm(np.diff(pos, axis=0), axis=1).sum()
    assert seg.sum() == pytest.approx(total_in, rel=0.005)


def test_resample_arclength_on_a_line_is_exact():
    pos = np.array([[0, 0, 0], [0.3, 0, 0], [1.0, 0, 0.0]])
    out = resample_arclength(pos, ds=0.25)
    np.testing.assert_allclose(out[:, 0], np.linspace(0, 1, 5), atol=1e-12)
    seg = np.linalg.norm(np.diff(out, axis=0), axis=1)
    np.testing.assert_allclose(seg, 0.25, atol=1e-12)


def test_resample_arclength_degenerate_input():
    pos = np.zeros((4, 3))
    out = resample_arclength(pos, ds=0.1)
    assert out.shape == (1, 3)


def test_dict_round_trip_exact():
    t = line_traj(n=6, contact=4)
    d = trajectory_to_dict(t)
    assert d["contact_index"] == 4
    assert len(d["frames"]) == 6
    # rotations serialize row-major
    np.testing.assert_array_equal(d["frames"][0]["R"],
                                  t.rotations[0].ravel())
    back = trajectory_from_dict(d)
    np.testing.assert_array_equal(back.positions, t.positions)
    np.testing.assert_array_equal(back.rotations, t.rotations)
    np.testing.assert_array_equal(back.times, t.times)
    assert back.contact_index == t.contact_index


def test_file_round_trip_exact(tmp_path):
    t = line_traj(n=7, contact=1)
    path = tmp_path / "t.json"
    save_trajectory(path, t)
    back = load_trajectory(path)
    np.testing.assert_array_equal(back.positions, t.positions)
    np.testing.assert_array_equal(back.speeds, t.speeds)
    np.testing.assert_array_equal(back.tangents, t.tangents)
    assert back.contact_index == t.contact_index
