"""Planner operations against brute-force and analytic oracles."""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from toafield.errors import PlanningFailure
from toafield.fields import EPS_T, build_fields
from toafield.grid import ScalarGrid3, trilinear
from toafield.planner import (
    audit_collision,
    blend_to_prior,
    integrate_path,
    plan_reach,
    select_start,
    speeds_along,
    transfer_orientation,
)
from toafield.rotations import is_rotation, rotation_about_axis
from toafield.scene import Scene, Solid
from toafield.scenegen import GenParams, generate_scene
from toafield.trajectory import Trajectory6, path_tangents


def radial_phi(n=24, h=0.05, goal=(12, 12, 12)):
    g = ScalarGrid3(np.zeros(3), h, np.zeros((n, n, n)))
    centers = g.centers()
    goal_p = g.center_of(goal)
    return g.like(np.linalg.norm(centers - goal_p, axis=-1)), goal_p


def straight_prior(n=30, direction=(1.0, 0.0, 0.0), R=None, speed=1.0):
    direction = np.asarray(direction, float)
    direction = direction / np.linalg.norm(direction)
    pos = np.outer(np.arange(n) * 0.02, direction)
    rots = np.tile(np.eye(3) if R is None else R, (n, 1, 1))
    tans = np.tile(direction, (n, 1))
    return Trajectory6(np.arange(n) * 0.02 / speed, pos, rots, tans,
                       np.full(n, speed), n - 1)


# -- select_start ------------------------------------------------------------


def brute_force_start(phi, wrist, v_bar):
    best = None
    vals = phi.values
    for flat, ijk in enumerate(np.ndindex(*phi.dims)):
        v = vals[ijk]
        if not np.isfinite(v):
            continue
        c = phi.center_of(ijk)
        d = np.linalg.norm(c - wrist)
        cost = -v if np.isinf(v_bar) else -v + d / v_bar
        key = (cost, d, flat)
        if best is None or key < best[0]:
            best = (key, c)
    return best[1]


def test_select_start_matches_brute_force(rng):
    for trial in range(5):
        vals = rng.uniform(0.0, 3.0, size=(6, 5, 4))
        vals[rng.random(vals.shape) < 0.3] = np.inf
        phi = ScalarGrid3(rng.normal(size=3), 0.07, vals)
        wrist = rng.normal(size=3)
        for v_bar in (0.5, 1.0, np.inf):
            got = select_start(phi, wrist, v_bar)
            want = brute_force_start(phi, wrist, v_bar)
            np.testing.assert_allclose(got, want, atol=1e-12)


def test_select_start_singleton():
    vals = np.full((4, 4, 4), np.inf)
    vals[1, 2, 3] = 0.8
    phi = ScalarGrid3(np.zeros(3), 0.1, vals)
    np.testing.assert_allclose(select_start(phi, [9.0, 9.0, 9.0], 1.0),
                               phi.center_of((1, 2, 3)), atol=1e-12)


def test_select_start_infinite_vbar_is_argmax():
    rng = np.random.default_rng(0)
    vals = rng.uniform(0, 5, size=(5, 5, 5))
    phi = ScalarGrid3(np.zeros(3), 0.1, vals)
    got = select_start(phi, [0.0, 0.0, 0.0], np.inf)
    want = phi.center_of(np.unravel_index(np.argmax(vals), vals.shape))
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_select_start_no_finite_cells():
    phi = ScalarGrid3(np.zeros(3), 0.1, np.full((3, 3, 3), np.inf))
    with pytest.raises(PlanningFailure):
        select_start(phi, [0.0, 0.0, 0.0], 1.0)
    with pytest.raises(ValueError):
        select_start(phi, [0.0, 0.0, 0.0], 0.0)


# -- integrate_path ----------------------------------------------------------


def test_integrate_radial_field_goes_straight():
    phi, goal = radial_phi()
    start = phi.center_of((3, 4, 18))
    path = integrate_path(phi, start)
    assert np.linalg.norm(path[-1] - goal) < 2.0 * EPS_T + phi.spacing
    length = np.linalg.norm(np.diff(path, axis=0), axis=1).sum()
    euclid = np.linalg.norm(path[-1] - path[0])
    assert length <= euclid * 1.02


def test_integrate_starts_at_sink_single_point():
    phi, goal = radial_phi()
    path = integrate_path(phi, goal)
    assert path.shape == (1, 3)


def test_integrate_descends_monotonically():
    phi, _ = radial_phi()
    path = integrate_path(phi, phi.center_of((20, 3, 10)))
    vals = [trilinear(phi, p) for p in path]
    assert np.all(np.diff(vals) <= 1e-6)


def test_integrate_stagnates_on_flat_field():
    phi = ScalarGrid3(np.zeros(3), 0.05, np.full((10, 10, 10), 1.0))
    with pytest.raises(PlanningFailure) as err:
        integrate_path(phi, phi.center_of((5, 5, 5)))
    assert err.value.last_position is not None


def test_integrate_rejects_infinite_start():
    phi, _ = radial_phi(n=10)
    vals = phi.values.copy()
    vals[2, 2, 2] = np.inf
    with pytest.raises(PlanningFailure):
        integrate_path(phi.like(vals), phi.center_of((2, 2, 2)))


def test_integrate_literal_reciprocal_still_reaches():
    phi, goal = radial_phi()
    path = integrate_path(phi, phi.center_of((4, 18, 7)),
                          hadamard_literal=True)
    assert np.linalg.norm(path[-1] - goal) < 0.06


def test_speeds_along_clamped_inverse_gradient():
    phi, goal = radial_phi()
    path = integrate_path(phi, phi.center_of((3, 4, 18)))
    sp = speeds_along(phi, path)
    # radial field has |grad| = 1: unit speed away from the apex kink
    assert np.all((sp >= 0.02) & (sp <= 2.0))
    away = np.linalg.norm(path - goal, axis=1) > 4 * phi.spacing
    assert away.sum() > 10
    np.testing.assert_allclose(sp[away], 1.0, atol=0.05)


# -- transfer_orientation ----------------------------------------------------


def test_transfer_identity_when_tangents_match():
    R0 = Rotation.from_euler("xyz", [20, -40, 65], degrees=True).as_matrix()
    prior = straight_prior(n=30, R=R0)
    path = prior.positions + np.array([0.0, 0.05, 0.02])
    out = transfer_orientation(prior, path)
    for R in out.rotations:
        np.testing.assert_allclose(R, R0, atol=1e-6)
    np.testing.assert_array_equal(out.rotations[-1], R0)


def test_transfer_rotates_with_the_tangent():
    # tangent turns from +x to +y: output is the prior frame yawed 90 deg
    R_p = Rotation.from_euler("z", 90, degrees=True).as_matrix()
    prior = straight_prior(n=20, direction=(1, 0, 0), R=R_p)
    path = np.outer(np.arange(20) * 0.02, [0.0, 1.0, 0.0])
    out = transfer_orientation(prior, path)
    want = rotation_about_axis([0, 0, 1], np.pi / 2) @ R_p
    for R in out.rotations[:-1]:
        np.testing.assert_allclose(R, want, atol=1e-6)


def test_transfer_contact_rotation_is_exact():
    rng = np.random.RandomState(3)
    rots = Rotation.random(25, random_state=rng).as_matrix()
    pos = np.cumsum(np.full((25, 3), 0.02), axis=0)
    prior = Trajectory6(np.arange(25) * 0.1, pos, rots, path_tangents(pos),
                        np.ones(25), 24)
    path = np.cumsum(rng.uniform(0.005, 0.02, size=(40, 3)), axis=0)
    out = transfer_orientation(prior, path)
    np.testing.assert_array_equal(out.rotations[-1], rots[24])


def test_transfer_outputs_proper_rotations(rng):
    for _ in range(20):
        n_p, n_n = rng.integers(5, 30, size=2)
        rots = Rotation.random(int(n_p),
                               random_state=np.random.RandomState(1)).as_matrix()
        pos = np.cumsum(rng.uniform(0.005, 0.03, size=(n_p, 3)), axis=0)
        prior = Trajectory6(np.arange(n_p) * 0.1, pos, rots,
                            path_tangents(pos), np.ones(n_p), int(n_p) - 1)
        path = np.cumsum(rng.uniform(0.005, 0.03, size=(n_n, 3)), axis=0)
        out = transfer_orientation(prior, path)
        for R in out.rotations:
            assert is_rotation(R, tol=1e-6)


def test_transfer_equivariant_under_global_rotation(rng):
    Q = Rotation.random(random_state=np.random.RandomState(7)).as_matrix()
    rots = Rotation.random(15, random_state=np.random.RandomState(8)).as_matrix()
    pos = np.cumsum(rng.uniform(0.01, 0.03, size=(15, 3)), axis=0)
    prior = Trajectory6(np.arange(15.0), pos, rots, path_tangents(pos),
                        np.ones(15), 14)
    path = np.cumsum(rng.uniform(0.01, 0.03, size=(22, 3)), axis=0)

    rotated_prior = Trajectory6(
        prior.times, pos @ Q.T, np.einsum("ab,nbc->nac", Q, rots),
        prior.tangents @ Q.T, prior.speeds, prior.contact_index)
    base = transfer_orientation(prior, path)
    spun = transfer_orientation(rotated_prior, path @ Q.T)
    for Rb, Rs in zip(base.rotations, spun.rotations):
        np.testing.assert_allclose(Rs, Q @ Rb, atol=1e-6)


def test_transfer_antiparallel_tangent_is_deterministic():
    prior = straight_prior(n=10, direction=(1, 0, 0))
    path = np.outer(np.arange(10) * 0.02, [-1.0, 0.0, 0.0]) + [1, 0, 0]
    a = transfer_orientation(prior, path)
    b = transfer_orientation(prior, path)
    np.testing.assert_array_equal(a.rotations, b.rotations)
    for R in a.rotations:
        assert is_rotation(R, tol=1e-6)


def test_transfer_literal_columns_variant_is_valid():
    prior = straight_prior(n=12, direction=(1, 0, 0))
    path = np.outer(np.arange(14) * 0.02, [0.0, 1.0, 0.0])
    out = transfer_orientation(prior, path, literal_columns=True)
    for R in out.rotations:
        assert is_rotation(R, tol=1e-6)


def test_transfer_rejects_short_inputs():
    prior = straight_prior(n=5)
    with pytest.raises(ValueError):
        transfer_orientation(prior, prior.positions[:1])


# -- blend_to_prior ----------------------------------------------------------


def blend_pair(n=12, offset=(0.0, 0.08, 0.0)):
    prior = straight_prior(n=n)
    shifted = prior.positions + np.asarray(offset)
    traj = Trajectory6(prior.times, shifted, prior.rotations,
                       prior.tangents, prior.speeds, n - 1)
    return traj, prior


def test_blend_single_frame_replaces_contact_only():
    traj, prior = blend_pair()
    out = blend_to_prior(traj, prior, n_blend=1)
    np.testing.assert_array_equal(out.positions[:-1], traj.positions[:-1])
    np.testing.assert_array_equal(out.positions[-1], prior.contact_position)
    np.testing.assert_array_equal(out.rotations[-1],
                                  prior.rotations[prior.contact_index])


def test_blend_identity_when_equal():
    prior = straight_prior(n=10)
    out = blend_to_prior(prior, prior, n_blend=4)
    np.testing.assert_allclose(out.positions, prior.positions, atol=1e-12)
    np.testing.assert_allclose(out.rotations, prior.rotations, atol=1e-12)
    np.testing.assert_array_equal(out.times, prior.times)


def test_blend_midpoint_weight():
    traj, prior = blend_pair(n=12)
    out = blend_to_prior(traj, prior, n_blend=4)
    # weights over the last 4 frames: 0.25, 0.5, 0.75, 1.0
    i = 12 - 4 + 1                        # the w = 0.5 frame
    want = 0.5 * (traj.positions[i] + prior.positions[i])
    np.testing.assert_allclose(out.positions[i], want, atol=1e-9)
    np.testing.assert_array_equal(out.positions[-1], prior.contact_position)


def test_blend_rejects_bad_n():
    traj, prior = blend_pair()
    with pytest.raises(ValueError):
        blend_to_prior(traj, prior, 0)
    with pytest.raises(ValueError):
        blend_to_prior(traj, prior, 99)


# -- audit_collision ---------------------------------------------------------


def open_scene():
    return Scene([-1, -1, -1], [2, 2, 2], [
        Solid("tgt", "sphere", [1.0, 0.0, 0.0], [1, 0, 0, 0], [0.05],
              role="target"),
        Solid("rock", "sphere", [0.5, 0.4, 0.0], [1, 0, 0, 0], [0.1]),
    ])


def line_traj(points, contact=None):
    p = np.asarray(points, float)
    n = len(p)
    rots = np.tile(np.eye(3), (n, 1, 1))
    return Trajectory6(np.arange(n) * 0.1, p, rots, path_tangents(p),
                       np.ones(n), n - 1 if contact is None else contact)


def test_audit_matches_exhaustive_distances():
    sc = open_scene()
    traj = line_traj(np.linspace([0, 0, 0], [0.9, 0, 0], 12))
    rep = audit_collision(traj, sc)
    rock = sc.solid("rock")
    want = min(float(np.min(rock.signed_distance(traj.positions))), np.inf)
    assert rep.collision_free
    assert rep.min_distance == pytest.approx(want, abs=1e-12)


def test_audit_flags_offending_frame():
    sc = open_scene()
    pts = np.linspace([0, 0, 0], [0.9, 0, 0], 10)
    pts[4] = [0.5, 0.4, 0.0]                      # inside the rock
    rep = audit_collision(line_traj(pts), sc)
    assert not rep.collision_free
    assert rep.offending_index == 4
    assert rep.min_distance == 0.0


def test_audit_counts_carried_object_after_contact():
    # wrist path clears the rock by 8 cm, but the 5 cm target sphere rides
    # along after pickup and eats the margin
    sc = open_scene()
    pts = np.array([[1.0, 0.0, 0.0],      # contact at index 0
                    [0.75, 0.22, 0.0],
                    [0.5, 0.22, 0.0]])    # 0.18 from rock center
    traj = line_traj(pts, contact=0)
    bare = audit_collision(line_traj(pts, contact=2), sc)
    carried = audit_collision(traj, sc)
    assert bare.collision_free
    assert carried.min_distance < bare.min_distance
    assert not carried.collision_free or carried.min_distance < 0.05


def test_audit_clearance_threshold():
    sc = open_scene()
    traj = line_traj(np.linspace([0, -0.5, 0], [0, 0.5, 0], 5))
    loose = audit_collision(traj, sc, clearance=0.0)
    tight = audit_collision(traj, sc, clearance=5.0)
    assert loose.collision_free
    assert not tight.collision_free


# -- end-to-end --------------------------------------------------------------


def test_plan_reach_on_generated_scenes():
    wrist = np.array([0.15, 0.6, 0.9])
    for seed in (0, 1):
        scene, demo = generate_scene(seed, GenParams(archetype="shelf"))
        fields = build_fields(scene, demo)
        traj = plan_reach(fields, demo, wrist)
        assert audit_collision(traj, scene).collision_free
        gap = np.linalg.norm(traj.contact_position - demo.contact_position)
        assert gap <= fields.grid.spacing
        leave = plan_reach(fields, demo, wrist, segment="leave")
        assert leave.contact_index == 0
        np.testing.assert_allclose(leave.positions[0], traj.positions[-1],
                                   atol=1e-12)
    with pytest.raises(ValueError):
        plan_reach(fields, demo, wrist, segment="sideways")
