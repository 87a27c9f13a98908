"""Small rotation toolbox shared by the planner, phase and scheduler code.

All matrices are 3x3 numpy arrays acting on column vectors, quaternions are
(w, x, y, z) with unit norm.
"""

from __future__ import annotations

import numpy as np


def skew(v):
    """Cross-product matrix [v]_x so that skew(a) @ b == cross(a, b)."""
    x, y, z = v
    return np.array([[0.0, -z, y],
                     [z, 0.0, -x],
                     [-y, x, 0.0]])


def rotation_about_axis(axis, angle):
    """Rodrigues rotation about a (not necessarily unit) axis."""
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n < 1e-12:
        return np.eye(3)
    k = skew(axis / n)
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def perpendicular_axis(t):
    """Deterministic unit vector perpendicular to t (largest-component rule)."""
    t = np.asarray(t, dtype=float)
    k = int(np.argmax(np.abs(t)))
    e = np.zeros(3)
    e[(k + 1) % 3] = 1.0
    p = np.cross(t, e)
    return p / np.linalg.norm(p)


def rotation_between(a, b):
    """Rotation taking unit vector a onto unit vector b.

    Antiparallel inputs fall back to a half-turn about a deterministic
    perpendicular axis; the result is always a proper rotation.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = float(np.clip(np.dot(a, b), -1.0, 1.0))
    v = np.cross(a, b)
    s = np.linalg.norm(v)
    if s < 1e-12:
        if c > 0.0:
            return np.eye(3)
        return rotation_about_axis(perpendicular_axis(a), np.pi)
    return rotation_about_axis(v, np.arctan2(s, c))


def rotation_angle(R):
    """Angle of a rotation matrix in [0, pi]."""
    return float(np.arccos(np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)))


def log_norm(R):
    """Frobenius norm of the matrix logarithm: sqrt(2) * rotation angle."""
    return np.sqrt(2.0) * rotation_angle(R)


def is_rotation(R, tol=1e-6):
    R = np.asarray(R)
    if R.shape != (3, 3):
        return False
    return (np.allclose(R.T @ R, np.eye(3), atol=tol)
            and abs(np.linalg.det(R) - 1.0) < tol)


def polar_orthonormalize(M):
    """Nearest rotation to M in the Frobenius sense (polar factor via SVD)."""
    U, _, Vt = np.linalg.svd(M)
    R = U @ Vt
    if np.linalg.det(R) < 0.0:
        # flip the weakest singular direction to stay in SO(3)
        U = U.copy()
        U[:, -1] = -U[:, -1]
        R = U @ Vt
    return R


def slerp(Ra, Rb, w):
    """Interpolate from Ra (w=0) to Rb (w=1) along the geodesic."""
    rel = Ra.T @ Rb
    ang = rotation_angle(rel)
    if ang < 1e-12:
        return Ra.copy()
    if abs(ang - np.pi) < 1e-9:
        axis = _half_turn_axis(rel)
    else:
        axis = np.array([rel[2, 1] - rel[1, 2],
                         rel[0, 2] - rel[2, 0],
                         rel[1, 0] - rel[0, 1]])
        n = np.linalg.norm(axis)
        if n < 1e-12:
            # trace noise can report a tiny angle while the antisymmetric
            # part cancels exactly; the inputs are effectively equal
            return Ra.copy()
        axis = axis / n
    return Ra @ rotation_about_axis(axis, w * ang)


def _half_turn_axis(R):
    # for a half turn R = 2 a a^T - I, read the axis off the diagonal
    a2 = np.clip((np.diag(R) + 1.0) / 2.0, 0.0, 1.0)
    k = int(np.argmax(a2))
    a = np.sqrt(a2)
    if R[k, (k + 1) % 3] + R[(k + 1) % 3, k] < 0.0:
        a[(k + 1) % 3] = -a[(k + 1) % 3]
    if R[k, (k + 2) % 3] + R[(k + 2) % 3, k] < 0.0:
        a[(k + 2) % 3] = -a[(k + 2) % 3]
    if a[k] == 0.0:
        return perpendicular_axis(np.ones(3))
    return a / np.linalg.norm(a)


def quat_to_matrix(q):
    """Unit quaternion (w, x, y, z) to rotation matrix."""
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R):
    """Rotation matrix to unit quaternion (w, x, y, z), w >= 0."""
    t = np.trace(R)
    if t > 0.0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s])
    else:
        k = int(np.argmax(np.diag(R)))
        i, j = (k + 1) % 3, (k + 2) % 3
        s = np.sqrt(R[k, k] - R[i, i] - R[j, j] + 1.0) * 2.0
        q = np.empty(4)
        q[0] = (R[j, i] - R[i, j]) / s
        q[1 + k] = 0.25 * s
        q[1 + i] = (R[i, k] + R[k, i]) / s
        q[1 + j] = (R[j, k] + R[k, j]) / s
    if q[0] < 0.0:
        q = -q
    return q / np.linalg.norm(q)


def rotation_to_6d(R):
    """First two columns of R flattened, the common 6-number encoding."""
    return np.asarray(R)[:, :2].T.ravel().copy()
