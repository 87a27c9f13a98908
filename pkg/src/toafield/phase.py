"""Goal tracking on the phase manifold with a per-channel Kalman filter.

Each motion channel carries a (phase, frequency, amplitude) triple.  Phase
is cyclic in [0, 1), so prediction wraps the mean and updates take the
short way around through a signed innovation in (-0.5, 0.5].  Channels
never couple, so the filter runs as a batch of independent 3-state
filters; Monte-Carlo harnesses reuse the same batch axis for trials.

Two measurement streams feed the filter: a predicted stream whose noise is
scaled by how far the observed body deviates from the goal-consistent
pose (the confidence c), and a matched stream trusted at process-noise
level but gated to moments when the root has arrived while the hand has
not yet.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from toafield.rotations import is_rotation, log_norm

N_CHANNELS = 8
F_MAX = 30.0                     # Hz, Nyquist at 60 fps
Q_FACTOR = 0.2                   # process noise = this x statistical variance
SIGMA_BAR = (0.05, 0.5, 0.02)    # statistical deviations of (S, F, A)
EMBED_SIGMA = 0.1
NEARBY_RADIUS = 0.4              # meters, arrival gate for matched updates
BODY_WIDTH = 0.45                # meters, sets the translation weight 1/beta

KEYJOINTS = ("left-hand", "right-hand", "hip")

_I3 = np.eye(3)


def wrap_phase(s):
    """Fold phases into [0, 1)."""
    return np.mod(s, 1.0)


def wrap_signed(d):
    """Fold phase differences into (-0.5, 0.5]."""
    return 0.5 - np.mod(0.5 - np.asarray(d, dtype=float), 1.0)


@dataclass
class PhaseState:
    """Per-channel (S, F, A) rows; S wrapped, F and A clamped on entry."""

    values: np.ndarray       # (n, 3) columns phase, frequency, amplitude

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError("phase state must be (channels, 3)")
        if not np.all(np.isfinite(v)):
            raise ValueError("phase state must be finite")
        v[:, 0] = wrap_phase(v[:, 0])
        v[:, 1] = np.clip(v[:, 1], 0.0, F_MAX)
        v[:, 2] = np.clip(v[:, 2], 0.0, 1.0)
        self.values = v

    @classmethod
    def of(cls, s, f, a):
        cols = np.broadcast_arrays(np.atleast_1d(s), np.atleast_1d(f),
                                   np.atleast_1d(a))
        return cls(np.column_stack(cols))

    @property
    def s(self):
        return self.values[:, 0]

    @property
    def f(self):
        return self.values[:, 1]

    @property
    def a(self):
        return self.values[:, 2]

    def __len__(self):
        return len(self.values)


@dataclass
class PhaseVector:
    """The 2D embedding per channel: (A cos 2piS, A sin 2piS) plus F."""

    pairs: np.ndarray        # (n, 2)
    freq: np.ndarray         # (n,)

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=float).reshape(-1, 2)
        self.freq = np.asarray(self.freq, dtype=float).reshape(-1)
        if len(self.pairs) != len(self.freq):
            raise ValueError("pair and frequency counts disagree")

    @property
    def amplitude(self):
        return np.linalg.norm(self.pairs, axis=1)

    @property
    def phase(self):
        return wrap_phase(np.arctan2(self.pairs[:, 1], self.pairs[:, 0])
                          / (2.0 * np.pi))


def _check_cov(cov, n):
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (n, 3, 3):
        raise ValueError("covariance must be (channels, 3, 3)")
    if not np.all(np.isfinite(cov)):
        raise ValueError("covariance must be finite")
    if np.max(np.abs(cov - cov.transpose(0, 2, 1))) > 1e-9:
        raise ValueError("covariance must be symmetric")
    cov = 0.5 * (cov + cov.transpose(0, 2, 1))
    if np.linalg.eigvalsh(cov).min() < -1e-12:
        raise ValueError("covariance must be positive semidefinite")
    return cov


@dataclass
class GoalEstimate:
    """Filter state: a PhaseState mean with per-channel 3x3 covariance."""

    mean: PhaseState
    cov: np.ndarray          # (n, 3, 3) over (S, F, A)
    flags: tuple = ()

    def __post_init__(self):
        self.cov = _check_cov(self.cov, len(self.mean))

    @classmethod
    def certain(cls, mean: PhaseState):
        return cls(mean, np.zeros((len(mean), 3, 3)))


@dataclass
class Measurement:
    value: PhaseState
    cov: np.ndarray          # (n, 3, 3)
    source: str              # "predicted" | "matched"

    def __post_init__(self):
        self.cov = _check_cov(self.cov, len(self.value))
        if self.source not in ("predicted", "matched"):
            raise ValueError(f"unknown measurement source {self.source!r}")


def process_noise(sigma_bar=SIGMA_BAR):
    """Per-channel process covariance: Q_FACTOR x diag(statistical var)."""
    s = np.asarray(sigma_bar, dtype=float)
    return Q_FACTOR * np.diag(s * s)


def predict(goal: GoalEstimate, dt: float,
            sigma_bar=SIGMA_BAR) -> GoalEstimate:
    """Advance phase by frequency and inflate covariance by Q."""
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    F = np.array([[1.0, dt, 0.0],
                  [0.0, 1.0, 0.0],
                  [0.0, 0.0, 1.0]])
    v = goal.mean.values.copy()
    v[:, 0] = wrap_phase(v[:, 0] + dt * v[:, 1])
    cov = F @ goal.cov @ F.T + process_noise(sigma_bar)
    return GoalEstimate(PhaseState(v), cov, goal.flags)


def kalman_gain(cov, R):
    """K = P (P + R)^-1 per channel; regularizes a singular innovation.

    Returns (K, regularized) so callers can surface the fallback.
    """
    S = cov + R
    try:
        K = np.linalg.solve(S.transpose(0, 2, 1),
                            cov.transpose(0, 2, 1)).transpose(0, 2, 1)
        return K, False
    except np.linalg.LinAlgError:
        S = S + 1e-9 * _I3
        K = np.linalg.solve(S.transpose(0, 2, 1),
                            cov.transpose(0, 2, 1)).transpose(0, 2, 1)
        return K, True


def update(goal: GoalEstimate, m: Measurement) -> GoalEstimate:
    """Condition the estimate on a measurement, wrapping the phase residual."""
    if len(m.value) != len(goal.mean):
        raise ValueError("measurement channel count mismatch")
    K, regularized = kalman_gain(goal.cov, m.cov)
    y = m.value.values - goal.mean.values
    y[:, 0] = wrap_signed(y[:, 0])
    v = goal.mean.values + np.einsum("nij,nj->ni", K, y)
    cov = (_I3 - K) @ goal.cov
    cov = 0.5 * (cov + cov.transpose(0, 2, 1))
    # exact-arithmetic PSD can dip below the floor in float; clip spectrum
    w, V = np.linalg.eigh(cov)
    if w.min() < 0.0:
        cov = np.einsum("nij,nj,nkj->nik", V, np.maximum(w, 0.0), V)
    flags = goal.flags + (("regularized",) if regularized else ())
    return GoalEstimate(PhaseState(v), cov, flags)


# -- pose-deviation confidence ----------------------------------------------

def _compose(goal_T, inv_T):
    Rg, tg = goal_T
    Ri, ti = inv_T
    return Rg @ Ri, Rg @ np.asarray(ti, dtype=float) + np.asarray(tg,
                                                                  dtype=float)


def deviation(ego, inv, goals, body_width: float = BODY_WIDTH,
              literal: bool = False) -> float:
    """Bidirectional pose inconsistency summed over the keyjoints.

    ego, inv and goals map each keyjoint to an (R, t) pair; inv holds the
    goal-centric counterpart predictions, composed into world frame
    through the goal transform before comparison.  The literal flag skips
    that composition and compares the raw frames instead.  Each joint
    contributes its rotation geodesic in Frobenius norm over pi plus its
    translation gap over the body width.
    """
    if not body_width > 0.0:
        raise ValueError("body width must be positive")
    total = 0.0
    for joint in KEYJOINTS:
        Re, te = ego[joint]
        if literal:
            Ri, ti = inv[joint]
        else:
            Ri, ti = _compose(goals[joint], inv[joint])
        for R in (Re, Ri):
            if not is_rotation(np.asarray(R, dtype=float)):
                raise ValueError(f"{joint} rotation fails the SO(3) check")
        total += log_norm(np.asarray(Re).T @ Ri) / np.pi
        total += np.linalg.norm(np.asarray(te, dtype=float)
                                - np.asarray(ti, dtype=float)) / body_width
    return float(total)


# -- the tracking loop -------------------------------------------------------

@dataclass
class TrackEvent:
    """One keyframe: goal transforms, arrival anchors and a matched phase.

    matched is the motion-matched goal phase; it may be a PhaseState or
    a callable step -> PhaseState when the match is re-queried per frame.
    """

    time: float
    goals: dict              # keyjoint -> (R, t), at least the KEYJOINTS
    root_goal: np.ndarray    # (3,) arrival anchor for the root gate
    hand_goal: np.ndarray    # (3,) arrival anchor for the active hand
    hand: str                # which keyjoint is doing the reaching
    matched: object          # PhaseState | callable

    def __post_init__(self):
        self.root_goal = np.asarray(self.root_goal, dtype=float).reshape(3)
        self.hand_goal = np.asarray(self.hand_goal, dtype=float).reshape(3)
        if self.hand not in KEYJOINTS:
            raise ValueError(f"unknown hand {self.hand!r}")


@dataclass
class TrackResult:
    estimates: list          # GoalEstimate per completed step
    truncated: bool = False
    flags: tuple = ()


def track(events, source, horizon: int, dt: float,
          start: GoalEstimate | None = None, sigma_bar=SIGMA_BAR,
          body_width: float = BODY_WIDTH,
          nearby_radius: float = NEARBY_RADIUS,
          literal_deviation: bool = False) -> TrackResult:
    """Run the per-frame filter loop over a horizon.

    source(step) must yield (predicted PhaseState, ego transforms, inv
    transforms, root position, hand position) for time step * dt.  Per
    step the filter predicts to that time, applies the predicted
    measurement with R scaled by the pose deviation against the active
    keyframe, and then that keyframe's matched measurement at
    process-noise level when the root has arrived but the hand has not.
    The estimate bootstraps from the first measurement; steps before the
    first keyframe only predict.  A source exception truncates the
    trace.
    """
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    events = sorted(events, key=lambda e: e.time)
    Q = process_noise(sigma_bar)
    est = start
    out = []
    flags = ()
    for k in range(horizon):
        t = k * dt
        try:
            measured, ego, inv, root_pos, hand_pos = source(k)
        except Exception:
            return TrackResult(out, truncated=True,
                               flags=flags + ("source-failed",))
        active = None
        for e in events:
            if e.time <= t + 1e-12:
                active = e
        if est is None:
            est = GoalEstimate.certain(measured)
            out.append(est)
            continue
        est = predict(est, dt, sigma_bar)
        if active is not None:
            c = deviation(ego, inv, active.goals, body_width,
                          literal=literal_deviation)
            n = len(est.mean)
            r_pred = np.broadcast_to(c * Q, (n, 3, 3)).copy()
            est = update(est, Measurement(measured, r_pred, "predicted"))
            root_near = np.linalg.norm(np.asarray(root_pos, dtype=float)
                                       - active.root_goal) <= nearby_radius
            hand_near = np.linalg.norm(np.asarray(hand_pos, dtype=float)
                                       - active.hand_goal) <= nearby_radius
            if root_near and not hand_near:
                mval = active.matched(k) if callable(active.matched) \
                    else active.matched
                r_match = np.broadcast_to(Q, (n, 3, 3)).copy()
                est = update(est, Measurement(mval, r_match, "matched"))
        flags = est.flags
        out.append(est)
    return TrackResult(out, truncated=False, flags=flags)


# -- embedding and the synthetic measurement harness -------------------------

def embed_and_noise(state: PhaseState, sigma: float = EMBED_SIGMA,
                    seed=0) -> PhaseVector:
    """Embed phases on the circle and perturb every component."""
    if sigma < 0.0:
        raise ValueError("sigma must be non-negative")
    rng = np.random.default_rng(seed)
    eps = rng.normal(0.0, sigma, size=(len(state), 3)) if sigma > 0.0 \
        else np.zeros((len(state), 3))
    ang = 2.0 * np.pi * state.s
    pairs = np.column_stack([state.a * np.cos(ang) + eps[:, 0],
                             state.a * np.sin(ang) + eps[:, 1]])
    return PhaseVector(pairs, state.f + eps[:, 2])


def advance_phase(state: PhaseState, dt: float) -> PhaseState:
    """The noiseless dynamics: phase advances by frequency."""
    v = state.values.copy()
    v[:, 0] = wrap_phase(v[:, 0] + dt * v[:, 1])
    return PhaseState(v)


def noisy_phase(truth: PhaseState, rng, sigma: float) -> PhaseState:
    """Truth plus independent Gaussian noise per component, S wrapped."""
    v = truth.values + rng.normal(0.0, sigma, size=truth.values.shape)
    return PhaseState(v)


def identity_transforms(offset=0.0):
    """A goal-consistent keyjoint set; offset shifts every ego translation.

    Returns (ego, inv, goals) with ego exactly equal to the composed
    goal-centric prediction when offset is zero, so the deviation there
    is zero and grows linearly with the offset.
    """
    ego, inv, goals = {}, {}, {}
    for i, joint in enumerate(KEYJOINTS):
        t = np.array([float(i), 0.0, 1.0])
        goals[joint] = (np.eye(3), t)
        inv[joint] = (np.eye(3), np.zeros(3))
        ego[joint] = (np.eye(3), t + np.array([offset, 0.0, 0.0]))
    return ego, inv, goals


def harness_source(truth: PhaseState, seed, noise: float = EMBED_SIGMA,
                   drift: float = 0.0, dt: float = 1.0 / 30.0,
                   pose_offset: float = 0.0, root_path=None):
    """Callback factory: evolving truth + Gaussian noise + optional drift.

    The true goal advances under the phase dynamics; source(k) reports
    it at time k * dt with independent noise, plus a slowly growing
    phase bias when drift is nonzero.  root_path, when given, is a
    callable step -> (root_pos, hand_pos) letting scenarios steer the
    matched-measurement gate; by default the root sits on its goal and
    the hand stays away, keeping the gate open.
    """
    rng = np.random.default_rng(seed)
    ego, inv, _ = identity_transforms(pose_offset)

    def source(k):
        v = truth.values.copy()
        v[:, 0] = wrap_phase(v[:, 0] + k * dt * v[:, 1])
        if noise > 0.0:
            v = v + rng.normal(0.0, noise, size=v.shape)
        if drift != 0.0:
            v[:, 0] = v[:, 0] + drift * k * dt
        if root_path is not None:
            root_pos, hand_pos = root_path(k)
        else:
            root_pos, hand_pos = np.zeros(3), np.full(3, 10.0)
        return PhaseState(v), ego, inv, root_pos, hand_pos

    return source
