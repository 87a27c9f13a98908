"""Latent-conditioned field decoder and its auto-decoding training loop.

A single fully connected network maps (position, latent, condition) to the
three field channels.  Each training case owns a latent code optimized
jointly with the shared weights; at runtime a fresh latent is recovered by
descending the same loss against partial observations (known target and
obstacle channels plus arrival anchors from a demonstration) while the
weights stay frozen.  Gradients are hand-derived so every layer's backward
pass can be checked against finite differences.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from toafield.errors import InferenceFailure, TrainingFailure
from toafield.fields import (CHANNEL_CAPS, DEFAULT_H, DEFAULT_SIGMA, EPS_T,
                             FieldTriple, build_fields, object_cube_grid)
from toafield.fileio import atomic_write_bytes
from toafield.grid import ScalarGrid3, trilinear
from toafield.scene import Scene
from toafield.trajectory import Trajectory6

LATENT_DIM = 128
COND_DIM = 4
HIDDEN = 256
N_LAYERS = 6
SKIP_LAYER = 3        # zero-based layer that re-receives the assembled input
CUBE_HALF = 0.4       # meters; positions are fed to the net divided by this
LATENT_INIT = 0.01    # latents start from N(0, LATENT_INIT^2)
LATENT_SIGMA = 0.01   # prior scale in the ||z||^2 / sigma^2 penalty
TRAIN_LR = 1e-4
INFER_LR = 1e-3
SPATIAL_BATCH = 4096
HEIGHT_NORM = 2.0     # goal heights in the corpus top out at 2 m
HEIGHT_QUANTUM = 0.05  # heights are binned so c cannot identify cases
NEAR_TARGET = 0.05    # prior samples closer than this carry arrival labels

_CAPS = np.asarray(CHANNEL_CAPS)

HANDS = ("left", "right")
ACTIONS = ("grasp", "place")
SEGMENTS = ("approach", "leave")


@dataclass(frozen=True)
class ConditionVector:
    """Task conditioning: goal height plus three categorical switches."""

    goal_height: float
    hand: str = "right"
    action: str = "grasp"
    segment: str = "approach"

    def __post_init__(self):
        if self.hand not in HANDS:
            raise ValueError(f"unknown hand {self.hand!r}")
        if self.action not in ACTIONS:
            raise ValueError(f"unknown action {self.action!r}")
        if self.segment not in SEGMENTS:
            raise ValueError(f"unknown segment {self.segment!r}")

    def encode(self):
        """4-vector network input; height normalized by the corpus ceiling.

        Height is snapped to 5 cm bins first.  Exact heights would give every
        training case a unique conditioning signature, letting the network key
        reconstructions on the condition instead of the latent code; binning
        keeps the height informative while forcing case identity into z.
        """
        q = HEIGHT_QUANTUM * round(self.goal_height / HEIGHT_QUANTUM)
        return np.array([q / HEIGHT_NORM,
                         float(HANDS.index(self.hand)),
                         float(ACTIONS.index(self.action)),
                         float(SEGMENTS.index(self.segment))])

    def key(self):
        """The categorical part, used for exact-match database filtering."""
        return (self.hand, self.action, self.segment)


# -- network parameters ------------------------------------------------------

@dataclass
class DecoderWeights:
    """Parameters of the six-layer skip network; matrices are fan-in first."""

    weights: list
    biases: list
    z_dim: int = LATENT_DIM
    c_dim: int = COND_DIM

    def __post_init__(self):
        if len(self.weights) != N_LAYERS or len(self.biases) != N_LAYERS:
            raise ValueError(f"expected {N_LAYERS} layers")
        prev = self.in_dim
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            fan_in = prev + (self.in_dim if i == SKIP_LAYER else 0)
            if W.ndim != 2 or W.shape != (fan_in, b.shape[0]):
                raise ValueError("layer shapes inconsistent with architecture")
            prev = W.shape[1]
        if prev != 3:
            raise ValueError("output layer must have 3 units")

    @property
    def in_dim(self):
        return 3 + self.z_dim + self.c_dim

    @property
    def dtype(self):
        return self.weights[0].dtype

    def params(self):
        """Flat parameter list, weight then bias per layer."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out.append(W)
            out.append(b)
        return out

    def astype(self, dtype):
        return DecoderWeights([w.astype(dtype) for w in self.weights],
                              [b.astype(dtype) for b in self.biases],
                              self.z_dim, self.c_dim)


def init_weights(rng, z_dim: int = LATENT_DIM, c_dim: int = COND_DIM,
                 hidden: int = HIDDEN, dtype=np.float32) -> DecoderWeights:
    """He-normal hidden layers, small-variance linear head, zero biases."""
    d = 3 + z_dim + c_dim
    fans = [d, hidden, hidden, hidden + d, hidden, hidden]
    outs = [hidden, hidden, hidden, hidden, hidden, 3]
    Ws, bs = [], []
    for i, (fi, fo) in enumerate(zip(fans, outs)):
        gain = 2.0 if i < N_LAYERS - 1 else 1.0
        Ws.append(rng.normal(0.0, np.sqrt(gain / fi),
                             size=(fi, fo)).astype(dtype))
        bs.append(np.zeros(fo, dtype=dtype))
    return DecoderWeights(Ws, bs, z_dim, c_dim)


# -- forward / backward ------------------------------------------------------

def _softplus(u):
    return np.logaddexp(0.0, u)


def _encode_condition(c, c_dim):
    if isinstance(c, ConditionVector):
        c = c.encode()
    c = np.asarray(c, dtype=float).reshape(-1)
    if c.shape[0] != c_dim:
        raise ValueError("condition size mismatch")
    return c


def _assemble(w: DecoderWeights, X, z, c):
    """Concatenate (position / CUBE_HALF, latent / LATENT_INIT, condition).

    Each input group is scaled to unit order so no group starts out
    invisible to the first layer; the latent penalty still acts on the
    raw z.
    """
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.shape[0] != w.z_dim:
        raise ValueError("latent size mismatch")
    cv = _encode_condition(c, w.c_dim)
    a0 = np.empty((len(X), w.in_dim), dtype=w.dtype)
    a0[:, :3] = np.asarray(X) / CUBE_HALF
    a0[:, 3:3 + w.z_dim] = z / LATENT_INIT
    a0[:, 3 + w.z_dim:] = cv
    return a0


def _forward_core(w: DecoderWeights, a0):
    """Evaluate the net on assembled rows; returns outputs and layer cache."""
    cache = []
    h = a0
    for i, (W, b) in enumerate(zip(w.weights, w.biases)):
        if i == SKIP_LAYER:
            h = np.concatenate([h, a0], axis=1)
        u = h @ W + b
        cache.append((h, u))
        h = _softplus(u) if i == N_LAYERS - 1 else np.maximum(u, 0.0)
    return h, cache


def _backward_core(w: DecoderWeights, cache, dout, need_params=True):
    """Backpropagate dout; returns parameter grads and the input-row grad."""
    dWs = [None] * N_LAYERS
    dbs = [None] * N_LAYERS
    da0 = None
    dh = dout
    for i in range(N_LAYERS - 1, -1, -1):
        h, u = cache[i]
        du = dh * (expit(u) if i == N_LAYERS - 1 else (u > 0.0))
        if need_params:
            dWs[i] = h.T @ du
            dbs[i] = du.sum(axis=0)
        dh = du @ w.weights[i].T
        if i == SKIP_LAYER:
            cut = dh.shape[1] - w.in_dim
            da0 = dh[:, cut:]
            dh = dh[:, :cut]
    da0 = dh if da0 is None else da0 + dh
    return dWs, dbs, da0


def forward(w: DecoderWeights, x, z, c):
    """Decode normalized field values at object-centric positions.

    x is (..., 3) in meters relative to the cube center; z a z_dim latent;
    c a ConditionVector or its encoded vector.  Outputs are (..., 3) in
    normalized units (each channel cap maps to 1) and non-negative by the
    softplus head.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x.reshape(-1, 3)
    out, _ = _forward_core(w, _assemble(w, X, z, c))
    out = out.astype(float)
    return out[0] if single else out.reshape(x.shape[:-1] + (3,))


# -- optimizer ---------------------------------------------------------------

class Adam:
    """First-order adaptive-moment descent over a list of arrays, in place."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            g = g.astype(p.dtype, copy=False)
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# -- training ----------------------------------------------------------------

@dataclass
class TrainingCase:
    """Field samples of one scene on the object-centric cube."""

    case_id: str
    condition: ConditionVector
    positions: np.ndarray     # (n, 3) offsets from the cube center, meters
    targets: np.ndarray       # (n, 3) raw channel values

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        self.targets = np.asarray(self.targets, dtype=float).reshape(-1, 3)
        if len(self.positions) != len(self.targets):
            raise ValueError("positions and targets disagree in length")
        if len(self.positions) == 0:
            raise ValueError("a case needs at least one sample")
        if np.abs(self.positions).max() > CUBE_HALF + 1e-9:
            raise ValueError("sample positions outside the cube")
        if not np.all(np.isfinite(self.targets)) or self.targets.min() < 0.0:
            raise ValueError("targets must be finite and non-negative")


def _grid_center(grid: ScalarGrid3):
    return grid.origin + 0.5 * np.asarray(grid.dims) * grid.spacing


def training_case_from_scene(scene: Scene, demo: Trajectory6, case_id,
                             h: float = DEFAULT_H, half: float = CUBE_HALF,
                             sigma: float = DEFAULT_SIGMA,
                             condition: ConditionVector | None = None
                             ) -> TrainingCase:
    """Sample the three demo fields on the cube around the scene target."""
    center = scene.target().pos
    grid = object_cube_grid(center, half, h)
    f = build_fields(scene, demo, h=h, sigma=sigma, grid=grid)
    pos = (grid.centers() - center).reshape(-1, 3)
    tgt = np.stack([ch.values.reshape(-1) for ch in f.channels()], axis=1)
    if condition is None:
        condition = ConditionVector(goal_height=float(center[2]))
    return TrainingCase(str(case_id), condition, pos, tgt)


def _recon_terms(out, tgt_n):
    """Batch-summed reconstruction loss and its output gradient.

    Absolute error on the two distance channels, squared error on the
    arrival channel, per the channel noise models.
    """
    r = out - tgt_n
    recon = float(np.abs(r[:, 0]).sum() + np.abs(r[:, 1]).sum()
                  + (r[:, 2] ** 2).sum())
    dout = np.stack([np.sign(r[:, 0]), np.sign(r[:, 1]), 2.0 * r[:, 2]],
                    axis=1)
    return recon, dout


def case_loss(w: DecoderWeights, z, case: TrainingCase,
              sigma: float = LATENT_SIGMA, index=None):
    """Full-batch loss of one case: reconstruction plus latent penalty."""
    X = case.positions if index is None else case.positions[index]
    T = case.targets if index is None else case.targets[index]
    out, _ = _forward_core(w, _assemble(w, X, z, case.condition))
    recon, _ = _recon_terms(out, (T / _CAPS).astype(w.dtype))
    z = np.asarray(z, dtype=float)
    return recon + float(z @ z) / float(sigma) ** 2, recon


def training_loss(w: DecoderWeights, latents, cases,
                  sigma: float = LATENT_SIGMA):
    """Total full-batch loss over all cases; pure, order-independent."""
    per = np.empty(len(cases))
    for i, case in enumerate(cases):
        per[i] = case_loss(w, latents[i], case, sigma)[0]
    return float(per.sum())


@dataclass
class TrainResult:
    weights: DecoderWeights
    latents: np.ndarray       # (n_cases, z_dim), rows match case_ids
    case_ids: list
    history: list             # per-epoch total loss
    recon_history: list       # per-epoch reconstruction part alone


def train(cases, epochs: int = 200, lr: float = TRAIN_LR,
          batch: int | None = SPATIAL_BATCH, sigma: float = LATENT_SIGMA,
          seed: int = 0, weights: DecoderWeights | None = None,
          sweeps: int = 1) -> TrainResult:
    """Jointly optimize shared weights and one latent code per case.

    Each step draws a spatial minibatch from one case, sums the
    reconstruction terms over it, adds that case's ||z||^2 / sigma^2
    penalty and takes an adaptive-moment step on the weights and the
    case latent.  An epoch visits every case `sweeps` times in shuffled
    order, so codes collect `sweeps` optimizer steps per epoch.  Aborts
    when the loss stops being finite.
    """
    cases = list(cases)
    if not cases:
        raise ValueError("no training cases")
    rng = np.random.default_rng(seed)
    w = init_weights(rng) if weights is None else weights
    n = len(cases)
    Z = rng.normal(0.0, LATENT_INIT, size=(n, w.z_dim))
    wopt = Adam(w.params(), lr)
    zopts = [Adam([Z[i]], lr) for i in range(n)]
    reg = 1.0 / float(sigma) ** 2
    history, recon_history = [], []
    for epoch in range(epochs):
        total = 0.0
        total_recon = 0.0
        for ci in np.concatenate([rng.permutation(n) for _ in range(sweeps)]):
            case = cases[ci]
            ns = len(case.positions)
            if batch is not None and batch < ns:
                pick = rng.integers(0, ns, size=batch)
                X, T = case.positions[pick], case.targets[pick]
            else:
                X, T = case.positions, case.targets
            z = Z[ci]
            a0 = _assemble(w, X, z, case.condition)
            out, cache = _forward_core(w, a0)
            recon, dout = _recon_terms(out, (T / _CAPS).astype(w.dtype))
            loss = recon + reg * float(z @ z)
            if not np.isfinite(loss):
                raise TrainingFailure(f"non-finite loss at epoch {epoch}",
                                      epoch, history)
            dWs, dbs, da0 = _backward_core(w, cache, dout.astype(w.dtype))
            dz = da0[:, 3:3 + w.z_dim].sum(axis=0).astype(float) \
                / LATENT_INIT + 2.0 * reg * z
            grads = []
            for gW, gb in zip(dWs, dbs):
                grads.append(gW)
                grads.append(gb)
            wopt.step(grads)
            zopts[ci].step([dz])
            total += loss
            total_recon += recon
        history.append(total)
        recon_history.append(total_recon)
    return TrainResult(w, Z, [c.case_id for c in cases],
                       history, recon_history)


# -- runtime latent recovery -------------------------------------------------

@dataclass
class InferenceResult:
    z: np.ndarray
    history: list             # per-step loss
    gamma: float              # observation-count reweighting of the toa term
    n_prior: int              # anchor count (solid interiors + near-target)


def infer_latent(w: DecoderWeights, observed: FieldTriple, prior: Trajectory6,
                 c, steps: int = 100, lr: float = INFER_LR, seed: int = 0,
                 sigma: float = LATENT_SIGMA,
                 batch: int | None = 8192) -> InferenceResult:
    """Recover a latent from partial observations with frozen weights.

    observed supplies the target and obstacle channels on the object cube
    (its arrival channel is ignored).  The arrival term is anchored only
    where its value is known without a demonstration of this scene: zero
    wherever the target channel vanishes (cells the wrist can never
    occupy or reach, where the arrival inverse is zero by construction),
    and the inverse remaining demo time at prior samples that come within
    NEAR_TARGET of the target.  The anchor term is scaled by
    gamma = (observed cells) / (anchor count) to balance the two sums.
    """
    grid = observed.grid
    center = _grid_center(grid)
    X_all = grid.centers().reshape(-1, 3) - center
    t_tgt = observed.d_target.values.reshape(-1) / _CAPS[0]
    t_obs = observed.d_obstacle.values.reshape(-1) / _CAPS[1]

    occ = observed.d_target.values.reshape(-1) <= 0.0
    x_o = X_all[occ]

    # geodesic target distance below NEAR_TARGET <=> inverse above its cap
    d_t_at_prior = trilinear(observed.d_target, prior.positions)
    near = d_t_at_prior > 1.0 / NEAR_TARGET
    if not np.any(near):
        raise InferenceFailure("prior trajectory never approaches the target")
    x_t = prior.positions[near] - center
    remain = prior.times[-1] - prior.times[near]
    toa_near = 1.0 / np.maximum(remain, EPS_T) / _CAPS[2]

    x_prior = np.concatenate([x_o, x_t], axis=0)
    toa_targets = np.concatenate([np.zeros(len(x_o)), toa_near])
    n_obs = len(X_all)
    gamma = n_obs / len(x_prior)
    reg = 1.0 / float(sigma) ** 2

    rng = np.random.default_rng(seed)
    z = rng.normal(0.0, LATENT_INIT, size=w.z_dim)
    opt = Adam([z], lr)
    cvec = _encode_condition(c, w.c_dim)
    history = []
    for _ in range(steps):
        if batch is not None and batch < n_obs:
            pick = rng.integers(0, n_obs, size=batch)
            scale = n_obs / batch
        else:
            pick = slice(None)
            scale = 1.0
        Xo = X_all[pick]
        k = len(Xo)
        a0 = _assemble(w, np.concatenate([Xo, x_prior], axis=0), z, cvec)
        out, cache = _forward_core(w, a0)
        r_t = out[:k, 0] - t_tgt[pick]
        r_o = out[:k, 1] - t_obs[pick]
        r_a = out[k:, 2] - toa_targets
        loss = scale * (np.abs(r_t).sum() + np.abs(r_o).sum()) \
            + gamma * (r_a ** 2).sum() + reg * float(z @ z)
        dout = np.zeros(out.shape, dtype=w.dtype)
        dout[:k, 0] = scale * np.sign(r_t)
        dout[:k, 1] = scale * np.sign(r_o)
        dout[k:, 2] = gamma * 2.0 * r_a
        _, _, da0 = _backward_core(w, cache, dout, need_params=False)
        dz = da0[:, 3:3 + w.z_dim].sum(axis=0).astype(float) / LATENT_INIT \
            + 2.0 * reg * z
        opt.step([dz])
        history.append(float(loss))
    return InferenceResult(z, history, float(gamma), len(x_prior))


def decode_field(w: DecoderWeights, z, c, grid: ScalarGrid3) -> FieldTriple:
    """Evaluate the decoder on every cell center of an object-centric grid.

    De-normalizes to field units and clamps to the channel caps so the
    result honors the field-triple contract end to end.
    """
    center = _grid_center(grid)
    X = grid.centers().reshape(-1, 3) - center
    out = np.empty((len(X), 3))
    step = 65536
    for s in range(0, len(X), step):
        out[s:s + step] = forward(w, X[s:s + step], z, c)
    out = np.clip(out, 0.0, 1.0) * _CAPS
    t, o, a = (out[:, j].reshape(grid.dims) for j in range(3))
    return FieldTriple(grid.like(t), grid.like(o), grid.like(a))


# -- checkpoint format -------------------------------------------------------

_ADWT_MAGIC = b"ADWT"
_ADWT_VERSION = 1


def save_weights(path, w: DecoderWeights) -> None:
    """Versioned binary checkpoint: shape table then float32 parameters."""
    head = _ADWT_MAGIC + struct.pack("<IIII", _ADWT_VERSION, w.z_dim,
                                     w.c_dim, N_LAYERS)
    head += b"".join(struct.pack("<II", *W.shape) for W in w.weights)
    body = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes()
                    for a in w.params())
    atomic_write_bytes(path, head + body)


def load_weights(path) -> DecoderWeights:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != _ADWT_MAGIC:
        raise ValueError("not a decoder checkpoint (bad magic)")
    ver, z_dim, c_dim, n_layers = struct.unpack_from("<IIII", raw, 4)
    if ver != _ADWT_VERSION:
        raise ValueError(f"unsupported checkpoint version {ver}")
    off = 4 + struct.calcsize("<IIII")
    shapes = []
    for _ in range(n_layers):
        shapes.append(struct.unpack_from("<II", raw, off))
        off += 8
    Ws, bs = [], []
    for fi, fo in shapes:
        W = np.frombuffer(raw, dtype="<f4", count=fi * fo, offset=off)
        off += 4 * fi * fo
        b = np.frombuffer(raw, dtype="<f4", count=fo, offset=off)
        off += 4 * fo
        Ws.append(W.reshape(fi, fo).copy())
        bs.append(b.copy())
    if off != len(raw):
        raise ValueError("checkpoint truncated or oversized")
    return DecoderWeights(Ws, bs, z_dim, c_dim)
