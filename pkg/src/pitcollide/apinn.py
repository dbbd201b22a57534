"""Adaptive physics-informed predictor of the next vehicle state.

One step maps the current state, the mean collision force over the next 10 ms,
the time since impact and the vehicle descriptor to a Gaussian mixture over
``[v_x, v_y, psi_dot, phi_dot]``. Component means are centred on a one-step
prediction of the nominal 4DOF model and may move at most ``sigma_bound`` away
from it. Training mixes a data term with a physics residual whose weight grows
with epoch and with the local density of training data.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigError, Diverged, DivergedRollout, EmptyTrainingSet, IntegrationDiverged, UntrainedWeights
from .gmm import SIGMA_MIN, StateGmm
from .nn import checkpoint
from .nn import tensor as T
from .nn.layers import Attention, Dense, Module, Parameter, freeze_leading, time_encoding
from .nn.optim import Adam
from .vehicle import (MAX_SPEED, MAX_YAW_RATE, OUTPUT_DT, PHI, PSI, ContactPoint, VehicleParams, _consistent_tires,
                      _derivative, _slip, collision_load, simulate)

STEP = OUTPUT_DT
DYN = (0, 1, 3, 5)  # v_x, v_y, psi_dot, phi_dot inside the 8-state
SIGMA_BOUND = (5.0, 3.0, 1.0, 0.8)
BOUNDS = (60.0, 30.0, 6.0, 4.0)
STATE_NORM = np.array([20.0, 5.0, 1.0, 0.05, 0.5])  # v_x, v_y, psi_dot, phi, phi_dot
ACC_NORM = np.array([5.0, 5.0, 2.0, 5.0])
LOAD_NORM = np.array([1e4, 1e4, 1e4, 1e3])
FLOOR = 0.01  # absolute floor of the auto-adjusted physics weight


@dataclass(frozen=True)
class AdaptiveSchedule:
    lambda_min: float = 0.1
    lambda_max: float = 10.0
    t0: float = 300.0  # epochs
    tau: float = 100.0  # epochs
    h_bandwidth: float = 0.1
    lambda_boundary: float = 1.0
    sigma_bound: Tuple[float, ...] = SIGMA_BOUND
    tau_c: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "sigma_bound", tuple(float(s) for s in self.sigma_bound))
        if not 0 < self.lambda_min < self.lambda_max:
            raise ConfigError("need 0 < lambda_min < lambda_max")
        if min(self.tau, self.h_bandwidth, self.lambda_boundary, self.tau_c, *self.sigma_bound) <= 0:
            raise ConfigError("schedule constants must be positive")
        if len(self.sigma_bound) != 4:
            raise ConfigError("sigma_bound needs four entries")


# ----------------------------------------------------------------------------- weights and small losses


def _sigmoid(x):
    return 0.5 + 0.5 * np.tanh(0.5 * np.asarray(x, dtype=float))


def adaptive_weight(epoch, data_quality, schedule: AdaptiveSchedule = AdaptiveSchedule()):
    """Physics weight lambda_min + (lambda_max - lambda_min) * sigmoid((epoch - t0) / tau) * quality."""
    s = schedule
    if np.any(np.asarray(epoch) < 0):
        raise ValueError("epoch must be nonnegative")
    dq = np.asarray(data_quality, dtype=float)
    if np.any((dq < 0) | (dq > 1)):
        raise ValueError("data quality must lie in [0, 1]")
    return s.lambda_min + (s.lambda_max - s.lambda_min) * _sigmoid((np.asarray(epoch) - s.t0) / s.tau) * dq


def data_quality(points, training_points, h_bandwidth: float = 0.1, exclude=None, groups=None) -> np.ndarray:
    """exp(-d / h) with d the distance to the nearest training point.

    ``points`` (n, k) and ``training_points`` (m, k) live in the same normalized
    feature space. With ``exclude`` (n,) and ``groups`` (m,) a point ignores
    training points of its own group (leave-one-trajectory-out).
    """
    train = np.atleast_2d(np.asarray(training_points, dtype=float))
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if train.size == 0 or train.shape[0] == 0:
        raise EmptyTrainingSet("data quality needs at least one training point")
    d = np.empty(len(pts))
    if exclude is None:
        d[:], _ = cKDTree(train).query(pts)
    else:
        exclude, groups = np.asarray(exclude), np.asarray(groups)
        for g in np.unique(exclude):
            rows = exclude == g
            others = train[groups != g]
            if len(others) == 0:
                others = train
            d[rows], _ = cKDTree(others).query(pts[rows])
    return np.exp(-d / h_bandwidth)


def soft_boundary_loss(prediction, bounds=BOUNDS, scales=(1.0, 1.0, 1.0, 1.0), lambda_boundary: float = 1.0) -> float:
    """lambda * sum_i softplus((|x_i| - b_i) / s_i)^2, averaged over leading axes."""
    s = np.asarray(scales, dtype=float)
    if np.any(s <= 0):
        raise ValueError("boundary scales must be positive")
    u = (np.abs(np.asarray(prediction, dtype=float)) - np.asarray(bounds)) / s
    sp = np.logaddexp(0.0, u)
    return float(lambda_boundary * np.mean(np.sum(sp * sp, axis=-1)))


def balance_ratio(L_data: float, L_physics: float) -> float:
    if L_data < 0 or L_physics < 0:
        raise ValueError("losses must be nonnegative")
    total = L_data + L_physics
    return 0.5 if total == 0 else float(L_data / total)


def auto_adjust(lambda_physics, ratio: float, floor: float = FLOOR):
    """lambda * max(0.1, ratio), never below ``floor``."""
    return np.maximum(np.asarray(lambda_physics, dtype=float) * max(0.1, float(ratio)), floor)


def consistency_loss(means, tau_c: float = 2.0) -> float:
    """Sum over component pairs of exp(-|mu_j - mu_k|^2 / (2 tau_c^2))."""
    mu = np.atleast_2d(np.asarray(means, dtype=float))
    total = 0.0
    for j in range(len(mu)):
        for k in range(j + 1, len(mu)):
            d = mu[j] - mu[k]
            total += math.exp(-float(d @ d) / (2.0 * tau_c ** 2))
    return total


def gmm_head(z_logits, z_mu, z_sigma, prior, sigma_bound=SIGMA_BOUND) -> StateGmm:
    """Valid mixture from raw head outputs: softmax weights, bounded means around ``prior``, floored variances."""
    z = np.asarray(z_logits, dtype=float)
    w = np.exp(z - z.max())
    w /= w.sum()
    prior = np.asarray(prior, dtype=float)
    if not np.all(np.isfinite(prior)):
        raise ValueError("prior must be finite")
    means = prior + np.tanh(np.asarray(z_mu, dtype=float)) * np.asarray(sigma_bound)
    var = SIGMA_MIN ** 2 + np.exp(np.asarray(z_sigma, dtype=float))
    return StateGmm(w, means, var)


# ----------------------------------------------------------------------------- 4DOF pieces


def _contact(params: VehicleParams, contact=None) -> np.ndarray:
    return (ContactPoint.rear_axle(params) if contact is None else contact).to_array()


def dynamic_derivative(x8, force, params: VehicleParams, contact=None) -> np.ndarray:
    """4DOF time derivative of ``[v_x, v_y, psi_dot, phi_dot]`` for ground-frame force ``force``."""
    x8 = np.asarray(x8, dtype=float)
    tt = _consistent_tires(x8, 0.0, params)
    fb = collision_load(np.asarray(force, dtype=float), x8[..., PSI], _contact(params, contact), params)
    return _derivative(x8, tt["acc"], 0.0, fb, params, True, None, tt)[..., DYN]


def kinematic_update(x8, v_next) -> np.ndarray:
    """Next full state from the predicted ``[v_x, v_y, psi_dot, phi_dot]``.

    Heading and roll use the trapezoid rule; position integrates the ground
    velocity at the two ends of the step.
    """
    x8 = np.asarray(x8, dtype=float)
    v = np.asarray(v_next, dtype=float)
    out = np.empty(np.broadcast_shapes(x8.shape, v.shape[:-1] + (8,)))
    out[..., DYN] = v
    out[..., PSI] = x8[..., PSI] + 0.5 * STEP * (x8[..., 3] + v[..., 2])
    out[..., PHI] = x8[..., PHI] + 0.5 * STEP * (x8[..., 5] + v[..., 3])
    c0, s0 = np.cos(x8[..., PSI]), np.sin(x8[..., PSI])
    c1, s1 = np.cos(out[..., PSI]), np.sin(out[..., PSI])
    vx0, vy0, vx1, vy1 = x8[..., 0], x8[..., 1], v[..., 0], v[..., 1]
    out[..., 6] = x8[..., 6] + 0.5 * STEP * (vx0 * c0 - vy0 * s0 + vx1 * c1 - vy1 * s1)
    out[..., 7] = x8[..., 7] + 0.5 * STEP * (vx0 * s0 + vy0 * c0 + vx1 * s1 + vy1 * c1)
    return out


def one_step_prior(x8, force, params: VehicleParams, contact=None) -> np.ndarray:
    """Nominal 4DOF state 10 ms ahead under a constant ground force (one RK4 step).

    With the force held constant over the step, 1 ms substeps change the result by
    less than the step-mean force approximation does.
    """
    x8 = np.atleast_2d(np.asarray(x8, dtype=float))
    F = np.atleast_2d(np.asarray(force, dtype=float))
    grid = np.repeat(F[:, None, :], 2, axis=1)
    out = simulate(x8, params, grid, STEP, _contact(params, contact), 0.0, STEP, STEP, "rk4")
    return out["states"][:, 1]


def _trapezoid_residual(x8, x8_next, force, params, contact=None) -> np.ndarray:
    f0 = dynamic_derivative(x8, force, params, contact)
    f1 = dynamic_derivative(x8_next, force, params, contact)
    return (x8_next[..., DYN] - x8[..., DYN]) / STEP - 0.5 * (f0 + f1)


def physics_residual_loss(states, force, params: VehicleParams = VehicleParams(), lambda_physics: float = 1.0,
                          contact=None) -> float:
    """lambda * mean squared 4DOF residual of a 100 Hz state sequence.

    ``states`` (..., N, 8); ``force`` (..., N, 2) holds the ground force over
    each interval. The time derivative is the forward difference of consecutive
    rows and the model derivative is averaged over both ends of the interval.
    """
    s = np.asarray(states, dtype=float)
    F = np.asarray(force, dtype=float)[..., : s.shape[-2] - 1, :]
    if lambda_physics == 0:
        return 0.0
    r = _trapezoid_residual(s[..., :-1, :], s[..., 1:, :], F, params, contact)
    return float(lambda_physics * np.mean(np.sum(r * r, axis=-1)))


def gmm_physics_loss(gmm: StateGmm, x8, force, params: VehicleParams = VehicleParams(), delta=None,
                     contact=None) -> float:
    """Weighted squared residual of every component mean, less its learned correction ``delta`` (J, 4)."""
    x8 = np.asarray(x8, dtype=float)
    nxt = kinematic_update(x8[None, :], gmm.means)
    r = _trapezoid_residual(np.broadcast_to(x8, nxt.shape), nxt, np.broadcast_to(force, (gmm.J, 2)), params,
                            contact)
    if delta is not None:
        r = r - np.asarray(delta, dtype=float)
    return float(gmm.weights @ np.sum(r * r, axis=-1))


# ----------------------------------------------------------------------------- network


@dataclass(frozen=True)
class ApinnConfig:
    J: int = 3
    d_vehicle: int = 32
    n_vehicle_tokens: int = 4
    d_model: int = 64
    d_time: int = 16
    trunk: Tuple[int, ...] = (128, 128, 64)
    physics: bool = True  # False gives the data-only baseline
    state_scale: Tuple[float, ...] = (0.005, 0.02, 0.01, 0.005)  # typical one-step deviation per output
    smooth_scale: Tuple[float, ...] = (0.01, 0.02, 0.01, 0.02)  # typical second difference per output
    lambda_nll: float = 0.05
    lambda_traj: float = 1.0
    lambda_smooth: float = 0.1
    lambda_bound: float = 1.0
    lambda_gmm: float = 0.1
    lambda_cons: float = 0.01
    schedule: AdaptiveSchedule = field(default_factory=AdaptiveSchedule)
    lr: float = 1e-3
    finetune_lr: float = 1e-3
    batch_size: int = 256
    pretrain_epochs: int = 30
    finetune_epochs: int = 100
    freeze_ratio: float = 0.6
    clip_norm: Optional[float] = 10.0
    horizon: float = 4.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "trunk", tuple(int(w) for w in self.trunk))
        object.__setattr__(self, "state_scale", tuple(float(s) for s in self.state_scale))
        object.__setattr__(self, "smooth_scale", tuple(float(s) for s in self.smooth_scale))
        if isinstance(self.schedule, dict):
            object.__setattr__(self, "schedule", AdaptiveSchedule(**self.schedule))
        if self.J < 1:
            raise ConfigError("J must be at least 1")
        if not 0 <= self.freeze_ratio <= 1:
            raise ConfigError("freeze_ratio must lie in [0, 1]")
        if self.pretrain_epochs < 0 or self.finetune_epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be nonnegative and batch_size positive")
        if min(self.state_scale) <= 0 or len(self.state_scale) != 4:
            raise ConfigError("state_scale needs four positive entries")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        d["schedule"]["sigma_bound"] = list(self.schedule.sigma_bound)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ApinnConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - names
        if extra:
            raise ConfigError(f"unknown dynamics config keys: {sorted(extra)}")
        d = dict(d)
        if "schedule" in d:
            sched = dict(d["schedule"])
            bad = set(sched) - {f.name for f in dataclasses.fields(AdaptiveSchedule)}
            if bad:
                raise ConfigError(f"unknown schedule keys: {sorted(bad)}")
            d["schedule"] = AdaptiveSchedule(**sched)
        return cls(**d)

    def architecture(self) -> dict:
        return {"net": "state-gmm", "J": self.J, "d_vehicle": self.d_vehicle, "tokens": self.n_vehicle_tokens,
                "d_model": self.d_model, "d_time": self.d_time, "trunk": list(self.trunk), "physics": self.physics}

    @property
    def n_inputs(self) -> int:
        # state 5, body load 4, previous increment 4, and with physics: prior increment 4 and slip angles 4
        return 13 + (8 if self.physics else 0)


class StateNet(Module):
    """Vehicle-descriptor tokens, state/force encoder, cross-attention fusion, dense trunk, mixture head."""

    def __init__(self, cfg: ApinnConfig, rng: np.random.Generator):
        self.cfg = cfg
        dv, d, J = cfg.d_vehicle, cfg.d_model, cfg.J
        self.vehicle = [Dense(10, dv, rng), Dense(dv, dv, rng), Dense(dv, cfg.n_vehicle_tokens * dv, rng)]
        self.encoder = [Dense(cfg.n_inputs, d, rng), Dense(d, d, rng)]
        self.time_proj = Dense(cfg.d_time, d, rng)
        self.attn = Attention(2 * d, dv, d, rng)
        sizes = (3 * d,) + cfg.trunk
        self.trunk = [Dense(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]
        self.head = Dense(cfg.trunk[-1], J + 3 * 4 * J, rng, gain=0.1)
        self.boundary_log_scale = Parameter(np.zeros(4), "boundary_log_scale")

    def layer_list(self) -> List[Module]:
        """Layers in input-to-output order, the unit of the freezing rule."""
        return [*self.vehicle, *self.encoder, self.time_proj, self.attn, *self.trunk, self.head]

    def forward(self, feats: np.ndarray, t: np.ndarray, vehicle: np.ndarray):
        """``feats`` (B, n_inputs), ``t`` (B,) seconds, ``vehicle`` (10,) normalized descriptor.

        Returns tensors: logits (B, J), mean pre-activations (B, J, 4), log-variance offsets (B, J, 4),
        learned residual corrections (B, J, 4).
        """
        cfg = self.cfg
        B, J, dv = feats.shape[0], cfg.J, cfg.d_vehicle
        h = T.as_tensor(vehicle.reshape(1, -1))
        for layer in self.vehicle:
            h = T.swish(layer(h))
        tokens = h.reshape(1, cfg.n_vehicle_tokens, dv) + np.zeros((B, 1, 1))
        e = T.as_tensor(feats)
        for layer in self.encoder:
            e = T.swish(layer(e))
        ht = self.time_proj(time_encoding(np.asarray(t) / STEP, cfg.d_time))
        combined = T.concat([e, ht], axis=-1)  # (B, 2d)
        fused = self.attn(combined.reshape(B, 1, 2 * cfg.d_model), tokens).reshape(B, cfg.d_model)
        z = T.concat([combined, fused], axis=-1)
        for layer in self.trunk:
            z = T.swish(layer(z))
        out = self.head(z)
        logits = out[:, :J]
        mu = out[:, J:5 * J].reshape(B, J, 4)
        logvar = out[:, 5 * J:9 * J].reshape(B, J, 4)
        delta = out[:, 9 * J:].reshape(B, J, 4)
        return logits, mu, logvar, delta


def vehicle_descriptor(params: VehicleParams) -> np.ndarray:
    return params.feature_vector() / VehicleParams().feature_vector()


def step_features(x8, x8_prev, force, params: VehicleParams, cfg: ApinnConfig, prior=None,
                  contact=None) -> np.ndarray:
    """Network inputs for a batch of steps; ``prior`` is required when ``cfg.physics``."""
    x8 = np.atleast_2d(np.asarray(x8, dtype=float))
    x8_prev = np.atleast_2d(np.asarray(x8_prev, dtype=float))
    F = np.atleast_2d(np.asarray(force, dtype=float))
    state = x8[:, [0, 1, 3, 4, 5]] / STATE_NORM
    load = collision_load(F, x8[:, PSI], _contact(params, contact), params) / LOAD_NORM
    prev = (x8[:, DYN] - x8_prev[:, DYN]) / STEP / ACC_NORM
    cols = [state, load, prev]
    if cfg.physics:
        cols.append((prior[:, DYN] - x8[:, DYN]) / STEP / ACC_NORM)
        cols.append(_slip(x8[:, 0], x8[:, 1], x8[:, 3], 0.0, params) / 0.2)
    return np.concatenate(cols, axis=1)


def _passivity(center4, x4, force, means: np.ndarray) -> np.ndarray:
    """Per-component factor on (v_x, v_y) that stops planar speed from growing when no force acts."""
    fac = np.ones_like(means)
    idle = ~np.any(force != 0, axis=-1)
    if not np.any(idle):
        return fac
    cur = np.hypot(x4[:, 0], x4[:, 1])[:, None]
    spd = np.hypot(means[..., 0], means[..., 1])
    f = np.where(idle[:, None] & (spd > cur), cur / np.maximum(spd, 1e-12), 1.0)
    fac[..., 0] = f
    fac[..., 1] = f
    return fac


def _mixture_tensors(net: StateNet, feats, t, vehicle, center4, x4, force, cfg: ApinnConfig):
    logits, zmu, zvar, delta = net.forward(feats, t, vehicle)
    if cfg.physics:
        bound = np.asarray(cfg.schedule.sigma_bound)
        means = T.tanh(zmu * (np.asarray(cfg.state_scale) / bound)) * bound + center4[:, None, :]
        means = means * _passivity(center4, x4, force, means.data)
    else:
        # data-only baseline: unbounded increments on the current state, no guard
        means = zmu * (4.0 * np.asarray(cfg.state_scale)) + center4[:, None, :]
    var = T.exp(zvar + np.log(np.asarray(cfg.state_scale) ** 2)) + SIGMA_MIN ** 2
    w = T.softmax(logits, axis=-1)
    return w, means, var, logits, delta


# ----------------------------------------------------------------------------- model


@dataclass
class ApinnModel:
    net: StateNet
    params: VehicleParams = field(default_factory=VehicleParams)
    trained: bool = False
    history: List[dict] = field(default_factory=list)
    n_frozen: int = 0
    contact: Optional[ContactPoint] = None

    @property
    def cfg(self) -> ApinnConfig:
        return self.net.cfg

    def step(self, x8, x8_prev, force, t) -> Tuple[List[StateGmm], np.ndarray]:
        """Mixtures for a batch of steps and the kinematically completed next states of their means."""
        x8 = np.atleast_2d(np.asarray(x8, dtype=float))
        B = x8.shape[0]
        F = np.broadcast_to(np.asarray(force, dtype=float), (B, 2))
        t = np.broadcast_to(np.asarray(t, dtype=float), (B,))
        prior = one_step_prior(x8, F, self.params, self.contact) if self.cfg.physics else None
        feats = step_features(x8, x8_prev, F, self.params, self.cfg, prior, self.contact)
        center = (prior if prior is not None else x8)[:, DYN]
        w, means, var, _, _ = _mixture_tensors(self.net, feats, t, vehicle_descriptor(self.params), center,
                                               x8[:, DYN], F, self.cfg)
        gmms = [StateGmm(w.data[b], means.data[b], var.data[b]) for b in range(B)]
        v = np.einsum("bj,bjk->bk", w.data, means.data)
        return gmms, kinematic_update(x8, v)

    def save(self, path, extra: Optional[dict] = None):
        mask = [bool(next(iter(layer.parameters())).frozen) for layer in self.net.layer_list()]
        meta = {"config": self.cfg.to_dict(), "architecture": architecture_id(self.cfg),
                "params": self.params.to_dict(), "trained": self.trained, "seed": self.cfg.seed,
                "epoch": len(self.history), "n_frozen": self.n_frozen, "freeze_mask": mask,
                "history": [{k: r[k] for k in ("epoch", "phase", "train_loss", "val_loss", "physics_loss",
                                               "balance_ratio")} for r in self.history]}
        meta.update(extra or {})
        checkpoint.save(path, self.net, meta)

    @classmethod
    def load(cls, path, require_trained: bool = True) -> "ApinnModel":
        header, _ = checkpoint.read(path)
        meta = header["meta"]
        cfg = ApinnConfig.from_dict(meta["config"])
        net = StateNet(cfg, np.random.default_rng(0))
        meta = checkpoint.load(path, net, require_trained)
        return cls(net, VehicleParams.from_dict(meta["params"]), bool(meta["trained"]),
                   [dict(r) for r in meta.get("history", [])], int(meta.get("n_frozen", 0)))


def architecture_id(cfg: ApinnConfig) -> str:
    return checkpoint.architecture_hash(cfg.architecture())


def new_model(cfg: ApinnConfig = ApinnConfig(), params: VehicleParams = VehicleParams()) -> ApinnModel:
    return ApinnModel(StateNet(cfg, np.random.default_rng(cfg.seed)), params)


def predict_next_state(state, force, model: ApinnModel, t: float = 0.0, previous=None) -> StateGmm:
    """One-step mixture for a single 8-state; ``previous`` defaults to ``state`` (no history)."""
    if not model.trained:
        raise UntrainedWeights("dynamics model has not been trained")
    x = np.asarray(state, dtype=float).reshape(1, 8)
    prev = x if previous is None else np.asarray(previous, dtype=float).reshape(1, 8)
    gmms, _ = model.step(x, prev, np.asarray(force, dtype=float).reshape(1, 2), t)
    return gmms[0]


def _guard(x, k):
    bad = ~np.all(np.isfinite(x), axis=1)
    bad |= np.hypot(x[:, 0], x[:, 1]) > MAX_SPEED
    bad |= np.abs(x[:, 3]) > MAX_YAW_RATE
    bad |= np.abs(x[:, PHI]) >= math.pi / 2
    if np.any(bad):
        raise DivergedRollout(f"rollout left guard bounds at step {k} (batch index {int(np.flatnonzero(bad)[0])})")


def rollout(model: ApinnModel, x0, step_force, n_steps: Optional[int] = None, t0: float = 0.0,
            keep_mixtures: bool = False):
    """Compose one-step predictions from ``x0`` (B, 8) under ground forces ``step_force`` (B, n, 2).

    Returns the (B, n_steps + 1, 8) mean trajectory and, if asked, the mixtures per step.
    """
    if not model.trained:
        raise UntrainedWeights("dynamics model has not been trained")
    x = np.atleast_2d(np.asarray(x0, dtype=float)).copy()
    F = np.asarray(step_force, dtype=float).reshape(x.shape[0], -1, 2)
    n = F.shape[1] if n_steps is None else n_steps
    out = np.empty((x.shape[0], n + 1, 8))
    out[:, 0] = x
    prev = x
    mixtures = []
    for k in range(n):
        Fk = F[:, k] if k < F.shape[1] else np.zeros((x.shape[0], 2))
        try:
            gmms, nxt = model.step(x, prev, Fk, t0 + k * STEP)
        except IntegrationDiverged as exc:
            raise DivergedRollout(f"nominal prior diverged at step {k}: {exc}") from exc
        _guard(nxt, k + 1)
        if keep_mixtures:
            mixtures.append(gmms)
        prev, x = x, nxt
        out[:, k + 1] = x
    return (out, mixtures) if keep_mixtures else out


def position_errors(pred, truth) -> np.ndarray:
    """Euclidean X-Y error per trajectory and step."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    n = min(pred.shape[-2], truth.shape[-2])
    return np.hypot(pred[..., :n, 6] - truth[..., :n, 6], pred[..., :n, 7] - truth[..., :n, 7])


# ----------------------------------------------------------------------------- training


def _transition_table(trajset, cfg: ApinnConfig, params: VehicleParams, contact=None) -> dict:
    """Flattened training pairs with previous states, 4DOF priors and features."""
    n = min(int(round(cfg.horizon / STEP)), trajset.states.shape[1] - 1)
    S = trajset.states
    prev = np.concatenate([S[:, :1], S[:, : n - 1]], axis=1)
    x = S[:, :n].reshape(-1, 8)
    F = trajset.step_force[:, :n].reshape(-1, 2)
    tab = dict(x=x, prev=prev.reshape(-1, 8), x_next=S[:, 1:n + 1].reshape(-1, 8), force=F,
               t=np.tile(trajset.t[:n], len(trajset)), traj=np.repeat(np.arange(len(trajset)), n))
    tab["has_prev"] = np.tile(np.arange(n) > 0, len(trajset))
    tab["prior"] = one_step_prior(x, F, params, contact) if cfg.physics else None
    tab["feats"] = step_features(x, tab["prev"], F, params, cfg, tab["prior"], contact)
    tab["center"] = (tab["prior"] if cfg.physics else x)[:, DYN]
    return tab


def temporal_features(t, force, horizon: float, f_ref: float) -> np.ndarray:
    """Normalized (time, force magnitude) pairs used for data-quality distances."""
    return np.column_stack([np.asarray(t) / horizon, np.linalg.norm(force, axis=1) / f_ref])


def _quality(tab, cfg: ApinnConfig) -> np.ndarray:
    if len(tab["x"]) == 0:
        raise EmptyTrainingSet("no training transitions")
    f_ref = max(float(np.linalg.norm(tab["force"], axis=1).max()), 1.0)
    pts = temporal_features(tab["t"], tab["force"], cfg.horizon, f_ref)
    if len(np.unique(tab["traj"])) < 2:
        return data_quality(pts, pts, cfg.schedule.h_bandwidth)
    return data_quality(pts, pts, cfg.schedule.h_bandwidth, tab["traj"], tab["traj"])


def _physics_jacobian_fn(x8, force, params, contact):
    """Closures mapping candidate next velocities (n, M, 4) to residuals, with a finite-difference Jacobian."""
    def fn(v):
        nxt = kinematic_update(x8[:, None, :], v)
        x0 = np.broadcast_to(x8[:, None, :], nxt.shape)
        F = np.broadcast_to(force[:, None, :], nxt.shape[:-1] + (2,))
        return _trapezoid_residual(x0, nxt, F, params, contact)

    def jac(v):
        base = fn(v)
        J = np.empty(v.shape + (4,))
        for i in range(4):
            h = 1e-6 * np.maximum(1.0, np.abs(v[..., i]))
            vp = v.copy()
            vp[..., i] += h
            J[..., :, i] = (fn(vp) - base) / h[..., None]
        return J

    return fn, jac


def _batch_loss(net: StateNet, tab: dict, idx, cfg: ApinnConfig, lam, vehicle, params, contact):
    x = tab["x"][idx]
    y = tab["x_next"][idx][:, DYN]
    scale = np.asarray(cfg.state_scale)
    w, means, var, logits, delta = _mixture_tensors(net, tab["feats"][idx], tab["t"][idx], vehicle,
                                                    tab["center"][idx], x[:, DYN], tab["force"][idx], cfg)
    mean = T.tsum(means * w.reshape(len(idx), cfg.J, 1), axis=1)
    err = (mean - y) * (1.0 / scale)
    l_mse = T.mean(T.tsum(err * err, axis=1))
    d = means - y[:, None, :]
    logn = -0.5 * T.tsum(d * d / var + T.log(var) + math.log(2 * math.pi), axis=-1)
    logw = logits - T.logsumexp(logits, axis=-1, keepdims=True)
    nll = -T.mean(T.logsumexp(logw + logn, axis=-1))
    l_data = l_mse + nll * cfg.lambda_nll
    parts = {"data": l_data.item(), "mse": l_mse.item()}
    if not cfg.physics:
        return l_data, parts
    return _physics_terms(net, tab, idx, cfg, lam, params, contact, x, y, w, means, mean, delta, l_data, parts)


def _physics_terms(net, tab, idx, cfg, lam, params, contact, x, y, w, means, mean, delta, l_data, parts):
    scale = np.asarray(cfg.state_scale)
    B, J = len(idx), cfg.J
    fn, jac = _physics_jacobian_fn(x, tab["force"][idx], params, contact)
    pts = T.concat([mean.reshape(B, 1, 4), means], axis=1)  # (B, J + 1, 4)
    r = T.external(fn, jac, pts, "physics_residual") * (STEP / scale)
    r_mean = r[:, 0, :]
    per = T.tsum(r_mean * r_mean, axis=1)
    l_phys = T.mean(per * lam)
    rj = r[:, 1:, :] - delta
    l_gmm = T.mean(T.tsum(T.tsum(rj * rj, axis=2) * w, axis=1))
    # one-step global position of the mixture mean
    nxt = kinematic_update(x, mean.data)
    c, s = np.cos(nxt[:, PSI]), np.sin(nxt[:, PSI])
    dv = mean - y
    pos = T.concat([(dv[:, 0:1] * c[:, None] - dv[:, 1:2] * s[:, None]),
                    (dv[:, 0:1] * s[:, None] + dv[:, 1:2] * c[:, None])], axis=1) * (0.5 / scale[:2])
    l_traj = T.mean(T.tsum(pos * pos, axis=1))
    has = tab["has_prev"][idx].astype(float)[:, None]
    curv = (mean - (2.0 * x[:, DYN] - tab["prev"][idx][:, DYN])) * (1.0 / np.asarray(cfg.smooth_scale)) * has
    l_smooth = T.mean(T.tsum(curv * curv, axis=1))
    s_b = T.exp(net.boundary_log_scale)
    u = (T.tabs(mean) - np.asarray(BOUNDS)) / s_b
    sp = T.softplus(u)
    l_bound = T.mean(T.tsum(sp * sp, axis=1)) * cfg.schedule.lambda_boundary
    l_cons = None
    if J > 1:
        terms = []
        for j in range(J):
            for k in range(j + 1, J):
                dd = means[:, j, :] - means[:, k, :]
                terms.append(T.exp(T.tsum(dd * dd, axis=1) * (-0.5 / cfg.schedule.tau_c ** 2)))
        l_cons = T.mean(sum(terms[1:], terms[0]))
    total = (l_data + l_phys + l_gmm * cfg.lambda_gmm + l_traj * cfg.lambda_traj + l_smooth * cfg.lambda_smooth
             + l_bound * cfg.lambda_bound)
    if l_cons is not None:
        total = total + l_cons * cfg.lambda_cons
    parts.update(physics=float(np.mean(per.data)), weighted_physics=l_phys.item(), gmm=l_gmm.item(),
                 traj=l_traj.item(), smooth=l_smooth.item(), bound=l_bound.item(),
                 cons=0.0 if l_cons is None else l_cons.item())
    return total, parts


def _run_phase(model: ApinnModel, tab: dict, cfg: ApinnConfig, epochs: int, lr: float, first_epoch: int,
               rng: np.random.Generator, ratio: float, validation: Optional[dict], phase: str, log=None,
               decay: bool = False) -> float:
    net = model.net
    dq = _quality(tab, cfg) if cfg.physics else None
    vehicle = vehicle_descriptor(model.params)
    opt = Adam([p for p in net.parameters() if not p.frozen], lr=lr, clip_norm=cfg.clip_norm)
    n = len(tab["x"])
    for e in range(epochs):
        epoch = first_epoch + e
        if decay and epochs > 1:
            opt.lr = lr * (0.05 + 0.95 * 0.5 * (1.0 + math.cos(math.pi * e / (epochs - 1))))
        lam = auto_adjust(adaptive_weight(epoch, dq, cfg.schedule), ratio) if cfg.physics else None
        order = rng.permutation(n)
        sums: dict = {}
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            opt.zero_grad()
            loss, parts = _batch_loss(net, tab, idx, cfg, None if lam is None else lam[idx], vehicle,
                                      model.params, model.contact)
            if not np.isfinite(loss.item()):
                raise Diverged(f"dynamics loss is not finite (seed {cfg.seed}, epoch {epoch})", seed=cfg.seed,
                               epoch=epoch)
            loss.backward()
            opt.step()
            frac = len(idx) / n
            parts["total"] = loss.item()
            for k, v in parts.items():
                sums[k] = sums.get(k, 0.0) + v * frac
        L_p = sums.get("physics", 0.0)
        # physics term as weighted in the loss, so a growing weight lowers the ratio
        ratio = balance_ratio(sums["mse"], sums["weighted_physics"]) if cfg.physics else 1.0
        row = {"epoch": epoch, "phase": phase, "train_loss": sums["total"], "val_loss": float("nan"),
               "physics_loss": L_p if cfg.physics else float("nan"), "balance_ratio": ratio,
               "lambda_mean": float(np.mean(lam)) if lam is not None else 0.0,
               **{k: v for k, v in sums.items() if k not in ("total", "physics")}}
        if validation is not None:
            row["val_loss"] = evaluate_data_loss(model, validation)
        model.history.append(row)
        if log is not None:
            log(row)
    return ratio


def evaluate_data_loss(model: ApinnModel, tab: dict, batch: int = 4096) -> float:
    """Normalized squared error of the mixture mean on a prepared transition table."""
    cfg = model.cfg
    vehicle = vehicle_descriptor(model.params)
    total = 0.0
    n = len(tab["x"])
    for lo in range(0, n, batch):
        idx = np.arange(lo, min(lo + batch, n))
        w, means, *_ = _mixture_tensors(model.net, tab["feats"][idx], tab["t"][idx], vehicle, tab["center"][idx],
                                        tab["x"][idx][:, DYN], tab["force"][idx], cfg)
        mean = np.einsum("bj,bjk->bk", w.data, means.data)
        err = (mean - tab["x_next"][idx][:, DYN]) / np.asarray(cfg.state_scale)
        total += float(np.sum(err * err))
    return total / max(n, 1)


def prepare(trajset, cfg: ApinnConfig, params: VehicleParams = VehicleParams(), contact=None) -> dict:
    return _transition_table(trajset, cfg, params, contact)


def train_apinn(pretrain, finetune=None, cfg: ApinnConfig = ApinnConfig(),
                params: VehicleParams = VehicleParams(), validation=None, log: Optional[Callable] = None,
                model: Optional[ApinnModel] = None) -> ApinnModel:
    """Pre-train on nominal 4DOF trajectories, then freeze the leading layers and fine-tune.

    ``pretrain`` and ``finetune`` are trajectory sets or prepared tables. Passing
    ``model`` skips pre-training and fine-tunes that model. An empty or missing
    fine-tune set skips phase 2.
    """
    rng = np.random.default_rng(cfg.seed + 1)
    val = _as_table(validation, cfg, params)
    if model is None:
        model = new_model(cfg, params)
        tab = _as_table(pretrain, cfg, params)
        if tab is None or len(tab["x"]) == 0:
            raise EmptyTrainingSet("pre-training needs at least one trajectory")
        ratio = _run_phase(model, tab, cfg, cfg.pretrain_epochs, cfg.lr, 0, rng, 1.0, val, "pretrain", log)
    else:
        ratio = model.history[-1]["balance_ratio"] if model.history else 1.0
    model.trained = True
    ft = _as_table(finetune, cfg, params)
    if ft is None or len(ft["x"]) == 0:
        return model
    model.n_frozen = freeze_leading(model.net.layer_list(), cfg.freeze_ratio)
    start = len(model.history) if model.history else cfg.pretrain_epochs
    _run_phase(model, ft, cfg, cfg.finetune_epochs, cfg.finetune_lr, start, rng, ratio, val, "finetune", log,
               decay=True)
    return model


def _as_table(data, cfg, params):
    if data is None:
        return None
    if isinstance(data, dict):
        return data
    if len(data) == 0:
        return None
    return _transition_table(data, cfg, params)


def history_rows(model: ApinnModel) -> List[dict]:
    keys = ("epoch", "train_loss", "val_loss", "physics_loss", "balance_ratio")
    return [{k: r[k] for k in keys} for r in model.history]
