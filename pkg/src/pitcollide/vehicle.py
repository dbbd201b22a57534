"""Four-degree-of-freedom lateral-yaw-roll vehicle model with collision-force injection.

Frame: ISO body axes (x forward, y left, z up, yaw counterclockwise positive).
The eight-dimensional state is ordered ``[v_x, v_y, psi, psi_dot, phi, phi_dot, X, Y]``.

The numeric core (``_tire_terms``, ``_derivative``, ``simulate``) broadcasts over
leading batch dimensions, and parameter fields may themselves be arrays that
broadcast against the batch (used by the swarm tire fit).
"""
from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Union

import numpy as np

from .curves import ForceCurve
from .errors import FrictionCircleViolation, IntegrationDiverged, SingularInertia, WheelLiftOff

V_GUARD = 0.5  # m/s, slip-angle denominator floor and standstill threshold
SIGN_BAND = 0.05  # m/s, smoothing band of the rolling-resistance direction
REST_TAU = 0.1  # s, decay time of planar motion once the vehicle is at rest
FRICTION_CLAMP = 0.99
OUTPUT_DT = 0.01  # 100 Hz trajectory output
MAX_SPEED = 150.0
MAX_YAW_RATE = 50.0
MAX_STEER = 0.6

VX, VY, PSI, R, PHI, PHID, X, Y = range(8)
STATE_FIELDS = ("v_x", "v_y", "psi", "psi_dot", "phi", "phi_dot", "X", "Y")
CSV_HEADER = ("t", "X", "Y", "psi", "vx", "vy", "yaw_rate", "roll", "roll_rate", "ax", "ay")


@dataclass(frozen=True)
class VehicleParams:
    m: float = 2000.0
    m_s: float = 1800.0
    I_zz: float = 3600.0
    I_xx_s: float = 700.0
    I_xz: float = 50.0
    K_s: float = 1.2e5
    B_s: float = 6.0e3
    h_rc: float = 0.12
    h_cog: float = 0.55
    l_f: float = 1.3
    l_r: float = 1.5
    t_w: float = 1.6
    K_f: float = 6.5e4
    K_r: float = 5.5e4
    C: tuple = (14.0, 14.0, 16.0, 16.0)
    mu_s: float = 0.9
    f_r0: float = 0.013
    f_r1: float = 1.0e-4
    f_r2: float = 6.5e-6
    g: float = 9.81

    def __post_init__(self):
        if not isinstance(self.C, np.ndarray):
            object.__setattr__(self, "C", tuple(float(c) for c in self.C))
            if len(self.C) != 4:
                raise ValueError("C needs one shape factor per wheel (fl, fr, rl, rr)")
        positive = ("m", "m_s", "I_zz", "I_xx_s", "h_cog", "l_f", "l_r", "t_w", "K_f", "K_r", "g")
        for name in positive:
            if not np.all(np.asarray(getattr(self, name)) > 0):
                raise ValueError(f"{name} must be strictly positive")
        if not np.all(np.asarray(self.m_s) <= np.asarray(self.m)):
            raise ValueError("sprung mass cannot exceed total mass")
        mu = np.asarray(self.mu_s)
        if not np.all((mu > 0) & (mu <= 2)):
            raise ValueError("mu_s must lie in (0, 2]")

    def replace(self, **changes) -> "VehicleParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["C"] = list(np.asarray(self.C, dtype=float).tolist())
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "VehicleParams":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown VehicleParams fields: {sorted(unknown)}")
        return cls(**d)

    def feature_vector(self) -> np.ndarray:
        """Vehicle descriptor fed to the dynamics network."""
        C = np.asarray(self.C, dtype=float)
        return np.array([self.m, self.I_zz, self.I_xx_s, self.I_xz, self.l_f, self.l_r,
                         self.t_w, C[:2].mean(), C[2:].mean(), self.mu_s], dtype=float)


@dataclass(frozen=True)
class VehicleState:
    v_x: float = 0.0
    v_y: float = 0.0
    psi: float = 0.0
    psi_dot: float = 0.0
    phi: float = 0.0
    phi_dot: float = 0.0
    X: float = 0.0
    Y: float = 0.0
    a_x: float = 0.0
    a_y: float = 0.0

    def __post_init__(self):
        vals = dataclasses.astuple(self)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("state fields must be finite")
        if abs(self.phi) >= math.pi / 2:
            raise ValueError("roll angle must satisfy |phi| < pi/2")

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, f) for f in STATE_FIELDS], dtype=float)

    def accel(self) -> np.ndarray:
        return np.array([self.a_x, self.a_y], dtype=float)

    @classmethod
    def from_array(cls, x, accel=(0.0, 0.0)) -> "VehicleState":
        x = np.asarray(x, dtype=float)
        return cls(*map(float, x[:8]), a_x=float(accel[0]), a_y=float(accel[1]))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class ControlInput:
    delta: float = 0.0

    def __post_init__(self):
        if abs(self.delta) > MAX_STEER:
            raise ValueError(f"|delta| must not exceed {MAX_STEER} rad")


@dataclass(frozen=True)
class PlanarForce:
    """Collision load in the body frame."""

    F_x: float = 0.0
    F_y: float = 0.0
    M_z: float = 0.0
    M_x: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in dataclasses.astuple(self)):
            raise ValueError("collision force must be finite")

    def to_array(self) -> np.ndarray:
        return np.array([self.F_x, self.F_y, self.M_z, self.M_x], dtype=float)


@dataclass(frozen=True)
class ContactPoint:
    """Body-frame application point of the collision force (z measured from the ground)."""

    x: float
    y: float
    z: float

    @classmethod
    def rear_axle(cls, params: VehicleParams, side: str = "right") -> "ContactPoint":
        y = -0.5 * params.t_w if side == "right" else 0.5 * params.t_w
        return cls(-params.l_r, y, params.h_cog)

    def to_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)


def collision_load(F_ground, psi, contact, params: VehicleParams) -> np.ndarray:
    """Rotate a ground-frame force into the body frame and attach its moments.

    Returns ``[F_x, F_y, M_z, M_x]`` along the last axis.
    """
    F_ground = np.asarray(F_ground, dtype=float)
    contact = np.asarray(contact, dtype=float)
    c, s = np.cos(psi), np.sin(psi)
    fx = c * F_ground[..., 0] + s * F_ground[..., 1]
    fy = -s * F_ground[..., 0] + c * F_ground[..., 1]
    mz = contact[..., 0] * fy - contact[..., 1] * fx
    mx = -(contact[..., 2] - params.h_rc) * fy
    return _pack((fx, fy, mz, mx))


# --------------------------------------------------------------------------- core


def _pack(cols):
    """Stack broadcastable columns along a new trailing axis."""
    shape = np.broadcast_shapes(*(np.shape(c) for c in cols))
    out = np.empty(shape + (len(cols),))
    for i, c in enumerate(cols):
        out[..., i] = c
    return out


def _slip(vx, vy, r, delta, p):
    hw = 0.5 * p.t_w
    den_l = np.maximum(np.abs(vx - hw * r), V_GUARD)
    den_r = np.maximum(np.abs(vx + hw * r), V_GUARD)
    nf = vy + p.l_f * r
    nr = vy - p.l_r * r
    return _pack((delta - np.arctan(nf / den_l), delta - np.arctan(nf / den_r),
                  -np.arctan(nr / den_l), -np.arctan(nr / den_r)))


def _load_terms(phi, p):
    """Vertical loads as ``Z0 + Ax * a_x + Ay * a_y`` per wheel."""
    L = p.l_f + p.l_r
    kf = p.K_f / (p.K_f + p.K_r)
    kr = 1.0 - kf
    front = 0.5 * p.m * p.g * p.l_r / L
    rear = 0.5 * p.m * p.g * p.l_f / L
    roll = p.m_s * p.g * p.h_rc * np.sin(phi) / p.t_w
    Z0 = _pack((front - kf * roll, front + kf * roll,
                rear - kr * roll, rear + kr * roll))
    lx = 0.5 * p.m * p.h_cog / L
    Ax = _pack((-lx, -lx, lx, lx))
    ly = p.m * p.h_cog / p.t_w
    Ay = _pack((-kf * ly, kf * ly, -kr * ly, kr * ly))
    return Z0, Ax, Ay


def _loads(ax, ay, phi, p):
    Z0, Ax, Ay = _load_terms(phi, p)
    return Z0 + Ax * np.asarray(ax)[..., None] + Ay * np.asarray(ay)[..., None]


def _longitudinal_ratio(vx, p):
    """Signed rolling-resistance ratio F_x/F_z and the friction-circle clamp flag."""
    v = np.abs(vx)
    fr = p.f_r0 + p.f_r1 * v + p.f_r2 * v * v
    clamped = fr > p.mu_s
    kappa = np.where(clamped, FRICTION_CLAMP * p.mu_s, fr)
    return -np.tanh(vx / SIGN_BAND) * kappa, clamped


def _lateral_shape(alpha, ratio, p):
    """F_y / F_z for positive load: sin(atan(C a)) * sqrt(mu^2 - (F_x/F_z)^2)."""
    u = np.asarray(p.C, dtype=float) * alpha
    cap = np.sqrt(np.maximum(np.asarray(p.mu_s) ** 2 - np.asarray(ratio) ** 2, 0.0))
    return u / np.sqrt(1.0 + u * u) * np.asarray(cap)[..., None]


def _at_rest(x, p):
    return np.hypot(x[..., VX], x[..., VY]) + np.maximum(p.l_f, p.l_r) * np.abs(x[..., R]) < V_GUARD


def _tire_terms(x, acc, delta, p, fy_state=None):
    """Per-wheel loads and forces for given load-transfer accelerations."""
    alpha = _slip(x[..., VX], x[..., VY], x[..., R], delta, p)
    Fz = _loads(acc[..., 0], acc[..., 1], x[..., PHI], p)
    lifted = np.any(Fz <= 0, axis=-1)
    Fz = np.maximum(Fz, 0.0)
    ratio, clamped = _longitudinal_ratio(x[..., VX], p)
    Fx = np.asarray(ratio)[..., None] * Fz
    Fy_ss = _lateral_shape(alpha, ratio, p) * Fz
    Fy = Fy_ss if fy_state is None else fy_state
    return dict(alpha=alpha, Fz=Fz, Fx=Fx, Fy=Fy, Fy_ss=Fy_ss, lifted=lifted,
                clamped=np.broadcast_to(clamped, lifted.shape))


def _consistent_tires(x, delta, p, fy_state=None):
    """Tire state with load-transfer accelerations consistent with the forces they produce.

    Tire forces are linear in the vertical loads and the loads are linear in the
    accelerations, so the algebraic loop closes exactly. With lagged lateral
    forces (``fy_state``) the lateral acceleration follows the lagged forces.
    """
    ratio, clamped = _longitudinal_ratio(x[..., VX], p)
    ratio = np.asarray(ratio)
    ax = ratio * p.g
    alpha = _slip(x[..., VX], x[..., VY], x[..., R], delta, p)
    S = _lateral_shape(alpha, ratio, p)
    Z0, Ax, Ay = _load_terms(x[..., PHI], p)
    base = Z0 + Ax * ax[..., None]
    if fy_state is None:
        ay = np.sum(S * base, axis=-1) / (p.m - np.sum(S * Ay, axis=-1))
    else:
        ay = fy_state.sum(axis=-1) / p.m
    Fz = base + Ay * ay[..., None]
    lifted = np.any(Fz <= 0, axis=-1)
    Fz = np.maximum(Fz, 0.0)
    Fy_ss = S * Fz
    return dict(acc=_pack((ax, ay)), alpha=alpha, Fz=Fz,
                Fx=ratio[..., None] * Fz, Fy=Fy_ss if fy_state is None else fy_state, Fy_ss=Fy_ss,
                lifted=lifted, clamped=np.broadcast_to(clamped, lifted.shape))


def _resolve_acc(x, delta, p, fy_state=None):
    return _consistent_tires(x, delta, p, fy_state)["acc"]


def _derivative(x, acc, delta, fb, p, tires=True, fy_state=None, tt=None):
    """State derivative (..., 8) for body-frame collision load ``fb = [F_x, F_y, M_z, M_x]``.

    ``tt`` may carry precomputed tire terms; otherwise they are evaluated at ``acc``.
    """
    vx, vy, psi, r, phi, phid = (x[..., i] for i in range(6))
    det = p.I_zz * p.I_xx_s
    if not np.all(np.abs(det) > 0):
        raise SingularInertia("yaw-roll inertia block is singular")
    fx_c, fy_c, mz_c, mx_c = (fb[..., i] for i in range(4))
    if tires:
        if tt is None:
            tt = _tire_terms(x, acc, delta, p, fy_state)
        Fx, Fy = tt["Fx"], tt["Fy"]
        fx_t = Fx.sum(axis=-1)
        fy_t = Fy.sum(axis=-1)
        mz_t = (p.l_f * (Fy[..., 0] + Fy[..., 1]) - p.l_r * (Fy[..., 2] + Fy[..., 3])
                + 0.5 * p.t_w * (Fx[..., 1] - Fx[..., 0] + Fx[..., 3] - Fx[..., 2]))
    else:
        fx_t = fy_t = mz_t = 0.0
    dvx = vy * r + (fx_t + fx_c) / p.m
    dvy = -vx * r + (fy_t + fy_c) / p.m
    # [[I_zz, 0], [I_xz, I_xx_s]] @ [psi_dd, phi_dd] = [M_z, roll moment]
    roll_rhs = p.m_s * p.g * p.h_rc * np.sin(phi) - p.K_s * phi - p.B_s * phid + mx_c
    psi_dd = (mz_t + mz_c) / p.I_zz
    phi_dd = (roll_rhs - p.I_xz * psi_dd) / p.I_xx_s
    if tires:
        rest = _at_rest(x, p)
        if np.any(rest):
            dvx = np.where(rest, -vx / REST_TAU + fx_c / p.m, dvx)
            dvy = np.where(rest, -vy / REST_TAU + fy_c / p.m, dvy)
            psi_dd = np.where(rest, -r / REST_TAU + mz_c / p.I_zz, psi_dd)
    c, s = np.cos(psi), np.sin(psi)
    out = [dvx, dvy, r, psi_dd, phid, phi_dd, vx * c - vy * s, vx * s + vy * c]
    return _pack(out)


# --------------------------------------------------------------------------- public ops


def _delta_of(delta):
    if isinstance(delta, ControlInput):
        return delta.delta
    return float(delta)


def slip_angles(state: VehicleState, params: VehicleParams, delta=0.0) -> np.ndarray:
    """(alpha_fl, alpha_fr, alpha_rl, alpha_rr) in rad."""
    return _slip(state.v_x, state.v_y, state.psi_dot, _delta_of(delta), params)


def vertical_loads(state: VehicleState, params: VehicleParams) -> np.ndarray:
    """Wheel loads (fl, fr, rl, rr) from the state's cached accelerations."""
    Fz = _loads(state.a_x, state.a_y, state.phi, params)
    if np.any(Fz <= 0):
        raise WheelLiftOff(f"non-positive wheel load {Fz.min():.1f} N")
    return Fz


class TireForces(NamedTuple):
    Fx: np.ndarray
    Fy: np.ndarray
    Fz: np.ndarray
    clamped: bool


def tire_forces(state: VehicleState, params: VehicleParams, delta=0.0, strict: bool = False) -> TireForces:
    """Per-wheel rolling resistance and magic-formula lateral forces.

    Rolling resistance opposes ``v_x``. When the longitudinal demand exceeds the
    friction limit it is clamped to 0.99 mu_s F_z and ``clamped`` is set; with
    ``strict=True`` that condition raises instead.
    """
    vertical_loads(state, params)
    x = state.to_array()
    tt = _tire_terms(x, state.accel(), _delta_of(delta), params)
    clamped = bool(np.any(tt["clamped"]))
    if clamped and strict:
        raise FrictionCircleViolation("rolling resistance exceeds the friction circle")
    return TireForces(tt["Fx"], tt["Fy"], tt["Fz"], clamped)


def resolve_accelerations(state: VehicleState, params: VehicleParams, delta=0.0) -> VehicleState:
    """Copy of ``state`` with a_x, a_y set to the tire-consistent load-transfer values."""
    acc = _resolve_acc(state.to_array(), _delta_of(delta), params)
    return dataclasses.replace(state, a_x=float(acc[0]), a_y=float(acc[1]))


def state_derivative(state: VehicleState, params: VehicleParams, delta=0.0,
                     collision: Optional[PlanarForce] = None, tires: bool = True) -> np.ndarray:
    """Time derivative of the eight-dimensional state.

    Load transfer uses the accelerations cached on ``state``; the collision load
    is taken as acting at CoG height, so it does not move weight between wheels
    beyond its explicit roll moment.
    """
    fb = (collision or PlanarForce()).to_array()
    return _derivative(state.to_array(), state.accel(), _delta_of(delta), fb, params, tires)


# --------------------------------------------------------------------------- integration


@dataclass(frozen=True, eq=False)
class Trajectory:
    """100 Hz samples of one simulated run."""

    t: np.ndarray
    states: np.ndarray  # (N, 8)
    accel: np.ndarray  # (N, 2) load-transfer accelerations
    force: np.ndarray  # (N, 2) ground-frame collision force
    impulse: np.ndarray  # (N, 2) cumulative collision impulse, N s
    momentum: np.ndarray  # (N, 2) ground-frame linear momentum, kg m/s
    kinetic_energy: np.ndarray  # (N,) J, translational + yaw + roll
    clamp_events: int = 0
    lift_events: int = 0

    def __len__(self):
        return len(self.t)

    def state_at(self, i: int) -> VehicleState:
        return VehicleState.from_array(self.states[i], self.accel[i])

    def ground_velocity(self) -> np.ndarray:
        psi = self.states[:, PSI]
        vx, vy = self.states[:, VX], self.states[:, VY]
        return np.stack([vx * np.cos(psi) - vy * np.sin(psi), vx * np.sin(psi) + vy * np.cos(psi)], axis=-1)

    def to_csv(self, path):
        write_trajectory_csv(path, self.t, self.states, self.accel)


def write_trajectory_csv(path, t, states, accel=None):
    if accel is None:
        accel = np.zeros((len(t), 2))
    cols = [X, Y, PSI, VX, VY, R, PHI, PHID]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for k in range(len(t)):
            row = [f"{t[k]:.2f}"] + [repr(float(states[k, c])) for c in cols]
            row += [repr(float(accel[k, 0])), repr(float(accel[k, 1]))]
            w.writerow(row)


def read_trajectory_csv(path):
    """Returns ``(t, states (N, 8), accel (N, 2))``."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    states = np.zeros((len(data), 8))
    for src, dst in zip(range(1, 9), [X, Y, PSI, VX, VY, R, PHI, PHID]):
        states[:, dst] = data[:, src]
    return data[:, 0], states, data[:, 9:11]


def _force_lookup(grid, fdt, t):
    """Linear interpolation of batched force grids ``(B, n, 2)`` starting at t = 0."""
    n = grid.shape[1]
    u = t / fdt
    if u < -1e-9 or u > n - 1 + 1e-9:
        return np.zeros((grid.shape[0], 2))
    u = min(max(u, 0.0), n - 1.0)
    i = min(int(math.floor(u)), n - 2) if n > 1 else 0
    w = u - i
    if n == 1:
        return grid[:, 0].copy()
    return (1.0 - w) * grid[:, i] + w * grid[:, i + 1]


def _steer_fn(controls) -> Callable[[float], Union[float, np.ndarray]]:
    if controls is None:
        return lambda t: 0.0
    if isinstance(controls, ControlInput):
        return lambda t: controls.delta
    if callable(controls):
        return controls
    arr = np.asarray(controls, dtype=float)
    if arr.ndim == 0:
        val = float(arr)
        return lambda t: val

    def hold(t):
        k = min(int(math.floor(t / OUTPUT_DT + 1e-9)), len(arr) - 1)
        return arr[k]

    return hold


def simulate(x0, params: VehicleParams, force_grid=None, force_dt: float = 1e-3, contact=None,
             controls=0.0, dt: float = 1e-3, horizon: float = 5.0, method: str = "rk4",
             tires: bool = True, relaxation_length: float = 0.0, t0: float = 0.0):
    """Batched fixed-step integration sampled at 100 Hz.

    ``x0`` is ``(B, 8)``; ``force_grid`` is ``(B, n, 2)`` ground-frame collision
    forces on ``t0 + j * force_dt``; ``contact`` broadcasts to ``(B, 3)``. With
    ``relaxation_length > 0`` lateral tire forces follow their steady-state value
    through a first-order lag (the reference plant); the plain 4DOF model uses 0.

    Returns a dict of arrays with leading shape ``(B, N)``.
    """
    x = np.array(x0, dtype=float, ndmin=2)
    B = x.shape[0]
    if dt <= 0:
        raise ValueError("dt must be positive")
    sub = OUTPUT_DT / dt
    if abs(sub - round(sub)) > 1e-9 or round(sub) < 1:
        raise ValueError("dt must divide the 10 ms output period")
    sub = int(round(sub))
    n_out = int(round(horizon / OUTPUT_DT)) + 1
    if contact is None:
        contact = ContactPoint.rear_axle(params).to_array()
    contact = np.broadcast_to(np.asarray(contact, dtype=float), (B, 3))
    grid = None if force_grid is None else np.asarray(force_grid, dtype=float).reshape(B, -1, 2)
    steer = _steer_fn(controls)
    lag = relaxation_length > 0

    def force_at(t):
        if grid is None:
            return np.zeros((B, 2))
        return _force_lookup(grid, force_dt, t - t0)

    def rhs(t, z):
        xs = z[:, :8]
        fy = z[:, 10:14] if lag else None
        d = steer(t)
        tt = _consistent_tires(xs, d, params, fy)
        Fg = force_at(t)
        fb = collision_load(Fg, xs[:, PSI], contact, params)
        dz = np.empty_like(z)
        dz[:, :8] = _derivative(xs, tt["acc"], d, fb, params, tires, fy, tt)
        dz[:, 8:10] = Fg
        if lag:
            speed = np.maximum(np.hypot(xs[:, VX], xs[:, VY]), V_GUARD)
            dz[:, 10:14] = (tt["Fy_ss"] - fy) * (speed / relaxation_length)[:, None]
        return dz

    z = np.zeros((B, 14 if lag else 10))
    z[:, :8] = x
    if lag:
        z[:, 10:14] = _consistent_tires(x, steer(t0), params)["Fy_ss"]

    states = np.empty((B, n_out, 8))
    accel = np.empty((B, n_out, 2))
    force = np.empty((B, n_out, 2))
    impulse = np.empty((B, n_out, 2))
    clamp_events = 0
    lift_events = 0

    def record(k, t):
        nonlocal clamp_events, lift_events
        xs = z[:, :8]
        fy = z[:, 10:14] if lag else None
        tt = _consistent_tires(xs, steer(t), params, fy)
        acc = tt["acc"]
        if tires:
            clamp_events += int(np.count_nonzero(tt["clamped"]))
            lift_events += int(np.count_nonzero(tt["lifted"]))
        states[:, k] = xs
        accel[:, k] = acc
        force[:, k] = force_at(t)
        impulse[:, k] = z[:, 8:10]
        bad = ~np.all(np.isfinite(xs), axis=1)
        bad |= np.hypot(xs[:, VX], xs[:, VY]) > MAX_SPEED
        bad |= np.abs(xs[:, R]) > MAX_YAW_RATE
        bad |= np.abs(xs[:, PHI]) >= math.pi / 2
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise IntegrationDiverged(f"state left guard bounds at t={t:.2f} s (batch index {i})", index=i, time=t)

    record(0, t0)
    t = t0
    for k in range(1, n_out):
        for _ in range(sub):
            if method == "rk4":
                k1 = rhs(t, z)
                k2 = rhs(t + 0.5 * dt, z + 0.5 * dt * k1)
                k3 = rhs(t + 0.5 * dt, z + 0.5 * dt * k2)
                k4 = rhs(t + dt, z + dt * k3)
                z = z + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            elif method == "euler":
                z = z + dt * rhs(t, z)
            else:
                raise ValueError(f"unknown integration method {method!r}")
            t += dt
        t = t0 + k * OUTPUT_DT
        record(k, t)

    psi, vx, vy = states[..., PSI], states[..., VX], states[..., VY]
    vg = np.stack([vx * np.cos(psi) - vy * np.sin(psi), vx * np.sin(psi) + vy * np.cos(psi)], axis=-1)
    m = np.asarray(params.m)
    ke = (0.5 * m * (vx ** 2 + vy ** 2) + 0.5 * params.I_zz * states[..., R] ** 2
          + 0.5 * params.I_xx_s * states[..., PHID] ** 2)
    return dict(t=t0 + OUTPUT_DT * np.arange(n_out), states=states, accel=accel, force=force,
                impulse=impulse, momentum=np.asarray(m)[..., None, None] * vg if np.ndim(m) else m * vg,
                kinetic_energy=ke, clamp_events=clamp_events, lift_events=lift_events)


def integrate(state: VehicleState, params: VehicleParams, controls=0.0, collision: Optional[ForceCurve] = None,
              dt: float = 1e-3, horizon: float = 5.0, *, contact: Optional[ContactPoint] = None,
              method: str = "rk4", tires: bool = True, relaxation_length: float = 0.0) -> Trajectory:
    """Integrate one vehicle from ``state`` at t = 0, returning a 100 Hz trajectory.

    ``method="rk4"`` is the default fixed-step scheme; ``method="euler"`` with
    ``dt=0.01`` reproduces the plain forward-Euler 4DOF baseline.
    """
    grid, fdt = None, 1e-3
    if collision is not None and len(collision):
        fdt = collision.dt
        lead = int(round(collision.t_start / fdt))
        grid = np.concatenate([np.zeros((lead, 2)), collision.samples])[None]
    c = None if contact is None else contact.to_array()
    out = simulate(state.to_array()[None], params, grid, fdt, c, controls, dt, horizon, method,
                   tires, relaxation_length)
    return Trajectory(out["t"], out["states"][0], out["accel"][0], out["force"][0], out["impulse"][0],
                      out["momentum"][0], out["kinetic_energy"][0], out["clamp_events"], out["lift_events"])


def params_from_json(path) -> VehicleParams:
    with open(path) as fh:
        return VehicleParams.from_dict(json.load(fh))
