"""Planar two-body impact resolution by impulse-momentum balance.

The target vehicle receives impulse ``P``; the bullet receives ``-P``.
Geometry convention: the contact normal is ``n = (cos Gamma, sin Gamma)`` in the
ground frame and points from the bullet into the target, with tangent
``t = (-sin Gamma, cos Gamma)``. The friction relation then reads
``mu * (P . n) = P . t``. The vector from a vehicle's CoG to the contact point
has length ``d`` and ground-frame direction ``theta + xi``, where ``theta`` is
its angle in the body frame and ``xi`` the vehicle heading.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass

import numpy as np

from .curves import ForceCurve, trapezoid
from .errors import EmptyCurve, NotClosing, SingularSystem

DEFAULT_RESTITUTION = 0.5
FEATURE_NAMES = ("m_t", "m_b", "v_ty", "v_by", "v_tx", "v_bx", "theta_b")


@dataclass(frozen=True)
class CollisionScenario:
    m_t: float
    m_b: float
    I_zzt: float
    I_zzb: float
    v_tx: float
    v_ty: float
    psi_dot_t: float
    v_bx: float
    v_by: float
    psi_dot_b: float
    d_t: float = 0.0
    d_b: float = 0.0
    theta_t: float = 0.0
    theta_b: float = 0.0
    xi_t: float = 0.0
    xi_b: float = 0.0
    Gamma: float = 0.0
    e: float = DEFAULT_RESTITUTION
    mu: float = 0.0

    def __post_init__(self):
        for name in ("m_t", "m_b", "I_zzt", "I_zzb"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.e <= 1.0:
            raise ValueError("restitution must lie in [0, 1]")
        if abs(self.mu) > 1.5:
            raise ValueError("|mu| must not exceed 1.5")
        if self.d_t < 0 or self.d_b < 0:
            raise ValueError("contact distances must be nonnegative")
        if not all(math.isfinite(v) for v in dataclasses.astuple(self)):
            raise ValueError("scenario fields must be finite")

    @property
    def theta_vec(self) -> np.ndarray:
        """Network feature vector ``[m_t, m_b, v_ty, v_by, v_tx, v_bx, theta_b]``."""
        return np.array([getattr(self, k) for k in FEATURE_NAMES], dtype=float)

    def r_target(self) -> np.ndarray:
        a = self.theta_t + self.xi_t
        return self.d_t * np.array([math.cos(a), math.sin(a)])

    def r_bullet(self) -> np.ndarray:
        a = self.theta_b + self.xi_b
        return self.d_b * np.array([math.cos(a), math.sin(a)])

    def normal(self) -> np.ndarray:
        return np.array([math.cos(self.Gamma), math.sin(self.Gamma)])

    def tangent(self) -> np.ndarray:
        return np.array([-math.sin(self.Gamma), math.cos(self.Gamma)])

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CollisionScenario":
        names = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - names
        if extra:
            raise ValueError(f"unknown scenario fields: {sorted(extra)}")
        return cls(**d)


@dataclass(frozen=True)
class ImpulseSolution:
    P_x: float
    P_y: float
    V_tx: float
    V_ty: float
    Psi_dot_t: float
    V_bx: float
    V_by: float
    Psi_dot_b: float
    m_eff: float
    E_dissipated: float
    kinetic_energy_loss: float = 0.0

    @property
    def P(self) -> np.ndarray:
        return np.array([self.P_x, self.P_y])

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def effective_mass(m_t: float, m_b: float) -> float:
    return m_t * m_b / (m_t + m_b)


def dissipated_energy(m_eff: float, V_rel: float, e: float) -> float:
    """0.5 * m_eff * V_rel^2 * (1 - e^2)."""
    if m_eff < 0 or V_rel < 0 or e < 0 or e > 1:
        raise ValueError("need m_eff, V_rel >= 0 and 0 <= e <= 1")
    return 0.5 * m_eff * V_rel * V_rel * (1.0 - e * e)


def _perp(r):
    return np.array([-r[1], r[0]])


def _cross(r, p):
    return r[0] * p[1] - r[1] * p[0]


def contact_velocities(sc: CollisionScenario):
    """Ground-frame velocities of the contact point on each body (target, bullet)."""
    rt, rb = sc.r_target(), sc.r_bullet()
    vt = np.array([sc.v_tx, sc.v_ty]) + sc.psi_dot_t * _perp(rt)
    vb = np.array([sc.v_bx, sc.v_by]) + sc.psi_dot_b * _perp(rb)
    return vt, vb


def _kinetic(sc_vals, m_t, m_b, I_t, I_b):
    vtx, vty, wt, vbx, vby, wb = sc_vals
    return 0.5 * (m_t * (vtx ** 2 + vty ** 2) + I_t * wt ** 2 + m_b * (vbx ** 2 + vby ** 2) + I_b * wb ** 2)


def solve_impulse(sc: CollisionScenario) -> ImpulseSolution:
    """Impulse on the target and the six post-impact velocities.

    Restitution acts on the normal component of the relative contact-point
    velocity; the tangential/normal impulse ratio is ``|mu|`` with the sign that
    drags the target along the bullet's tangential sliding direction.
    """
    rt, rb = sc.r_target(), sc.r_bullet()
    n, t = sc.normal(), sc.tangent()
    vt_c, vb_c = contact_velocities(sc)
    u = vb_c - vt_c
    v_n = float(n @ u)
    scale = max(float(np.linalg.norm(u)), 1e-300)
    if not v_n > 1e-12 * scale:
        raise NotClosing(f"normal approach velocity {v_n:.3g} m/s is not positive")
    slide = float(t @ u)
    if slide > 0:
        mu = abs(sc.mu)
    elif slide < 0:
        mu = -abs(sc.mu)
    else:
        mu = sc.mu
    K = ((1.0 / sc.m_t + 1.0 / sc.m_b) * np.eye(2)
         + np.outer(_perp(rt), _perp(rt)) / sc.I_zzt
         + np.outer(_perp(rb), _perp(rb)) / sc.I_zzb)
    A = np.vstack([n @ K, mu * n - t])
    b = np.array([(1.0 + sc.e) * v_n, 0.0])
    det = np.linalg.det(A)
    ref = np.linalg.norm(A[0]) * np.linalg.norm(A[1])
    if not abs(det) > 1e-12 * max(ref, 1e-300):
        raise SingularSystem("impulse system is degenerate for this geometry")
    P = np.linalg.solve(A, b)

    Vt = np.array([sc.v_tx, sc.v_ty]) + P / sc.m_t
    Vb = np.array([sc.v_bx, sc.v_by]) - P / sc.m_b
    wt = sc.psi_dot_t + _cross(rt, P) / sc.I_zzt
    wb = sc.psi_dot_b - _cross(rb, P) / sc.I_zzb
    m_eff = effective_mass(sc.m_t, sc.m_b)
    v_rel = math.hypot(sc.v_bx - sc.v_tx, sc.v_by - sc.v_ty)
    before = _kinetic((sc.v_tx, sc.v_ty, sc.psi_dot_t, sc.v_bx, sc.v_by, sc.psi_dot_b),
                      sc.m_t, sc.m_b, sc.I_zzt, sc.I_zzb)
    after = _kinetic((Vt[0], Vt[1], wt, Vb[0], Vb[1], wb), sc.m_t, sc.m_b, sc.I_zzt, sc.I_zzb)
    return ImpulseSolution(float(P[0]), float(P[1]), float(Vt[0]), float(Vt[1]), float(wt),
                           float(Vb[0]), float(Vb[1]), float(wb), m_eff,
                           dissipated_energy(m_eff, v_rel, sc.e), float(before - after))


def impulse_from_force(curve: ForceCurve):
    """Trapezoid integral of the force history, (P_x, P_y) in N s."""
    if len(curve) == 0:
        raise EmptyCurve("force curve has no samples")
    P = trapezoid(curve.samples, curve.dt)
    return float(P[0]), float(P[1])
