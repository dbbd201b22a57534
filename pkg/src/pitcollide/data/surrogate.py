"""Synthetic rear-quarter impact scenarios with impulse-exact force pulses.

Each scenario is solved with the impulse-momentum model; the force history is a
half-sine pulse carrying exactly that impulse, perturbed by smooth
multiplicative noise and projected back onto the impulse constraint.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Tuple

import numpy as np

from ..curves import GRID_DT, ForceCurve, trapezoid
from ..errors import ConfigError
from ..impulse import CollisionScenario, ImpulseSolution, solve_impulse
from ..vehicle import VehicleParams

RADIUS_OF_GYRATION_SQ = 1.8  # m^2, I_zz / m of the default vehicle


@dataclass(frozen=True)
class SurrogateConfig:
    n_scenarios: int = 100
    target_mass: float = 2000.0
    bullet_masses: Tuple[float, ...] = (1500.0, 2000.0, 2500.0)
    target_speed: Tuple[float, float] = (10.0, 20.0)  # m/s
    overtake_speed: Tuple[float, float] = (3.0, 6.0)  # bullet speed minus target speed, m/s
    angle_deg: Tuple[float, float] = (5.0, 20.0)  # bullet heading relative to the target
    duration: Tuple[float, float] = (0.05, 0.15)  # s
    noise: float = 0.1
    restitution: float = 0.5
    friction: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.n_scenarios < 1:
            raise ConfigError("n_scenarios must be at least 1")
        if not self.bullet_masses or min(self.bullet_masses) <= 0 or self.target_mass <= 0:
            raise ConfigError("masses must be positive")
        for name in ("target_speed", "overtake_speed", "angle_deg", "duration"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name} range is reversed")
        if self.duration[1] > 0.2 or self.duration[0] <= 0:
            raise ConfigError("pulse durations must lie in (0, 0.2] s")
        if not 0 <= self.noise < 1:
            raise ConfigError("noise must lie in [0, 1)")
        object.__setattr__(self, "bullet_masses", tuple(float(m) for m in self.bullet_masses))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "SurrogateConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - names
        if extra:
            raise ConfigError(f"unknown surrogate config keys: {sorted(extra)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass(eq=False)
class ForceDataset:
    config: SurrogateConfig
    scenarios: List[CollisionScenario]
    solutions: List[ImpulseSolution]
    curves: List[ForceCurve]
    split: np.ndarray = field(default=None)  # True for training cases

    def __len__(self):
        return len(self.scenarios)

    def features(self) -> np.ndarray:
        return np.stack([s.theta_vec for s in self.scenarios])

    def impulses(self) -> np.ndarray:
        return np.array([[s.P_x, s.P_y] for s in self.solutions])

    def durations(self) -> np.ndarray:
        return np.array([c.duration for c in self.curves])

    def grid_forces(self, dt: float = GRID_DT, t_max: float = 0.2) -> np.ndarray:
        return np.stack([c.on_grid(dt, t_max) for c in self.curves])

    def subset(self, idx) -> "ForceDataset":
        idx = np.asarray(idx)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        return ForceDataset(self.config, [self.scenarios[i] for i in idx], [self.solutions[i] for i in idx],
                            [self.curves[i] for i in idx], None if self.split is None else self.split[idx])

    def train(self) -> "ForceDataset":
        return self.subset(self.split)

    def test(self) -> "ForceDataset":
        return self.subset(~self.split)

    def save(self, directory) -> dict:
        """Write ``index.json`` plus one ``t,Fx,Fy`` CSV per scenario; returns the index."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        entries = []
        for i, (sc, sol, curve) in enumerate(zip(self.scenarios, self.solutions, self.curves)):
            name = f"force_{i:04d}.csv"
            curve.to_csv(d / name)
            entries.append({"id": i, "file": name, "train": bool(self.split[i]), "scenario": sc.to_dict(),
                            "solution": sol.to_dict()})
        index = {"config": self.config.to_dict(), "config_hash": self.config.digest(), "seed": self.config.seed,
                 "scenarios": entries}
        (d / "index.json").write_text(json.dumps(index, indent=1, sort_keys=True))
        return index

    @classmethod
    def load(cls, directory) -> "ForceDataset":
        d = Path(directory)
        index = json.loads((d / "index.json").read_text())
        cfg = SurrogateConfig.from_dict(index["config"])
        scen, sols, curves, split = [], [], [], []
        for e in index["scenarios"]:
            scen.append(CollisionScenario.from_dict(e["scenario"]))
            sols.append(ImpulseSolution(**e["solution"]))
            curves.append(ForceCurve.from_csv(d / e["file"]))
            split.append(e["train"])
        return cls(cfg, scen, sols, curves, np.array(split, dtype=bool))


def sample_scenario(cfg: SurrogateConfig, rng: np.random.Generator,
                    params: VehicleParams = VehicleParams()) -> CollisionScenario:
    """Bullet overtaking at a few m/s and steering into the target's right rear quarter."""
    m_b = float(rng.choice(cfg.bullet_masses))
    v_t = rng.uniform(*cfg.target_speed)
    v_b = v_t + rng.uniform(*cfg.overtake_speed)
    ang = math.radians(rng.uniform(*cfg.angle_deg))
    # target contact: right rear corner at the rear axle; bullet contact: its front-left corner
    rt = (-params.l_r, -0.5 * params.t_w)
    rb = (2.0, 0.8)
    return CollisionScenario(
        m_t=cfg.target_mass, m_b=m_b,
        I_zzt=cfg.target_mass * RADIUS_OF_GYRATION_SQ, I_zzb=m_b * RADIUS_OF_GYRATION_SQ,
        v_tx=v_t, v_ty=0.0, psi_dot_t=0.0,
        v_bx=v_b * math.cos(ang), v_by=v_b * math.sin(ang), psi_dot_b=0.0,
        d_t=math.hypot(*rt), theta_t=math.atan2(rt[1], rt[0]), xi_t=0.0,
        d_b=math.hypot(*rb), theta_b=ang, xi_b=math.atan2(rb[1], rb[0]),
        Gamma=0.5 * math.pi - 0.5 * ang, e=cfg.restitution, mu=cfg.friction,
    )


def half_sine_shape(n: int, dt: float) -> np.ndarray:
    """Unit-impulse half-sine on ``n`` samples (both ends zero)."""
    T = (n - 1) * dt
    t = dt * np.arange(n)
    s = np.sin(np.pi * t / T)
    return s / trapezoid(s, dt)


def project_impulse(samples: np.ndarray, P, shape: np.ndarray, dt: float) -> np.ndarray:
    """Shift ``samples`` along ``shape`` so that their trapezoid integral equals ``P``."""
    P = np.asarray(P, dtype=float)
    gap = P - trapezoid(samples, dt)
    return samples + np.outer(shape / trapezoid(shape, dt), gap)


def smooth_noise(n: int, rng: np.random.Generator, n_modes: int = 3) -> np.ndarray:
    """Band-limited noise on ``n`` samples scaled to max |value| = 1, one column per axis."""
    u = np.linspace(0.0, 1.0, n)
    out = np.zeros((n, 2))
    for k in range(2):
        amp = rng.normal(size=n_modes)
        freq = rng.uniform(0.5, 3.0, size=n_modes)
        phase = rng.uniform(0, 2 * np.pi, size=n_modes)
        col = (amp[:, None] * np.sin(2 * np.pi * freq[:, None] * u + phase[:, None])).sum(axis=0)
        out[:, k] = col / max(np.abs(col).max(), 1e-12)
    return out


def synthesize_pulse(P, duration: float, rng: np.random.Generator, noise: float = 0.1,
                     dt: float = GRID_DT) -> ForceCurve:
    n = int(round(duration / dt)) + 1
    shape = half_sine_shape(n, dt)
    base = np.outer(shape, np.asarray(P, dtype=float))
    noisy = base * (1.0 + noise * smooth_noise(n, rng))
    return ForceCurve(dt, project_impulse(noisy, P, shape, dt))


def stratified_split(labels, rng: np.random.Generator, train_fraction: float = 0.75) -> np.ndarray:
    """Boolean training mask with ``train_fraction`` of every label group."""
    labels = np.asarray(labels)
    mask = np.zeros(len(labels), dtype=bool)
    for lab in np.unique(labels):
        idx = np.flatnonzero(labels == lab)
        idx = idx[rng.permutation(len(idx))]
        mask[idx[:int(round(train_fraction * len(idx)))]] = True
    return mask


def generate_force_dataset(cfg: SurrogateConfig) -> ForceDataset:
    rng = np.random.default_rng(cfg.seed)
    scenarios, solutions, curves = [], [], []
    for _ in range(cfg.n_scenarios):
        sc = sample_scenario(cfg, rng)
        sol = solve_impulse(sc)
        dur = rng.uniform(*cfg.duration)
        curves.append(synthesize_pulse(sol.P, dur, rng, cfg.noise))
        scenarios.append(sc)
        solutions.append(sol)
    split = stratified_split([s.m_b for s in scenarios], rng)
    return ForceDataset(cfg, scenarios, solutions, curves, split)
