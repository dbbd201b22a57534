"""Post-impact trajectories of the struck vehicle.

Pre-training data comes from the nominal 4DOF model. Fine-tuning and held-out
data come from a reference plant: the same core with perturbed tire constants
and a relaxation-length lag on the lateral tire forces.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from ..curves import ForceCurve, trapezoid
from ..errors import IntegrationDiverged
from ..vehicle import (OUTPUT_DT, ContactPoint, VehicleParams, read_trajectory_csv, simulate,
                       write_trajectory_csv)
from .surrogate import ForceDataset

HORIZON = 5.0  # s simulated per scenario
USABLE_HORIZON = 4.0  # s of transitions used for learning
PLANTS = ("4dof", "true")


@dataclass(frozen=True)
class PlantPerturbation:
    front_C: float = 0.7
    rear_C: float = 0.8
    mu: float = 0.85
    relaxation_length: float = 0.6  # m

    def apply(self, params: VehicleParams) -> VehicleParams:
        C = np.asarray(params.C, dtype=float)
        scale = np.array([self.front_C, self.front_C, self.rear_C, self.rear_C])
        return params.replace(C=tuple(C * scale), mu_s=params.mu_s * self.mu)

    def to_dict(self) -> dict:
        return dict(front_C=self.front_C, rear_C=self.rear_C, mu=self.mu, relaxation_length=self.relaxation_length)


def step_mean_forces(curves: Sequence[ForceCurve], n_steps: int, step: float = OUTPUT_DT) -> np.ndarray:
    """Average ground-frame force over each output interval ``[k*step, (k+1)*step]``, shape (B, n_steps, 2)."""
    out = np.zeros((len(curves), n_steps, 2))
    for b, c in enumerate(curves):
        sub = max(int(round(step / c.dt)), 1)
        grid = c.on_grid(c.dt, n_steps * step)
        for k in range(n_steps):
            seg = grid[k * sub:(k + 1) * sub + 1]
            if len(seg) > 1 and np.any(seg):
                out[b, k] = trapezoid(seg, c.dt) / step
    return out


@dataclass(eq=False)
class TrajectorySet:
    """Batch of 100 Hz trajectories with the force history that produced each one."""

    t: np.ndarray  # (N,)
    states: np.ndarray  # (B, N, 8)
    accel: np.ndarray  # (B, N, 2)
    step_force: np.ndarray  # (B, N, 2), mean ground force over [t_k, t_k + 10 ms]
    curves: List[ForceCurve]
    scenario_ids: np.ndarray
    params: VehicleParams
    plant: str = "4dof"

    def __len__(self):
        return self.states.shape[0]

    @property
    def n_rows(self) -> int:
        return self.states.shape[0] * self.states.shape[1]

    def subset(self, idx) -> "TrajectorySet":
        idx = np.asarray(idx)
        return TrajectorySet(self.t, self.states[idx], self.accel[idx], self.step_force[idx],
                             [self.curves[i] for i in np.atleast_1d(idx)], self.scenario_ids[idx], self.params,
                             self.plant)

    def transitions(self, horizon: float = USABLE_HORIZON) -> dict:
        """Flattened one-step pairs ``(x_k, x_{k+1})`` for ``t_k < horizon``."""
        n = min(int(round(horizon / OUTPUT_DT)), len(self.t) - 1)
        B = len(self)
        return dict(
            x=self.states[:, :n].reshape(-1, 8),
            accel=self.accel[:, :n].reshape(-1, 2),
            force=self.step_force[:, :n].reshape(-1, 2),
            t=np.tile(self.t[:n], B),
            x_next=self.states[:, 1:n + 1].reshape(-1, 8),
            traj=np.repeat(np.arange(B), n),
        )

    def save(self, directory) -> dict:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        entries = []
        for b in range(len(self)):
            sid = int(self.scenario_ids[b])
            name = f"traj_{sid:04d}.csv"
            write_trajectory_csv(d / name, self.t, self.states[b], self.accel[b])
            fname = f"force_{sid:04d}.csv"
            self.curves[b].to_csv(d / fname)
            entries.append({"scenario": sid, "file": name, "force": fname})
        index = {"plant": self.plant, "params": self.params.to_dict(), "trajectories": entries}
        (d / "index.json").write_text(json.dumps(index, indent=1, sort_keys=True))
        return index

    @classmethod
    def load(cls, directory) -> "TrajectorySet":
        d = Path(directory)
        index = json.loads((d / "index.json").read_text())
        states, accel, curves, ids = [], [], [], []
        t = None
        for e in index["trajectories"]:
            t, s, a = read_trajectory_csv(d / e["file"])
            states.append(s)
            accel.append(a)
            curves.append(ForceCurve.from_csv(d / e["force"]))
            ids.append(e["scenario"])
        states = np.array(states)
        return cls(np.asarray(t), states, np.array(accel), step_mean_forces(curves, states.shape[1]), curves,
                   np.array(ids), VehicleParams.from_dict(index["params"]), index["plant"])


def initial_states(forces: ForceDataset) -> np.ndarray:
    """Struck vehicle driving straight along +X at the scenario's pre-impact speed."""
    x0 = np.zeros((len(forces), 8))
    for i, sc in enumerate(forces.scenarios):
        x0[i, 0] = sc.v_tx
        x0[i, 1] = sc.v_ty
        x0[i, 3] = sc.psi_dot_t
    return x0


def generate_trajectories(forces: ForceDataset, params: VehicleParams = VehicleParams(), plant: str = "4dof",
                          perturbation: PlantPerturbation = PlantPerturbation(), horizon: float = HORIZON,
                          ids: Optional[Sequence[int]] = None, contact: Optional[ContactPoint] = None,
                          batch: int = 100) -> TrajectorySet:
    """Simulate one trajectory per force scenario, impact starting at t = 0.

    Rows cover ``[0, horizon)`` at 100 Hz, so a 5 s run has 500 rows.
    """
    if plant not in PLANTS:
        raise ValueError(f"plant must be one of {PLANTS}")
    ids = np.arange(len(forces)) if ids is None else np.asarray(ids)
    run_params = params if plant == "4dof" else perturbation.apply(params)
    lag = 0.0 if plant == "4dof" else perturbation.relaxation_length
    c = (contact or ContactPoint.rear_axle(params)).to_array()
    x0 = initial_states(forces)
    n_f = max(len(cv) for cv in forces.curves)
    grid = np.zeros((len(forces), n_f, 2))
    for i, cv in enumerate(forces.curves):
        grid[i, :len(cv)] = cv.samples
    fdt = forces.curves[0].dt
    n_rows = int(round(horizon / OUTPUT_DT))
    states, accel = [], []
    for lo in range(0, len(forces), batch):
        sl = slice(lo, lo + batch)
        try:
            out = simulate(x0[sl], run_params, grid[sl], fdt, c, 0.0, 1e-3, horizon, "rk4",
                           relaxation_length=lag)
        except IntegrationDiverged as exc:
            sid = int(ids[lo + exc.index])
            raise IntegrationDiverged(f"scenario {sid}: {exc}", index=sid, time=exc.time) from exc
        states.append(out["states"][:, :n_rows])
        accel.append(out["accel"][:, :n_rows])
    states = np.concatenate(states)
    t = OUTPUT_DT * np.arange(n_rows)
    return TrajectorySet(t, states, np.concatenate(accel), step_mean_forces(forces.curves, n_rows),
                         list(forces.curves), ids, params, plant)


def generate_pretrain_trajectories(forces: ForceDataset, params: VehicleParams = VehicleParams(),
                                   **kw) -> TrajectorySet:
    return generate_trajectories(forces, params, "4dof", **kw)


def generate_true_plant_trajectories(forces: ForceDataset, params: VehicleParams = VehicleParams(),
                                     perturbation: PlantPerturbation = PlantPerturbation(), **kw) -> TrajectorySet:
    return generate_trajectories(forces, params, "true", perturbation, **kw)

