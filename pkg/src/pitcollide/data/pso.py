"""Global-best particle swarm fit of tire constants to observed trajectories."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from ..errors import IntegrationDiverged
from ..vehicle import OUTPUT_DT, ContactPoint, VehicleParams, simulate

NAMES = ("C_front", "C_rear", "K_f", "K_r")
FIT_VARS = [6, 7, 0, 1, 3]  # X, Y, v_x, v_y, yaw rate


@dataclass(frozen=True)
class PsoConfig:
    swarm: int = 40
    iterations: int = 200
    inertia: float = 0.72
    cognitive: float = 1.49
    social: float = 1.49
    lower: float = 0.5  # search box as multiples of the base parameters
    upper: float = 1.5
    horizon: float = 4.0
    seed: int = 0


@dataclass
class PsoResult:
    params: VehicleParams
    position: np.ndarray  # fitted [C_front, C_rear, K_f, K_r]
    objective: float  # summed RMSE of X, Y, v_x, v_y and yaw rate
    curve: List[float] = field(default_factory=list)  # global best after each iteration

    def to_dict(self) -> dict:
        return {"fitted": dict(zip(NAMES, self.position.tolist())), "objective": self.objective,
                "curve": list(self.curve)}


def _apply(base: VehicleParams, pos: np.ndarray) -> VehicleParams:
    """Batched parameters for rows of ``pos`` = [C_front, C_rear, K_f, K_r]."""
    C = np.column_stack([pos[:, 0], pos[:, 0], pos[:, 1], pos[:, 1]])
    return base.replace(C=C, K_f=pos[:, 2], K_r=pos[:, 3])


def _force_grid(curves, fdt: float) -> Tuple[np.ndarray, float]:
    n = max(len(c) for c in curves)
    grid = np.zeros((len(curves), n, 2))
    for i, c in enumerate(curves):
        grid[i, :len(c)] = c.samples
    return grid, fdt


def trajectory_objective(base: VehicleParams, positions: np.ndarray, x0: np.ndarray, curves, truth: np.ndarray,
                         contact=None) -> np.ndarray:
    """Summed RMSE over X, Y, v_x, v_y and yaw rate of the forward-Euler 4DOF model for every candidate row,
    averaged over trajectories."""
    P, S = len(positions), len(x0)
    n_rows = truth.shape[1]
    horizon = (n_rows - 1) * OUTPUT_DT
    grid, fdt = _force_grid(curves, curves[0].dt)
    c = (contact or ContactPoint.rear_axle(base)).to_array()

    def run(rows):
        pos = np.repeat(positions[rows], S, axis=0)
        params = _apply(base, pos)
        out = simulate(np.tile(x0, (len(rows), 1)), params, np.tile(grid, (len(rows), 1, 1)), fdt, c, 0.0,
                       OUTPUT_DT, horizon, "euler")
        st = out["states"].reshape(len(rows), S, n_rows, 8)[..., FIT_VARS]
        rmse = np.sqrt(((st - truth[None, ..., FIT_VARS]) ** 2).mean(axis=2))  # (rows, S, 5)
        return rmse.sum(axis=2).mean(axis=1)

    try:
        return run(np.arange(P))
    except IntegrationDiverged:
        out = np.empty(P)
        for i in range(P):
            try:
                out[i] = run(np.array([i]))[0]
            except IntegrationDiverged:
                out[i] = np.inf
        return out


def pso_fit_tires(trajectories, base: VehicleParams = VehicleParams(), cfg: PsoConfig = PsoConfig(),
                  log=None) -> PsoResult:
    """Fit axle shape factors and roll stiffnesses so the 4DOF model reproduces ``trajectories``."""
    if len(trajectories) < 1:
        raise ValueError("PSO needs at least one trajectory")
    n_rows = min(int(round(cfg.horizon / OUTPUT_DT)) + 1, trajectories.states.shape[1])
    truth = trajectories.states[:, :n_rows]
    x0 = truth[:, 0]
    C = np.asarray(base.C, dtype=float)
    ref = np.array([C[:2].mean(), C[2:].mean(), base.K_f, base.K_r])
    lo, hi = cfg.lower * ref, cfg.upper * ref
    rng = np.random.default_rng(cfg.seed)
    x = rng.uniform(lo, hi, size=(cfg.swarm, 4))
    v = np.zeros_like(x)

    def f(pos):
        return trajectory_objective(base, pos, x0, trajectories.curves, truth)

    val = f(x)
    pbest, pval = x.copy(), val.copy()
    g = int(np.argmin(pval))
    gbest, gval = pbest[g].copy(), float(pval[g])
    curve = []
    for it in range(cfg.iterations):
        r1 = rng.uniform(size=x.shape)
        r2 = rng.uniform(size=x.shape)
        v = cfg.inertia * v + cfg.cognitive * r1 * (pbest - x) + cfg.social * r2 * (gbest - x)
        x = x + v
        out = (x < lo) | (x > hi)
        x = np.clip(x, lo, hi)
        v[out] = 0.0
        val = f(x)
        better = val < pval
        pbest[better], pval[better] = x[better], val[better]
        g = int(np.argmin(pval))
        if pval[g] < gval:
            gbest, gval = pbest[g].copy(), float(pval[g])
        curve.append(gval)
        if log is not None:
            log(it, gval)
    fitted = base.replace(C=(gbest[0], gbest[0], gbest[1], gbest[1]), K_f=float(gbest[2]), K_r=float(gbest[3]))
    return PsoResult(fitted, gbest, gval, curve)
