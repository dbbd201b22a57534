"""Sampled planar impact-force histories."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import EmptyCurve

DT_MAX = 0.2  # longest admissible pulse, s
GRID_DT = 1e-3  # common 1 kHz comparison grid


@dataclass(frozen=True, eq=False)
class ForceCurve:
    """Uniformly sampled (F_x, F_y) history in the ground frame, zero outside its window.

    ``samples[i]`` is the force at ``t_start + i * dt``.
    """

    dt: float
    samples: np.ndarray
    t_start: float = 0.0

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "samples", s)
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not np.all(np.isfinite(s)):
            raise ValueError("force samples must be finite")
        if len(s) and self.duration > DT_MAX + 1e-9:
            raise ValueError(f"pulse duration {self.duration:.4f} s exceeds {DT_MAX} s")

    @property
    def t_end(self) -> float:
        return self.t_start + (len(self.samples) - 1) * self.dt

    @property
    def duration(self) -> float:
        return max(len(self.samples) - 1, 0) * self.dt

    def times(self) -> np.ndarray:
        return self.t_start + self.dt * np.arange(len(self.samples))

    def __len__(self):
        return len(self.samples)

    def at(self, t):
        """Linear interpolation; zero outside [t_start, t_end]."""
        t = np.asarray(t, dtype=float)
        if len(self.samples) == 0:
            return np.zeros(t.shape + (2,))
        u = (t - self.t_start) / self.dt
        n = len(self.samples)
        inside = (u >= -1e-9) & (u <= n - 1 + 1e-9)
        u = np.clip(u, 0, n - 1)
        i = np.minimum(np.floor(u).astype(int), max(n - 2, 0))
        w = (u - i)[..., None]
        lo = self.samples[i]
        hi = self.samples[np.minimum(i + 1, n - 1)]
        return np.where(inside[..., None], (1 - w) * lo + w * hi, 0.0)

    def on_grid(self, dt: float = GRID_DT, t_max: float = DT_MAX) -> np.ndarray:
        """Resample onto ``0, dt, ..., t_max`` (inclusive)."""
        n = int(round(t_max / dt)) + 1
        return self.at(dt * np.arange(n))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "Fx", "Fy"])
            for t, (fx, fy) in zip(self.times(), self.samples):
                w.writerow([f"{t:.6f}", repr(float(fx)), repr(float(fy))])

    @classmethod
    def from_csv(cls, path) -> "ForceCurve":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if len(data) == 0:
            raise EmptyCurve(f"{path} holds no samples")
        t = data[:, 0]
        dt = float(np.round(t[1] - t[0], 9)) if len(t) > 1 else GRID_DT
        return cls(dt=dt, samples=data[:, 1:3], t_start=float(t[0]))


def trapezoid(values: np.ndarray, dt: float, axis: int = 0) -> np.ndarray:
    """Uniform-grid trapezoid rule along ``axis``."""
    v = np.moveaxis(np.asarray(values, dtype=float), axis, 0)
    if v.shape[0] < 2:
        return np.zeros(v.shape[1:])
    return dt * (v.sum(axis=0) - 0.5 * (v[0] + v[-1]))
