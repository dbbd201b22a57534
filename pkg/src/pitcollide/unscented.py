"""Sigma-point propagation of state mixtures into global-position mixtures.

With the small spread parameter alpha = 1e-3 the central mean weight is about
-1e6, so naive weighted sums cancel catastrophically. Everything here works on
displacements relative to the current pose and on offsets from the central
sigma point, and sums with ``math.fsum``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import NotPSD
from .gmm import StateGmm

ALPHA = 1e-3
KAPPA = 0.0
BETA = 2.0


@dataclass(frozen=True, eq=False)
class SigmaPointSet:
    points: np.ndarray  # (2n+1, n)
    offsets: np.ndarray  # (2n+1, n), points minus the mean
    Wm: np.ndarray
    Wc: np.ndarray
    lam: float

    @property
    def n(self) -> int:
        return self.points.shape[1]


def ut_weights(n: int, alpha: float = ALPHA, kappa: float = KAPPA, beta: float = BETA):
    lam = alpha * alpha * (n + kappa) - n
    c = n + lam
    Wm = np.full(2 * n + 1, 1.0 / (2.0 * c))
    Wc = Wm.copy()
    Wm[0] = lam / c
    Wc[0] = lam / c + (1.0 - alpha * alpha + beta)
    return Wm, Wc, lam


def _sqrt_psd(S: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor with up to three jitter attempts (1e-12 * trace each)."""
    if not np.allclose(S, S.T, rtol=1e-10, atol=1e-14 * max(np.abs(S).max(), 1e-300)):
        raise NotPSD("covariance is not symmetric")
    tr = float(np.trace(S))
    if tr == 0.0 and not np.any(S):
        return np.zeros_like(S)
    if tr < 0:
        raise NotPSD("covariance has negative trace")
    jitter = 0.0
    for _ in range(4):
        try:
            return np.linalg.cholesky(S + jitter * np.eye(len(S)))
        except np.linalg.LinAlgError:
            jitter += 1e-12 * tr
    raise NotPSD("covariance is not positive semidefinite after jitter")


def sigma_points(mean, cov, alpha: float = ALPHA, kappa: float = KAPPA, beta: float = BETA) -> SigmaPointSet:
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    n = len(mean)
    Wm, Wc, lam = ut_weights(n, alpha, kappa, beta)
    L = _sqrt_psd((n + lam) * cov)
    offsets = np.zeros((2 * n + 1, n))
    offsets[1:n + 1] = L.T
    offsets[n + 1:] = -L.T
    return SigmaPointSet(mean + offsets, offsets, Wm, Wc, lam)


def transform_point(point, X: float, Y: float, psi: float, dt: float):
    """Advance the global position with the body velocities of ``point`` for one step."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    vx, vy = point[0], point[1]
    c, s = math.cos(psi), math.sin(psi)
    return X + (vx * c - vy * s) * dt, Y + (vx * s + vy * c) * dt


def _displacements(points: np.ndarray, psi: float, dt: float) -> np.ndarray:
    c, s = math.cos(psi), math.sin(psi)
    vx, vy = points[:, 0], points[:, 1]
    return np.stack([(vx * c - vy * s) * dt, (vx * s + vy * c) * dt], axis=1)


def propagate_component(mean, cov, pose, dt: float, alpha: float = ALPHA, kappa: float = KAPPA,
                        beta: float = BETA):
    """Weighted mean (2,) and covariance (2, 2) of the transformed sigma points.

    ``pose`` is ``(X, Y, psi)``, treated as known.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    X, Y, psi = pose
    sp = sigma_points(mean, cov, alpha, kappa, beta)
    y = _displacements(sp.points, psi, dt)
    d = y - y[0]
    m = np.array([math.fsum(sp.Wm[1:] * d[1:, k]) for k in range(2)])
    e = d - m
    P = np.empty((2, 2))
    for a in range(2):
        for b in range(a, 2):
            P[a, b] = P[b, a] = math.fsum(sp.Wc * e[:, a] * e[:, b])
    mu = np.array([X + (y[0, 0] + m[0]), Y + (y[0, 1] + m[1])])
    return mu, P


@dataclass(frozen=True, eq=False)
class TrajectoryGmm:
    weights: np.ndarray  # (J,)
    means: np.ndarray  # (J, 2)
    covs: np.ndarray  # (J, 2, 2)

    @property
    def J(self) -> int:
        return len(self.weights)

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def covariance(self) -> np.ndarray:
        m = self.mean()
        d = self.means - m
        return np.einsum("j,jk,jl->kl", self.weights, d, d) + np.einsum("j,jkl->kl", self.weights, self.covs)

    def density(self, x, y) -> np.ndarray:
        pts = np.stack(np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float)), axis=-1)
        out = np.zeros(pts.shape[:-1])
        for w, mu, S in zip(self.weights, self.means, self.covs):
            det = S[0, 0] * S[1, 1] - S[0, 1] ** 2
            if det <= 0:
                raise NotPSD("trajectory component covariance is singular; density undefined")
            inv = np.array([[S[1, 1], -S[0, 1]], [-S[0, 1], S[0, 0]]]) / det
            d = pts - mu
            q = np.einsum("...i,ij,...j->...", d, inv, d)
            out += w * np.exp(-0.5 * q) / (2 * np.pi * np.sqrt(det))
        return out

    def grid(self, n: int = 200, n_sigma: float = 4.0):
        """Density on an n x n grid spanning every component's mean +- n_sigma std."""
        sd = np.sqrt(np.maximum(np.diagonal(self.covs, axis1=1, axis2=2), 0.0))
        lo = (self.means - n_sigma * sd).min(axis=0)
        hi = (self.means + n_sigma * sd).max(axis=0)
        xs = np.linspace(lo[0], hi[0], n)
        ys = np.linspace(lo[1], hi[1], n)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        return xs, ys, self.density(gx, gy)


def trajectory_gmm(state_gmm: StateGmm, pose, dt: float) -> TrajectoryGmm:
    means, covs = [], []
    for mu, S in zip(state_gmm.means, state_gmm.covariances()):
        m, P = propagate_component(mu, S, pose, dt)
        means.append(m)
        covs.append(P)
    return TrajectoryGmm(state_gmm.weights.copy(), np.array(means), np.array(covs))


def write_bands_csv(path, t: Sequence[float], gmms: Sequence[TrajectoryGmm]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "mu_x", "mu_y", "sxx", "sxy", "syy"])
        for tk, g in zip(t, gmms):
            m, S = g.mean(), g.covariance()
            w.writerow([f"{tk:.2f}"] + [repr(float(v)) for v in (m[0], m[1], S[0, 0], S[0, 1], S[1, 1])])


def write_density_csv(path, xs, ys, dens):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "density"])
        for i, x in enumerate(xs):
            for j, y in enumerate(ys):
                w.writerow([repr(float(x)), repr(float(y)), repr(float(dens[i, j]))])
