"""Diagonal-covariance Gaussian mixtures over the next vehicle state."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

STATE_NAMES = ("v_x", "v_y", "psi_dot", "phi_dot")
SIGMA_MIN = 0.01


@dataclass(frozen=True, eq=False)
class StateGmm:
    """Mixture over ``[v_x, v_y, psi_dot, phi_dot]``.

    ``weights`` (J,), ``means`` (J, 4), ``variances`` (J, 4) hold the diagonal of each covariance.
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        mu = np.asarray(self.means, dtype=float).reshape(len(w), -1)
        var = np.asarray(self.variances, dtype=float).reshape(mu.shape)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", var)
        if abs(w.sum() - 1.0) > 1e-9 or np.any(w < 0):
            raise ValueError("mixture weights must be nonnegative and sum to 1")
        if np.any(var < 0) or not np.all(np.isfinite(mu)):
            raise ValueError("invalid component moments")

    @property
    def J(self) -> int:
        return len(self.weights)

    def covariances(self) -> np.ndarray:
        return np.stack([np.diag(v) for v in self.variances])

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def covariance(self) -> np.ndarray:
        """Moment-matched covariance of the whole mixture."""
        m = self.mean()
        d = self.means - m
        return np.einsum("j,jk,jl->kl", self.weights, d, d) + np.diag(self.weights @ self.variances)

    def log_density(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        d = x[..., None, :] - self.means
        ll = -0.5 * np.sum(d * d / self.variances + np.log(2 * np.pi * self.variances), axis=-1)
        ll = ll + np.log(np.maximum(self.weights, 1e-300))
        m = ll.max(axis=-1, keepdims=True)
        return (m + np.log(np.exp(ll - m).sum(axis=-1, keepdims=True)))[..., 0]

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        comp = rng.choice(self.J, size=n, p=self.weights)
        return self.means[comp] + rng.normal(size=(n, self.means.shape[1])) * np.sqrt(self.variances[comp])
