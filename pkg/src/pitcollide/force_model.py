"""Time-varying Gaussian-mixture model of the planar impact force.

The network maps the scenario features and time to a K-component mixture over
(F_x, F_y). It is trained on the negative log-likelihood of observed force
curves together with impulse-conservation and energy-consistency penalties on
the mixture mean.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .curves import DT_MAX, GRID_DT, ForceCurve, trapezoid
from .errors import DegenerateCovariance, Diverged, GridMismatch
from .impulse import ImpulseSolution
from .nn import checkpoint
from .nn import tensor as T
from .nn.layers import MLP, Attention, Dense, Module, time_encoding
from .nn.optim import Adam
from .nn.tensor import Tensor

N_FEATURES = 7
DEFAULT_WIDTHS = (256, 512, 512, 256, 128, 64, 32, 16)


@dataclass(frozen=True)
class ForceModelConfig:
    K: int = 3
    widths: Tuple[int, ...] = DEFAULT_WIDTHS
    d_model: int = 64
    d_time: int = 16
    t_max: float = DT_MAX
    force_scale: float = 1e-4  # N -> network units
    sigma_min: float = 0.01  # network units
    impulse_unit: float = 1e3  # N s per unit inside the training objective
    energy_unit: float = 1e3  # J per unit inside the training objective
    lambda_imp: float = 10.0
    lambda_eng: float = 1.0
    lambda_dur: float = 1.0
    lambda_nll: float = 1.0
    lr: float = 1e-3
    lr_final: float = 0.05  # cosine decay to this fraction of lr
    batch_size: int = 32
    epochs: int = 500
    train_dt: float = 4e-3
    clip_norm: Optional[float] = 10.0
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.K <= 8:
            raise ValueError("K must lie in 1..8")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if min(self.lambda_imp, self.lambda_eng, self.lambda_dur) < 0:
            raise ValueError("loss weights must be nonnegative")
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ForceModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - names
        if extra:
            raise ValueError(f"unknown force model config keys: {sorted(extra)}")
        return cls(**d)

    def architecture(self) -> dict:
        return {"net": "force-gmm", "K": self.K, "widths": list(self.widths), "d_model": self.d_model,
                "d_time": self.d_time}


@dataclass(frozen=True, eq=False)
class ForceGmm:
    """Mixture over (F_x, F_y) in newtons at each time in ``t``.

    ``weights`` (n, K), ``means`` (n, K, 2), ``variances`` (n, K, 2).
    """

    t: np.ndarray
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.weights, dtype=float))
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "t", np.atleast_1d(np.asarray(self.t, dtype=float)))
        object.__setattr__(self, "means", np.asarray(self.means, dtype=float).reshape(w.shape + (2,)))
        object.__setattr__(self, "variances", np.asarray(self.variances, dtype=float).reshape(w.shape + (2,)))
        if np.any(np.abs(w.sum(axis=1) - 1.0) > 1e-9) or np.any(w < 0):
            raise ValueError("mixture weights must be nonnegative and sum to 1 at every time")
        if not np.all(np.isfinite(self.means)):
            raise ValueError("mixture means must be finite")

    @property
    def K(self) -> int:
        return self.weights.shape[1]

    def mean(self) -> np.ndarray:
        return np.einsum("nk,nkd->nd", self.weights, self.means)

    def std_bands(self) -> np.ndarray:
        """Moment-matched per-axis standard deviation, shape (n, 2)."""
        m = self.mean()
        second = np.einsum("nk,nkd->nd", self.weights, self.variances + self.means ** 2)
        return np.sqrt(np.maximum(second - m ** 2, 0.0))

    def sample(self, i: int, n: int, rng: np.random.Generator) -> np.ndarray:
        comp = rng.choice(self.K, size=n, p=self.weights[i])
        return self.means[i, comp] + rng.normal(size=(n, 2)) * np.sqrt(self.variances[i, comp])

    def slice(self, i: int) -> "ForceGmm":
        return ForceGmm(self.t[i:i + 1], self.weights[i:i + 1], self.means[i:i + 1], self.variances[i:i + 1])


# ----------------------------------------------------------------------------- losses


def impulse_loss(curve: ForceCurve, target, lambda_imp: float = 1.0) -> float:
    """Squared mismatch between the trapezoid impulse of ``curve`` and the target impulse."""
    P = target.P if isinstance(target, ImpulseSolution) else np.asarray(target, dtype=float)
    I = trapezoid(curve.samples, curve.dt)
    return float(lambda_imp * ((I[0] - P[0]) ** 2 + (I[1] - P[1]) ** 2))


def relative_velocity_profile(v_rel0, e: float, n: int) -> np.ndarray:
    """Linear decay from the approach velocity to ``-e`` times it over ``n`` samples."""
    v0 = np.asarray(v_rel0, dtype=float)
    s = np.linspace(0.0, 1.0, n)[:, None] if n > 1 else np.zeros((n, 1))
    return v0 * (1.0 - s) - e * v0 * s


def energy_loss(curve: ForceCurve, v_rel, E_dissipated: float, lambda_eng: float = 1.0) -> float:
    v_rel = np.asarray(v_rel, dtype=float)
    if v_rel.shape != curve.samples.shape:
        raise GridMismatch(f"velocity series {v_rel.shape} does not match force samples {curve.samples.shape}")
    work = trapezoid(np.sum(curve.samples * v_rel, axis=1), curve.dt)
    return float(lambda_eng * (work - E_dissipated) ** 2)


def nll_loss(observed, gmm: ForceGmm) -> float:
    """Mean over time samples of -log p(F_obs(t)) under the mixture."""
    obs = observed.samples if isinstance(observed, ForceCurve) else np.asarray(observed, dtype=float)
    obs = obs.reshape(-1, 2)
    if obs.shape[0] != gmm.weights.shape[0]:
        raise GridMismatch("observation count differs from the mixture time grid")
    if np.any(gmm.variances <= 0):
        raise DegenerateCovariance("mixture variances must be positive")
    d = obs[:, None, :] - gmm.means
    logn = -0.5 * np.sum(d * d / gmm.variances + np.log(2 * np.pi * gmm.variances), axis=-1)
    ll = logn + np.log(np.maximum(gmm.weights, 1e-300))
    m = ll.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(ll - m).sum(axis=1))
    return float(-lse.mean())


# ----------------------------------------------------------------------------- network


class ForceNet(Module):
    """Feature encoder, time encoder, self-attention over both tokens, dense trunk, mixture heads."""

    def __init__(self, cfg: ForceModelConfig, rng: np.random.Generator):
        d = cfg.d_model
        self.cfg = cfg
        self.encoder = MLP([N_FEATURES, d, d, d], rng, final_activation="swish")
        self.time_proj = Dense(cfg.d_time, d, rng)
        self.attn = Attention(d, d, d, rng)
        self.trunk = MLP([2 * d, *cfg.widths], rng, final_activation="swish")
        last = cfg.widths[-1]
        K = cfg.K
        self.head_logits = Dense(last, K, rng, gain=0.1)
        self.head_base = Dense(last, 2, rng, gain=0.1)
        self.head_delta = Dense(last, 2 * K, rng, gain=0.1)
        self.head_scale = Dense(last, 2 * K, rng, gain=0.1)
        self.head_duration = Dense(d, 1, rng, gain=0.1)

    def trunk_layers(self) -> List[Dense]:
        return self.trunk.layers

    def forward(self, theta_n: np.ndarray, t: np.ndarray):
        """``theta_n`` (B, 7) standardized features, ``t`` (n,) seconds.

        Returns tensors: logits (B, n, K), means (B, n, K, 2), log-scales (B, n, K, 2), duration (B,).
        """
        cfg = self.cfg
        B, n, K, d = theta_n.shape[0], len(t), cfg.K, cfg.d_model
        h_feat = self.encoder(theta_n)  # (B, d)
        h_time = self.time_proj(time_encoding(1e3 * np.asarray(t), cfg.d_time))  # (n, d)
        hf = h_feat.reshape(B, 1, d) + np.zeros((1, n, d))
        ht = h_time.reshape(1, n, d) + np.zeros((B, 1, d))
        tokens = T.stack([hf, ht], axis=2)  # (B, n, 2, d)
        fused = tokens + self.attn(tokens)
        z = self.trunk(fused.reshape(B, n, 2 * d))
        logits = self.head_logits(z)
        base = self.head_base(z).reshape(B, n, 1, 2)
        delta = self.head_delta(z).reshape(B, n, K, 2)
        s = self.head_scale(z).reshape(B, n, K, 2)
        duration = T.sigmoid(self.head_duration(h_feat).reshape(B)) * cfg.t_max
        return logits, base + delta, s, duration


def _mixture_nll(logits: Tensor, means: Tensor, s: Tensor, obs: np.ndarray, sigma_min: float) -> Tensor:
    var = T.exp(s) + sigma_min ** 2
    d = means - obs[:, :, None, :]
    logn = -0.5 * T.tsum(d * d / var + T.log(var) + math.log(2 * math.pi), axis=-1)
    logw = logits - T.logsumexp(logits, axis=-1, keepdims=True)
    return -T.logsumexp(logw + logn, axis=-1)


@dataclass
class ForceModel:
    """Trained network plus the feature standardization it was trained with."""

    net: ForceNet
    theta_mean: np.ndarray
    theta_std: np.ndarray
    trained: bool = False
    history: List[dict] = field(default_factory=list)

    @property
    def cfg(self) -> ForceModelConfig:
        return self.net.cfg

    def standardize(self, theta) -> np.ndarray:
        return (np.atleast_2d(np.asarray(theta, dtype=float)) - self.theta_mean) / self.theta_std

    def mixture(self, theta, t) -> Tuple[List[ForceGmm], np.ndarray]:
        """Unwindowed mixtures (one per scenario) in newtons and predicted durations in seconds."""
        cfg = self.cfg
        t = np.atleast_1d(np.asarray(t, dtype=float))
        logits, means, s, dur = self.net.forward(self.standardize(theta), t)
        w = np.exp(logits.data - logits.data.max(axis=-1, keepdims=True))
        w /= w.sum(axis=-1, keepdims=True)
        var = (np.exp(s.data) + cfg.sigma_min ** 2) / cfg.force_scale ** 2
        mu = means.data / cfg.force_scale
        return [ForceGmm(t, w[b], mu[b], var[b]) for b in range(len(w))], dur.data

    def save(self, path, extra: Optional[dict] = None):
        meta = {"config": self.cfg.to_dict(), "architecture": architecture_id(self.cfg),
                "theta_mean": self.theta_mean.tolist(), "theta_std": self.theta_std.tolist(),
                "trained": self.trained, "seed": self.cfg.seed, "epoch": len(self.history)}
        meta.update(extra or {})
        checkpoint.save(path, self.net, meta)

    @classmethod
    def load(cls, path, require_trained: bool = True) -> "ForceModel":
        header, _ = checkpoint.read(path)
        meta = header["meta"]
        cfg = ForceModelConfig.from_dict(meta["config"])
        net = ForceNet(cfg, np.random.default_rng(0))
        meta = checkpoint.load(path, net, require_trained)
        return cls(net, np.array(meta["theta_mean"]), np.array(meta["theta_std"]), bool(meta["trained"]))


def architecture_id(cfg: ForceModelConfig) -> str:
    return checkpoint.architecture_hash(cfg.architecture())


def new_force_model(cfg: ForceModelConfig, theta_train: np.ndarray) -> ForceModel:
    rng = np.random.default_rng(cfg.seed)
    mean = theta_train.mean(axis=0)
    std = np.maximum(theta_train.std(axis=0), 1e-6 * np.maximum(np.abs(mean), 1.0))
    return ForceModel(ForceNet(cfg, rng), mean, std)


def predict_force(theta, t, model: ForceModel):
    """Point force (mixture mean), mixture and predicted duration for one scenario.

    Beyond the predicted duration the force and every component mean are zero.
    """
    from .errors import UntrainedWeights

    if not model.trained:
        raise UntrainedWeights("force model has not been trained")
    scalar = np.ndim(t) == 0
    gmms, dur = model.mixture(np.asarray(theta, dtype=float).reshape(1, -1), t)
    g = _windowed(gmms[0], float(dur[0]))
    mean = g.mean()
    return (mean[0] if scalar else mean), g, float(dur[0])


def _windowed(g: ForceGmm, duration: float) -> ForceGmm:
    outside = g.t > duration
    means = np.where(outside[:, None, None], 0.0, g.means)
    return ForceGmm(g.t, g.weights, means, g.variances)


def predict_curves(model: ForceModel, theta, dt: float = GRID_DT) -> Tuple[List[ForceCurve], List[ForceGmm]]:
    """Windowed mean-force curves on ``[0, t_max]`` for a batch of scenarios."""
    t = dt * np.arange(int(round(model.cfg.t_max / dt)) + 1)
    gmms, dur = model.mixture(theta, t)
    curves, out = [], []
    for g, d in zip(gmms, dur):
        gw = _windowed(g, float(d))
        out.append(gw)
        curves.append(ForceCurve(dt, gw.mean()))
    return curves, out


def predicted_impulses(model: ForceModel, theta, dt: float = GRID_DT) -> np.ndarray:
    curves, _ = predict_curves(model, theta, dt)
    return np.array([trapezoid(c.samples, c.dt) for c in curves])


def impulse_relative_errors(model: ForceModel, dataset) -> np.ndarray:
    P_true = dataset.impulses()
    P_pred = predicted_impulses(model, dataset.features())
    return np.linalg.norm(P_pred - P_true, axis=1) / np.linalg.norm(P_true, axis=1)


# ----------------------------------------------------------------------------- training


def _batch_targets(dataset, t: np.ndarray, cfg: ForceModelConfig) -> dict:
    """Observed forces on the training grid plus per-scenario physics targets."""
    obs = np.stack([c.at(t) for c in dataset.curves]) * cfg.force_scale
    v0 = np.array([[sc.v_bx - sc.v_tx, sc.v_by - sc.v_ty] for sc in dataset.scenarios])
    e = np.array([sc.e for sc in dataset.scenarios])
    Ed = np.array([sol.E_dissipated for sol in dataset.solutions])
    return dict(obs=obs, P=dataset.impulses(), dur=dataset.durations(), v0=v0, e=e, Ed=Ed, t=t,
                dt=float(t[1] - t[0]))


def _objective(model: ForceModel, theta_n, t, tg, idx, cfg: ForceModelConfig, use_physics: bool = True):
    logits, means, s, dur = model.net.forward(theta_n[idx], t)
    nll = T.mean(_mixture_nll(logits, means, s, tg["obs"][idx], cfg.sigma_min))
    w = T.softmax(logits, axis=-1)
    fmean = T.tsum(means * w.reshape(*w.shape, 1), axis=2) * (1.0 / cfg.force_scale)  # (b, n, 2) N
    # physics terms see the same window as inference: the predicted duration
    t = tg["t"]
    d = dur.data[:, None]
    inside = (t[None, :] <= d).astype(float)
    frac = np.clip(t[None, :] / d, 0.0, 1.0)[:, :, None]
    v0 = tg["v0"][idx][:, None, :]
    vrel = (v0 * (1.0 - frac) - tg["e"][idx][:, None, None] * v0 * frac) * inside[:, :, None]
    fwin = fmean * inside[:, :, None]
    # shifted rectangle rule: every sample carries one grid step
    impulse = T.tsum(fwin, axis=1) * tg["dt"]  # (b, 2) N s
    imp_err = (impulse - tg["P"][idx]) * (1.0 / cfg.impulse_unit)
    l_imp = T.mean(T.tsum(imp_err * imp_err, axis=1))
    work = T.tsum(T.tsum(fwin * vrel, axis=2), axis=1) * tg["dt"]
    eng_err = (work - tg["Ed"][idx]) * (1.0 / cfg.energy_unit)
    l_eng = T.mean(eng_err * eng_err)
    short = (tg["dur"][idx] - dur) * (1.0 / cfg.t_max)
    short = T.where(short.data > 0, short, short * 0.0)
    l_dur = T.mean(short * short)
    total = nll * cfg.lambda_nll + l_dur * cfg.lambda_dur
    if use_physics:
        total = total + l_imp * cfg.lambda_imp + l_eng * cfg.lambda_eng
    parts = {"nll": nll.item(), "impulse": l_imp.item(), "energy": l_eng.item(), "duration": l_dur.item()}
    return total, parts


def training_grid(cfg: ForceModelConfig, offset: float) -> np.ndarray:
    """Cell points ``offset + k * train_dt`` covering ``[0, t_max)``; offset in ``[0, train_dt)``."""
    n = int(round(cfg.t_max / cfg.train_dt))
    return offset + cfg.train_dt * np.arange(n)


def train_force_model(dataset, cfg: ForceModelConfig = ForceModelConfig(), validation=None,
                      log=None) -> ForceModel:
    """Fit the mixture model on ``dataset`` (the training split).

    With both physics weights at zero the physics losses are still reported but
    do not enter the objective. ``validation`` is only evaluated, never used for
    model selection.
    """
    if len(dataset) < 8:
        raise ValueError("force model training needs at least 8 scenarios")
    theta = dataset.features()
    model = new_force_model(cfg, theta)
    theta_n = model.standardize(theta)
    t_val = training_grid(cfg, 0.5 * cfg.train_dt)
    if validation is not None and len(validation):
        vtg = _batch_targets(validation, t_val, cfg)
        vtheta = model.standardize(validation.features())
    use_physics = cfg.lambda_imp > 0 or cfg.lambda_eng > 0
    opt = Adam(model.net.parameters(), lr=cfg.lr, clip_norm=cfg.clip_norm)
    rng = np.random.default_rng(cfg.seed + 1)
    n = len(dataset)
    for epoch in range(cfg.epochs):
        opt.lr = cfg.lr * (cfg.lr_final + (1.0 - cfg.lr_final) * 0.5 * (1.0 + np.cos(np.pi * epoch / cfg.epochs)))
        # a fresh grid shift every epoch keeps the quadrature unbiased between grid points
        t = training_grid(cfg, rng.uniform(0.0, cfg.train_dt))
        tg = _batch_targets(dataset, t, cfg)
        order = rng.permutation(n)
        totals, parts_sum = 0.0, {}
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            opt.zero_grad()
            loss, parts = _objective(model, theta_n, t, tg, idx, cfg, use_physics)
            if not np.isfinite(loss.item()):
                raise Diverged(f"force model loss is not finite (seed {cfg.seed}, epoch {epoch})",
                               seed=cfg.seed, epoch=epoch)
            loss.backward()
            opt.step()
            frac = len(idx) / n
            totals += loss.item() * frac
            for k, v in parts.items():
                parts_sum[k] = parts_sum.get(k, 0.0) + v * frac
        row = {"epoch": epoch, "train_loss": totals, "val_loss": float("nan"),
               "physics_loss": parts_sum["impulse"] * cfg.lambda_imp + parts_sum["energy"] * cfg.lambda_eng,
               **parts_sum}
        if validation is not None and len(validation):
            vloss, _ = _objective(model, vtheta, t_val, vtg, np.arange(len(validation)), cfg, use_physics)
            row["val_loss"] = vloss.item()
        model.history.append(row)
        if log is not None:
            log(row)
    model.trained = True
    return model
