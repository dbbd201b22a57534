import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import gaussian_mixture_nll_oracle, impulse_loss_oracle
from pitcollide.curves import ForceCurve, trapezoid
from pitcollide.data.surrogate import SurrogateConfig, generate_force_dataset
from pitcollide.errors import DegenerateCovariance, Diverged, GridMismatch, UntrainedWeights
from pitcollide.force_model import (ForceGmm, ForceModel, ForceModelConfig, _objective, energy_loss, impulse_loss,
                                    impulse_relative_errors, new_force_model, nll_loss, predict_curves, predict_force,
                                    train_force_model, training_grid, _batch_targets)
from pitcollide.impulse import ImpulseSolution

SMALL = dict(widths=(32, 32), d_model=16, d_time=8, epochs=6, batch_size=8)


@pytest.fixture(scope="module")
def dataset():
    return generate_force_dataset(SurrogateConfig(n_scenarios=16, seed=4))


@pytest.fixture(scope="module")
def model(dataset):
    return train_force_model(dataset.train(), ForceModelConfig(**SMALL), dataset.test())


def flagged(cfg=ForceModelConfig(**SMALL)):
    m = new_force_model(cfg, np.random.default_rng(0).normal(size=(20, 7)))
    m.trained = True
    return m


# ----------------------------------------------------------------------------- mixture and prediction


def test_mixture_mean_arithmetic():
    g = ForceGmm([0.0], [[0.3, 0.7]], [[[1000.0, 0.0], [2000.0, 0.0]]], np.ones((1, 2, 2)))
    assert g.mean()[0, 0] == pytest.approx(1700.0)


def test_equal_logits_give_equal_weights():
    m = flagged(ForceModelConfig(**SMALL, K=4))
    for layer in (m.net.head_logits,):
        layer.W.data[:] = 0.0
        layer.b.data[:] = 0.0
    _, g, _ = predict_force(np.zeros(7), [0.01, 0.05], m)
    assert np.allclose(g.weights, 0.25)


def test_force_is_zero_after_predicted_duration():
    m = flagged()
    _, _, dur = predict_force(np.zeros(7), 0.0, m)
    t = np.array([0.5 * dur, dur + 1e-3, 0.2])
    mean, g, _ = predict_force(np.zeros(7), t, m)
    assert np.all(mean[1:] == 0.0) and np.all(g.means[1:] == 0.0)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, 7, elements=st.floats(-5, 5)), st.floats(0, 0.2))
def test_mixture_invariants(theta, t):
    m = flagged()
    gmms, dur = m.mixture(theta, [t])
    g = gmms[0]
    assert np.allclose(g.weights.sum(axis=1), 1.0, atol=1e-9)
    floor = (m.cfg.sigma_min / m.cfg.force_scale) ** 2
    assert np.all(g.variances >= floor * (1 - 1e-12))
    assert 0 < dur[0] <= m.cfg.t_max


def test_untrained_model_refuses_prediction():
    m = new_force_model(ForceModelConfig(**SMALL), np.zeros((10, 7)) + np.arange(7))
    with pytest.raises(UntrainedWeights):
        predict_force(np.zeros(7), 0.01, m)


def test_sampling_matches_mixture_mean():
    rng = np.random.default_rng(3)
    g = ForceGmm([0.0], [[0.2, 0.5, 0.3]], rng.normal(0, 1000, (1, 3, 2)), rng.uniform(1e4, 1e6, (1, 3, 2)))
    s = g.sample(0, 100_000, rng)
    se = s.std(axis=0) / math.sqrt(len(s))
    assert np.all(np.abs(s.mean(axis=0) - g.mean()[0]) < 3 * se)


# ----------------------------------------------------------------------------- losses


def test_impulse_loss_values():
    c = ForceCurve(1e-3, np.column_stack([np.full(101, 1000.0), np.full(101, -500.0)]))
    P = trapezoid(c.samples, c.dt)
    assert impulse_loss(c, P) == 0.0
    assert impulse_loss(c, P + [100.0, 0.0], 1.0) == pytest.approx(1e4)
    sol = ImpulseSolution(P[0] - 100.0, P[1], 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1000.0, 0.0)
    assert impulse_loss(c, sol, 2.0) == pytest.approx(2e4)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (30, 2), elements=st.floats(-1e4, 1e4)), st.floats(-500, 500), st.floats(-500, 500),
       st.floats(0, 10))
def test_impulse_loss_matches_oracle(samples, px, py, lam):
    c = ForceCurve(1e-3, samples)
    expect = impulse_loss_oracle(samples.tolist(), 1e-3, (px, py), lam)
    assert impulse_loss(c, (px, py), lam) == pytest.approx(expect, rel=1e-10, abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (30, 2), elements=st.floats(-1e4, 1e4)), st.floats(0.5, 2.0))
def test_impulse_loss_grows_away_from_optimum(samples, scale):
    c = ForceCurve(1e-3, samples)
    P = trapezoid(c.samples, c.dt)
    if np.hypot(*P) < 1e-3:
        return
    scaled = ForceCurve(1e-3, samples * 1.1)
    assert impulse_loss(scaled, P) > impulse_loss(c, P)


def test_energy_loss_values():
    c = ForceCurve(1e-3, np.column_stack([np.full(101, 1000.0), np.zeros(101)]))
    v = np.column_stack([np.full(101, 10.0), np.zeros(101)])
    assert energy_loss(c, v, 1000.0) == pytest.approx(0.0, abs=1e-12)
    assert energy_loss(c, v, 500.0, 1.0) == pytest.approx(2.5e5)
    with pytest.raises(GridMismatch):
        energy_loss(c, v[:50], 1000.0)


def test_nll_values():
    g = ForceGmm([0.0], [[1.0]], [[[3.0, 4.0]]], [[[1.0, 1.0]]])
    assert nll_loss(np.array([[3.0, 4.0]]), g) == pytest.approx(math.log(2 * math.pi))
    wide = ForceGmm([0.0], [[1.0]], [[[3.0, 4.0]]], [[[2.0, 2.0]]])
    assert nll_loss(np.array([[3.0, 4.0]]), wide) > nll_loss(np.array([[3.0, 4.0]]), g)
    a = ForceGmm([0.0], [[0.5, 0.5]], [[[-1.0, 0.0], [1.0, 0.0]]], np.ones((1, 2, 2)))
    b = ForceGmm([0.0], [[0.5, 0.5]], [[[1.0, 0.0], [-1.0, 0.0]]], np.ones((1, 2, 2)))
    assert nll_loss(np.zeros((1, 2)), a) == nll_loss(np.zeros((1, 2)), b)
    with pytest.raises(DegenerateCovariance):
        nll_loss(np.zeros((1, 2)), ForceGmm([0.0], [[1.0]], np.zeros((1, 1, 2)), np.zeros((1, 1, 2))))
    with pytest.raises(GridMismatch):
        nll_loss(np.zeros((3, 2)), g)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_nll_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    w = rng.dirichlet(np.ones(3), size=4)
    mu = rng.normal(0, 3, (4, 3, 2))
    var = rng.uniform(0.5, 4, (4, 3, 2))
    obs = rng.normal(0, 3, (4, 2))
    g = ForceGmm(np.arange(4.0), w, mu, var)
    expect = gaussian_mixture_nll_oracle(obs.tolist(), w.tolist(), mu.tolist(), var.tolist())
    assert nll_loss(obs, g) == pytest.approx(expect, rel=1e-10)


# ----------------------------------------------------------------------------- training


def test_training_history(model):
    h = model.history
    assert len(h) == 6 and all(np.isfinite(r["train_loss"]) and np.isfinite(r["val_loss"]) for r in h)
    assert h[-1]["train_loss"] < h[0]["train_loss"]
    assert model.trained


def test_training_is_deterministic(dataset, model):
    again = train_force_model(dataset.train(), ForceModelConfig(**SMALL), dataset.test())
    assert all(np.array_equal(a.data, b.data) for a, b in zip(model.net.parameters(), again.net.parameters()))


def test_zero_physics_weights_leave_pure_likelihood(dataset):
    cfg = ForceModelConfig(**SMALL, lambda_imp=0.0, lambda_eng=0.0)
    m = new_force_model(cfg, dataset.features())
    t = training_grid(cfg, 0.0)
    tg = _batch_targets(dataset, t, cfg)
    idx = np.arange(len(dataset))
    total, parts = _objective(m, m.standardize(dataset.features()), t, tg, idx, cfg, use_physics=False)
    assert total.item() == pytest.approx(parts["nll"] * cfg.lambda_nll + parts["duration"] * cfg.lambda_dur)
    assert parts["impulse"] > 0 and parts["energy"] > 0
    trained = train_force_model(dataset, ForceModelConfig(**{**SMALL, "epochs": 1}, lambda_imp=0.0, lambda_eng=0.0))
    assert trained.history[0]["physics_loss"] == 0.0 and trained.history[0]["impulse"] > 0


def test_divergence_reports_seed_and_epoch(dataset):
    cfg = ForceModelConfig(**SMALL, lr=1e30, clip_norm=None, seed=5)
    with pytest.raises(Diverged) as err:
        train_force_model(dataset, cfg)
    assert err.value.seed == 5 and err.value.epoch >= 0


def test_needs_eight_scenarios(dataset):
    with pytest.raises(ValueError):
        train_force_model(dataset.subset(np.arange(5)), ForceModelConfig(**SMALL))


def test_checkpoint_round_trip(model, dataset, tmp_path):
    model.save(tmp_path / "f.ckpt")
    back = ForceModel.load(tmp_path / "f.ckpt")
    a, _ = predict_curves(model, dataset.features()[:2])
    b, _ = predict_curves(back, dataset.features()[:2])
    assert all(np.array_equal(x.samples, y.samples) for x, y in zip(a, b))
    assert np.all(np.isfinite(impulse_relative_errors(back, dataset.test())))


def test_config_validation():
    with pytest.raises(ValueError):
        ForceModelConfig(K=0)
    with pytest.raises(ValueError):
        ForceModelConfig(lambda_imp=-1.0)
    cfg = ForceModelConfig(K=2)
    assert ForceModelConfig.from_dict(cfg.to_dict()) == cfg
