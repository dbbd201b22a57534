import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pitcollide import apinn
from pitcollide.apinn import (BOUNDS, DYN, SIGMA_BOUND, AdaptiveSchedule, ApinnConfig, ApinnModel, adaptive_weight,
                              auto_adjust, balance_ratio, consistency_loss, data_quality, dynamic_derivative, gmm_head,
                              kinematic_update, new_model, one_step_prior, physics_residual_loss, predict_next_state,
                              rollout, soft_boundary_loss, train_apinn)
from pitcollide.data.surrogate import SurrogateConfig, generate_force_dataset
from pitcollide.data.trajectories import generate_pretrain_trajectories, generate_true_plant_trajectories
from pitcollide.errors import ConfigError, DivergedRollout, EmptyTrainingSet, UntrainedWeights
from pitcollide.nn.layers import Dense, freeze_leading
from pitcollide.vehicle import VehicleParams, simulate

SMALL = dict(trunk=(24, 24), d_model=16, d_vehicle=8, d_time=8, batch_size=128, horizon=0.5, pretrain_epochs=3,
             finetune_epochs=2)


@pytest.fixture(scope="module")
def forces():
    return generate_force_dataset(SurrogateConfig(n_scenarios=8, seed=3))


@pytest.fixture(scope="module")
def pretrain(forces):
    return generate_pretrain_trajectories(forces, horizon=1.0)


@pytest.fixture(scope="module")
def true_plant(forces):
    return generate_true_plant_trajectories(forces, horizon=1.0)


@pytest.fixture(scope="module")
def trained(pretrain):
    return train_apinn(pretrain, None, ApinnConfig(**SMALL))


def coast(x0, horizon=2.0):
    out = simulate(np.atleast_2d(x0), VehicleParams(), None, 1e-3, None, 0.0, 0.01, horizon, "rk4")
    return out["states"][0]


# ----------------------------------------------------------------------------- schedule and small losses


def test_adaptive_weight_values():
    assert adaptive_weight(300, 1.0) == pytest.approx(5.05)
    assert adaptive_weight(300, 0.0) == pytest.approx(0.1)
    assert abs(adaptive_weight(1300, 1.0) - 10.0) < 1e-3


def test_adaptive_weight_rejects_bad_inputs():
    with pytest.raises(ValueError):
        adaptive_weight(-1, 0.5)
    with pytest.raises(ValueError):
        adaptive_weight(10, 1.5)


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 2000), st.floats(0, 2000), st.floats(0, 1))
def test_adaptive_weight_nondecreasing_in_epoch(e1, e2, dq):
    lo, hi = sorted((e1, e2))
    assert adaptive_weight(lo, dq) <= adaptive_weight(hi, dq) + 1e-12


def test_schedule_validation():
    with pytest.raises(ConfigError):
        AdaptiveSchedule(lambda_min=5.0, lambda_max=1.0)
    with pytest.raises(ConfigError):
        AdaptiveSchedule(sigma_bound=(1.0, 2.0))


def test_data_quality_values():
    train = np.array([[0.0, 0.0], [1.0, 1.0]])
    assert data_quality([[0.0, 0.0]], train)[0] == pytest.approx(1.0)
    assert data_quality([[0.1, 0.0]], train, 0.1)[0] == pytest.approx(math.exp(-1.0))
    with pytest.raises(EmptyTrainingSet):
        data_quality([[0.0, 0.0]], np.empty((0, 2)))


def test_data_quality_leaves_own_group_out():
    train = np.array([[0.0], [0.5]])
    q = data_quality([[0.0]], train, 0.1, exclude=np.array([0]), groups=np.array([0, 1]))
    assert q[0] == pytest.approx(math.exp(-5.0))


def test_soft_boundary_values():
    one = dict(bounds=(60.0,), scales=(1.0,))
    assert soft_boundary_loss(np.array([40.0]), **one) < 1e-16  # argument -20
    assert soft_boundary_loss(np.array([60.0]), **one) == pytest.approx(math.log(2.0) ** 2, rel=1e-12)
    assert soft_boundary_loss(np.array([-60.0]), **one) == pytest.approx(0.4805, abs=1e-4)
    inside = soft_boundary_loss(np.zeros(4), scales=(0.1, 0.1, 0.1, 0.1))
    assert inside < 1e-16


def test_balance_ratio_and_auto_adjust():
    assert balance_ratio(1.0, 3.0) == pytest.approx(0.25)
    assert balance_ratio(0.0, 0.0) == 0.5
    assert auto_adjust(2.0, 0.01) == pytest.approx(0.2)  # ratio clamped at 0.1
    assert auto_adjust(2.0, 1.0) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        balance_ratio(-1.0, 1.0)


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 100), st.floats(0, 1))
def test_auto_adjust_respects_floor(lam, ratio):
    assert auto_adjust(lam, ratio) >= 0.01


def test_consistency_values():
    assert consistency_loss(np.zeros((1, 4))) == 0.0
    assert consistency_loss(np.zeros((2, 4))) == pytest.approx(1.0)
    means = np.array([[0.0, 0, 0, 0], [4.0, 0, 0, 0]])
    assert consistency_loss(means, 2.0) == pytest.approx(0.135335, abs=1e-6)


def test_gmm_head():
    prior = np.array([15.0, 0.1, 0.0, 0.0])
    g = gmm_head(np.zeros(3), np.zeros((3, 4)), np.zeros((3, 4)), prior)
    assert np.allclose(g.means, prior)
    assert np.allclose(g.weights, 1 / 3)
    g = gmm_head(np.zeros(2), np.full((2, 4), 100.0), np.full((2, 4), -100.0), prior)
    assert np.allclose(g.means, prior + np.array(SIGMA_BOUND))
    assert np.allclose(g.variances, 1e-4)


# ----------------------------------------------------------------------------- 4DOF pieces


def test_residual_vanishes_on_4dof_data():
    straight = coast([15.0, 0, 0, 0, 0, 0, 0, 0])
    assert physics_residual_loss(straight, np.zeros((len(straight), 2))) < 1e-6
    perturbed = coast([15.0, 0.3, 0, 0.2, 0.01, 0, 0, 0])
    assert physics_residual_loss(perturbed, np.zeros((len(perturbed), 2))) < 1e-6


def test_residual_of_constant_state_is_model_derivative():
    x = np.array([12.0, 0.5, 0.1, 0.3, 0.02, 0.1, 1.0, 2.0])
    F = np.array([2000.0, -5000.0])
    states = np.repeat(x[None], 5, axis=0)
    f = dynamic_derivative(x, F, VehicleParams())
    got = physics_residual_loss(states, np.repeat(F[None], 5, axis=0), lambda_physics=2.5)
    assert got == pytest.approx(2.5 * float(f @ f), rel=1e-12)
    assert physics_residual_loss(states, np.zeros((5, 2)), lambda_physics=0.0) == 0.0


def test_one_step_prior_matches_fine_integration():
    x = np.array([[14.0, 0.5, 0.05, 0.2, 0.01, 0.05, 0.0, 0.0]])
    F = np.array([[1000.0, 3000.0]])
    fine = simulate(x, VehicleParams(), np.repeat(F[:, None], 20, axis=1), 1e-3, None, 0.0, 1e-3, 0.01, "rk4")
    assert np.allclose(one_step_prior(x, F, VehicleParams()), fine["states"][:, -1], atol=1e-6)


def test_kinematic_update_straight_line():
    x = np.array([10.0, 0, 0, 0, 0, 0, 0, 0])
    nxt = kinematic_update(x, np.array([10.0, 0, 0, 0]))
    assert nxt[6] == pytest.approx(0.1) and nxt[7] == pytest.approx(0.0)


# ----------------------------------------------------------------------------- network and freezing


def test_freeze_ten_layers_freezes_six():
    rng = np.random.default_rng(0)
    layers = [Dense(4, 4, rng) for _ in range(10)]
    assert freeze_leading(layers, 0.6) == 6
    assert [all(p.frozen for p in l.parameters()) for l in layers] == [True] * 6 + [False] * 4


def test_default_network_freezes_leading_layers():
    m = new_model()
    layers = m.net.layer_list()
    assert freeze_leading(layers, 0.6) == int(0.6 * len(layers))


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        ApinnConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        ApinnConfig.from_dict({"schedule": {"bogus": 1}})
    cfg = ApinnConfig(J=2)
    assert ApinnConfig.from_dict(cfg.to_dict()) == cfg


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_component_means_stay_within_bound_of_prior(seed):
    rng = np.random.default_rng(seed)
    m = new_model(ApinnConfig(**SMALL))
    for p in m.net.parameters():
        p.data[...] = rng.normal(0, 3.0, p.data.shape)  # extreme weights saturate the head
    m.trained = True
    x = np.array([[rng.uniform(5, 25), rng.normal(0, 1), 0.0, rng.normal(0, 0.5), 0.0, 0.0, 0.0, 0.0]])
    F = rng.normal(0, 5000, (1, 2))
    g = predict_next_state(x[0], F[0], m)
    prior = one_step_prior(x, F, VehicleParams())[0, list(DYN)]
    assert np.all(np.abs(g.means - prior) <= np.array(SIGMA_BOUND) + 1e-9)


def test_untrained_model_refuses_prediction():
    m = new_model(ApinnConfig(**SMALL))
    with pytest.raises(UntrainedWeights):
        predict_next_state(np.zeros(8), np.zeros(2), m)
    with pytest.raises(UntrainedWeights):
        rollout(m, np.zeros((1, 8)), np.zeros((1, 3, 2)))


def test_rollout_guard_raises():
    m = new_model(ApinnConfig(**SMALL, physics=False))
    m.net.head.b.data[:] = 1e4  # absurd increments
    m.trained = True
    with pytest.raises(DivergedRollout):
        rollout(m, np.array([[15.0, 0, 0, 0, 0, 0, 0, 0]]), np.zeros((1, 5, 2)))


# ----------------------------------------------------------------------------- training


def test_training_history_and_counts(trained):
    assert trained.trained
    assert [r["epoch"] for r in trained.history] == [0, 1, 2]
    assert all(np.isfinite(r["train_loss"]) for r in trained.history)
    assert all(0 <= r["balance_ratio"] <= 1 for r in trained.history)


def test_balance_ratio_uses_weighted_physics_term(trained):
    for r in trained.history:
        assert r["balance_ratio"] == pytest.approx(r["mse"] / (r["mse"] + r["weighted_physics"]))


def test_training_is_deterministic(pretrain, trained):
    again = train_apinn(pretrain, None, ApinnConfig(**SMALL))
    for a, b in zip(trained.net.parameters(), again.net.parameters()):
        assert np.array_equal(a.data, b.data)


def test_empty_finetune_returns_phase_one_weights(pretrain, trained, tmp_path):
    trained.save(tmp_path / "a.ckpt")
    m = ApinnModel.load(tmp_path / "a.ckpt")
    out = train_apinn(None, pretrain.subset(np.array([], dtype=int)), ApinnConfig(**SMALL), model=m)
    for a, b in zip(trained.net.parameters(), out.net.parameters()):
        assert np.array_equal(a.data, b.data)


def test_finetune_keeps_frozen_layers(trained, true_plant, tmp_path):
    trained.save(tmp_path / "a.ckpt")
    m = ApinnModel.load(tmp_path / "a.ckpt")
    before = [[p.data.copy() for p in l.parameters()] for l in m.net.layer_list()]
    out = train_apinn(None, true_plant.subset(np.arange(2)), ApinnConfig(**SMALL), model=m)
    layers = out.net.layer_list()
    assert out.n_frozen == int(0.6 * len(layers))
    for i, layer in enumerate(layers):
        same = all(np.array_equal(a, p.data) for a, p in zip(before[i], layer.parameters()))
        assert same == (i < out.n_frozen)
    assert [r["epoch"] for r in out.history if r["phase"] == "finetune"] == [3, 4]


def test_checkpoint_round_trip(trained, tmp_path):
    trained.save(tmp_path / "m.ckpt")
    m = ApinnModel.load(tmp_path / "m.ckpt")
    x = np.array([[14.0, 0.2, 0.0, 0.1, 0.0, 0.0, 0.0, 0.0]])
    F = np.array([[500.0, 2000.0]])
    a, b = trained.step(x, x, F, 0.02), m.step(x, x, F, 0.02)
    assert np.array_equal(a[1], b[1])
    assert len(m.history) == len(trained.history)


def test_nn_only_never_touches_physics(pretrain, monkeypatch):
    def boom(*a, **k):
        raise AssertionError("physics code evaluated by the data-only baseline")

    monkeypatch.setattr(apinn, "_physics_terms", boom)
    monkeypatch.setattr(apinn, "one_step_prior", boom)
    monkeypatch.setattr(apinn, "dynamic_derivative", boom)
    m = train_apinn(pretrain, None, ApinnConfig(**SMALL, physics=False))
    out = rollout(m, pretrain.states[:2, 0], pretrain.step_force[:2], 5)
    assert np.all(np.isfinite(out))


def test_nn_only_training_is_deterministic(pretrain):
    a = train_apinn(pretrain, None, ApinnConfig(**{**SMALL, "pretrain_epochs": 1}, physics=False))
    b = train_apinn(pretrain, None, ApinnConfig(**{**SMALL, "pretrain_epochs": 1}, physics=False))
    assert all(np.array_equal(p.data, q.data) for p, q in zip(a.net.parameters(), b.net.parameters()))


def test_physics_model_has_lower_residual_than_physics_free(pretrain, trained):
    free = train_apinn(pretrain, None, ApinnConfig(**SMALL, physics=False))
    ids = np.arange(4)
    x0, F = pretrain.states[ids, 0], pretrain.step_force[ids]
    res = {}
    for name, m in (("pinn", trained), ("free", free)):
        out = rollout(m, x0, F, 50)
        res[name] = physics_residual_loss(out, F[:, :51])
    assert res["free"] >= 10 * res["pinn"]


def test_coast_down_never_gains_speed(trained):
    rng = np.random.default_rng(5)
    x0 = np.column_stack([rng.uniform(5, 25, 6), rng.normal(0, 1, 6), np.zeros(6), rng.normal(0, 0.3, 6),
                          np.zeros((6, 4))])
    out = rollout(trained, x0, np.zeros((6, 100, 2)), 100)
    speed = np.hypot(out[..., 0], out[..., 1])
    assert np.all(np.diff(speed, axis=1) <= 1e-12)


def test_bounds_constant():
    assert BOUNDS == (60.0, 30.0, 6.0, 4.0)
