import numpy as np
import pytest

from pitcollide.curves import ForceCurve, trapezoid
from pitcollide.data.surrogate import SurrogateConfig, generate_force_dataset
from pitcollide.data.trajectories import (PlantPerturbation, TrajectorySet, generate_pretrain_trajectories,
                                          generate_true_plant_trajectories, step_mean_forces)
from pitcollide.vehicle import VehicleParams


@pytest.fixture(scope="module")
def forces():
    return generate_force_dataset(SurrogateConfig(n_scenarios=6, seed=2))


@pytest.fixture(scope="module")
def pretrain(forces):
    return generate_pretrain_trajectories(forces, horizon=1.0)


def test_one_trajectory_per_scenario(forces, pretrain):
    assert len(pretrain) == len(forces)
    assert pretrain.states.shape == (6, 100, 8)
    assert np.array_equal(pretrain.scenario_ids, np.arange(6))
    assert pretrain.t[0] == 0.0 and pretrain.t[-1] == pytest.approx(0.99)


def test_row_and_sample_counts():
    # 20 runs of 5 s at 100 Hz, and 400 usable transitions per run
    ds = generate_force_dataset(SurrogateConfig(n_scenarios=2, seed=0))
    tr = generate_pretrain_trajectories(ds, horizon=5.0)
    assert tr.states.shape[1] == 500
    assert 20 * tr.states.shape[1] == 10000
    n = len(tr.transitions()["x"]) // len(tr)
    assert (5 * n, 20 * n) == (2000, 8000)


def test_zero_force_runs_straight(forces):
    still = generate_force_dataset(SurrogateConfig(n_scenarios=1, seed=0))
    still.curves[0] = ForceCurve(1e-3, np.zeros((10, 2)))
    tr = generate_pretrain_trajectories(still, horizon=1.0)
    assert np.abs(tr.states[0, :, 7]).max() < 1e-12
    assert np.abs(tr.states[0, :, 2]).max() < 1e-12


def test_impact_changes_momentum_by_impulse(forces):
    tr = generate_pretrain_trajectories(forces, horizon=0.3)
    p = VehicleParams()
    for b in range(len(forces)):
        # world-frame lateral speed at pulse end; tires oppose the push, so it stays below P_y / m
        end = int(np.ceil(forces.curves[b].duration / 0.01)) + 1
        vx, vy, psi = tr.states[b, end, :3]
        lateral = vx * np.sin(psi) + vy * np.cos(psi)
        expect = forces.impulses()[b, 1] / p.m
        assert np.sign(lateral) == np.sign(expect)
        assert 0.3 * abs(expect) <= abs(lateral) <= 1.05 * abs(expect)


def test_step_mean_force_preserves_impulse(forces):
    sf = step_mean_forces(forces.curves, 30)
    for b, c in enumerate(forces.curves):
        assert np.allclose(sf[b].sum(axis=0) * 0.01, trapezoid(c.samples, c.dt), rtol=1e-12, atol=1e-9)


def test_true_plant_differs_from_model(forces, pretrain):
    true = generate_true_plant_trajectories(forces, horizon=1.0)
    assert true.plant == "true"
    gap = np.abs(true.states[..., 6:8] - pretrain.states[..., 6:8]).max()
    assert gap > 0.01
    p = PlantPerturbation().apply(VehicleParams())
    assert p.C[0] == pytest.approx(0.7 * VehicleParams().C[0]) and p.mu_s == pytest.approx(0.85 * 0.9)


def test_transitions_pair_consecutive_rows(pretrain):
    tr = pretrain.transitions(horizon=0.5)
    assert tr["x"].shape == (6 * 50, 8)
    assert np.array_equal(tr["x_next"][0], pretrain.states[0, 1])
    assert np.array_equal(tr["x"][50], pretrain.states[1, 0])


def test_save_load_round_trip(tmp_path, pretrain):
    pretrain.save(tmp_path)
    back = TrajectorySet.load(tmp_path)
    assert np.allclose(back.states, pretrain.states, rtol=0, atol=0)
    assert np.allclose(back.step_force, pretrain.step_force, rtol=1e-12)
    assert back.plant == "4dof"
