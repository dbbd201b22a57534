import csv
import json

import pytest

from pitcollide.apinn import ApinnConfig, new_model
from pitcollide.cli import main, sha256_file

SMALL = {"force": {"widths": [16, 16], "d_model": 16, "d_time": 8},
         "dynamics": {"trunk": [24, 24], "d_model": 16, "d_vehicle": 8, "d_time": 8, "batch_size": 512,
                      "horizon": 0.5}}


def run(*args):
    return main([str(a) for a in args])


def tree_hashes(d):
    return {str(p.relative_to(d)): sha256_file(p) for p in sorted(d.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "cfg.json").write_text(json.dumps(SMALL))
    cfg = root / "cfg.json"
    assert run("gen-data", "--out", root / "data", "--scenarios", 16, "--seed", 7, "--horizon", 1.0) == 0
    assert run("train-force", "--data", root / "data", "--out", root / "force", "--config", cfg, "--epochs", 2) == 0
    assert run("train-dynamics", "--data", root / "data", "--out", root / "dyn", "--config", cfg, "--epochs", 2) == 0
    assert run("train-dynamics", "--data", root / "data", "--out", root / "nn", "--config", cfg, "--epochs", 1,
               "--model", "nn-only") == 0
    assert run("finetune", "--data", root / "data", "--out", root / "ft", "--config", cfg, "--checkpoint",
               root / "dyn" / "dynamics.ckpt", "--epochs", 2, "--n-traj", 3) == 0
    return root


def test_gen_data_writes_forces_and_manifest(tmp_path):
    assert run("gen-data", "--out", tmp_path / "a", "--scenarios", 100, "--seed", 7, "--no-trajectories") == 0
    assert len(list((tmp_path / "a" / "forces").glob("force_*.csv"))) == 100
    m = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert m["seed"] == 7 and len(m["outputs"]) == 101
    assert run("gen-data", "--out", tmp_path / "b", "--scenarios", 100, "--seed", 7, "--no-trajectories") == 0
    assert sha256_file(tmp_path / "a" / "manifest.json") == sha256_file(tmp_path / "b" / "manifest.json")


def test_gen_data_rejects_zero_scenarios(tmp_path):
    assert run("gen-data", "--out", tmp_path, "--scenarios", 0) == 2


def test_unknown_config_keys_rejected(tmp_path, ws):
    (tmp_path / "bad.json").write_text(json.dumps({"force": {"bogus": 1}}))
    assert run("train-force", "--data", ws / "data", "--out", tmp_path / "o", "--config", tmp_path / "bad.json") == 2
    (tmp_path / "bad2.json").write_text(json.dumps({"nonsense": {}}))
    assert run("gen-data", "--out", tmp_path / "o", "--config", tmp_path / "bad2.json") == 2


def test_missing_input_exit_code(tmp_path):
    assert run("train-force", "--data", tmp_path / "nowhere", "--out", tmp_path / "o") == 6
    assert run("gen-data", "--out", tmp_path / "o", "--config", tmp_path / "nope.json") == 6


def test_env_var_sets_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("PITCOLLIDE_OUT", str(tmp_path / "env"))
    assert run("gen-data", "--scenarios", 10, "--seed", 1, "--no-trajectories") == 0
    assert (tmp_path / "env" / "manifest.json").exists()
    assert (tmp_path / "env" / "resolved_config.json").exists()


def test_history_csv_has_one_row_per_epoch(ws):
    for path, n in ((ws / "force" / "force_history.csv", 2), (ws / "dyn" / "dynamics_history.csv", 2),
                    (ws / "ft" / "finetuned_3_history.csv", 2)):
        rows = list(csv.reader(open(path)))
        assert rows[0] == ["epoch", "train_loss", "val_loss", "physics_loss", "balance_ratio"]
        assert len(rows) == n + 1


def test_finetune_freezes_by_default(ws):
    from pitcollide.nn import checkpoint
    meta = checkpoint.read(ws / "ft" / "finetuned_3.ckpt")[0]["meta"]
    assert meta["config"]["freeze_ratio"] == 0.6
    assert meta["n_frozen"] == int(0.6 * len(meta["freeze_mask"]))


def test_finetune_refuses_architecture_mismatch(ws, tmp_path):
    other = {**SMALL, "dynamics": {**SMALL["dynamics"], "trunk": [32, 32]}}
    (tmp_path / "other.json").write_text(json.dumps(other))
    code = run("finetune", "--data", ws / "data", "--out", tmp_path / "o", "--config", tmp_path / "other.json",
               "--checkpoint", ws / "dyn" / "dynamics.ckpt", "--epochs", 1)
    assert code == 2


def test_predict_outputs(ws, tmp_path):
    out = tmp_path / "p"
    assert run("predict", "--data", ws / "data", "--out", out, "--scenario", 2, "--force-ckpt",
               ws / "force" / "force.ckpt", "--dynamics-ckpt", ws / "ft" / "finetuned_3.ckpt", "--horizon", 0.5,
               "--grid", 30) == 0
    traj = list(csv.reader(open(out / "trajectory.csv")))
    assert len(traj) == 1 + 51
    assert float(traj[-1][0]) == pytest.approx(0.5)
    bands = list(csv.reader(open(out / "bands.csv")))
    assert bands[0] == ["t", "mu_x", "mu_y", "sxx", "sxy", "syy"] and len(bands) == 1 + 50
    assert (out / "density.csv").exists() and (out / "force.csv").exists()
    assert not list(out.glob("*.png"))


def test_predict_4dof_and_nn_only(ws, tmp_path):
    assert run("predict", "--data", ws / "data", "--out", tmp_path / "a", "--scenario", 2, "--model", "4dof",
               "--horizon", 0.3) == 0
    assert len(list(csv.reader(open(tmp_path / "a" / "trajectory.csv")))) == 1 + 31
    assert run("predict", "--data", ws / "data", "--out", tmp_path / "b", "--scenario", 2, "--model", "nn-only",
               "--force-ckpt", ws / "force" / "force.ckpt", "--dynamics-ckpt", ws / "nn" / "nn_only.ckpt",
               "--horizon", 0.3) == 0
    # a physics checkpoint is not accepted as the data-only baseline
    assert run("predict", "--data", ws / "data", "--out", tmp_path / "c", "--scenario", 2, "--model", "nn-only",
               "--force-ckpt", ws / "force" / "force.ckpt", "--dynamics-ckpt", ws / "dyn" / "dynamics.ckpt") == 2


def test_predict_rollout_divergence_exit_code(ws, tmp_path):
    m = new_model(ApinnConfig.from_dict({**SMALL["dynamics"], "physics": False}))
    m.net.head.b.data[:] = 1e4
    m.trained = True
    m.save(tmp_path / "bad.ckpt")
    code = run("predict", "--data", ws / "data", "--out", tmp_path / "o", "--scenario", 0, "--model", "nn-only",
               "--force-ckpt", ws / "force" / "force.ckpt", "--dynamics-ckpt", tmp_path / "bad.ckpt")
    assert code == 5


def test_training_divergence_exit_code(ws, tmp_path):
    (tmp_path / "hot.json").write_text(json.dumps({**SMALL, "force": {**SMALL["force"], "lr": 1e30,
                                                                         "clip_norm": None}}))
    code = run("train-force", "--data", ws / "data", "--out", tmp_path / "o", "--config", tmp_path / "hot.json",
               "--epochs", 3)
    assert code == 4


def test_evaluate_truth_row_is_zero(ws, tmp_path):
    assert run("evaluate", "--data", ws / "data", "--out", tmp_path, "--models",
               f"pinn={ws / 'ft' / 'finetuned_3.ckpt'}", "--horizon", 0.5) == 0
    rows = {r["model"]: r for r in csv.DictReader(open(tmp_path / "metrics.csv"))}
    assert set(rows) == {"truth", "4dof", "pinn"}
    assert all(float(v) == 0.0 for k, v in rows["truth"].items() if k not in ("model", "time_ms"))
    assert "Avg Error" in (tmp_path / "metrics.txt").read_text()


def test_cluster_and_report(ws, tmp_path):
    assert run("cluster", "--data", ws / "data", "--out", tmp_path / "cl") == 0
    assert (tmp_path / "cl" / "clusters.json").exists() and (tmp_path / "cl" / "clusters.csv").exists()
    assert run("report", "--out", tmp_path / "rep", tmp_path / "cl", ws / "data", ws / "ft") == 0
    rep = json.loads((tmp_path / "rep" / "report.json").read_text())
    for entry, src in zip(rep["inputs"], (tmp_path / "cl", ws / "data", ws / "ft")):
        m = json.loads((src / "manifest.json").read_text())
        assert entry["config_hash"] == m["config_hash"] and entry["seed"] == m["seed"]
    assert run("report", "--out", tmp_path / "rep2", tmp_path / "missing") == 6


def test_every_subcommand_is_deterministic(ws, tmp_path):
    cfg = ws / "cfg.json"
    d = ws / "data"
    commands = {
        "gen-data": ["gen-data", "--scenarios", 16, "--seed", 7, "--horizon", 1.0],
        "train-force": ["train-force", "--data", d, "--config", cfg, "--epochs", 2],
        "train-dynamics": ["train-dynamics", "--data", d, "--config", cfg, "--epochs", 2],
        "finetune": ["finetune", "--data", d, "--config", cfg, "--checkpoint", ws / "dyn" / "dynamics.ckpt",
                     "--epochs", 2, "--n-traj", 3],
        "predict": ["predict", "--data", d, "--scenario", 1, "--force-ckpt", ws / "force" / "force.ckpt",
                    "--dynamics-ckpt", ws / "ft" / "finetuned_3.ckpt", "--horizon", 0.2, "--grid", 20],
        "evaluate": ["evaluate", "--data", d, "--models", f"pinn={ws / 'ft' / 'finetuned_3.ckpt'}", "--horizon",
                     0.2],
        "cluster": ["cluster", "--data", d],
        "report": ["report", ws / "ft", ws / "data"],
    }
    reference = {"gen-data": ws / "data", "train-force": ws / "force", "train-dynamics": ws / "dyn",
                 "finetune": ws / "ft"}
    for name, args in commands.items():
        a, b = tmp_path / f"{name}-a", tmp_path / f"{name}-b"
        assert run(*args, "--out", a) == 0
        if name in reference:
            assert tree_hashes(a) == tree_hashes(reference[name]), name
        else:
            assert run(*args, "--out", b) == 0
            assert tree_hashes(a) == tree_hashes(b), name


def test_inputs_are_not_mutated(ws, tmp_path):
    before = tree_hashes(ws / "data"), tree_hashes(ws / "ft")
    run("predict", "--data", ws / "data", "--out", tmp_path / "p", "--scenario", 0, "--force-ckpt",
        ws / "force" / "force.ckpt", "--dynamics-ckpt", ws / "ft" / "finetuned_3.ckpt", "--horizon", 0.1)
    run("finetune", "--data", ws / "data", "--out", tmp_path / "f", "--config", ws / "cfg.json", "--checkpoint",
        ws / "ft" / "finetuned_3.ckpt", "--epochs", 1, "--n-traj", 2)
    assert (tree_hashes(ws / "data"), tree_hashes(ws / "ft")) == before


def test_data_generation_failure_exit_code(tmp_path):
    # a 20 kg vehicle cannot absorb a car-sized impulse without leaving the guard bounds
    light = {"vehicle": {"m": 20.0, "m_s": 15.0, "I_zz": 1.0, "I_xx_s": 0.5, "I_xz": 0.0}}
    (tmp_path / "light.json").write_text(json.dumps(light))
    assert run("gen-data", "--out", tmp_path / "o", "--scenarios", 3, "--config", tmp_path / "light.json") == 3
