"""Command-line pipeline: data generation, training, fine-tuning, prediction, evaluation and reports.

Exit codes: 0 ok, 2 configuration, 3 data generation, 4 training divergence,
5 rollout divergence, 6 missing input.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import apinn
from .apinn import ApinnConfig, ApinnModel
from .curves import ForceCurve
from .data import metrics
from .data.clustering import cluster_by_impulse
from .data.pso import PsoConfig, pso_fit_tires
from .data.surrogate import ForceDataset, SurrogateConfig, generate_force_dataset
from .data.trajectories import (HORIZON, PlantPerturbation, TrajectorySet, generate_pretrain_trajectories,
                                generate_true_plant_trajectories, step_mean_forces)
from .errors import (CheckpointError, ConfigError, Diverged, DivergedRollout, IntegrationDiverged, PitCollideError,
                     UntrainedWeights)
from .force_model import ForceModel, ForceModelConfig, predict_curves, train_force_model
from .nn import checkpoint
from .unscented import trajectory_gmm, write_bands_csv, write_density_csv
from .vehicle import OUTPUT_DT, VehicleParams, write_trajectory_csv

EXIT_OK, EXIT_CONFIG, EXIT_DATAGEN, EXIT_TRAINING, EXIT_INFERENCE, EXIT_MISSING = 0, 2, 3, 4, 5, 6
CONFIG_SECTIONS = ("surrogate", "force", "dynamics", "pso", "plant", "vehicle")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# ----------------------------------------------------------------------------- helpers


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _dump(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _out_dir(args) -> Path:
    root = args.out or os.environ.get("PITCOLLIDE_OUT") or "runs"
    d = Path(root)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _read_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise CliError(EXIT_MISSING, f"config file {p} not found")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_CONFIG, f"config file {p} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise CliError(EXIT_CONFIG, "config file must hold a JSON object")
    unknown = set(cfg) - set(CONFIG_SECTIONS)
    if unknown:
        raise CliError(EXIT_CONFIG, f"unknown config sections: {sorted(unknown)}")
    return cfg


def _build(cls, section: dict, overrides: dict):
    d = dict(section)
    d.update({k: v for k, v in overrides.items() if v is not None})
    try:
        if hasattr(cls, "from_dict"):
            return cls.from_dict(d)
        names = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - names
        if extra:
            raise ConfigError(f"unknown {cls.__name__} keys: {sorted(extra)}")
        return cls(**d)
    except (ConfigError, ValueError, TypeError) as exc:
        raise CliError(EXIT_CONFIG, f"invalid {cls.__name__}: {exc}") from exc


def _config_dict(obj) -> dict:
    return obj.to_dict() if hasattr(obj, "to_dict") else dataclasses.asdict(obj)


def _config_hash(d: dict) -> str:
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def _write_manifest(out: Path, command: str, resolved: dict, seed: int, inputs: Dict[str, str],
                    outputs: List[Path]):
    files = {}
    for p in sorted(outputs):
        if p.is_dir():
            for q in sorted(p.rglob("*")):
                if q.is_file():
                    files[str(q.relative_to(out))] = sha256_file(q)
        elif p.exists():
            files[str(p.relative_to(out))] = sha256_file(p)
    _dump(out / "resolved_config.json", resolved)
    manifest = {"command": command, "seed": seed, "config_hash": _config_hash(resolved), "inputs": inputs,
                "outputs": files}
    _dump(out / "manifest.json", manifest)
    return manifest


def _need(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError(EXIT_MISSING, f"{what} not found: {p}")
    return p


def _input_hashes(paths: Dict[str, Path]) -> Dict[str, str]:
    out = {}
    for name, p in paths.items():
        p = Path(p)
        if p.is_dir() and (p / "manifest.json").exists():
            out[name] = sha256_file(p / "manifest.json")
        elif p.is_dir() and (p / "index.json").exists():
            out[name] = sha256_file(p / "index.json")
        elif p.is_file():
            out[name] = sha256_file(p)
    return out


def _load_forces(data: Path) -> ForceDataset:
    return ForceDataset.load(_need(data / "forces" / "index.json", "force dataset").parent)


def _load_trajectories(data: Path, which: str) -> TrajectorySet:
    return TrajectorySet.load(_need(data / which / "index.json", f"{which} trajectories").parent)


def _write_history(path, rows: List[dict]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "physics_loss", "balance_ratio"])
        for r in rows:
            w.writerow([int(r["epoch"])] + [repr(float(r.get(k, float("nan"))))
                                              for k in ("train_loss", "val_loss", "physics_loss", "balance_ratio")])


def _vehicle(cfg: dict) -> VehicleParams:
    try:
        return VehicleParams.from_dict({**VehicleParams().to_dict(), **cfg.get("vehicle", {})})
    except (ValueError, TypeError) as exc:
        raise CliError(EXIT_CONFIG, f"invalid vehicle parameters: {exc}") from exc


# ----------------------------------------------------------------------------- subcommands


def cmd_gen_data(args) -> int:
    out = _out_dir(args)
    cfg = _read_config(args.config)
    sur = _build(SurrogateConfig, cfg.get("surrogate", {}), {"n_scenarios": args.scenarios, "seed": args.seed})
    plant = _build(PlantPerturbation, cfg.get("plant", {}), {})
    params = _vehicle(cfg)
    try:
        forces = generate_force_dataset(sur)
        forces.save(out / "forces")
        outputs = [out / "forces"]
        if not args.no_trajectories:
            generate_pretrain_trajectories(forces, params, horizon=args.horizon).save(out / "pretrain")
            generate_true_plant_trajectories(forces, params, plant, horizon=args.horizon).save(out / "true")
            outputs += [out / "pretrain", out / "true"]
    except IntegrationDiverged as exc:
        raise CliError(EXIT_DATAGEN, f"trajectory generation failed: {exc}") from exc
    resolved = {"surrogate": sur.to_dict(), "plant": plant.to_dict(), "vehicle": params.to_dict(),
                "horizon": args.horizon, "trajectories": not args.no_trajectories}
    _write_manifest(out, "gen-data", resolved, sur.seed, {}, outputs)
    print(f"wrote {len(forces)} scenarios to {out}")
    return EXIT_OK


def cmd_train_force(args) -> int:
    out = _out_dir(args)
    data = Path(args.data)
    cfg = _read_config(args.config)
    fcfg = _build(ForceModelConfig, cfg.get("force", {}), {"epochs": args.epochs, "seed": args.seed})
    forces = _load_forces(data)
    try:
        model = train_force_model(forces.train(), fcfg, forces.test())
    except Diverged as exc:
        raise CliError(EXIT_TRAINING, f"force training diverged: {exc}") from exc
    rows = [{**r, "balance_ratio": float("nan")} for r in model.history]
    model.save(out / "force.ckpt", {"data_manifest": _input_hashes({"data": data}).get("data")})
    _write_history(out / "force_history.csv", rows)
    resolved = {"force": fcfg.to_dict()}
    _write_manifest(out, "train-force", resolved, fcfg.seed, _input_hashes({"data": data}),
                    [out / "force.ckpt", out / "force_history.csv"])
    return EXIT_OK


def _dynamics_config(cfg: dict, args, physics: Optional[bool] = None) -> ApinnConfig:
    over = {"seed": args.seed, "pretrain_epochs": getattr(args, "epochs", None) if args.command == "train-dynamics"
            else None}
    if args.command == "finetune":
        over.update(finetune_epochs=args.epochs, freeze_ratio=args.freeze_ratio)
    if physics is not None:
        over["physics"] = physics
    return _build(ApinnConfig, cfg.get("dynamics", {}), over)


def cmd_train_dynamics(args) -> int:
    out = _out_dir(args)
    data = Path(args.data)
    cfg = _read_config(args.config)
    dcfg = _dynamics_config(cfg, args, physics=(args.model == "pinn"))
    params = _vehicle(cfg)
    pre = _load_trajectories(data, "pretrain")
    try:
        model = apinn.train_apinn(pre, None, dcfg, params)
    except Diverged as exc:
        raise CliError(EXIT_TRAINING, f"dynamics training diverged: {exc}") from exc
    name = "dynamics.ckpt" if args.model == "pinn" else "nn_only.ckpt"
    model.save(out / name)
    _write_history(out / f"{Path(name).stem}_history.csv", model.history)
    _write_manifest(out, "train-dynamics", {"dynamics": dcfg.to_dict(), "vehicle": params.to_dict()}, dcfg.seed,
                    _input_hashes({"data": data}), [out / name, out / f"{Path(name).stem}_history.csv"])
    return EXIT_OK


def _load_dynamics(path, require_trained=True) -> ApinnModel:
    p = _need(path, "dynamics checkpoint")
    try:
        return ApinnModel.load(p, require_trained)
    except CheckpointError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from exc


def cmd_finetune(args) -> int:
    out = _out_dir(args)
    data = Path(args.data)
    cfg = _read_config(args.config)
    ck = _need(args.checkpoint, "checkpoint")
    header, _ = checkpoint.read(ck)
    stored = header["meta"]
    dcfg = _dynamics_config(cfg, args, physics=stored["config"].get("physics", True))
    stored_cfg = ApinnConfig.from_dict(stored["config"])
    if stored.get("architecture") != apinn.architecture_id(stored_cfg):
        raise CliError(EXIT_CONFIG, "checkpoint architecture hash does not match its own configuration")
    if apinn.architecture_id(dcfg) != stored.get("architecture"):
        raise CliError(EXIT_CONFIG, f"checkpoint architecture {stored.get('architecture')} differs from the "
                                    f"requested architecture {apinn.architecture_id(dcfg)}")
    model = _load_dynamics(ck)
    model.net.cfg = dcfg
    forces = _load_forces(data)
    true = _load_trajectories(data, "true")
    train_ids = [i for i, sid in enumerate(true.scenario_ids) if forces.split[int(sid)]][:args.n_traj]
    try:
        model = apinn.train_apinn(None, true.subset(np.array(train_ids, dtype=int)), dcfg, model.params, model=model)
    except Diverged as exc:
        raise CliError(EXIT_TRAINING, f"fine-tuning diverged: {exc}") from exc
    name = args.name or f"finetuned_{args.n_traj}.ckpt"
    model.save(out / name, {"finetune_trajectories": [int(true.scenario_ids[i]) for i in train_ids]})
    _write_history(out / f"{Path(name).stem}_history.csv", [r for r in model.history if r["phase"] == "finetune"])
    _write_manifest(out, "finetune", {"dynamics": dcfg.to_dict(), "n_traj": args.n_traj}, dcfg.seed,
                    _input_hashes({"data": data, "checkpoint": ck}),
                    [out / name, out / f"{Path(name).stem}_history.csv"])
    return EXIT_OK


def rollout_4dof(x0, step_force, params: VehicleParams, n_steps: int) -> np.ndarray:
    """Nominal 4DOF model advanced in 10 ms steps under the step-mean forces."""
    x = np.atleast_2d(np.asarray(x0, dtype=float))
    F = np.asarray(step_force, dtype=float).reshape(len(x), -1, 2)
    out = np.empty((len(x), n_steps + 1, 8))
    out[:, 0] = x
    for k in range(n_steps):
        Fk = F[:, k] if k < F.shape[1] else np.zeros((len(x), 2))
        x = apinn.one_step_prior(x, Fk, params)
        out[:, k + 1] = x
    return out


def _force_curves_from_model(path, forces: ForceDataset, ids) -> List[ForceCurve]:
    p = _need(path, "force checkpoint")
    try:
        fm = ForceModel.load(p)
    except UntrainedWeights as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from exc
    curves, _ = predict_curves(fm, forces.features()[ids])
    return curves


def cmd_predict(args) -> int:
    out = _out_dir(args)
    data = Path(args.data)
    forces = _load_forces(data)
    sid = args.scenario
    if not 0 <= sid < len(forces):
        raise CliError(EXIT_CONFIG, f"scenario {sid} outside 0..{len(forces) - 1}")
    n = int(round(args.horizon / OUTPUT_DT))
    from .data.trajectories import initial_states
    x0 = initial_states(forces.subset([sid]))
    t = OUTPUT_DT * np.arange(n + 1)
    if args.model == "4dof":
        curve = forces.curves[sid]
        sf = step_mean_forces([curve], n)
        states = rollout_4dof(x0, sf, VehicleParams(), n)[0]
        curve.to_csv(out / "force.csv")
        write_trajectory_csv(out / "trajectory.csv", t, states)
        outputs = [out / "force.csv", out / "trajectory.csv"]
    else:
        if args.force_ckpt is None or args.dynamics_ckpt is None:
            raise CliError(EXIT_MISSING, "predict needs --force-ckpt and --dynamics-ckpt")
        curve = _force_curves_from_model(args.force_ckpt, forces, [sid])[0]
        model = _load_dynamics(args.dynamics_ckpt)
        if (args.model == "pinn") != model.cfg.physics:
            raise CliError(EXIT_CONFIG, f"checkpoint does not hold a {args.model} model")
        sf = step_mean_forces([curve], n)
        try:
            states, mixtures = apinn.rollout(model, x0, sf, n, keep_mixtures=True)
        except DivergedRollout as exc:
            raise CliError(EXIT_INFERENCE, str(exc)) from exc
        states = states[0]
        bands = [trajectory_gmm(mix[0], (states[k, 6], states[k, 7], states[k, 2]), OUTPUT_DT)
                 for k, mix in enumerate(mixtures)]
        curve.to_csv(out / "force.csv")
        write_trajectory_csv(out / "trajectory.csv", t, states)
        write_bands_csv(out / "bands.csv", t[1:], bands)
        xs, ys, dens = bands[-1].grid(args.grid)
        write_density_csv(out / "density.csv", xs, ys, dens)
        outputs = [out / "force.csv", out / "trajectory.csv", out / "bands.csv", out / "density.csv"]
    inputs = {"data": data}
    if args.model != "4dof":
        inputs.update(force=Path(args.force_ckpt), dynamics=Path(args.dynamics_ckpt))
    _write_manifest(out, "predict", {"scenario": sid, "model": args.model, "horizon": args.horizon,
                                     "grid": args.grid}, 0, _input_hashes(inputs), outputs)
    return EXIT_OK


def _parse_models(specs: List[str]) -> Dict[str, Path]:
    models = {}
    for s in specs or []:
        if "=" not in s:
            raise CliError(EXIT_CONFIG, f"model argument {s!r} must look like name=path")
        name, path = s.split("=", 1)
        models[name] = _need(path, f"checkpoint for {name}")
    return models


def _time_step(model: ApinnModel, x, F, force_model: Optional[ForceModel], theta) -> float:
    from .force_model import predict_force

    def step():
        if force_model is not None:
            predict_force(theta, 0.05, force_model)
        gmms, nxt = model.step(x, x, F, 0.05)
        trajectory_gmm(gmms[0], (nxt[0, 6], nxt[0, 7], nxt[0, 2]), OUTPUT_DT)

    return metrics.time_per_step(step)["median_ms"]


def cmd_evaluate(args) -> int:
    out = _out_dir(args)
    data = Path(args.data)
    forces = _load_forces(data)
    true = _load_trajectories(data, "true")
    test = [i for i, sid in enumerate(true.scenario_ids) if not forces.split[int(sid)]][:args.n_test]
    if not test:
        raise CliError(EXIT_MISSING, "no held-out trajectories to evaluate")
    n = min(int(round(args.horizon / OUTPUT_DT)), true.states.shape[1] - 1)
    truth = true.states[test, :n + 1]
    x0, sf = truth[:, 0], true.step_force[test]
    preds = {"truth": truth.copy(), "4dof": rollout_4dof(x0, sf, VehicleParams(), n)}
    timings = {}
    fm = None
    if args.force_ckpt:
        fm = ForceModel.load(_need(args.force_ckpt, "force checkpoint"))
    theta = forces.features()[int(true.scenario_ids[test[0]])]
    for name, path in _parse_models(args.models).items():
        model = _load_dynamics(path)
        try:
            preds[name] = apinn.rollout(model, x0, sf, n)
        except DivergedRollout as exc:
            raise CliError(EXIT_INFERENCE, f"{name}: {exc}") from exc
        if args.timing:
            timings[name] = _time_step(model, x0[:1], sf[:1, 0], fm, theta)
    if args.timing:
        def step4():
            apinn.one_step_prior(x0[:1], sf[:1, 0], VehicleParams())

        timings["4dof"] = metrics.time_per_step(step4)["median_ms"]
    rows = metrics.evaluate(preds, truth, timings if args.timing else None)
    metrics.write_metrics_csv(out / "metrics.csv", rows)
    metrics.write_table(out / "metrics.txt", rows, timing=args.timing)
    print(metrics.format_table(rows, timing=args.timing), end="")
    outputs = [out / "metrics.csv", out / "metrics.txt"]
    if args.timing:
        _dump(out / "timing.json", timings)
        outputs.append(out / "timing.json")
    inputs = {"data": data, **{f"model:{k}": v for k, v in _parse_models(args.models).items()}}
    _write_manifest(out, "evaluate", {"n_test": len(test), "horizon": n * OUTPUT_DT,
                                      "models": sorted(preds), "timing": bool(args.timing)}, 0,
                    _input_hashes(inputs), [p for p in outputs if p.name != "timing.json"])
    return EXIT_OK


def cmd_cluster(args) -> int:
    out = _out_dir(args)
    data = Path(args.data)
    forces = _load_forces(data)
    report = cluster_by_impulse(forces.curves, seed=args.seed or 0)
    report.save(out)
    _write_manifest(out, "cluster", {"seed": args.seed or 0, "k_range": [2, 8]}, args.seed or 0,
                    _input_hashes({"data": data}), [out / "clusters.json", out / "clusters.csv"])
    print(f"k = {report.k} (scan best {report.k_scan}), sizes {report.sizes}")
    return EXIT_OK


def cmd_fit_tires(args) -> int:
    out = _out_dir(args)
    data = Path(args.data)
    cfg = _read_config(args.config)
    pcfg = _build(PsoConfig, cfg.get("pso", {}), {"seed": args.seed, "iterations": args.iterations})
    forces = _load_forces(data)
    true = _load_trajectories(data, "true")
    ids = [i for i, sid in enumerate(true.scenario_ids) if forces.split[int(sid)]][:args.n_traj]
    res = pso_fit_tires(true.subset(np.array(ids, dtype=int)), _vehicle(cfg), pcfg)
    _dump(out / "pso.json", {**res.to_dict(), "params": res.params.to_dict()})
    _write_manifest(out, "fit-tires", {"pso": dataclasses.asdict(pcfg), "n_traj": len(ids)}, pcfg.seed,
                    _input_hashes({"data": data}), [out / "pso.json"])
    return EXIT_OK


def cmd_report(args) -> int:
    out = _out_dir(args)
    sections = []
    for p in args.inputs:
        d = _need(p, "report input")
        man = d / "manifest.json"
        if not man.exists():
            raise CliError(EXIT_MISSING, f"{d} has no manifest.json")
        m = json.loads(man.read_text())
        entry = {"path": str(p), "command": m["command"], "seed": m["seed"], "config_hash": m["config_hash"],
                 "manifest_sha256": sha256_file(man)}
        if (d / "metrics.csv").exists():
            with open(d / "metrics.csv") as fh:
                entry["metrics"] = list(csv.DictReader(fh))
        if (d / "clusters.json").exists():
            c = json.loads((d / "clusters.json").read_text())
            entry["clusters"] = {"k": c["k"], "sizes": c["sizes"]}
        sections.append(entry)
    _dump(out / "report.json", {"inputs": sections})
    lines = []
    for s in sections:
        lines.append(f"[{s['command']}] {s['path']}  seed={s['seed']}  config={s['config_hash']}")
        for r in s.get("metrics", []):
            lines.append(f"  {r['model']}: avg_error={float(r['avg_error']):.4f} m")
        if "clusters" in s:
            lines.append(f"  clusters: k={s['clusters']['k']} sizes={s['clusters']['sizes']}")
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    _write_manifest(out, "report", {"inputs": [str(p) for p in args.inputs]}, 0,
                    _input_hashes({str(i): Path(p) for i, p in enumerate(args.inputs)}),
                    [out / "report.json", out / "report.txt"])
    return EXIT_OK


# ----------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pitcollide", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        p.add_argument("--out", help="output directory (default: $PITCOLLIDE_OUT or ./runs)")
        p.add_argument("--config", help="JSON file with sections " + ", ".join(CONFIG_SECTIONS))
        p.add_argument("--seed", type=int, help="random seed")
        if data:
            p.add_argument("--data", required=True, help="directory written by gen-data")

    p = sub.add_parser("gen-data", help="surrogate force dataset and trajectories")
    common(p, data=False)
    p.add_argument("--scenarios", type=int, help="number of impact scenarios")
    p.add_argument("--horizon", type=float, default=HORIZON, help="simulated seconds per trajectory")
    p.add_argument("--no-trajectories", action="store_true", help="only write force curves")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-force", help="train the force mixture network")
    common(p)
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_train_force)

    p = sub.add_parser("train-dynamics", help="pre-train the state network on 4DOF trajectories")
    common(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--model", choices=("pinn", "nn-only"), default="pinn")
    p.set_defaults(func=cmd_train_dynamics)

    p = sub.add_parser("finetune", help="fine-tune a pre-trained state network on reference-plant data")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n-traj", type=int, default=20, help="fine-tuning trajectories from the training split")
    p.add_argument("--freeze-ratio", type=float, default=0.6, help="fraction of leading layers kept frozen")
    p.add_argument("--epochs", type=int)
    p.add_argument("--name", help="output checkpoint file name")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("predict", help="force curve, state rollout and position uncertainty for one scenario")
    common(p)
    p.add_argument("--scenario", type=int, required=True)
    p.add_argument("--model", choices=("pinn", "4dof", "nn-only"), default="pinn")
    p.add_argument("--force-ckpt")
    p.add_argument("--dynamics-ckpt")
    p.add_argument("--horizon", type=float, default=4.0)
    p.add_argument("--grid", type=int, default=200, help="density grid points per axis")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="metrics table on held-out reference-plant trajectories")
    common(p)
    p.add_argument("--models", nargs="*", default=[], help="name=checkpoint pairs")
    p.add_argument("--force-ckpt", help="include force-network time in --timing")
    p.add_argument("--n-test", type=int, default=20)
    p.add_argument("--horizon", type=float, default=4.0)
    p.add_argument("--timing", action="store_true", help="measure per-step time (not reproducible)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("cluster", help="group scenarios by force-integral features")
    common(p)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("fit-tires", help="particle swarm fit of tire constants to reference-plant data")
    common(p)
    p.add_argument("--n-traj", type=int, default=20)
    p.add_argument("--iterations", type=int)
    p.set_defaults(func=cmd_fit_tires)

    p = sub.add_parser("report", help="collect manifests and metrics of earlier runs")
    common(p, data=False)
    p.add_argument("inputs", nargs="+", help="output directories of earlier commands")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UntrainedWeights as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except DivergedRollout as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFERENCE
    except Diverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRAINING


if __name__ == "__main__":
    sys.exit(main())
