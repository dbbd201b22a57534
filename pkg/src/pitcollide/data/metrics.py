"""Trajectory error metrics, per-step timing and the comparison table."""
from __future__ import annotations

import csv
import time
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

VARIABLES = {"X": 6, "Y": 7, "v_x": 0, "v_y": 1, "yaw_rate": 3}


def rmse(a, b, axis=None):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.sqrt(np.mean((a - b) ** 2, axis=axis))


def trajectory_metrics(pred, truth) -> dict:
    """RMSE mean and std across cases for X, Y, v_x, v_y and yaw rate, plus the mean Euclidean position error.

    ``pred`` and ``truth`` are (B, N, 8) state arrays on the same time grid.
    """
    pred, truth = np.asarray(pred, dtype=float), np.asarray(truth, dtype=float)
    if pred.shape != truth.shape or pred.ndim != 3 or len(pred) == 0:
        raise ValueError(f"need matching nonempty (B, N, 8) arrays, got {pred.shape} and {truth.shape}")
    out = {}
    for name, i in VARIABLES.items():
        per_case = rmse(pred[..., i], truth[..., i], axis=1)
        out[f"{name}_mean"] = float(per_case.mean())
        out[f"{name}_std"] = float(per_case.std())
    out["avg_error"] = float(np.hypot(pred[..., 6] - truth[..., 6], pred[..., 7] - truth[..., 7]).mean())
    return out


def time_per_step(step: Callable[[], object], n_steps: int = 1000, warmup: int = 20) -> dict:
    """Wall-clock milliseconds per call of ``step`` over ``n_steps`` calls after ``warmup`` untimed calls."""
    if n_steps < 1000:
        raise ValueError("timing needs at least 1000 steps")
    for _ in range(warmup):
        step()
    ts = np.empty(n_steps)
    for i in range(n_steps):
        t0 = time.perf_counter()
        step()
        ts[i] = time.perf_counter() - t0
    return {"median_ms": float(np.median(ts) * 1e3), "mean_ms": float(ts.mean() * 1e3), "n_steps": n_steps}


COLUMNS = ["model"] + [f"{v}_{s}" for v in VARIABLES for s in ("mean", "std")] + ["avg_error", "time_ms"]


def evaluate(predictions: Dict[str, np.ndarray], truth, timings: Optional[Dict[str, float]] = None) -> List[dict]:
    """One metrics row per model; ``timings`` maps model name to milliseconds per step."""
    if len(np.asarray(truth)) == 0:
        raise ValueError("test set is empty")
    rows = []
    for name, pred in predictions.items():
        row = {"model": name, **trajectory_metrics(pred, truth)}
        row["time_ms"] = float("nan") if timings is None or name not in timings else float(timings[name])
        rows.append(row)
    return rows


def write_metrics_csv(path, rows: List[dict], columns=None):
    columns = columns or [c for c in COLUMNS if any(c in r for r in rows)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([r[c] if isinstance(r.get(c), str) else repr(float(r.get(c, float("nan")))) for c in columns])


def format_table(rows: List[dict], timing: bool = True) -> str:
    """Plain-text table: RMSE mean±std per variable, average error and time per step."""
    head = ["Model"] + [f"{v} RMSE" for v in VARIABLES] + ["Avg Error (m)"] + (["Time (ms)/step"] if timing else [])
    body = []
    for r in rows:
        cells = [r["model"]] + [f"{r[v + '_mean']:.4f}±{r[v + '_std']:.4f}" for v in VARIABLES]
        cells.append(f"{r['avg_error']:.4f}")
        if timing:
            t = r.get("time_ms", float("nan"))
            cells.append("-" if not np.isfinite(t) else f"{t:.2f}")
        body.append(cells)
    widths = [max(len(row[i]) for row in [head] + body) for i in range(len(head))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in [head] + body]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def write_table(path, rows: List[dict], timing: bool = True):
    Path(path).write_text(format_table(rows, timing))
