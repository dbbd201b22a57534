"""Grouping of impact scenarios by force-integral features."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np
from sklearn.cluster import KMeans
from sklearn.metrics import silhouette_score

from ..curves import ForceCurve, trapezoid
from ..errors import DegenerateFeatures

FEATURE_NAMES = ("I_fx", "I_fy", "I_total", "F_max", "F_mean", "F_std")


def impulse_features(curves: Sequence[ForceCurve]) -> np.ndarray:
    """Per-curve impulse components, impulse magnitude and max/mean/std of the force magnitude."""
    rows = []
    for c in curves:
        I = trapezoid(c.samples, c.dt)
        mag = np.linalg.norm(c.samples, axis=1)
        rows.append([I[0], I[1], np.hypot(*I), mag.max(), mag.mean(), mag.std()])
    return np.array(rows)


@dataclass
class ClusterReport:
    k: int  # number of clusters after merging
    k_scan: int  # best silhouette k before merging
    silhouettes: Dict[int, float]
    labels: np.ndarray
    features: np.ndarray
    merge_log: List[dict] = field(default_factory=list)
    seed: int = 0

    @property
    def sizes(self) -> List[int]:
        return [int(np.sum(self.labels == j)) for j in range(self.k)]

    def to_dict(self) -> dict:
        return {"k": self.k, "k_scan": self.k_scan, "seed": self.seed,
                "silhouettes": {str(k): v for k, v in self.silhouettes.items()},
                "sizes": self.sizes, "labels": self.labels.tolist(), "merge_log": self.merge_log}

    def save(self, directory, stem: str = "clusters"):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / f"{stem}.json").write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))
        with open(d / f"{stem}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("case", "cluster") + FEATURE_NAMES)
            for i, (lab, row) in enumerate(zip(self.labels, self.features)):
                w.writerow([i, int(lab)] + [repr(float(v)) for v in row])


def _standardize(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if np.all(np.ptp(X, axis=0) == 0):
        raise DegenerateFeatures("all cases have identical features")
    std = X.std(axis=0)
    return (X - X.mean(axis=0)) / np.where(std > 0, std, 1.0)


def _canonical(labels: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Relabel clusters in lexicographic order of their centroids, independent of input order."""
    ids = np.unique(labels)
    cents = np.array([Z[labels == j].mean(axis=0) for j in ids])
    order = np.lexsort(cents.T[::-1])
    remap = {int(ids[o]): i for i, o in enumerate(order)}
    return np.array([remap[int(l)] for l in labels])


def merge_small(labels: np.ndarray, Z: np.ndarray, fraction: float = 0.05) -> tuple:
    """Absorb clusters holding at most ``fraction`` of the cases into the nearest other centroid."""
    labels = labels.copy()
    log = []
    n = len(labels)
    while True:
        ids, counts = np.unique(labels, return_counts=True)
        if len(ids) < 2:
            break
        small = counts <= fraction * n
        if not np.any(small):
            break
        j = int(ids[np.flatnonzero(small)[np.argmin(counts[small])]])
        cents = {int(i): Z[labels == i].mean(axis=0) for i in ids}
        others = [i for i in cents if i != j]
        target = min(others, key=lambda i: float(np.sum((cents[i] - cents[j]) ** 2)))
        log.append({"cluster": j, "size": int(np.sum(labels == j)), "into": int(target)})
        labels[labels == j] = target
    return labels, log


def cluster_by_impulse(curves_or_features, k_range=range(2, 9), seed: int = 0, n_init: int = 20,
                       max_iter: int = 500, merge_fraction: float = 0.05) -> ClusterReport:
    """K-means over standardized features, k chosen by silhouette, then small-cluster merging.

    Accepts force curves or a ready feature matrix (one row per case).
    """
    if isinstance(curves_or_features, np.ndarray):
        X = np.asarray(curves_or_features, dtype=float)
    else:
        X = impulse_features(list(curves_or_features))
    if len(X) < 10:
        raise ValueError("clustering needs at least 10 cases")
    Z = _standardize(X)
    scores, fits = {}, {}
    for k in k_range:
        if k >= len(Z):
            break
        km = KMeans(n_clusters=k, n_init=n_init, max_iter=max_iter, random_state=seed).fit(Z)
        if len(np.unique(km.labels_)) < 2:
            continue
        scores[k] = float(silhouette_score(Z, km.labels_))
        fits[k] = km.labels_
    if not scores:
        raise DegenerateFeatures("no k produced two or more clusters")
    k_best = max(scores, key=lambda k: (scores[k], -k))
    labels, log = merge_small(np.asarray(fits[k_best]), Z, merge_fraction)
    labels = _canonical(labels, Z)
    return ClusterReport(int(len(np.unique(labels))), k_best, scores, labels, X, log, seed)
