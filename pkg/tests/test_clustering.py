import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pitcollide.curves import ForceCurve, trapezoid
from pitcollide.data.clustering import FEATURE_NAMES, ClusterReport, cluster_by_impulse, impulse_features, merge_small
from pitcollide.data.surrogate import SurrogateConfig, generate_force_dataset
from pitcollide.errors import DegenerateFeatures


def blobs(sizes, centers, seed=0, spread=0.1):
    rng = np.random.default_rng(seed)
    X = np.concatenate([rng.normal(c, spread, (n, len(c))) for n, c in zip(sizes, centers)])
    return X


def test_two_blobs_found():
    X = blobs([50, 50], [[0.0] * 6, [5.0] * 6])
    r = cluster_by_impulse(X)
    assert r.k == 2
    assert r.silhouettes[2] > 0.8
    assert sorted(r.sizes) == [50, 50]


def test_planted_small_cluster_is_absorbed():
    X = blobs([97, 3], [[0.0] * 6, [6.0] * 6], seed=1)
    r = cluster_by_impulse(X, k_range=range(2, 3))
    assert r.k_scan == 2
    assert r.k == 1
    assert r.merge_log and r.merge_log[0]["size"] == 3


def test_merge_small_threshold():
    Z = np.array([[0.0], [0.1], [0.2], [5.0]] * 5)
    labels = np.array([0, 0, 0, 1] * 5)
    out, log = merge_small(labels, Z, 0.25)
    assert len(np.unique(out)) == 1 and log[0]["cluster"] == 1
    out, log = merge_small(labels, Z, 0.2)
    assert np.array_equal(out, labels) and not log


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000))
def test_permutation_invariance(seed):
    X = blobs([30, 30, 30], [[0.0] * 6, [4.0] * 6, [0.0, 8.0, 0, 0, 0, 8.0]], seed=2)
    perm = np.random.default_rng(seed).permutation(len(X))
    a = cluster_by_impulse(X, seed=0, n_init=5)
    b = cluster_by_impulse(X[perm], seed=0, n_init=5)
    assert a.k == b.k
    assert np.array_equal(a.labels[perm], b.labels)


def test_degenerate_features():
    with pytest.raises(DegenerateFeatures):
        cluster_by_impulse(np.ones((20, 6)))


def test_too_few_cases():
    with pytest.raises(ValueError):
        cluster_by_impulse(np.random.default_rng(0).normal(size=(5, 6)))


def test_features_of_curves():
    c = ForceCurve(1e-3, np.column_stack([np.full(101, 100.0), np.full(101, -200.0)]))
    f = impulse_features([c])[0]
    assert f[0] == pytest.approx(10.0) and f[1] == pytest.approx(-20.0)
    assert f[2] == pytest.approx(np.hypot(10.0, 20.0))
    assert f[3] == pytest.approx(np.hypot(100.0, 200.0)) and f[5] == pytest.approx(0.0, abs=1e-9)
    assert len(FEATURE_NAMES) == len(f)


def test_surrogate_scan_and_report(tmp_path):
    forces = generate_force_dataset(SurrogateConfig(n_scenarios=100, seed=7))
    r = cluster_by_impulse(forces.curves)
    assert 2 <= r.k <= 6
    assert all(s > 0.05 * 100 for s in r.sizes)
    r.save(tmp_path)
    assert (tmp_path / "clusters.json").exists()
    lines = (tmp_path / "clusters.csv").read_text().splitlines()
    assert len(lines) == 101 and lines[0].startswith("case,cluster")
    again = cluster_by_impulse(forces.curves)
    assert np.array_equal(again.labels, r.labels)
