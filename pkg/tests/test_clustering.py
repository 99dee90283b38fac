import logging

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from sklearn.metrics import adjusted_rand_score

from evgrid.clustering import (FEATURE_COLUMNS, ClusterModel, FeederFeatures, cluster_feeders, elbow_select,
                               extract_features, fit_pca, kmeans, read_features_csv, select_representative,
                               write_features_csv)
from evgrid.grid import FeederSpec, generate_synthetic_feeder
from evgrid.powerflow import ProfileStore

from conftest import blobs, small_feeder


def features_from(points, prefix="f"):
    out = []
    for i, p in enumerate(points):
        v = np.zeros(len(FEATURE_COLUMNS))
        v[[1, 3]] = p[:2]
        out.append(FeederFeatures.from_vector(f"{prefix}{i:03d}", v))
    return out


def test_extract_features_small():
    f = small_feeder()
    ff = extract_features(f, ProfileStore.default(), {"summer": np.full(24, 3.0)})
    assert ff.voltage_level_kv == 7.2
    assert ff.total_transformer_capacity_kva == 100.0
    assert ff.transformer_phase_counts == {1: 2, 2: 0, 3: 0}
    assert ff.line_phase_counts == {1: 1, 2: 0, 3: 1}
    assert ff.class_load_kw["residential"] == 60.0
    assert ff.peak_ev_load_kw == 3.0
    assert 0 < ff.peak_base_load_kw <= 60.0
    assert FeederFeatures.from_vector(ff.feeder_id, ff.vector()).vector().tolist() == ff.vector().tolist()


def test_features_csv_round_trip(tmp_path):
    store = ProfileStore.default()
    feats = [extract_features(generate_synthetic_feeder(FeederSpec(15, seed=s)), store) for s in range(4)]
    write_features_csv(feats, tmp_path / "f.csv")
    back = read_features_csv(tmp_path / "f.csv")
    assert [b.vector().tolist() for b in back] == [f.vector().tolist() for f in feats]


@given(arrays(float, (12, 5), elements=st.floats(-100, 100)))
def test_pca_orthonormal_and_reconstructs(x):
    if np.any(x.std(axis=0) <= 1e-6 * np.maximum(1, np.abs(x.mean(axis=0)))):
        return
    pca = fit_pca(x, 1.0)
    c = pca.components
    assert np.allclose(c @ c.T, np.eye(pca.n_components), atol=1e-10)
    z = pca.standardize(x)
    assert np.allclose(pca.inverse_transform(pca.transform(x)), z, atol=1e-8)
    assert np.all(np.diff(pca.explained_variance_ratio) <= 1e-12)


def test_pca_variance_target():
    rng = np.random.default_rng(0)
    base = rng.normal(size=(50, 1))
    x = np.hstack([base, 2 * base + 1e-3 * rng.normal(size=(50, 1)), rng.normal(size=(50, 1))])
    pca = fit_pca(x, 0.6)
    assert pca.n_components == 1
    assert fit_pca(x, 1.0).n_components == 3


def test_pca_drops_zero_variance(caplog):
    x = np.column_stack([np.arange(6.0), np.full(6, 4.0), np.arange(6.0) ** 2])
    with caplog.at_level(logging.WARNING):
        pca = fit_pca(x)
    assert "zero-variance" in caplog.text
    assert pca.kept.tolist() == [True, False, True]
    assert pca.loadings.shape == (pca.n_components, 3) and not pca.loadings[:, 1].any()


def test_pca_errors():
    with pytest.raises(ValueError):
        fit_pca(np.ones((1, 3)))
    with pytest.raises(ValueError):
        fit_pca(np.ones((4, 3)))


@given(st.integers(0, 1000), st.integers(1, 5))
def test_kmeans_history_and_assignment(seed, k):
    x = np.random.default_rng(seed).normal(size=(40, 3))
    m = kmeans(x, k, seed=seed, restarts=3)
    assert all(b <= a + 1e-9 * max(a, 1) for a, b in zip(m.history, m.history[1:]))
    d = ((x[:, None, :] - m.centroids[None]) ** 2).sum(axis=2)
    assert np.all(d[np.arange(len(x)), m.labels] <= d.min(axis=1) + 1e-12)
    assert m.wcss == pytest.approx(float(d[np.arange(len(x)), m.labels].sum()))


def test_kmeans_errors_and_determinism():
    x = np.random.default_rng(1).normal(size=(10, 2))
    with pytest.raises(ValueError):
        kmeans(x, 0)
    with pytest.raises(ValueError):
        kmeans(x, 11)
    a, b = kmeans(x, 3, seed=4), kmeans(x, 3, seed=4)
    assert np.array_equal(a.labels, b.labels) and np.array_equal(a.centroids, b.centroids)


@pytest.mark.parametrize("seed", range(3))
def test_elbow_recovers_blobs(seed):
    x, truth = blobs(seed)
    res = elbow_select(x, range(1, 9), seed=seed)
    assert res.k == 3
    assert adjusted_rand_score(truth, res.models[3].labels) == 1.0
    assert all(b <= a for a, b in zip(res.wcss, res.wcss[1:]))


def test_elbow_errors():
    x = np.zeros((5, 2))
    with pytest.raises(ValueError):
        elbow_select(x, [1, 2])
    with pytest.raises(ValueError):
        elbow_select(x, [1, 3, 2])
    with pytest.raises(ValueError):
        elbow_select(x, [1, 2, 6])


def test_representative_ties_to_smaller_id():
    x = np.array([[0.0], [2.0], [10.0]])
    m = ClusterModel(2, np.array([[1.0], [10.0]]), np.array([0, 0, 1]), 2.0, 0, ["zeta", "alpha", "mid"])
    reps = select_representative(m, x)
    assert reps[0].feeder_id == "alpha" and reps[0].distance == 1.0 and reps[0].size == 2
    assert reps[1].feeder_id == "mid"


def test_representative_empty_cluster(caplog):
    m = ClusterModel(2, np.array([[0.0], [5.0]]), np.array([0, 0]), 0.0, 0, ["a", "b"])
    with caplog.at_level(logging.WARNING):
        reps = select_representative(m, np.zeros((2, 1)))
    assert reps[1].feeder_id is None and "empty" in caplog.text


def test_cluster_feeders_pipeline(tmp_path):
    x, truth = blobs(2, n=60)
    rep = cluster_feeders(features_from(x), range(1, 7), seed=2)
    assert rep.model.k == 3
    assert adjusted_rand_score(truth, rep.model.labels) == 1.0
    assert sum(r[3] for r in rep.rows()) == 3
    rep.write_csv(tmp_path / "a.csv")
    cluster_feeders(features_from(x), range(1, 7), seed=2).write_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_cluster_feeders_needs_three():
    with pytest.raises(ValueError, match="at least 3"):
        cluster_feeders(features_from(np.zeros((2, 2))), range(1, 4))
