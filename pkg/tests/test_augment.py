"""Augmentation oracles: SMOTE segment geometry, ADASYN budget allocation,
GAN training mechanics, and distribution-quality metrics."""
from __future__ import annotations

import numpy as np
import pytest

from chainrep.augment import (
    GanAugmenter,
    QualityReport,
    adasyn,
    augment_dataset,
    largest_remainder,
    quality_metrics,
    smote,
)


def _segment_distance(point, a, b):
    """Distance from a point to the segment [a, b]."""
    ab = b - a
    denom = float(ab @ ab)
    t = 0.0 if denom == 0 else float(np.clip((point - a) @ ab / denom, 0.0, 1.0))
    return float(np.linalg.norm(point - (a + t * ab)))


def _min_segment_distance(point, X):
    return min(
        _segment_distance(point, X[i], X[j])
        for i in range(len(X))
        for j in range(len(X))
        if i != j
    )


def _cloud(n=12, d=4, seed=0):
    return np.random.default_rng(seed).normal(size=(n, d))


def test_smote_points_lie_on_minority_segments():
    X = _cloud()
    for seed in range(10):
        synth = smote(X, 8, k_neighbors=5, rng=np.random.default_rng(seed))
        assert synth.shape == (8, 4)
        for row in synth:
            assert _min_segment_distance(row, X) < 1e-9


def test_smote_exact_count_and_zero():
    X = _cloud()
    assert smote(X, 0, rng=np.random.default_rng(0)).shape == (0, 4)
    assert smote(X, 17, rng=np.random.default_rng(0)).shape == (17, 4)


def test_smote_requires_enough_rows():
    with pytest.raises(ValueError, match="k_neighbors"):
        smote(_cloud(n=5), 3, k_neighbors=5)


def test_smote_is_deterministic_under_seed():
    X = _cloud()
    a = smote(X, 9, rng=np.random.default_rng(42))
    b = smote(X, 9, rng=np.random.default_rng(42))
    np.testing.assert_array_equal(a, b)


def test_largest_remainder_hand_example():
    # quotas proportional to [0.2, 0.8] over 10 units -> [2, 8]
    np.testing.assert_array_equal(
        largest_remainder(np.array([0.2, 0.8]), 10), [2, 8]
    )


def test_largest_remainder_sums_and_rounds():
    counts = largest_remainder(np.array([1.0, 1.0, 1.0]), 10)
    assert counts.sum() == 10
    assert sorted(counts) == [3, 3, 4]
    # ties hand the extra unit to the earliest index
    assert counts[0] == 4


def test_largest_remainder_zero_total():
    np.testing.assert_array_equal(largest_remainder(np.array([0.5, 0.5]), 0), [0, 0])


def test_adasyn_points_lie_on_minority_segments():
    rng = np.random.default_rng(1)
    X_min = rng.normal(size=(10, 3))
    X_maj = rng.normal(loc=0.5, size=(40, 3))
    synth = adasyn(X_min, X_maj, 12, k_neighbors=5, rng=np.random.default_rng(2))
    assert synth.shape == (12, 3)
    for row in synth:
        assert _min_segment_distance(row, X_min) < 1e-9


def test_adasyn_budget_favours_borderline_rows():
    # Ten minority rows sit inside the majority cloud (borderline, r > 0) and
    # eight sit far away (isolated, r = 0). Every unit of synthetic budget must
    # go to the borderline rows, whose own nearest minority neighbours are also
    # borderline, so all synthetic points land near the origin.
    rng = np.random.default_rng(0)
    X_min = np.vstack([
        rng.normal(scale=0.5, size=(10, 2)),
        rng.normal(size=(8, 2)) + 100.0,
    ])
    X_maj = np.random.default_rng(1).normal(scale=0.7, size=(60, 2))
    synth = adasyn(X_min, X_maj, 20, k_neighbors=5, rng=np.random.default_rng(3))
    assert (np.abs(synth).max(axis=1) < 50.0).all()


def test_adasyn_uniform_fallback_warns(caplog):
    # Majority so far away that no minority row has majority neighbours.
    X_min = _cloud(n=8, d=2, seed=4)
    X_maj = _cloud(n=8, d=2, seed=5) + 1e6
    with caplog.at_level("WARNING"):
        synth = adasyn(X_min, X_maj, 8, k_neighbors=5, rng=np.random.default_rng(0))
    assert synth.shape == (8, 2)
    assert any("falling back" in m for m in caplog.messages)


def test_gan_requires_enough_rows():
    with pytest.raises(ValueError, match="batch_size"):
        GanAugmenter(batch_size=32).fit(_cloud(n=6))


def test_gan_sample_shape_and_determinism():
    X = _cloud(n=16, d=5, seed=6)
    gan = GanAugmenter(epochs=30, batch_size=8, random_state=11).fit(X)
    a = gan.sample(7, seed=3)
    b = gan.sample(7, seed=3)
    assert a.shape == (7, 5)
    np.testing.assert_array_equal(a, b)
    c = gan.sample(7, seed=4)
    assert not np.array_equal(a, c)


def test_gan_refit_reproduces_weights():
    X = _cloud(n=12, d=3, seed=8)
    g1 = GanAugmenter(epochs=20, batch_size=4, random_state=5).fit(X)
    g2 = GanAugmenter(epochs=20, batch_size=4, random_state=5).fit(X)
    np.testing.assert_array_equal(g1.sample(5, seed=0), g2.sample(5, seed=0))
    assert g1.disc_loss_history_ == g2.disc_loss_history_


def test_gan_loss_histories_are_recorded():
    X = _cloud(n=8, d=2, seed=9)
    gan = GanAugmenter(epochs=10, batch_size=4, random_state=1).fit(X)
    assert len(gan.disc_loss_history_) == len(gan.gen_loss_history_) > 0
    assert all(np.isfinite(v) for v in gan.disc_loss_history_)


def test_gan_divergence_guard_trips():
    # With the tolerance above any attainable BCE, every step counts as
    # collapsed, so training must abort after exactly `patience` steps.
    X = _cloud(n=8, d=2, seed=12)
    gan = GanAugmenter(
        epochs=100, batch_size=4, random_state=0, collapse_tol=50.0, collapse_patience=5
    )
    with pytest.raises(RuntimeError, match="discriminator loss below"):
        gan.fit(X)
    assert len(gan.disc_loss_history_) == 5


def test_quality_metrics_identity_is_exactly_one():
    X = _cloud(n=20, d=6, seed=10)
    report = quality_metrics(X, X.copy())
    assert report.correlation == 1.0
    assert report.variance_ratio == 1.0
    assert report.n_real == report.n_synthetic == 20


def test_quality_metrics_detects_mean_mismatch():
    X = _cloud(n=30, d=5, seed=11)
    flipped = -X  # anti-correlated per-dimension means
    report = quality_metrics(X, flipped)
    assert report.correlation < 0.0


def test_quality_metrics_skips_zero_variance_dims():
    X = np.zeros((10, 3))
    X[:, 0] = np.arange(10.0)
    # dims 1, 2 are constant in the real data -> excluded from the ratio
    synth = X.copy()
    synth[:, 1] = 99.0
    report = quality_metrics(X, synth)
    assert report.skipped_dimensions == 2
    assert report.variance_ratio == 1.0


def test_quality_report_as_dict_round_trips_json():
    import json

    report = QualityReport(
        correlation=0.5, variance_ratio=0.25, n_real=3, n_synthetic=4, skipped_dimensions=0
    )
    blob = json.dumps(report.as_dict(), sort_keys=True)
    assert json.loads(blob)["correlation"] == 0.5


def test_augment_dataset_none_is_passthrough():
    X = _cloud(n=10, d=3)
    y = np.array([0] * 7 + [1] * 3)
    X2, y2, prov = augment_dataset(X, y, "none")
    np.testing.assert_array_equal(X2, X)
    np.testing.assert_array_equal(y2, y)
    assert list(prov) == ["real"] * 10


@pytest.mark.parametrize("method", ["smote", "adasyn"])
def test_augment_dataset_balances_and_tags(method):
    rng = np.random.default_rng(0)
    X = np.vstack([rng.normal(size=(20, 4)), rng.normal(loc=3.0, size=(8, 4))])
    y = np.array([0] * 20 + [1] * 8)
    X2, y2, prov = augment_dataset(X, y, method, k_neighbors=5, seed=1)
    assert (y2 == 1).sum() == (y2 == 0).sum() == 20
    assert list(prov[:28]) == ["real"] * 28
    assert list(prov[28:]) == [method] * 12
    np.testing.assert_array_equal(X2[:28], X)


def test_augment_dataset_gan_params_flow_through():
    rng = np.random.default_rng(2)
    X = np.vstack([rng.normal(size=(12, 3)), rng.normal(loc=2.0, size=(6, 3))])
    y = np.array([0] * 12 + [1] * 6)
    X2, y2, prov = augment_dataset(
        X, y, "gan", gan_params={"epochs": 15, "batch_size": 4}, seed=3
    )
    assert (y2 == 1).sum() == 12
    assert list(prov[-6:]) == ["gan"] * 6


def test_augment_dataset_rejects_shrinking_target():
    X = _cloud(n=6, d=2)
    y = np.array([0, 0, 0, 1, 1, 1])
    with pytest.raises(ValueError, match="below the existing"):
        augment_dataset(X, y, "smote", target_count=2)
