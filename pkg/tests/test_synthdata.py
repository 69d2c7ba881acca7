"""Synthetic corpus: determinism, ground-truth invariants, lesion effects,
split balance, and the on-disk format."""

import numpy as np
import pytest

from sevcon.synthdata import (
    BIOMARKER_NAMES,
    Dataset,
    GroundTruth,
    Lesion,
    SynthConfig,
    generate_healthy,
    generate_labeled_splits,
    generate_unlabeled,
    load_dataset,
    read_image,
    render_sample,
    save_dataset,
    write_image,
)

CFG = SynthConfig(seed=42)


def test_generation_is_deterministic():
    a = generate_healthy(5, CFG)
    b = generate_healthy(5, CFG)
    assert np.array_equal(a.images, b.images)
    c = generate_healthy(5, SynthConfig(seed=43))
    assert not np.array_equal(a.images, c.images)


def test_images_in_unit_range_and_shape():
    ds = generate_unlabeled(10, 4, CFG)
    assert ds.images.shape == (10, 1, 32, 32)
    assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0


def test_ground_truth_invariant():
    with pytest.raises(ValueError):
        GroundTruth(severity=0, biomarkers=np.array([1, 0, 0, 0, 0]))
    with pytest.raises(ValueError):
        GroundTruth(severity=2, biomarkers=np.zeros(5, dtype=np.int64))
    GroundTruth(severity=0, biomarkers=np.zeros(5, dtype=np.int64))
    GroundTruth(severity=3, biomarkers=np.array([1, 1, 0, 0, 0]))


def test_healthy_has_zero_severity():
    ds = generate_healthy(4, CFG)
    assert np.array_equal(ds.severities(), np.zeros(4, dtype=np.int64))
    assert ds.multihot().sum() == 0


def test_unlabeled_severity_range_and_multihot_consistency():
    ds = generate_unlabeled(50, 3, CFG)
    sev = ds.severities()
    assert sev.min() >= 0 and sev.max() <= 3
    multi = ds.multihot()
    for s, row in zip(sev, multi):
        assert (s == 0) == (row.sum() == 0)
        assert row.sum() <= s  # distinct types cannot exceed lesion count


def test_each_lesion_kind_changes_the_image():
    for kind in range(5):
        rng = np.random.default_rng(kind)
        from sevcon.synthdata import _draw_lesion
        lesion = _draw_lesion(kind, 32, rng)
        clean = render_sample(CFG, "t", 0, [])
        dirty = render_sample(CFG, "t", 0, [lesion])
        assert np.linalg.norm(dirty - clean) > 0.1, f"kind {kind} had no effect"


def test_lesion_free_render_shares_structure():
    """The same (namespace, index) renders identical structure regardless of
    the lesion list, so lesion effects are isolated."""
    from sevcon.synthdata import _draw_lesion
    lesion = _draw_lesion(1, 32, np.random.default_rng(0))
    clean = render_sample(CFG, "t", 3, [])
    dirty = render_sample(CFG, "t", 3, [lesion])
    changed = np.abs(dirty - clean) > 1e-12
    assert changed.any() and not changed.all()


def test_labeled_splits_balance_and_correctness():
    splits = generate_labeled_splits(20, 10, CFG, n_multilabel_test=12)
    assert len(splits.train) == 20
    assert len(splits.multilabel_test) == 12
    for j, name in enumerate(BIOMARKER_NAMES):
        ds = splits.binary_tests[name]
        assert len(ds) == 10
        col = ds.multihot()[:, j]
        assert col.sum() == 5  # exactly half positive
        assert np.array_equal(col[:5], np.ones(5))
        assert np.array_equal(col[5:], np.zeros(5))


def test_split_ids_are_disjoint():
    splits = generate_labeled_splits(6, 4, CFG, n_multilabel_test=4)
    all_ids = list(splits.train.sample_ids) + list(splits.multilabel_test.sample_ids)
    for ds in splits.binary_tests.values():
        all_ids += list(ds.sample_ids)
    assert len(all_ids) == len(set(all_ids))


def test_training_view_hides_ground_truth():
    ds = generate_unlabeled(3, 2, CFG)
    view = ds.training_view()
    assert view.ground_truth is None
    with pytest.raises(ValueError):
        view.multihot()


def test_image_round_trip_bitwise(tmp_path):
    ds = generate_unlabeled(2, 2, CFG)
    path = tmp_path / "img.bin"
    write_image(path, ds.images[0])
    back = read_image(path)
    assert np.array_equal(back, ds.images[0])
    path.write_bytes(b"XXXX" + path.read_bytes()[4:])
    with pytest.raises(ValueError, match="bad magic"):
        read_image(path)


def test_dataset_round_trip(tmp_path):
    ds = generate_unlabeled(4, 3, CFG)
    save_dataset(tmp_path / "d", ds, {"config_hash": "abc", "seed": 42})
    back = load_dataset(tmp_path / "d")
    assert back.sample_ids == ds.sample_ids
    assert np.array_equal(back.images, ds.images)
    assert np.array_equal(back.multihot(), ds.multihot())
    assert np.array_equal(back.severities(), ds.severities())
    # ground truth lives in labels.csv, separate from the manifest
    assert (tmp_path / "d" / "labels.csv").exists()
    assert "bio_a" not in (tmp_path / "d" / "manifest.json").read_text()
    view_only = load_dataset(tmp_path / "d", with_ground_truth=False)
    assert view_only.ground_truth is None


def test_odd_binary_test_size_rejected():
    with pytest.raises(ValueError, match="even"):
        generate_labeled_splits(4, 5, CFG)
