"""Supervised contrastive loss against a brute-force oracle, augmentation
properties, and pretraining smoke tests."""

import numpy as np
import pytest

from conftest import rel_err
from sevcon.contrastive import (
    AugmentationPolicy,
    SupConConfig,
    _bilinear_resize,
    augment,
    build_multiview_batch,
    pretrain,
    simclr_mode,
    supcon_loss,
    supcon_loss_and_grad,
)
from sevcon.models import (
    build_backbone,
    build_projection_head,
    normalize_rows_backward,
)

RNG = np.random.default_rng(11)


def brute_force_supcon(z, labels, tau):
    """Direct loop evaluation of the loss definition: mean over anchors i of
    -1/|P(i)| sum_{p in P(i)} log( exp(z_i.z_p/tau) / sum_{a != i} exp(z_i.z_a/tau) )."""
    m = z.shape[0]
    total = 0.0
    for i in range(m):
        positives = [p for p in range(m) if p != i and labels[p] == labels[i]]
        denom = sum(np.exp(np.dot(z[i], z[a]) / tau) for a in range(m) if a != i)
        inner = 0.0
        for p in positives:
            inner += np.log(np.exp(np.dot(z[i], z[p]) / tau) / denom)
        total += -inner / len(positives)
    return total / m


def random_unit_batch(rng, batch, dim):
    z = rng.normal(size=(batch, dim))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def paired_labels(rng, batch):
    """Labels where every anchor has at least one positive."""
    half = batch // 2
    lab = rng.integers(0, max(1, half), size=half)
    return np.concatenate([lab, lab])


def test_supcon_matches_brute_force():
    rng = np.random.default_rng(2)
    for _ in range(20):
        batch = 2 * int(rng.integers(1, 8))
        dim = int(rng.integers(2, 6))
        tau = float(rng.uniform(0.05, 1.0))
        z = random_unit_batch(rng, batch, dim)
        labels = paired_labels(rng, batch)
        ours = supcon_loss(z, labels, tau)
        ref = brute_force_supcon(z, labels, tau)
        assert abs(ours - ref) < 1e-9


def test_supcon_hand_case():
    """Two orthogonal pairs at tau=1: every anchor's positive has similarity 1
    and both negatives 0, so the loss is -log(e/(e+2)) = log(e+2) - 1."""
    z = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    labels = np.array([0, 0, 1, 1])
    expected = np.log(np.e + 2.0) - 1.0
    assert supcon_loss(z, labels, tau=1.0) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.5514447139320511, abs=1e-12)


def test_supcon_grad_matches_fd_through_normalization():
    rng = np.random.default_rng(3)
    u = rng.normal(size=(8, 4))
    labels = paired_labels(rng, 8)
    tau = 0.2

    def f(uv):
        zv = uv / np.linalg.norm(uv, axis=1, keepdims=True)
        return supcon_loss(zv, labels, tau)

    z = u / np.linalg.norm(u, axis=1, keepdims=True)
    loss, dz = supcon_loss_and_grad(z, labels, tau)
    du = normalize_rows_backward(u, z, dz)
    assert loss == pytest.approx(f(u), abs=1e-12)

    num = np.zeros_like(u)
    eps = 1e-6
    flat, nflat = u.ravel(), num.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(u)
        flat[i] = orig - eps
        fm = f(u)
        flat[i] = orig
        nflat[i] = (fp - fm) / (2 * eps)
    assert rel_err(du, num) < 1e-6


def test_supcon_input_validation():
    z = random_unit_batch(np.random.default_rng(0), 4, 3)
    with pytest.raises(ValueError, match="unit-norm"):
        supcon_loss(2.0 * z, np.array([0, 0, 1, 1]), 0.1)
    with pytest.raises(ValueError, match="tau"):
        supcon_loss(z, np.array([0, 0, 1, 1]), 0.0)
    with pytest.raises(ValueError, match="positive"):
        supcon_loss(z, np.array([0, 0, 1, 2]), 0.1)


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------


def test_bilinear_resize_identity_and_constant():
    img = RNG.random(size=(8, 8))
    assert np.array_equal(_bilinear_resize(img, 8), img)
    const = np.full((5, 5), 0.3)
    out = _bilinear_resize(const, 9)
    assert out.shape == (9, 9)
    assert np.allclose(out, 0.3)


def test_augment_shape_normalization_and_determinism():
    policy = AugmentationPolicy()
    img = RNG.random(size=(1, 16, 16))
    v1 = augment(policy, img, np.random.default_rng(5))
    v2 = augment(policy, img, np.random.default_rng(5))
    assert v1.shape == img.shape
    assert np.array_equal(v1, v2)  # same rng stream -> same view
    # normalization: a view of an all-0.5 image with no jitter is exactly 0
    plain = AugmentationPolicy(crop_scale=(1.0, 1.0), flip_prob=0.0,
                               brightness_jitter=0.0, contrast_jitter=0.0)
    out = augment(plain, np.full((1, 16, 16), 0.5), np.random.default_rng(0))
    assert np.allclose(out, 0.0)


def test_augment_flip():
    policy = AugmentationPolicy(crop_scale=(1.0, 1.0), flip_prob=1.0,
                                brightness_jitter=0.0, contrast_jitter=0.0,
                                normalize_mean=0.0, normalize_std=1.0)
    img = np.arange(16.0).reshape(1, 4, 4) / 16.0
    out = augment(policy, img, np.random.default_rng(0))
    assert np.array_equal(out[0], img[0, :, ::-1])


def test_build_multiview_batch_layout():
    images = RNG.random(size=(5, 1, 8, 8))
    labels = np.array([3, 1, 4, 1, 5])
    idxs = np.array([0, 2, 4])
    batch = build_multiview_batch(images, labels, idxs, AugmentationPolicy(),
                                  np.random.default_rng(0))
    assert batch.views.shape == (6, 1, 8, 8)
    assert np.array_equal(batch.labels, np.array([3, 4, 5, 3, 4, 5]))
    assert np.array_equal(batch.source_ids, np.array([0, 2, 4, 0, 2, 4]))
    # the two views of a source differ (independent augmentation draws)
    assert not np.array_equal(batch.views[0], batch.views[3])


# ---------------------------------------------------------------------------
# Pretraining
# ---------------------------------------------------------------------------


def tiny_corpus(n=12):
    return np.clip(np.random.default_rng(1).random(size=(n, 1, 32, 32)), 0.0, 1.0)


def test_pretrain_deterministic_and_loss_finite():
    images = tiny_corpus()
    labels = np.arange(12) % 4
    cfg = SupConConfig(epochs=2, batch_size=6, learning_rate=1e-3, seed=9)

    def run():
        bb = build_backbone(32, 16, seed=4)
        head = build_projection_head(16, 8, seed=5)
        curve = pretrain(bb, head, images, labels, AugmentationPolicy(), cfg)
        return bb.checksum(), curve

    c1, curve1 = run()
    c2, curve2 = run()
    assert c1 == c2
    assert curve1 == curve2
    assert len(curve1) == 2
    assert all(np.isfinite(v) for v in curve1)


def test_simclr_mode_equals_instance_labels():
    images = tiny_corpus(8)
    cfg = SupConConfig(epochs=1, batch_size=4, learning_rate=1e-3, seed=2)
    bb1 = build_backbone(32, 16, seed=4)
    h1 = build_projection_head(16, 8, seed=5)
    curve1 = simclr_mode(bb1, h1, images, AugmentationPolicy(), cfg)
    bb2 = build_backbone(32, 16, seed=4)
    h2 = build_projection_head(16, 8, seed=5)
    curve2 = pretrain(bb2, h2, images, np.arange(8), AugmentationPolicy(), cfg)
    assert bb1.checksum() == bb2.checksum()
    assert curve1 == curve2


def test_balanced_sampler_requires_multi_member_bins():
    images = tiny_corpus(6)
    cfg = SupConConfig(epochs=1, batch_size=4, learning_rate=1e-3, seed=2,
                       balanced_sampler=True)
    bb = build_backbone(32, 16, seed=4)
    head = build_projection_head(16, 8, seed=5)
    with pytest.raises(ValueError, match="balanced sampler"):
        pretrain(bb, head, images, np.arange(6), AugmentationPolicy(), cfg)
    # works when bins have >= 2 members
    curve = pretrain(bb, head, images, np.arange(6) % 3, AugmentationPolicy(), cfg)
    assert len(curve) == 1
