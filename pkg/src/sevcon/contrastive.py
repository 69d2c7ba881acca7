"""Supervised contrastive pretraining on severity pseudo-labels.

Two augmented views per source image guarantee every anchor at least one
positive regardless of how sparse the pseudo-label bins are. Setting every
source's label to its own id turns the loss into instance discrimination
(the SimCLR-equivalent mode).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import Backbone, ProjectionHead, normalize_rows_backward
from .numerics import (
    Array,
    NumericalError,
    SgdState,
    as_f64,
    require_finite,
    sgd_step,
)


@dataclass
class AugmentationPolicy:
    crop_scale: tuple[float, float] = (0.85, 1.0)  # area fraction
    flip_prob: float = 0.5
    brightness_jitter: float = 0.05
    contrast_jitter: float = 0.05
    normalize_mean: float = 0.5
    normalize_std: float = 0.5


@dataclass
class SupConConfig:
    tau: float = 0.07
    batch_size: int = 64
    epochs: int = 40
    learning_rate: float = 1e-3
    momentum: float = 0.9
    balanced_sampler: bool = False  # sample B/2 bins x 2 images per step
    seed: int = 0


@dataclass
class MultiviewBatch:
    views: Array       # (2B, 1, H, W); view i and i+B share source i
    labels: Array      # (2B,) pseudo-labels inherited from the sources
    source_ids: Array  # (2B,)


def _bilinear_resize(img: Array, out_side: int) -> Array:
    h, w = img.shape
    if h == out_side and w == out_side:
        return img.copy()
    ys = np.linspace(0.0, h - 1.0, out_side)
    xs = np.linspace(0.0, w - 1.0, out_side)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = img[np.ix_(y0, x0)] * (1 - wx) + img[np.ix_(y0, x1)] * wx
    bot = img[np.ix_(y1, x0)] * (1 - wx) + img[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy


def augment(policy: AugmentationPolicy, image: Array, rng: np.random.Generator) -> Array:
    """Random resized crop, horizontal flip, brightness/contrast jitter, then
    mean/std normalization. Output shape equals input shape."""
    img = as_f64(image)[0]
    side = img.shape[0]

    scale = rng.uniform(*policy.crop_scale)
    crop = max(1, int(round(side * np.sqrt(scale))))
    crop = min(crop, side)
    top = rng.integers(0, side - crop + 1)
    left = rng.integers(0, side - crop + 1)
    img = _bilinear_resize(img[top:top + crop, left:left + crop], side)

    if rng.random() < policy.flip_prob:
        img = img[:, ::-1].copy()

    img = img + rng.uniform(-policy.brightness_jitter, policy.brightness_jitter)
    img = img * (1.0 + rng.uniform(-policy.contrast_jitter, policy.contrast_jitter))
    img = (img - policy.normalize_mean) / policy.normalize_std
    return img[None]


def build_multiview_batch(images: Array, labels: Array, idxs: Array,
                          policy: AugmentationPolicy,
                          rng: np.random.Generator) -> MultiviewBatch:
    idxs = np.asarray(idxs)
    views = [augment(policy, images[i], rng) for i in idxs]
    views += [augment(policy, images[i], rng) for i in idxs]
    lab = np.asarray(labels)[idxs]
    return MultiviewBatch(
        views=np.stack(views),
        labels=np.concatenate([lab, lab]),
        source_ids=np.concatenate([idxs, idxs]),
    )


def _supcon_matrices(z: Array, labels: Array, tau: float):
    z = as_f64(z)
    m = z.shape[0]
    norms = np.linalg.norm(z, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise ValueError("embeddings must be unit-norm")
    if tau <= 0:
        raise ValueError("tau must be positive")
    labels = np.asarray(labels)
    pos = (labels[:, None] == labels[None, :]).astype(np.float64)
    np.fill_diagonal(pos, 0.0)
    if np.any(pos.sum(axis=1) == 0):
        raise ValueError("every anchor needs at least one positive")

    s = (z @ z.T) / tau
    # exclude self-similarity from the denominator via max-subtracted logsumexp
    np.fill_diagonal(s, -np.inf)
    smax = s.max(axis=1, keepdims=True)
    exps = np.exp(s - smax)
    denom = exps.sum(axis=1, keepdims=True)
    logp = (s - smax) - np.log(denom)  # log softmax over A(i)
    return m, pos, exps / denom, logp


def supcon_loss(z: Array, labels: Array, tau: float) -> float:
    """Mean over anchors i of -1/|P(i)| sum_{p in P(i)} log softmax_i(p)."""
    m, pos, _, logp = _supcon_matrices(z, labels, tau)
    per_anchor = -(pos * np.where(pos > 0, logp, 0.0)).sum(axis=1) / pos.sum(axis=1)
    return float(per_anchor.mean())


def supcon_loss_and_grad(z: Array, labels: Array, tau: float) -> tuple[float, Array]:
    m, pos, sm, logp = _supcon_matrices(z, labels, tau)
    p_counts = pos.sum(axis=1, keepdims=True)
    per_anchor = -(pos * np.where(pos > 0, logp, 0.0)).sum(axis=1) / p_counts[:, 0]
    loss = float(per_anchor.mean())
    # dL/dS_ij for j != i: (softmax_i(j) - 1[j in P(i)]/|P(i)|) / m
    g = (sm - pos / p_counts) / m
    np.fill_diagonal(g, 0.0)
    dz = (g + g.T) @ z / tau
    return loss, dz


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        chunk = order[start:start + batch_size]
        if chunk.size >= 2:
            yield chunk


def _balanced_batches(labels: Array, batch_size: int, rng: np.random.Generator):
    """B/2 distinct bins, two source images from each."""
    n = labels.shape[0]
    bins = np.unique(labels)
    eligible = np.array([b for b in bins if np.sum(labels == b) >= 2])
    if eligible.size == 0:
        raise ValueError("balanced sampler needs at least one bin with >= 2 samples")
    n_steps = max(1, n // batch_size)
    n_bins_per_step = min(max(batch_size // 2, 1), eligible.size)
    for _ in range(n_steps):
        chosen = rng.choice(eligible, size=n_bins_per_step, replace=False)
        idxs = []
        for b in chosen:
            members = np.flatnonzero(labels == b)
            idxs.extend(rng.choice(members, size=2, replace=False))
        yield np.asarray(idxs)


def pretrain(backbone: Backbone, head: ProjectionHead, images: Array,
             pseudo_labels: Array, policy: AugmentationPolicy,
             config: SupConConfig) -> list[float]:
    """Train backbone + projection head with the supervised contrastive loss.

    Returns the per-epoch mean loss curve; the head is conventionally
    discarded by the caller afterwards.
    """
    images = as_f64(images)
    labels = np.asarray(pseudo_labels)
    rng = np.random.default_rng(config.seed)
    opt = SgdState(config.learning_rate, config.momentum)
    b_params = backbone.net.param_dict()
    h_params = head.net.param_dict()
    curve: list[float] = []
    for _ in range(config.epochs):
        losses = []
        if config.balanced_sampler:
            batches = _balanced_batches(labels, config.batch_size, rng)
        else:
            batches = _epoch_batches(images.shape[0], config.batch_size, rng)
        for idxs in batches:
            batch = build_multiview_batch(images, labels, idxs, policy, rng)
            r = backbone.net.forward(batch.views)
            u = head.net.forward(r)
            norms = np.linalg.norm(u, axis=1, keepdims=True)
            if np.any(norms < 1e-12):
                raise NumericalError("projection collapsed to zero vector")
            zed = u / norms
            loss, dz = supcon_loss_and_grad(zed, batch.labels, config.tau)
            if not np.isfinite(loss):
                raise NumericalError("non-finite contrastive loss")
            du = normalize_rows_backward(u, zed, dz)
            dr = head.net.backward(du)
            backbone.net.backward(dr)
            grads = {**{f"b.{k}": v for k, v in backbone.net.grad_dict().items()},
                     **{f"h.{k}": v for k, v in head.net.grad_dict().items()}}
            for v in grads.values():
                require_finite(v, "contrastive gradients")
            params = {**{f"b.{k}": v for k, v in b_params.items()},
                      **{f"h.{k}": v for k, v in h_params.items()}}
            sgd_step(opt, params, grads)
            losses.append(loss)
        curve.append(float(np.mean(losses)))
    return curve


def simclr_mode(backbone: Backbone, head: ProjectionHead, images: Array,
                policy: AugmentationPolicy, config: SupConConfig) -> list[float]:
    """Instance-discrimination pretraining: each source is its own class."""
    return pretrain(backbone, head, images, np.arange(images.shape[0]),
                    policy, config)
