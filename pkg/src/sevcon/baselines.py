"""Alternative anomaly scorers for the ablation: MSP, ODIN, and Mahalanobis,
all derived from a supervised classifier trained on the labeled subset.

Every scorer returns anomaly scores oriented higher = more anomalous, so the
labeling stage consumes any of them unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .contrastive import AugmentationPolicy, SupConConfig, pretrain
from .evalprobe import ProbeConfig, evaluate, train_probe
from .labeling import assign_severity_labels
from .models import (
    Backbone,
    Network,
    build_backbone,
    build_classifier_head,
    build_projection_head,
)
from .numerics import (
    Array,
    Dense,
    NumericalError,
    SgdState,
    as_f64,
    bce_with_logits,
    require_finite,
    sgd_step,
    softmax,
    softmax_ce_with_logits,
)


@dataclass
class ClassifierConfig:
    epochs: int = 15
    batch_size: int = 64
    learning_rate: float = 1e-3
    momentum: float = 0.9
    seed: int = 0


@dataclass
class SupervisedClassifier:
    backbone: Backbone
    multilabel_head: Network      # per-label sigmoid BCE head
    combo_head: Network           # softmax over observed label combinations
    combo_classes: Array          # (K, 5) multi-hot rows defining the classes


@dataclass
class GaussianClassStats:
    means: Array       # (K, d)
    cov: Array         # (d, d), tied, diagonal-regularized
    cov_inv: Array
    epsilon: float


def train_supervised_classifier(images: Array, multihot: Array,
                                config: ClassifierConfig) -> SupervisedClassifier:
    """Backbone + multi-label head trained jointly with per-label BCE, then a
    frozen-feature auxiliary softmax head over the observed label combos."""
    images = as_f64(images)
    y = as_f64(multihot)
    n, n_labels = y.shape
    backbone = build_backbone(images.shape[-1], 64, config.seed)
    rng = np.random.default_rng(config.seed + 1)
    head = Network([Dense(backbone.embedding_dim, n_labels, rng)])

    opt = SgdState(config.learning_rate, config.momentum)
    params = {**{f"b.{k}": v for k, v in backbone.net.named_params()},
              **{f"h.{k}": v for k, v in head.named_params()}}
    shuffle = np.random.default_rng(config.seed + 2)
    for _ in range(config.epochs):
        order = shuffle.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            feats = backbone.net.forward(images[idx])
            logits = head.forward(feats)
            loss, dlogits = bce_with_logits(logits, y[idx])
            if not np.isfinite(loss):
                raise NumericalError("non-finite classifier loss")
            backbone.net.backward(head.backward(dlogits))
            grads = {**{f"b.{k}": v for k, v in backbone.net.grad_dict().items()},
                     **{f"h.{k}": v for k, v in head.grad_dict().items()}}
            sgd_step(opt, params, grads)

    combo_classes, combo_idx = np.unique(y.astype(np.int64), axis=0, return_inverse=True)
    combo_head = Network([Dense(backbone.embedding_dim, combo_classes.shape[0],
                                np.random.default_rng(config.seed + 3))])
    feats = backbone.net.forward(images)
    c_params = combo_head.param_dict()
    c_opt = SgdState(config.learning_rate, config.momentum)
    c_shuffle = np.random.default_rng(config.seed + 4)
    for _ in range(config.epochs):
        order = c_shuffle.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            logits = combo_head.forward(feats[idx])
            loss, dlogits = softmax_ce_with_logits(logits, combo_idx[idx])
            combo_head.backward(dlogits)
            sgd_step(c_opt, c_params, combo_head.grad_dict())
    return SupervisedClassifier(backbone, head, combo_head, combo_classes)


def classifier_logits(clf: SupervisedClassifier, x: Array) -> Array:
    """Combo-class softmax logits for one image."""
    batch = x[None] if x.ndim == 3 else x
    return clf.combo_head.forward(clf.backbone.net.forward(batch))[0]


def msp_from_logits(logits: Array) -> float:
    logits = as_f64(logits)
    if logits.size < 2:
        raise ValueError("msp needs at least 2 logits")
    require_finite(logits, "msp logits")
    return float(softmax(logits).max())


def msp_score(clf: SupervisedClassifier, x: Array) -> float:
    """Anomaly score: -max softmax probability (higher = more anomalous)."""
    return -msp_from_logits(classifier_logits(clf, x))


def odin_score(clf: SupervisedClassifier, x: Array, T: float = 1000.0,
               eps: float = 0.0014) -> float:
    """Perturb the input against the temperature-scaled cross-entropy gradient
    at the predicted class, then score with the temperature-scaled MSP."""
    if T <= 0:
        raise ValueError("T must be positive")
    if eps < 0:
        raise ValueError("eps must be non-negative")
    batch = as_f64(x)[None] if x.ndim == 3 else as_f64(x)
    feats = clf.backbone.net.forward(batch)
    logits = clf.combo_head.forward(feats)
    pred = np.array([int(np.argmax(logits[0]))])
    _, dlogits = softmax_ce_with_logits(logits / T, pred)
    dx = clf.backbone.net.backward(clf.combo_head.backward(dlogits / T))
    require_finite(dx, "odin input gradient")
    x_pert = batch - eps * np.sign(dx)
    logits_pert = clf.combo_head.forward(clf.backbone.net.forward(x_pert))[0]
    return -msp_from_logits(logits_pert / T)


def fit_gaussian_stats(features: Array, class_idx: Array,
                       epsilon: float = 1e-3) -> GaussianClassStats:
    """Per-class means and a tied covariance with diagonal regularization."""
    feats = as_f64(features)
    idx = np.asarray(class_idx)
    classes = np.unique(idx)
    means = np.stack([feats[idx == c].mean(axis=0) for c in classes])
    centered = feats - means[np.searchsorted(classes, idx)]
    cov = centered.T @ centered / feats.shape[0]
    cov += epsilon * np.eye(cov.shape[0])
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise NumericalError(
            f"covariance not positive-definite even with epsilon={epsilon}") from None
    return GaussianClassStats(means, cov, np.linalg.inv(cov), epsilon)


def mahalanobis_score(stats: GaussianClassStats, feature: Array) -> float:
    """min over classes of (f - mu)^T Sigma^-1 (f - mu); higher = more anomalous."""
    f = as_f64(feature).ravel()
    if f.size != stats.means.shape[1]:
        raise ValueError(f"feature dim {f.size} != {stats.means.shape[1]}")
    diffs = stats.means - f
    d2 = np.einsum("kd,de,ke->k", diffs, stats.cov_inv, diffs)
    return float(d2.min())


def score_corpus(clf: SupervisedClassifier, images: Array, scorer: str,
                 odin_T: float = 1000.0, odin_eps: float = 0.0014,
                 mahalanobis_eps: float = 1e-3,
                 train_images: Array | None = None,
                 train_multihot: Array | None = None) -> Array:
    """Anomaly scores for a whole corpus with the named baseline scorer."""
    n = images.shape[0]
    if scorer == "msp":
        return np.array([msp_score(clf, images[i]) for i in range(n)])
    if scorer == "odin":
        return np.array([odin_score(clf, images[i], odin_T, odin_eps) for i in range(n)])
    if scorer == "mahalanobis":
        if train_images is None or train_multihot is None:
            raise ValueError("mahalanobis needs the labeled training data")
        feats = clf.backbone.net.forward(as_f64(train_images))
        _, combo_idx = np.unique(as_f64(train_multihot).astype(np.int64),
                                 axis=0, return_inverse=True)
        stats = fit_gaussian_stats(feats, combo_idx, mahalanobis_eps)
        corpus_feats = clf.backbone.net.forward(as_f64(images))
        return np.array([mahalanobis_score(stats, corpus_feats[i]) for i in range(n)])
    raise ValueError(f"unknown scorer {scorer!r}")


def ablation_run(scores_by_scorer: dict[str, Array], corpus_images: Array,
                 labeled_train: tuple[Array, Array],
                 multilabel_test: tuple[Array, Array], n_bins: int,
                 policy: AugmentationPolicy, pretrain_cfg: SupConConfig,
                 probe_cfg: ProbeConfig, seed: int) -> list[dict]:
    """One labeled-corpus -> pretrain -> probe -> mean-AUC row per scorer,
    all scorers sharing seeds, splits, and training config."""
    train_x, train_y = labeled_train
    rows = []
    for scorer in scores_by_scorer:
        labeling = assign_severity_labels(scores_by_scorer[scorer], n_bins)
        backbone = build_backbone(corpus_images.shape[-1], 64, seed)
        head = build_projection_head(64, 32, seed + 1)
        cfg = SupConConfig(**{**pretrain_cfg.__dict__, "seed": seed})
        pretrain(backbone, head, corpus_images, labeling.labels, policy, cfg)
        ml_head = build_classifier_head(backbone.embedding_dim, train_y.shape[1], seed + 2)
        norm = (policy.normalize_mean, policy.normalize_std)
        train_probe(backbone, ml_head, train_x, train_y,
                    ProbeConfig(**{**probe_cfg.__dict__, "seed": seed}),
                    normalize=norm)
        result = evaluate(backbone, {}, {}, ml_head, multilabel_test, normalize=norm)
        rows.append({"scorer": scorer, "n_bins": n_bins, "mean_auc": result.mean_auc})
    return rows
