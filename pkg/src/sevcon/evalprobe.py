"""Frozen-encoder linear probing and the evaluation metrics:
accuracy, F1, per-label ROC-AUC, and mean AUC."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .models import Backbone, ClassifierHead
from .numerics import (
    Array,
    NumericalError,
    SgdState,
    as_f64,
    bce_with_logits,
    require_finite,
    sgd_step,
)


@dataclass
class ProbeConfig:
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 0.1
    momentum: float = 0.9
    seed: int = 0


@dataclass
class ProbeResult:
    per_biomarker: dict[str, dict[str, float]]  # name -> {accuracy, f1}
    per_label_auc: dict[str, float]
    mean_auc: float
    provenance: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({
            "per_biomarker": self.per_biomarker,
            "per_label_auc": self.per_label_auc,
            "mean_auc": self.mean_auc,
            "provenance": self.provenance,
        }, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ProbeResult":
        d = json.loads(text)
        return cls(d["per_biomarker"], d["per_label_auc"], d["mean_auc"],
                   d.get("provenance", {}))


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def accuracy(preds, labels) -> float:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    return float(np.mean(preds == labels))


def f1(preds, labels) -> float:
    """2PR/(P+R); defined as 0 when P+R == 0."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    tp = np.sum((preds == 1) & (labels == 1))
    fp = np.sum((preds == 1) & (labels == 0))
    fn = np.sum((preds == 0) & (labels == 1))
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    if precision + recall == 0:
        return 0.0
    return float(2.0 * precision * recall / (precision + recall))


def _midranks(values: Array) -> Array:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    i = 0
    n = values.size
    while i < n:
        j = i
        while j + 1 < n and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC: probability a random positive outscores a random
    negative, with ties counted 1/2."""
    scores = as_f64(scores).ravel()
    labels = np.asarray(labels).ravel()
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs both classes present")
    ranks = _midranks(scores)
    rank_sum = float(ranks[pos].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


# ---------------------------------------------------------------------------
# Linear probe
# ---------------------------------------------------------------------------


def _embed_all(backbone: Backbone, images: Array,
               normalize: tuple[float, float] | None = None,
               batch_size: int = 256) -> Array:
    """Embed a corpus with the frozen backbone.

    `normalize=(mean, std)` applies the same pixel normalization the backbone
    saw during pretraining; feeding un-normalized images to a backbone trained
    on normalized views shifts the input distribution and hurts the probe.
    """
    if normalize is not None:
        mean, std = normalize
        images = (images - mean) / std
    outs = []
    for start in range(0, images.shape[0], batch_size):
        outs.append(backbone.net.forward(images[start:start + batch_size]))
    return np.concatenate(outs, axis=0)


def train_probe(backbone: Backbone, head: ClassifierHead, images: Array,
                labels: Array, config: ProbeConfig,
                normalize: tuple[float, float] | None = None) -> ClassifierHead:
    """Train only the linear head on frozen-backbone embeddings.

    Binary task: labels (n,), head output_dim 1, sigmoid cross-entropy.
    Multi-label: labels (n, L), per-label sigmoid cross-entropy.
    """
    feats = _embed_all(backbone, as_f64(images), normalize)
    y = as_f64(labels)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape[1] != head.output_dim:
        raise ValueError(f"label width {y.shape[1]} != head output_dim {head.output_dim}")
    rng = np.random.default_rng(config.seed)
    opt = SgdState(config.learning_rate, config.momentum)
    params = head.net.param_dict()
    n = feats.shape[0]
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            logits = head.net.forward(feats[idx])
            loss, dlogits = bce_with_logits(logits, y[idx])
            if not np.isfinite(loss):
                raise NumericalError("non-finite probe loss")
            head.net.backward(dlogits)
            grads = head.net.grad_dict()
            for v in grads.values():
                require_finite(v, "probe gradients")
            sgd_step(opt, params, grads)
    return head


def predict_scores(backbone: Backbone, head: ClassifierHead, images: Array,
                   normalize: tuple[float, float] | None = None) -> Array:
    """Raw logits per label; monotone in the sigmoid probabilities."""
    return head.net.forward(_embed_all(backbone, as_f64(images), normalize))


def evaluate(backbone: Backbone, binary_heads: dict[str, ClassifierHead],
             binary_tests: dict[str, tuple[Array, Array]],
             multilabel_head: ClassifierHead | None,
             multilabel_test: tuple[Array, Array] | None,
             provenance: dict | None = None,
             normalize: tuple[float, float] | None = None) -> ProbeResult:
    """Compute per-biomarker accuracy/F1 on the balanced binary test sets and
    per-label + mean AUC on the multi-label test set."""
    prov = dict(provenance or {})
    warnings: list[str] = []
    per_biomarker: dict[str, dict[str, float]] = {}
    for name, head in sorted(binary_heads.items()):
        x, y = binary_tests[name]
        if int(np.sum(y == 1)) != int(np.sum(y == 0)):
            warnings.append(f"unbalanced binary test set for {name}")
        logits = predict_scores(backbone, head, x, normalize)[:, 0]
        preds = (logits > 0.0).astype(np.int64)  # sigmoid(logit) > 0.5
        per_biomarker[name] = {"accuracy": accuracy(preds, y), "f1": f1(preds, y)}

    per_label_auc: dict[str, float] = {}
    mean_auc = float("nan")
    if multilabel_head is not None and multilabel_test is not None:
        x, y = multilabel_test
        scores = predict_scores(backbone, multilabel_head, x, normalize)
        names = [f"bio_{chr(ord('a') + j)}" for j in range(scores.shape[1])]
        for j, name in enumerate(names):
            per_label_auc[name] = roc_auc(scores[:, j], y[:, j])
        mean_auc = float(np.mean(list(per_label_auc.values())))
    if warnings:
        prov["warnings"] = warnings
    return ProbeResult(per_biomarker, per_label_auc, mean_auc, prov)
