"""Gradient-constrained autoencoder training on the healthy distribution,
reference-gradient bookkeeping, and severity scoring.

The severity score of an image is its reconstruction error minus alpha times
the alignment of its decoder gradients with the reference gradients averaged
over healthy training. Higher score = more severe. The printed-sign variant
(a normality score) is exposed as ``normality_score``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .models import Autoencoder
from .numerics import (
    Array,
    NumericalError,
    SgdState,
    ShapeError,
    as_f64,
    cosine_similarity,
    require_finite,
    sgd_step,
)


@dataclass
class GradconConfig:
    alpha: float = 0.03
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-3
    momentum: float = 0.9
    # Learning rate for the first epoch only. A hotter first epoch moves the
    # model out of the initial regime where every image produces nearly the
    # same gradient; afterwards the lower rate keeps the constraint stable.
    # None means "use learning_rate throughout".
    warmup_learning_rate: float | None = None
    # Propagate the alignment term into parameter updates via a
    # Hessian-vector product (finite-difference of gradients).
    constraint_in_update: bool = True
    seed: int = 0


@dataclass
class ReferenceGradients:
    """Running per-decoder-layer mean of flattened weight gradients."""

    layer_means: list[Array] = field(default_factory=list)
    count: int = 0

    def initialized(self) -> bool:
        return self.count >= 1


@dataclass
class SeverityScore:
    value: float
    l_recon: float
    l_grad: float


def normality_score(score: SeverityScore) -> float:
    return -score.value


def reconstruction_loss(x: Array, xhat: Array) -> float:
    """Mean over all pixels of (x - xhat)^2."""
    x = as_f64(x)
    xhat = as_f64(xhat)
    if x.shape != xhat.shape:
        raise ShapeError(f"reconstruction_loss: shapes {x.shape} != {xhat.shape}")
    return float(np.mean((x - xhat) ** 2))


def reconstruction_loss_grad(x: Array, xhat: Array) -> Array:
    """d(mean squared error)/d(xhat)."""
    return 2.0 * (xhat - x) / x.size


def decoder_weight_gradients(model: Autoencoder) -> list[Array]:
    """Flattened weight gradients of each parameterized decoder layer,
    in layer order. Biases are excluded."""
    out = []
    for i in model.decoder_weight_layers():
        out.append(model.decoder.layers[i].grads["w"].ravel().copy())
    return out


def gradient_alignment(current: list[Array], ref: ReferenceGradients) -> float:
    """Unweighted mean over decoder layers of the cosine similarity between
    the current gradients and the reference gradients."""
    if not ref.initialized():
        raise ValueError("reference gradients are uninitialized")
    if len(current) != len(ref.layer_means):
        raise ShapeError(
            f"layer-set mismatch: {len(current)} layers vs {len(ref.layer_means)}")
    cosines = [cosine_similarity(g, m) for g, m in zip(current, ref.layer_means)]
    return float(np.mean(cosines))


def update_reference(ref: ReferenceGradients, grads: list[Array]) -> ReferenceGradients:
    """Cumulative arithmetic mean: mean_{k+1} = mean_k + (g - mean_k)/(k+1)."""
    if ref.count == 0:
        ref.layer_means = [g.copy() for g in grads]
        ref.count = 1
        return ref
    if len(grads) != len(ref.layer_means):
        raise ShapeError("layer-set mismatch in update_reference")
    k = ref.count
    for mean, g in zip(ref.layer_means, grads):
        if mean.shape != g.shape:
            raise ShapeError("gradient shape mismatch in update_reference")
        mean += (g - mean) / (k + 1)
    ref.count = k + 1
    return ref


def _recon_backward(model: Autoencoder, batch: Array) -> tuple[float, dict[str, Array]]:
    """One forward/backward pass of the reconstruction loss; returns the loss
    and a full parameter-gradient dict."""
    xhat = model.forward(batch)
    loss = reconstruction_loss(batch, xhat)
    model.backward(reconstruction_loss_grad(batch, xhat))
    grads = {f"encoder.{k}": v for k, v in model.encoder.grad_dict().items()}
    grads.update({f"decoder.{k}": v for k, v in model.decoder.grad_dict().items()})
    return loss, grads


def _alignment_grad_wrt_gradients(current: list[Array],
                                  ref: ReferenceGradients) -> list[Array]:
    """d(mean_l cos(g_l, m_l))/d(g_l), closed form per layer."""
    n_layers = len(current)
    out = []
    for g, m in zip(current, ref.layer_means):
        ng = np.linalg.norm(g)
        nm = np.linalg.norm(m)
        if ng < 1e-12 or nm < 1e-12:
            out.append(np.zeros_like(g))
            continue
        c = float(np.dot(g, m) / (ng * nm))
        out.append((m / (ng * nm) - c * g / ng ** 2) / n_layers)
    return out


def _constraint_update_term(model: Autoencoder, batch: Array,
                            dec_keys: list[str],
                            dalign: list[Array]) -> dict[str, Array]:
    """d(L_grad)/d(theta) = H u, where H is the Hessian of the reconstruction
    loss and u embeds the per-layer alignment derivatives into decoder-weight
    coordinates. Approximated by a central finite difference of gradients."""
    u_norm = np.sqrt(sum(float(np.dot(d, d)) for d in dalign))
    if u_norm < 1e-12:
        _, g0 = _recon_backward(model, batch)
        return {k: np.zeros_like(v) for k, v in g0.items()}
    params = model.param_dict()
    scale = max(np.abs(params[k]).max() for k in dec_keys)
    delta = 1e-5 * (1.0 + scale) / u_norm

    saved = {k: params[k].copy() for k in dec_keys}

    def perturb(sign: float):
        for k, d in zip(dec_keys, dalign):
            params[k][...] = saved[k] + sign * delta * d.reshape(params[k].shape)

    perturb(+1.0)
    _, g_plus = _recon_backward(model, batch)
    g_plus = {k: v.copy() for k, v in g_plus.items()}
    perturb(-1.0)
    _, g_minus = _recon_backward(model, batch)
    for k in dec_keys:
        params[k][...] = saved[k]
    return {k: (g_plus[k] - g_minus[k]) / (2.0 * delta) for k in g_plus}


def train_gradcon(healthy: Array, config: GradconConfig, model: Autoencoder,
                  heldout: Array | None = None,
                  heldout_sample: int = 8) -> tuple[Autoencoder, ReferenceGradients, list[dict]]:
    """Train the autoencoder on healthy images with the gradient constraint.

    Per iteration: compute the reconstruction loss and its decoder gradients;
    the objective is J = L_recon - alpha * L_grad, where L_grad is the
    alignment with the pre-update reference. The constraint is inactive on the
    very first iteration (no reference yet); the reference accumulates every
    iteration. When heldout images are given, each epoch's log entry carries
    the mean alignment of per-image heldout gradients with the reference,
    averaged over the epoch's iterations (a fixed subsample of heldout_sample
    images keeps the cost bounded). Returns (model, reference, per-epoch log).
    """
    healthy = as_f64(healthy)
    if healthy.shape[0] == 0:
        raise ValueError("empty healthy dataset")
    rng = np.random.default_rng(config.seed)
    opt = SgdState(config.learning_rate, config.momentum)
    ref = ReferenceGradients()
    dec_key_order = [f"decoder.{i}.w" for i in model.decoder_weight_layers()]
    log: list[dict] = []
    params = model.param_dict()

    n = healthy.shape[0]
    held = None
    if heldout is not None and heldout.shape[0] > 0:
        held = as_f64(heldout)[:min(heldout_sample, heldout.shape[0])]
    for epoch in range(config.epochs):
        lr = config.learning_rate
        if epoch == 0 and config.warmup_learning_rate is not None:
            lr = config.warmup_learning_rate
        opt.learning_rate = lr
        order = rng.permutation(n)
        recon_vals, align_vals, held_vals = [], [], []
        for start in range(0, n, config.batch_size):
            batch = healthy[order[start:start + config.batch_size]]
            loss, grads = _recon_backward(model, batch)
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite reconstruction loss at epoch {epoch}")
            dec_grads = [grads[k].ravel().copy() for k in dec_key_order]

            update = {k: v.copy() for k, v in grads.items()}
            if ref.initialized():
                l_grad = gradient_alignment(dec_grads, ref)
                align_vals.append(l_grad)
                if held is not None:
                    aligns = []
                    for i in range(held.shape[0]):
                        _, g = _recon_backward(model, held[i:i + 1])
                        aligns.append(gradient_alignment(
                            [g[k].ravel() for k in dec_key_order], ref))
                    held_vals.append(float(np.mean(aligns)))
                if config.constraint_in_update and config.alpha != 0.0:
                    dalign = _alignment_grad_wrt_gradients(dec_grads, ref)
                    hv = _constraint_update_term(model, batch, dec_key_order, dalign)
                    for k in update:
                        update[k] -= config.alpha * hv[k]
            for v in update.values():
                require_finite(v, "gradcon update")
            sgd_step(opt, params, update)
            update_reference(ref, dec_grads)
            recon_vals.append(loss)

        entry = {
            "epoch": epoch,
            "mean_recon": float(np.mean(recon_vals)),
            "mean_alignment": float(np.mean(align_vals)) if align_vals else float("nan"),
        }
        if held is not None:
            entry["heldout_alignment"] = (
                float(np.mean(held_vals)) if held_vals else float("nan"))
        log.append(entry)
    return model, ref, log


def severity_score(model: Autoencoder, ref: ReferenceGradients, x: Array,
                   alpha: float) -> SeverityScore:
    """Score one image: value = l_recon - alpha * l_grad. Pure with respect to
    model parameters and the reference (only gradient buffers are touched)."""
    if not ref.initialized():
        raise ValueError("reference gradients are uninitialized")
    x = as_f64(x)
    batch = x[None] if x.ndim == 3 else x
    if batch.shape[0] != 1:
        raise ShapeError("severity_score takes a single image")
    l_recon, grads = _recon_backward(model, batch)
    dec = [grads[f"decoder.{i}.w"].ravel() for i in model.decoder_weight_layers()]
    l_grad = gradient_alignment(dec, ref)
    return SeverityScore(value=l_recon - alpha * l_grad, l_recon=l_recon, l_grad=l_grad)


def score_dataset(model: Autoencoder, ref: ReferenceGradients, images: Array,
                  alpha: float) -> list[SeverityScore]:
    return [severity_score(model, ref, images[i], alpha) for i in range(images.shape[0])]
