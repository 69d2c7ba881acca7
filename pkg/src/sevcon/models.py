"""Concrete network builders: convolutional autoencoder, encoder backbone,
projection head, and linear classifier heads.

All builders are deterministic in (config, seed). Desk-scale defaults:
32x32 grayscale inputs, 64-d backbone embedding, 32-d projection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import (
    Array,
    Conv2d,
    Dense,
    Flatten,
    NearestUpsample,
    Network,
    Relu,
    Reshape,
    ShapeError,
    Sigmoid,
    params_checksum,
)

SUPPORTED_SIDES = (32, 64)


@dataclass
class Autoencoder:
    encoder: Network
    decoder: Network
    image_side: int
    latent_dim: int

    def forward(self, x: Array) -> Array:
        return self.decoder.forward(self.encoder.forward(x))

    def backward(self, dout: Array) -> Array:
        return self.encoder.backward(self.decoder.backward(dout))

    def param_dict(self) -> dict[str, Array]:
        d = {f"encoder.{k}": v for k, v in self.encoder.named_params()}
        d.update({f"decoder.{k}": v for k, v in self.decoder.named_params()})
        return d

    def load_param_dict(self, params: dict[str, Array]):
        enc = {k[len("encoder."):]: v for k, v in params.items() if k.startswith("encoder.")}
        dec = {k[len("decoder."):]: v for k, v in params.items() if k.startswith("decoder.")}
        self.encoder.load_param_dict(enc)
        self.decoder.load_param_dict(dec)

    def decoder_weight_layers(self) -> list[int]:
        """Indices of decoder layers carrying a weight tensor, in order."""
        return [i for i, layer in enumerate(self.decoder.layers) if "w" in layer.params]

    def checksum(self) -> str:
        return params_checksum(self.param_dict())


@dataclass
class Backbone:
    net: Network
    image_side: int
    embedding_dim: int

    def param_dict(self) -> dict[str, Array]:
        return self.net.param_dict()

    def load_param_dict(self, params):
        self.net.load_param_dict(params)

    def checksum(self) -> str:
        return params_checksum(self.param_dict())


@dataclass
class ProjectionHead:
    net: Network  # dense -> relu -> dense, exactly one hidden layer
    output_dim: int

    def param_dict(self) -> dict[str, Array]:
        return self.net.param_dict()

    def load_param_dict(self, params):
        self.net.load_param_dict(params)


@dataclass
class ClassifierHead:
    net: Network  # a single dense layer
    output_dim: int

    def param_dict(self) -> dict[str, Array]:
        return self.net.param_dict()

    def load_param_dict(self, params):
        self.net.load_param_dict(params)


def _check_side(image_side: int):
    if image_side not in SUPPORTED_SIDES:
        raise ValueError(f"unsupported image_side {image_side}; supported: {SUPPORTED_SIDES}")


def build_autoencoder(image_side: int, latent_dim: int, seed: int) -> Autoencoder:
    _check_side(image_side)
    if latent_dim < 4:
        raise ValueError("latent_dim must be >= 4")
    rng = np.random.default_rng(seed)
    # Two stride-2 stages at 32, three at 64; bottleneck grid is 8x8 either way.
    n_down = 2 if image_side == 32 else 3
    grid = image_side // (2 ** n_down)

    enc: list = [Conv2d(1, 8, rng, stride=1), Relu()]
    c = 8
    for _ in range(n_down):
        c_next = min(c * 2, 32)
        enc += [Conv2d(c, c_next, rng, stride=2), Relu()]
        c = c_next
    c_last = c
    enc += [Flatten(), Dense(c_last * grid * grid, latent_dim, rng)]

    dec: list = [Dense(latent_dim, c_last * grid * grid, rng), Relu(),
                 Reshape((c_last, grid, grid))]
    c = c_last
    for _ in range(n_down):
        c_next = max(c // 2, 8)
        dec += [NearestUpsample(2), Conv2d(c, c_next, rng, stride=1), Relu()]
        c = c_next
    dec += [Conv2d(c, 1, rng, stride=1), Sigmoid()]

    return Autoencoder(Network(enc), Network(dec), image_side, latent_dim)


def build_backbone(image_side: int, embedding_dim: int, seed: int) -> Backbone:
    _check_side(image_side)
    rng = np.random.default_rng(seed)
    n_down = 3 if image_side == 32 else 4
    layers: list = []
    c = 1
    c_out = 8
    for _ in range(n_down):
        layers += [Conv2d(c, c_out, rng, stride=2), Relu()]
        c, c_out = c_out, min(c_out * 2, 32)
    grid = image_side // (2 ** n_down)
    layers += [Flatten(), Dense(c * grid * grid, embedding_dim, rng)]
    return Backbone(Network(layers), image_side, embedding_dim)


def build_projection_head(embedding_dim: int, output_dim: int, seed: int) -> ProjectionHead:
    rng = np.random.default_rng(seed)
    net = Network([
        Dense(embedding_dim, embedding_dim, rng),
        Relu(),
        Dense(embedding_dim, output_dim, rng),
    ])
    return ProjectionHead(net, output_dim)


def build_classifier_head(embedding_dim: int, output_dim: int, seed: int) -> ClassifierHead:
    rng = np.random.default_rng(seed)
    return ClassifierHead(Network([Dense(embedding_dim, output_dim, rng)]), output_dim)


def _as_batch(image: Array) -> tuple[Array, bool]:
    if image.ndim == 3:
        return image[None], True
    if image.ndim == 4:
        return image, False
    raise ShapeError(f"expected (C,H,W) or (B,C,H,W) image, got {image.shape}")


def embed(backbone: Backbone, image: Array) -> Array:
    """Map an image (or batch) to its flat embedding r."""
    batch, single = _as_batch(image)
    r = backbone.net.forward(batch)
    return r[0] if single else r


def project(head: ProjectionHead, r: Array) -> Array:
    """Project an embedding (or batch) to the unit sphere: z = G(r)/|G(r)|."""
    single = r.ndim == 1
    u = head.net.forward(r[None] if single else r)
    norms = np.linalg.norm(u, axis=1, keepdims=True)
    if np.any(norms < 1e-12):
        raise ValueError("projection head produced a zero vector (degenerate head)")
    z = u / norms
    return z[0] if single else z


def normalize_rows_backward(u: Array, z: Array, dz: Array) -> Array:
    """Backward of row-wise z = u/|u|: du = (dz - (z.dz) z) / |u|."""
    norms = np.linalg.norm(u, axis=1, keepdims=True)
    dot = (z * dz).sum(axis=1, keepdims=True)
    return (dz - dot * z) / norms
