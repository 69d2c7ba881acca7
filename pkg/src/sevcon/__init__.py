"""Severity pseudo-labeling from autoencoder gradients plus supervised
contrastive pretraining and linear-probe evaluation, on synthetic
OCT-like images."""

__version__ = "0.1.0"
