"""Latent causal representations: coupling autoencoders, stacked latent effects, KLD-gain discovery."""

__version__ = "0.1.0"
