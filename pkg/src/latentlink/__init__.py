"""Desk-scale latent-space communication between a masked-diffusion planner
and an autoregressive executor, with a trainable projector bridging their
hidden spaces, text- and latent-interface pipelines, failure-attribution
diagnostics, and n-gram repetition metrics."""

__version__ = "0.1.0"
