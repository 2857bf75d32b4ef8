"""Extractive adversarial rationale models for attack-comment classification.

A hard-attention generator selects a binary token rationale, a primary
predictor scores the rationale-masked text, and an adversarial predictor
scans the (permuted) antirationale for residual signal; the generator is
trained by score-function gradients against a four-term objective.
"""

from . import cli, compute, corpus, evaluation, generator, predictor, training  # noqa: F401

__version__ = "0.1.0"
