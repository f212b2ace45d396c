"""Unsupervised domain adaptation of text classifiers by adversarial adaptation with distillation."""

__version__ = "0.1.0"
