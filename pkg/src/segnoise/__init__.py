"""Trainable-noise-model evaluation of segmentation saliency methods."""

__version__ = "0.1.0"
