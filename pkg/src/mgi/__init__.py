"""Desk-scale multimodal gene/image contrastive pretraining and
tumor-mask segmentation, on a self-contained float64 autodiff core."""

from .autodiff import GraphError, NonFiniteError, ShapeError, Tensor, backward

__all__ = ["Tensor", "backward", "NonFiniteError", "ShapeError", "GraphError"]

__version__ = "0.1.0"
