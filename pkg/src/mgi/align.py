"""Feature pooling, projection heads, and the image-gene contrastive loss.

Two loss variants are provided. The default "paper" form normalizes each
matched-pair similarity by a softmax over all B^2 pairs of the batch
(negated so that minimizing it raises matched-pair similarity). The
"symmetric" form is standard two-directional InfoNCE with diagonal
targets.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .autodiff import ShapeError, Tensor
from .config import AlignConfig
from .params import normal_init


def init_head_params(cfg: AlignConfig, d_model: int, rng: np.random.Generator) -> dict[str, Tensor]:
    return {
        "head.image.w": normal_init(rng, (d_model, cfg.d_feat)),
        "head.gene.w": normal_init(rng, (d_model, cfg.d_feat)),
    }


def mixed_pool(tokens: Tensor) -> Tensor:
    """Equal-weight mean + max over the token axis: (T, d) -> (d,)."""
    if tokens.ndim != 2 or tokens.shape[0] < 1:
        raise ShapeError("mixed_pool expects a non-empty (T, d) token matrix")
    return ops.scale(ops.add(ops.tmean(tokens, axis=0), ops.tmax(tokens, axis=0)), 0.5)


def project_features(pooled: Tensor, w: Tensor) -> Tensor:
    """Linear map then L2 normalization to a unit feature vector."""
    d = pooled.shape[0]
    flat = ops.reshape(ops.matmul(ops.reshape(pooled, (1, d)), w), (w.shape[1],))
    return ops.l2_normalize(flat)


def similarity_matrix(image_feats: Tensor, gene_feats: Tensor, tau: float) -> Tensor:
    """S[i, j] = cos(I_i, G_j) / tau for unit-norm feature rows."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    if image_feats.shape != gene_feats.shape or image_feats.ndim != 2:
        raise ShapeError("feature matrices must both be (B, d_feat)")
    return ops.scale(ops.matmul(image_feats, ops.transpose(gene_feats)), 1.0 / tau)


def contrastive_loss(S: Tensor, variant: str = "paper") -> Tensor:
    """Scalar alignment loss from a temperature-scaled similarity matrix."""
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ShapeError("similarity matrix must be square")
    if not np.all(np.isfinite(S.data)):
        raise ValueError("similarity matrix contains non-finite entries")
    diag_mean = ops.tmean(ops.take_diag(S))
    if variant == "paper":
        # -(1/B) sum_i log[ exp(S_ii) / sum_jk exp(S_jk) ]
        return ops.sub(ops.logsumexp_all(S), diag_mean)
    if variant == "symmetric":
        rows = ops.tmean(ops.logsumexp_axis(S, axis=1))
        cols = ops.tmean(ops.logsumexp_axis(S, axis=0))
        return ops.sub(ops.scale(ops.add(rows, cols), 0.5), diag_mean)
    raise ValueError(f"unknown loss variant {variant!r}")


def batch_features(token_list: list[Tensor], head_w: Tensor) -> Tensor:
    """Pool + project each sample's tokens, stacked to (B, d_feat)."""
    return ops.stack([project_features(mixed_pool(t), head_w) for t in token_list], axis=0)
