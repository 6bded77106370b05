"""Patch-token image encoder: linear patch embedding + pre-norm ViT blocks.

No class token; the full row-major patch grid flows through so the fusion
decoder can reshape it back into a spatial map.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .autodiff import ShapeError, Tensor
from .config import ViTConfig
from .params import ParamView, normal_init


def init_image_params(cfg: ViTConfig, rng: np.random.Generator,
                      prefix: str = "image.") -> dict[str, Tensor]:
    dm, P, N = cfg.d_model, cfg.patch_size, cfg.n_tokens
    p: dict[str, Tensor] = {}
    p[prefix + "patch_proj"] = normal_init(rng, (P * P, dm))
    p[prefix + "pos_embed"] = Tensor(np.zeros((N, dm)), requires_grad=True)
    for i in range(cfg.depth):
        b = f"{prefix}block{i}."
        p[b + "norm1_gamma"] = Tensor(np.ones(dm), requires_grad=True)
        p[b + "norm1_beta"] = Tensor(np.zeros(dm), requires_grad=True)
        for name in ("wq", "wk", "wv", "wo"):
            p[b + name] = normal_init(rng, (dm, dm))
        p[b + "norm2_gamma"] = Tensor(np.ones(dm), requires_grad=True)
        p[b + "norm2_beta"] = Tensor(np.zeros(dm), requires_grad=True)
        p[b + "mlp_w1"] = normal_init(rng, (dm, cfg.mlp_hidden))
        p[b + "mlp_b1"] = Tensor(np.zeros(cfg.mlp_hidden), requires_grad=True)
        p[b + "mlp_w2"] = normal_init(rng, (cfg.mlp_hidden, dm))
        p[b + "mlp_b2"] = Tensor(np.zeros(dm), requires_grad=True)
    p[prefix + "final_gamma"] = Tensor(np.ones(dm), requires_grad=True)
    p[prefix + "final_beta"] = Tensor(np.zeros(dm), requires_grad=True)
    return p


def extract_patches(image: np.ndarray, patch_size: int) -> np.ndarray:
    """(1, H, W) image -> (N, P*P) row-major patch matrix."""
    if image.ndim != 3 or image.shape[0] != 1:
        raise ShapeError(f"expected (1, H, W) image, got {image.shape}")
    _, H, W = image.shape
    P = patch_size
    if H % P or W % P:
        raise ShapeError(f"patch size {P} must divide image extents {H}x{W}")
    gh, gw = H // P, W // P
    return (
        image[0]
        .reshape(gh, P, gw, P)
        .transpose(0, 2, 1, 3)
        .reshape(gh * gw, P * P)
        .astype(np.float64)
    )


def patchify(image: np.ndarray, cfg: ViTConfig, proj: Tensor, pos: Tensor) -> Tensor:
    """Project flattened patches and add learned positional embeddings."""
    patches = extract_patches(np.asarray(image, dtype=np.float64), cfg.patch_size)
    return ops.add(ops.matmul(Tensor(patches), proj), pos)


def mhsa(tokens: Tensor, p: ParamView, cfg: ViTConfig) -> Tensor:
    """Multi-head scaled dot-product self-attention with output projection."""
    dm, h = cfg.d_model, cfg.n_heads
    dh = dm // h
    q = ops.matmul(tokens, p["wq"])
    k = ops.matmul(tokens, p["wk"])
    v = ops.matmul(tokens, p["wv"])
    inv_scale = 1.0 / np.sqrt(dh)
    heads = []
    for i in range(h):
        qi = ops.narrow(q, 1, i * dh, dh)
        ki = ops.narrow(k, 1, i * dh, dh)
        vi = ops.narrow(v, 1, i * dh, dh)
        att = ops.softmax(ops.scale(ops.matmul(qi, ops.transpose(ki)), inv_scale), axis=-1)
        heads.append(ops.matmul(att, vi))
    concat = heads[0] if h == 1 else _concat_cols(heads)
    return ops.matmul(concat, p["wo"])


def _concat_cols(parts: list[Tensor]) -> Tensor:
    # stack along a new axis then fold heads back into the feature axis
    N = parts[0].shape[0]
    total = sum(t.shape[1] for t in parts)
    stacked = ops.stack(parts, axis=1)  # (N, h, dh)
    return ops.reshape(stacked, (N, total))


def vit_block(tokens: Tensor, p: ParamView, cfg: ViTConfig) -> Tensor:
    x = ops.add(tokens, mhsa(ops.layer_norm(tokens, p["norm1_gamma"], p["norm1_beta"]), p, cfg))
    hidden = ops.gelu(ops.linear(ops.layer_norm(x, p["norm2_gamma"], p["norm2_beta"]),
                                 p["mlp_w1"], p["mlp_b1"]))
    return ops.add(x, ops.linear(hidden, p["mlp_w2"], p["mlp_b2"]))


def encode_image(image: np.ndarray, params: dict[str, Tensor], cfg: ViTConfig,
                 prefix: str = "image.") -> Tensor:
    """(1, H, W) image in [0,1] -> (N, d_model) tokens, row-major grid order."""
    root = ParamView(params, prefix)
    tokens = patchify(image, cfg, root["patch_proj"], root["pos_embed"])
    for i in range(cfg.depth):
        tokens = vit_block(tokens, ParamView(params, f"{prefix}block{i}."), cfg)
    return ops.layer_norm(tokens, root["final_gamma"], root["final_beta"])
