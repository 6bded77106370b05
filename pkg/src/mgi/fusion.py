"""Multimodal fusion mask decoder.

Two attention-interaction blocks alternate information between gene and
image token streams (gene self-attention, gene->image cross-attention,
gene MLP, image->gene cross-attention), then a mask-output head upsamples
the image grid with two stride-2 transposed convolutions, condenses the
gene stream into a single query vector, and scores every pixel embedding
against it. All attention in the decoder is single-head.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .align import mixed_pool
from .autodiff import ShapeError, Tensor
from .config import DecoderConfig
from .params import ParamView, normal_init


def init_decoder_params(cfg: DecoderConfig, d_model: int, rng: np.random.Generator,
                        prefix: str = "dec.") -> dict[str, Tensor]:
    p: dict[str, Tensor] = {}

    def attn(base: str) -> None:
        for stream in ("normq", "normkv"):
            p[base + stream + "_gamma"] = Tensor(np.ones(d_model), requires_grad=True)
            p[base + stream + "_beta"] = Tensor(np.zeros(d_model), requires_grad=True)
        for name in ("wq", "wk", "wv", "wo"):
            # fan-in scale: 0.02-std projections make every attention output
            # (and its gradients) vanishingly small, freezing the cross-modal
            # mixing the decoder exists to learn
            p[base + name] = normal_init(rng, (d_model, d_model),
                                         1.0 / np.sqrt(d_model))

    def mlp(base: str, d_out: int, std: float | None = None) -> None:
        p[base + "norm_gamma"] = Tensor(np.ones(d_model), requires_grad=True)
        p[base + "norm_beta"] = Tensor(np.zeros(d_model), requires_grad=True)
        p[base + "w1"] = normal_init(rng, (d_model, cfg.mlp_hidden),
                                     std or 1.0 / np.sqrt(d_model))
        p[base + "b1"] = Tensor(np.zeros(cfg.mlp_hidden), requires_grad=True)
        p[base + "w2"] = normal_init(rng, (cfg.mlp_hidden, d_out),
                                     std or 1.0 / np.sqrt(cfg.mlp_hidden))
        p[base + "b2"] = Tensor(np.zeros(d_out), requires_grad=True)

    for i in range(cfg.depth):
        b = f"{prefix}block{i}."
        attn(b + "self.")
        attn(b + "cross_g2i.")
        mlp(b + "mlp.", d_model, std=0.02)  # residual-stream convention
        attn(b + "cross_i2g.")
    out = prefix + "out."
    # output path has no residual shortcut: fan-in scaling keeps the initial
    # logits O(1) so the dice loss has usable gradients from step 0
    p[out + "up1"] = normal_init(rng, (d_model, cfg.up_channels_mid, 2, 2),
                                 1.0 / np.sqrt(d_model))
    p[out + "up2"] = normal_init(rng, (cfg.up_channels_mid, cfg.up_channels, 2, 2),
                                 1.0 / np.sqrt(cfg.up_channels_mid))
    attn(out + "cross.")
    mlp(out + "query_mlp.", cfg.up_channels)
    return p


def _attend(q_tokens: Tensor, kv_tokens: Tensor, p: ParamView) -> Tensor:
    """Single-head cross attention; pre-norms both streams, no residual."""
    qn = ops.layer_norm(q_tokens, p["normq_gamma"], p["normq_beta"])
    kn = ops.layer_norm(kv_tokens, p["normkv_gamma"], p["normkv_beta"])
    q = ops.matmul(qn, p["wq"])
    k = ops.matmul(kn, p["wk"])
    v = ops.matmul(kn, p["wv"])
    att = ops.softmax(ops.scale(ops.matmul(q, ops.transpose(k)), 1.0 / np.sqrt(q.shape[1])),
                      axis=-1)
    return ops.matmul(ops.matmul(att, v), p["wo"])


def _mlp(x: Tensor, p: ParamView) -> Tensor:
    h = ops.gelu(ops.linear(ops.layer_norm(x, p["norm_gamma"], p["norm_beta"]),
                            p["w1"], p["b1"]))
    return ops.linear(h, p["w2"], p["b2"])


def attention_interaction(genes: Tensor, image: Tensor, p: ParamView) -> tuple[Tensor, Tensor]:
    """The four-step two-way interaction; residual around every step."""
    if genes.shape[1] != image.shape[1]:
        raise ShapeError("gene and image token widths must match")
    genes = ops.add(genes, _attend(genes, genes, p.view("self.")))
    genes = ops.add(genes, _attend(genes, image, p.view("cross_g2i.")))
    genes = ops.add(genes, _mlp(genes, p.view("mlp.")))
    image = ops.add(image, _attend(image, genes, p.view("cross_i2g.")))
    return genes, image


def bilinear_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Separable bilinear resize weights (rows sum to one, edge-clamped)."""
    R = np.zeros((n_out, n_in))
    for i in range(n_out):
        x = (i + 0.5) * n_in / n_out - 0.5
        x = min(max(x, 0.0), n_in - 1.0)
        lo = int(np.floor(x))
        hi = min(lo + 1, n_in - 1)
        frac = x - lo
        R[i, lo] += 1.0 - frac
        R[i, hi] += frac
    return R


def mask_output(genes: Tensor, image: Tensor, p: ParamView,
                grid: tuple[int, int], out_hw: tuple[int, int]) -> Tensor:
    """Upsampled pixel embeddings scored against a pooled gene query."""
    gh, gw = grid
    N, d = image.shape
    if N != gh * gw:
        raise ShapeError(f"token count {N} does not match grid {gh}x{gw}")
    img_grid = ops.transpose(ops.reshape(image, (gh, gw, d)), (2, 0, 1))
    up = ops.gelu(ops.conv2d_transpose(img_grid, p["up1"], 2))
    up = ops.conv2d_transpose(up, p["up2"], 2)  # (c_up, 4gh, 4gw)
    c_up = up.shape[0]

    genes = ops.add(genes, _attend(genes, image, p.view("cross.")))
    pooled = mixed_pool(genes)
    q = _mlp(ops.reshape(pooled, (1, d)), p.view("query_mlp."))  # (1, c_up)

    flat = ops.reshape(up, (c_up, 4 * gh * 4 * gw))
    low = ops.reshape(ops.matmul(q, flat), (4 * gh, 4 * gw))
    H, W = out_hw
    Rh = Tensor(bilinear_matrix(H, 4 * gh))
    Rw = Tensor(bilinear_matrix(W, 4 * gw))
    return ops.matmul(ops.matmul(Rh, low), ops.transpose(Rw))


def decode_mask(genes: Tensor, image: Tensor, params: dict[str, Tensor],
                cfg: DecoderConfig, grid: tuple[int, int], out_hw: tuple[int, int],
                prefix: str = "dec.") -> Tensor:
    """Full decoder: interaction blocks then the mask-output head -> (H, W) logits."""
    for i in range(cfg.depth):
        genes, image = attention_interaction(genes, image, ParamView(params, f"{prefix}block{i}."))
    return mask_output(genes, image, ParamView(params, prefix + "out."), grid, out_hw)


def dice_loss(logits: Tensor, target: np.ndarray, smooth: float = 1.0) -> Tensor:
    """Soft Dice loss against a binary target mask."""
    target = np.asarray(target, dtype=np.float64)
    if target.shape != logits.shape:
        raise ShapeError(f"target shape {target.shape} != logits shape {logits.shape}")
    if not np.all((target == 0.0) | (target == 1.0)):
        raise ValueError("target mask must be binary")
    prob = ops.sigmoid(logits)
    inter = ops.tsum(ops.mul(prob, Tensor(target)))
    denom = ops.add(ops.add(ops.tsum(prob), float(target.sum())), smooth)
    return ops.sub(1.0, ops.div(ops.add(ops.scale(inter, 2.0), smooth), denom))


def dice_score(pred: np.ndarray, gt: np.ndarray) -> float:
    """Hard Dice overlap 2|P∩G| / (|P|+|G|); 1.0 when both masks are empty."""
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ShapeError("mask shapes differ")
    total = pred.sum() + gt.sum()
    if total == 0:
        return 1.0
    return 2.0 * float(np.logical_and(pred, gt).sum()) / float(total)
