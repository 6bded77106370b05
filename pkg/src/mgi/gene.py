"""Gene-expression encoder: chunk tokenizer + stacked selective-SSM blocks.

A standardized expression vector is cut into fixed-order contiguous chunks,
each linearly projected to a token. The token sequence then runs through
``depth`` selective state-space blocks (input-dependent delta/B/C, causal
depthwise conv, SiLU gating, skip connection) and a final layer norm.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .autodiff import ShapeError, Tensor
from .config import GeneEncoderConfig
from .params import ParamView, normal_init


def init_gene_params(cfg: GeneEncoderConfig, rng: np.random.Generator,
                     prefix: str = "gene.") -> dict[str, Tensor]:
    """Fresh encoder weights keyed by dotted names (all requires_grad)."""
    dm, di, ds, K = cfg.d_model, cfg.d_inner, cfg.d_state, cfg.conv_kernel
    p: dict[str, Tensor] = {}
    p[prefix + "tokenizer.proj"] = normal_init(rng, (cfg.chunk_size, dm))
    for i in range(cfg.depth):
        b = f"{prefix}block{i}."
        p[b + "norm_gamma"] = Tensor(np.ones(dm), requires_grad=True)
        p[b + "norm_beta"] = Tensor(np.zeros(dm), requires_grad=True)
        p[b + "in_proj"] = normal_init(rng, (dm, 2 * di))
        p[b + "conv_kernel"] = normal_init(rng, (K, di))
        p[b + "conv_bias"] = Tensor(np.zeros(di), requires_grad=True)
        p[b + "dt_proj"] = normal_init(rng, (di, di))
        # softplus(dt_bias) lands in [0.01, 0.1]: slow, stable decay at init
        dt = rng.uniform(0.01, 0.1, size=di)
        p[b + "dt_bias"] = Tensor(np.log(np.expm1(dt)), requires_grad=True)
        p[b + "b_proj"] = normal_init(rng, (di, ds))
        p[b + "c_proj"] = normal_init(rng, (di, ds))
        # -A spans [1, d_state] across state channels
        a = np.tile(np.arange(1, ds + 1, dtype=np.float64), (di, 1))
        p[b + "a_log"] = Tensor(np.log(a), requires_grad=True)
        p[b + "d_skip"] = Tensor(np.ones(di), requires_grad=True)
        p[b + "out_proj"] = normal_init(rng, (di, dm))
    p[prefix + "final_gamma"] = Tensor(np.ones(dm), requires_grad=True)
    p[prefix + "final_beta"] = Tensor(np.zeros(dm), requires_grad=True)
    return p


def tokenize_genes(expr: np.ndarray, cfg: GeneEncoderConfig, proj: Tensor) -> Tensor:
    """Chunk an expression vector into T tokens of width d_model.

    The final chunk is zero-padded. ``expr`` is data (no gradient); the
    projection is learned.
    """
    expr = np.asarray(expr, dtype=np.float64)
    if expr.ndim != 1 or expr.size == 0:
        raise ShapeError("expr must be a non-empty 1-D vector")
    if expr.size != cfg.n_genes:
        raise ShapeError(f"expected {cfg.n_genes} genes, got {expr.size}")
    T, c = cfg.n_tokens, cfg.chunk_size
    padded = np.zeros(T * c, dtype=np.float64)
    padded[: expr.size] = expr
    chunks = Tensor(padded.reshape(T, c))
    return ops.matmul(chunks, proj)


def discretize_zoh(delta: Tensor, A: Tensor, B: Tensor) -> tuple[Tensor, Tensor]:
    """ZOH transition with Euler-form input.

    abar[t,i,s] = exp(delta[t,i] * A[i,s]); bbar[t,i,s] = delta[t,i] * B[t,s].
    Requires delta > 0 and A < 0, which pins abar inside (0, 1).
    """
    T, di = delta.shape
    ds = A.shape[1]
    d3 = ops.reshape(delta, (T, di, 1))
    abar = ops.exp(ops.mul(d3, ops.reshape(A, (1, di, ds))))
    bbar = ops.mul(d3, ops.reshape(B, (T, 1, ds)))
    return abar, bbar


def mamba_block(tokens: Tensor, p: ParamView, cfg: GeneEncoderConfig,
                parallel_scan: bool = True) -> Tensor:
    """One selective-SSM block with pre-norm and residual."""
    di = cfg.d_inner
    x_ln = ops.layer_norm(tokens, p["norm_gamma"], p["norm_beta"])
    xz = ops.matmul(x_ln, p["in_proj"])
    x = ops.narrow(xz, 1, 0, di)
    z = ops.narrow(xz, 1, di, di)
    x = ops.conv1d_depthwise_causal(x, p["conv_kernel"], p["conv_bias"])
    x = ops.silu(x)
    delta = ops.softplus(ops.add(ops.matmul(x, p["dt_proj"]), p["dt_bias"]))
    Bm = ops.matmul(x, p["b_proj"])
    Cm = ops.matmul(x, p["c_proj"])
    A = ops.neg(ops.exp(p["a_log"]))
    abar, bbar = discretize_zoh(delta, A, Bm)
    T = tokens.shape[0]
    bx = ops.mul(bbar, ops.reshape(x, (T, di, 1)))
    y = ops.selective_scan(abar, bx, Cm, p["d_skip"], x, parallel=parallel_scan)
    y = ops.mul(y, ops.silu(z))
    return ops.add(tokens, ops.matmul(y, p["out_proj"]))


def encode_genes(expr: np.ndarray, params: dict[str, Tensor], cfg: GeneEncoderConfig,
                 parallel_scan: bool = True, prefix: str = "gene.") -> Tensor:
    """Standardized expression vector -> (T, d_model) token sequence."""
    root = ParamView(params, prefix)
    tokens = tokenize_genes(expr, cfg, root["tokenizer.proj"])
    for i in range(cfg.depth):
        tokens = mamba_block(tokens, ParamView(params, f"{prefix}block{i}."), cfg,
                             parallel_scan=parallel_scan)
    return ops.layer_norm(tokens, root["final_gamma"], root["final_beta"])
