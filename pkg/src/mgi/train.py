"""Training loops (contrastive pretraining, segmentation fine-tuning),
evaluation metrics, and the SGD-with-momentum optimizer.

Everything is single-threaded and fully determined by (config, seed):
parameter init, batch order, and all arithmetic use explicit seeded RNG
streams, so identical runs produce bitwise-identical loss traces.
"""

from __future__ import annotations

import os

import numpy as np

from . import align, data, fusion, gene, image, ops
from .autodiff import Tensor, backward
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig
from .params import zero_grads


class SgdMomentum:
    """Plain SGD with momentum over a named parameter dict."""

    def __init__(self, lr: float, momentum: float, weight_decay: float = 0.0):
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, Tensor]) -> None:
        # fixed name order keeps the update sequence reproducible
        for name in sorted(params):
            p = params[name]
            if p.grad is None:
                continue
            v = self.velocity.get(name)
            v = p.grad if v is None else self.momentum * v + p.grad
            self.velocity[name] = v
            p.data = p.data - self.lr * (v + self.weight_decay * p.data)
        zero_grads(params)


class Adam:
    """Adam with bias correction; deterministic fixed-order updates."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.weight_decay = weight_decay
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, Tensor]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name in sorted(params):
            p = params[name]
            if p.grad is None:
                continue
            g = p.grad
            m = self.m.get(name, np.zeros_like(g))
            v = self.v.get(name, np.zeros_like(g))
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            self.m[name], self.v[name] = m, v
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            # decoupled weight decay (applied to the weights, not the gradient)
            p.data = p.data - self.lr * (mhat / (np.sqrt(vhat) + self.eps)
                                         + self.weight_decay * p.data)
        zero_grads(params)


def make_optimizer(opt_cfg) -> "SgdMomentum | Adam":
    if opt_cfg.optimizer == "adam":
        return Adam(opt_cfg.lr, weight_decay=opt_cfg.weight_decay)
    return SgdMomentum(opt_cfg.lr, opt_cfg.momentum, opt_cfg.weight_decay)


def scheduled_lr(opt_cfg, step: int, total_steps: int) -> float:
    """Learning rate for one step: constant, or linear warmup + cosine decay."""
    if opt_cfg.schedule == "constant":
        return opt_cfg.lr
    warmup = max(1, int(opt_cfg.warmup_frac * total_steps))
    if step < warmup:
        return opt_cfg.lr * (step + 1) / warmup
    progress = (step - warmup) / max(1, total_steps - warmup)
    return opt_cfg.lr * 0.5 * (1.0 + np.cos(np.pi * progress))


def init_pretrain_params(cfg: RunConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    params = gene.init_gene_params(cfg.gene, rng)
    params.update(image.init_image_params(cfg.vit, rng))
    params.update(align.init_head_params(cfg.align, cfg.vit.d_model, rng))
    return params


def encode_sample(sample: data.PairedSample, params: dict[str, Tensor], cfg: RunConfig,
                  gene_mean: np.ndarray, gene_std: np.ndarray,
                  zero_genes: bool = False) -> tuple[Tensor, Tensor]:
    """Returns (gene_tokens, image_tokens) for one paired sample."""
    expr = data.standardize_genes(sample.genes, gene_mean, gene_std)
    if zero_genes:
        expr = np.zeros_like(expr)
    g = gene.encode_genes(expr, params, cfg.gene)
    im = image.encode_image(sample.image, params, cfg.vit)
    return g, im


def contrastive_batch_loss(samples: list[data.PairedSample], params: dict[str, Tensor],
                           cfg: RunConfig, gene_mean, gene_std) -> Tensor:
    gene_tokens, image_tokens = [], []
    for s in samples:
        g, im = encode_sample(s, params, cfg, gene_mean, gene_std)
        gene_tokens.append(g)
        image_tokens.append(im)
    I = align.batch_features(image_tokens, params["head.image.w"])
    G = align.batch_features(gene_tokens, params["head.gene.w"])
    S = align.similarity_matrix(I, G, cfg.align.tau)
    return align.contrastive_loss(S, cfg.align.loss_variant)


def pretrain(cfg: RunConfig, manifest_path: str, out_dir: str,
             log=print) -> Checkpoint:
    """Contrastive pretraining of both encoders plus projection heads."""
    cfg.validate()
    opt_cfg = cfg.pretrain
    if opt_cfg.batch_size < 2:
        raise ValueError("contrastive pretraining needs batch size >= 2")
    train_entries = data.read_manifest(manifest_path, "train")
    gene_mean, gene_std = data.gene_standardization(train_entries)
    rng = np.random.default_rng(cfg.seed)
    params = init_pretrain_params(cfg, rng)
    opt = make_optimizer(opt_cfg)

    history = []
    step = 0
    total_steps = opt_cfg.epochs * (len(train_entries) // opt_cfg.batch_size)
    for epoch in range(opt_cfg.epochs):
        epoch_losses = []
        batches = data.batch_iter(train_entries, opt_cfg.batch_size,
                                  epoch_seed=cfg.seed * 100003 + epoch, drop_last=True)
        for batch in batches:
            samples = [data.load_sample(e) for e in batch]
            loss = contrastive_batch_loss(samples, params, cfg, gene_mean, gene_std)
            backward(loss)
            opt.lr = scheduled_lr(opt_cfg, step, total_steps)
            opt.step(params)
            epoch_losses.append(loss.item())
            step += 1
        mean_loss = float(np.mean(epoch_losses))
        history.append(mean_loss)
        log(f"pretrain epoch {epoch}\tloss {mean_loss:.6f}")

    ckpt = Checkpoint(cfg, params, gene_mean, gene_std, step=step, loss_history=history)
    save_checkpoint(ckpt, out_dir)
    return ckpt


def finetune(cfg: RunConfig, checkpoint_dir: str, manifest_path: str, out_dir: str,
             zero_genes: bool = False, freeze_encoders: bool = False,
             log=print) -> Checkpoint:
    """Dice-loss segmentation fine-tuning of the fusion decoder.

    ``zero_genes`` is the image-only ablation: the gene branch still runs
    but sees an all-zero expression vector. Encoders are updated unless
    ``freeze_encoders`` is set.
    """
    cfg.validate()
    base = load_checkpoint(checkpoint_dir)
    _check_compatible(base.cfg, cfg)
    opt_cfg = cfg.finetune
    train_entries = data.read_manifest(manifest_path, "train")
    rng = np.random.default_rng(cfg.seed + 1)
    params = dict(base.params)
    params.update(fusion.init_decoder_params(cfg.decoder, cfg.vit.d_model, rng))
    trainable = (params if not freeze_encoders
                 else {k: v for k, v in params.items() if k.startswith("dec.")})
    opt = make_optimizer(opt_cfg)
    grid = cfg.vit.grid
    out_hw = (cfg.vit.image_size, cfg.vit.image_size)

    history = []
    step = 0
    total_steps = opt_cfg.epochs * (-(-len(train_entries) // opt_cfg.batch_size))
    for epoch in range(opt_cfg.epochs):
        epoch_losses = []
        batches = data.batch_iter(train_entries, opt_cfg.batch_size,
                                  epoch_seed=cfg.seed * 100003 + 50021 + epoch,
                                  drop_last=False)
        for batch in batches:
            losses = []
            for entry in batch:
                sample = data.load_sample(entry)
                g, im = encode_sample(sample, params, cfg, base.gene_mean, base.gene_std,
                                      zero_genes=zero_genes)
                logits = fusion.decode_mask(g, im, params, cfg.decoder, grid, out_hw)
                losses.append(fusion.dice_loss(logits, sample.mask))
            loss = ops.tmean(ops.stack(losses))
            backward(loss)
            opt.lr = scheduled_lr(opt_cfg, step, total_steps)
            opt.step(trainable)
            zero_grads(params)
            epoch_losses.append(loss.item())
            step += 1
        mean_loss = float(np.mean(epoch_losses))
        history.append(mean_loss)
        log(f"finetune epoch {epoch}\tdice_loss {mean_loss:.6f}")

    ckpt = Checkpoint(cfg, params, base.gene_mean, base.gene_std,
                      step=base.step + step, loss_history=base.loss_history + history)
    save_checkpoint(ckpt, out_dir)
    return ckpt


def _check_compatible(old: RunConfig, new: RunConfig) -> None:
    for section in ("gene", "vit", "align"):
        if getattr(old, section) != getattr(new, section):
            raise ValueError(f"checkpoint/config mismatch in section {section!r}")


def retrieval_recalls(S: np.ndarray, ks: tuple[int, ...] = (1, 5)) -> dict[str, float]:
    """Recall@k in both directions from an image-by-gene similarity matrix."""
    B = S.shape[0]
    out = {}
    for k in ks:
        # image query -> gene candidates (rows), gene query -> image (cols)
        i2g = np.mean([i in np.argsort(-S[i])[:k] for i in range(B)])
        g2i = np.mean([j in np.argsort(-S[:, j])[:k] for j in range(B)])
        out[f"recall@{k}_image_to_gene"] = float(i2g)
        out[f"recall@{k}_gene_to_image"] = float(g2i)
    return out


def evaluate(checkpoint_dir: str, manifest_path: str, split: str = "test",
             zero_genes: bool = False) -> dict[str, float]:
    """Retrieval recalls and (when a decoder is present) mean hard Dice."""
    ckpt = load_checkpoint(checkpoint_dir)
    cfg = ckpt.cfg
    entries = data.read_manifest(manifest_path, split)
    has_decoder = any(name.startswith("dec.") for name in ckpt.params)
    grid = cfg.vit.grid
    out_hw = (cfg.vit.image_size, cfg.vit.image_size)

    image_feats, gene_feats, dices = [], [], []
    for entry in entries:
        sample = data.load_sample(entry)
        g, im = encode_sample(sample, ckpt.params, cfg, ckpt.gene_mean, ckpt.gene_std,
                              zero_genes=zero_genes)
        image_feats.append(
            align.project_features(align.mixed_pool(im), ckpt.params["head.image.w"]).data)
        gene_feats.append(
            align.project_features(align.mixed_pool(g), ckpt.params["head.gene.w"]).data)
        if has_decoder:
            logits = fusion.decode_mask(g, im, ckpt.params, cfg.decoder, grid, out_hw)
            pred = 1.0 / (1.0 + np.exp(-logits.data)) >= 0.5
            dices.append(fusion.dice_score(pred, ckpt_mask_binary(sample.mask)))

    S = np.stack(image_feats) @ np.stack(gene_feats).T
    metrics = {"n_samples": float(len(entries))}
    metrics.update(retrieval_recalls(S))
    if has_decoder:
        metrics["mean_dice"] = float(np.mean(dices))
    return metrics


def ckpt_mask_binary(mask: np.ndarray) -> np.ndarray:
    return (np.asarray(mask) > 0.5).astype(np.float64)


def metrics_report(metrics: dict[str, float]) -> str:
    lines = [f"{name}\t{metrics[name]!r}" for name in sorted(metrics)]
    return "\n".join(lines) + "\n"


def write_metrics(metrics: dict[str, float], out_dir: str) -> str:
    report = metrics_report(metrics)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "metrics.txt"), "w", encoding="utf-8") as fh:
        fh.write(report)
    return report
