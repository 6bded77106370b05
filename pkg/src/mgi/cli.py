"""Command-line entry points: gen-data, pretrain, finetune, eval, verify."""

from __future__ import annotations

import argparse
import os
import sys

from . import data, train, verify
from .config import RunConfig, load_config


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="path to a key = value config file")
    p.add_argument("--seed", type=int, help="master seed override")
    p.add_argument("--out", help="output directory override")
    p.add_argument("--threads", type=int, default=None,
                   help="worker count (1 preserves bitwise reproducibility)")


def _resolve_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        cfg = load_config(args.config, base=cfg)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    if args.threads is not None:
        cfg.threads = args.threads
    if getattr(args, "tau", None) is not None:
        cfg.align.tau = args.tau
    if getattr(args, "loss_variant", None) is not None:
        cfg.align.loss_variant = args.loss_variant
    if getattr(args, "batch_size", None) is not None:
        cfg.pretrain.batch_size = args.batch_size
        cfg.finetune.batch_size = args.batch_size
    if getattr(args, "epochs", None) is not None:
        cfg.pretrain.epochs = args.epochs
        cfg.finetune.epochs = args.epochs
    cfg.validate()
    return cfg


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tau", type=float, help="contrastive temperature")
    p.add_argument("--loss-variant", choices=["paper", "symmetric"], dest="loss_variant")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--epochs", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mgi",
        description="Desk-scale multimodal gene/image contrastive pretraining "
                    "and tumor-mask segmentation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic paired dataset")
    _add_common(p)
    p.add_argument("--n-samples", type=int, default=None,
                   help="total samples (default: data.n_train + data.n_test)")

    p = sub.add_parser("pretrain", help="contrastive pretraining of both encoders")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--manifest", help="dataset manifest (default: <out>/data/manifest.tsv)")

    p = sub.add_parser("finetune", help="fine-tune the fusion decoder for segmentation")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--manifest")
    p.add_argument("--checkpoint", help="pretrained checkpoint dir "
                                        "(default: <out>/pretrain)")
    p.add_argument("--zero-genes", action="store_true",
                   help="image-only ablation: feed an all-zero gene vector")
    p.add_argument("--freeze-encoders", action="store_true")

    p = sub.add_parser("eval", help="retrieval and segmentation metrics on a split")
    _add_common(p)
    p.add_argument("--manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--zero-genes", action="store_true")

    p = sub.add_parser("verify", help="run the numerical verification suite")
    _add_common(p)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--scan-instances", type=int, default=100)
    return parser


def _default_manifest(cfg: RunConfig, args) -> str:
    return args.manifest or os.path.join(cfg.out_dir, "data", "manifest.tsv")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = _resolve_config(args) if args.command != "eval" else None

    if args.command == "gen-data":
        n = args.n_samples or (cfg.data.n_train + cfg.data.n_test)
        manifest = data.build_dataset(cfg.data, n, cfg.seed,
                                      os.path.join(cfg.out_dir, "data"))
        print(f"wrote {n} samples; manifest at {manifest}")
        return 0

    if args.command == "pretrain":
        ckpt_dir = os.path.join(cfg.out_dir, "pretrain")
        train.pretrain(cfg, _default_manifest(cfg, args), ckpt_dir)
        print(f"checkpoint written to {ckpt_dir}")
        return 0

    if args.command == "finetune":
        ckpt_in = args.checkpoint or os.path.join(cfg.out_dir, "pretrain")
        ckpt_dir = os.path.join(cfg.out_dir, "finetune")
        train.finetune(cfg, ckpt_in, _default_manifest(cfg, args), ckpt_dir,
                       zero_genes=args.zero_genes,
                       freeze_encoders=args.freeze_encoders)
        print(f"checkpoint written to {ckpt_dir}")
        return 0

    if args.command == "eval":
        from .checkpoint import load_checkpoint
        ckpt_cfg = load_checkpoint(args.checkpoint).cfg
        if args.out is not None:
            ckpt_cfg.out_dir = args.out
        manifest = args.manifest or os.path.join(ckpt_cfg.out_dir, "data", "manifest.tsv")
        metrics = train.evaluate(args.checkpoint, manifest, split=args.split,
                                 zero_genes=args.zero_genes)
        report = train.write_metrics(metrics, args.checkpoint)
        sys.stdout.write(report)
        return 0

    if args.command == "verify":
        ok, _report = verify.run_verification(seeds=args.seeds,
                                              scan_instances=args.scan_instances,
                                              stream=sys.stdout)
        return 0 if ok else 1

    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    raise SystemExit(main())
