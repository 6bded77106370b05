"""Run configuration: dataclasses plus a line-oriented ``key = value`` format.

Keys are dotted (``gene.d_model = 48``); every key has a default, so an
empty config file is valid. The serialized form written next to each
checkpoint round-trips exactly.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field


@dataclass
class GeneEncoderConfig:
    n_genes: int = 1024
    chunk_size: int = 16
    d_model: int = 32
    d_inner: int = 64
    d_state: int = 8
    conv_kernel: int = 4
    depth: int = 2

    @property
    def n_tokens(self) -> int:
        return -(-self.n_genes // self.chunk_size)

    def validate(self) -> None:
        if self.n_genes <= 0:
            raise ValueError("n_genes must be positive")
        if self.n_tokens < 2:
            raise ValueError("gene token count must be >= 2")


@dataclass
class ViTConfig:
    image_size: int = 64
    patch_size: int = 8
    d_model: int = 32
    n_heads: int = 4
    mlp_hidden: int = 64
    depth: int = 2

    @property
    def grid(self) -> tuple[int, int]:
        g = self.image_size // self.patch_size
        return (g, g)

    @property
    def n_tokens(self) -> int:
        g = self.grid
        return g[0] * g[1]

    def validate(self) -> None:
        if self.image_size % self.patch_size != 0:
            raise ValueError("patch size must divide image size")
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")


@dataclass
class AlignConfig:
    d_feat: int = 32
    tau: float = 0.07
    loss_variant: str = "paper"  # or "symmetric"

    def validate(self) -> None:
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.loss_variant not in ("paper", "symmetric"):
            raise ValueError(f"unknown loss variant {self.loss_variant!r}")


@dataclass
class DecoderConfig:
    up_channels_mid: int = 16
    up_channels: int = 8
    mlp_hidden: int = 64
    depth: int = 2


@dataclass
class DataConfig:
    image_size: int = 64
    n_genes: int = 1024
    n_train: int = 512
    n_test: int = 128
    noise_sigma: float = 0.1
    max_lesions: int = 3
    background_noise: float = 0.1


@dataclass
class OptimConfig:
    lr: float = 1e-2
    momentum: float = 0.9
    weight_decay: float = 0.0
    batch_size: int = 16
    epochs: int = 20
    optimizer: str = "sgd"  # or "adam"
    schedule: str = "constant"  # or "warmup_cosine"
    warmup_frac: float = 0.1

    def validate(self) -> None:
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.schedule not in ("constant", "warmup_cosine"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if not 0.0 <= self.warmup_frac < 1.0:
            raise ValueError("warmup_frac must be in [0, 1)")


@dataclass
class RunConfig:
    gene: GeneEncoderConfig = field(default_factory=GeneEncoderConfig)
    vit: ViTConfig = field(default_factory=ViTConfig)
    align: AlignConfig = field(default_factory=AlignConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    data: DataConfig = field(default_factory=DataConfig)
    pretrain: OptimConfig = field(default_factory=OptimConfig)
    finetune: OptimConfig = field(default_factory=OptimConfig)
    seed: int = 0
    threads: int = 1
    out_dir: str = "runs/default"

    def validate(self) -> None:
        self.gene.validate()
        self.vit.validate()
        self.align.validate()
        self.pretrain.validate()
        self.finetune.validate()
        if self.data.image_size != self.vit.image_size:
            raise ValueError("data.image_size must equal vit.image_size")
        if self.data.n_genes != self.gene.n_genes:
            raise ValueError("data.n_genes must equal gene.n_genes")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


_SECTIONS = {
    "gene": GeneEncoderConfig,
    "vit": ViTConfig,
    "align": AlignConfig,
    "decoder": DecoderConfig,
    "data": DataConfig,
    "pretrain": OptimConfig,
    "finetune": OptimConfig,
}


def _parse_value(text: str, typ):
    if typ is int:
        return int(text)
    if typ is float:
        return float(text)
    if typ is str:
        return text
    raise TypeError(f"unsupported config field type {typ}")


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base if base is not None else RunConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        _assign(cfg, key, value, lineno)
    cfg.validate()
    return cfg


def _assign(cfg: RunConfig, key: str, value: str, lineno: int) -> None:
    if "." in key:
        section, name = key.split(".", 1)
        if section not in _SECTIONS:
            raise ValueError(f"config line {lineno}: unknown section {section!r}")
        target = getattr(cfg, section)
    else:
        target, name = cfg, key
        if name not in ("seed", "threads", "out_dir"):
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
    fields = {f.name: f for f in dataclasses.fields(target)}
    if name not in fields or dataclasses.is_dataclass(getattr(target, name)):
        raise ValueError(f"config line {lineno}: unknown key {key!r}")
    setattr(target, name, _parse_value(value, type(getattr(target, name))))


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), base=base)


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for name in ("seed", "threads", "out_dir"):
        lines.append(f"{name} = {getattr(cfg, name)}")
    for section in _SECTIONS:
        obj = getattr(cfg, section)
        for f in dataclasses.fields(obj):
            lines.append(f"{section}.{f.name} = {getattr(obj, f.name)}")
    return "\n".join(lines) + "\n"


def save_config(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_config(cfg))
