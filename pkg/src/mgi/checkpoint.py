"""Checkpoint directory layout.

``<dir>/config.txt``   run configuration (key = value)
``<dir>/params/<name>.mgit``  every named tensor, incl. gene standardization
``<dir>/meta.txt``     step counter and loss history as text

Save -> load reproduces forward passes bitwise (float64 containers).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .config import RunConfig, load_config, save_config
from .tensor_io import read_tensor, write_tensor

# Non-trainable named tensors (dataset statistics), kept alongside weights.
STATS_NAMES = ("gene_norm.mean", "gene_norm.std")


@dataclass
class Checkpoint:
    cfg: RunConfig
    params: dict[str, Tensor]
    gene_mean: np.ndarray
    gene_std: np.ndarray
    step: int = 0
    loss_history: list[float] = field(default_factory=list)


def save_checkpoint(ckpt: Checkpoint, out_dir: str) -> None:
    param_dir = os.path.join(out_dir, "params")
    os.makedirs(param_dir, exist_ok=True)
    save_config(ckpt.cfg, os.path.join(out_dir, "config.txt"))
    for name, tensor in ckpt.params.items():
        write_tensor(os.path.join(param_dir, f"{name}.mgit"), tensor.data)
    write_tensor(os.path.join(param_dir, f"{STATS_NAMES[0]}.mgit"), ckpt.gene_mean)
    write_tensor(os.path.join(param_dir, f"{STATS_NAMES[1]}.mgit"), ckpt.gene_std)
    with open(os.path.join(out_dir, "meta.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"step = {ckpt.step}\n")
        for i, loss in enumerate(ckpt.loss_history):
            fh.write(f"loss {i} {loss!r}\n")


def load_checkpoint(out_dir: str) -> Checkpoint:
    cfg = load_config(os.path.join(out_dir, "config.txt"))
    param_dir = os.path.join(out_dir, "params")
    params: dict[str, Tensor] = {}
    stats: dict[str, np.ndarray] = {}
    for fname in sorted(os.listdir(param_dir)):
        if not fname.endswith(".mgit"):
            continue
        name = fname[: -len(".mgit")]
        arr = read_tensor(os.path.join(param_dir, fname))
        if name in STATS_NAMES:
            stats[name] = arr
        else:
            params[name] = Tensor(arr, requires_grad=True)
    step = 0
    history: list[float] = []
    meta_path = os.path.join(out_dir, "meta.txt")
    if os.path.exists(meta_path):
        with open(meta_path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line.startswith("step"):
                    step = int(line.split("=")[1])
                elif line.startswith("loss "):
                    history.append(float(line.split()[2]))
    return Checkpoint(cfg, params, stats[STATS_NAMES[0]], stats[STATS_NAMES[1]],
                      step=step, loss_history=history)
