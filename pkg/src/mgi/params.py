"""Shared helpers for named parameter dictionaries."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


def normal_init(rng: np.random.Generator, shape, std: float = 0.02) -> Tensor:
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)


def zeros_init(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


class ParamView:
    """Prefix view into a flat name -> Tensor dict."""

    def __init__(self, params: dict[str, Tensor], prefix: str = ""):
        self.params = params
        self.prefix = prefix

    def __getitem__(self, name: str) -> Tensor:
        return self.params[self.prefix + name]

    def view(self, suffix: str) -> "ParamView":
        return ParamView(self.params, self.prefix + suffix)


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.zero_grad()
