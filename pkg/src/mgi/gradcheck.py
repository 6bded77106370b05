"""Central finite-difference gradient oracle.

Independent of the reverse-mode machinery: it only re-evaluates the loss
function at perturbed parameter values and compares difference quotients
against whatever analytic gradients the caller produced.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, backward


@dataclass
class GradCheckReport:
    """Per-parameter max/mean relative error of analytic vs numeric gradients."""

    max_rel: dict[str, float] = field(default_factory=dict)
    mean_rel: dict[str, float] = field(default_factory=dict)
    checked_coords: dict[str, int] = field(default_factory=dict)

    @property
    def worst(self) -> float:
        return max(self.max_rel.values(), default=0.0)

    def worst_param(self) -> str:
        return max(self.max_rel, key=self.max_rel.get, default="")

    def lines(self) -> list[str]:
        return [
            f"{name}\tmax_rel={self.max_rel[name]:.3e}\tmean_rel={self.mean_rel[name]:.3e}"
            f"\tcoords={self.checked_coords[name]}"
            for name in sorted(self.max_rel)
        ]


def _rel_err(analytic: float, numeric: float, floor: float) -> float:
    denom = max(abs(analytic), abs(numeric), floor)
    if denom == 0.0:
        return 0.0
    return abs(analytic - numeric) / denom


def finite_diff_check(
    f,
    params: dict[str, Tensor],
    eps: float = 1e-5,
    max_coords_per_tensor: int | None = None,
    rng: np.random.Generator | None = None,
    rel_floor: float = 1e-5,
) -> GradCheckReport:
    """Compare analytic gradients of scalar ``f()`` against central differences.

    ``f`` must be a deterministic closure over ``params`` returning a scalar
    Tensor. Non-determinism is detected by evaluating twice and demanding
    bitwise equality. When ``max_coords_per_tensor`` is set, a deterministic
    random subset of coordinates is probed per tensor (full sweep otherwise).
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps {eps} outside [1e-7, 1e-3]")
    if rng is None:
        rng = np.random.default_rng(0)

    base = f()
    if float(base.data) != float(f().data):
        raise RuntimeError("f is not deterministic: repeated evaluation differs")

    for p in params.values():
        p.zero_grad()
    backward(base)
    analytic = {}
    for name, p in params.items():
        if p.grad is None:
            analytic[name] = np.zeros_like(p.data)
        else:
            analytic[name] = p.grad.copy()

    report = GradCheckReport()
    for name, p in params.items():
        flat = p.data.ravel()
        n = flat.size
        if max_coords_per_tensor is not None and n > max_coords_per_tensor:
            coords = np.sort(rng.choice(n, size=max_coords_per_tensor, replace=False))
        else:
            coords = np.arange(n)
        errs = []
        ag = analytic[name].ravel()
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(f().data)
            flat[i] = orig - eps
            f_minus = float(f().data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            errs.append(_rel_err(float(ag[i]), numeric, rel_floor))
        report.max_rel[name] = max(errs) if errs else 0.0
        report.mean_rel[name] = float(np.mean(errs)) if errs else 0.0
        report.checked_coords[name] = len(coords)
    return report
