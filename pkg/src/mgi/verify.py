"""Self-contained verification suite behind the ``verify`` CLI subcommand.

Each check runs an independent oracle (finite differences, unrolled
recurrence, direct formulas, byte-level round-trips) against the
implementation and reports one line with the worst observed error.
Deliberately small model shapes keep the full suite fast.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, replace

import numpy as np

from . import align, data, fusion, gene, image, ops, scan, tensor_io, train
from .autodiff import Tensor, make_node
from .config import (AlignConfig, DataConfig, DecoderConfig, GeneEncoderConfig,
                     RunConfig, ViTConfig)
from .gradcheck import finite_diff_check

GRAD_TOL = 1e-4
SCAN_TOL = 1e-10


@dataclass
class CheckResult:
    name: str
    passed: bool
    max_err: float
    note: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        note = f"\t{self.note}" if self.note else ""
        return f"{self.name}\t{status}\tmax_err={self.max_err:.3e}{note}"


def tiny_config(seed: int = 0) -> RunConfig:
    cfg = RunConfig(
        gene=GeneEncoderConfig(n_genes=24, chunk_size=6, d_model=6, d_inner=8,
                               d_state=3, conv_kernel=3, depth=1),
        vit=ViTConfig(image_size=8, patch_size=4, d_model=6, n_heads=2,
                      mlp_hidden=8, depth=1),
        align=AlignConfig(d_feat=5),
        decoder=DecoderConfig(up_channels_mid=4, up_channels=3, mlp_hidden=6, depth=1),
        data=DataConfig(image_size=8, n_genes=24, n_train=8, n_test=2),
        seed=seed,
    )
    cfg.validate()
    return cfg


def _tiny_samples(cfg: RunConfig, seed: int, n: int = 2) -> list[data.PairedSample]:
    mixer = data.mixing_matrix(seed, cfg.data)
    return [data.gen_synthetic_pair(seed, i, cfg.data, mixer=mixer) for i in range(n)]


def check_encoder_gradients(seed: int, variant: str,
                            max_coords: int = 6) -> CheckResult:
    """Contrastive loss through both encoders + heads vs finite differences."""
    cfg = tiny_config(seed)
    cfg.align.loss_variant = variant
    rng = np.random.default_rng(seed)
    params = train.init_pretrain_params(cfg, rng)
    samples = _tiny_samples(cfg, seed)
    mean = np.zeros(cfg.gene.n_genes)
    std = np.ones(cfg.gene.n_genes)

    def f():
        return train.contrastive_batch_loss(samples, params, cfg, mean, std)

    report = finite_diff_check(f, params, max_coords_per_tensor=max_coords,
                               rng=np.random.default_rng(seed + 7))
    return CheckResult(f"grad.encoders.{variant}.seed{seed}", report.worst < GRAD_TOL,
                       report.worst, note=f"worst={report.worst_param()}")


def check_decoder_gradients(seed: int, max_coords: int = 6) -> CheckResult:
    """Dice loss through the fusion decoder vs finite differences."""
    cfg = tiny_config(seed)
    rng = np.random.default_rng(seed + 3)
    dec_params = fusion.init_decoder_params(cfg.decoder, cfg.vit.d_model, rng)
    T = cfg.gene.n_tokens
    N = cfg.vit.n_tokens
    genes = Tensor(rng.normal(size=(T, cfg.gene.d_model)))
    img = Tensor(rng.normal(size=(N, cfg.vit.d_model)))
    mask = (rng.random((cfg.vit.image_size, cfg.vit.image_size)) < 0.3).astype(float)
    grid = cfg.vit.grid
    out_hw = (cfg.vit.image_size, cfg.vit.image_size)

    def f():
        logits = fusion.decode_mask(genes, img, dec_params, cfg.decoder, grid, out_hw)
        return fusion.dice_loss(logits, mask)

    report = finite_diff_check(f, dec_params, max_coords_per_tensor=max_coords,
                               rng=np.random.default_rng(seed + 11))
    return CheckResult(f"grad.decoder.seed{seed}", report.worst < GRAD_TOL,
                       report.worst, note=f"worst={report.worst_param()}")


def random_scan_inputs(rng: np.random.Generator, T: int, di: int, ds: int):
    delta = rng.uniform(0.01, 1.0, size=(T, di))
    A = -rng.uniform(0.2, 3.0, size=(di, ds))
    abar = np.exp(delta[:, :, None] * A[None])
    bx = rng.normal(size=(T, di, ds))
    C = rng.normal(size=(T, ds))
    D = rng.normal(size=di)
    x = rng.normal(size=(T, di))
    return abar, bx, C, D, x


def check_scan_equivalence(n_instances: int = 100, seed: int = 0) -> CheckResult:
    """Parallel Blelloch scan vs the unrolled sequential oracle."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        T = int(rng.integers(1, 513))
        di = int(rng.integers(1, 17))
        ds = int(rng.integers(1, 9))
        abar, bx, C, D, x = random_scan_inputs(rng, T, di, ds)
        y_seq = ops.selective_scan(abar, bx, C, D, x, parallel=False).data
        y_par = ops.selective_scan(abar, bx, C, D, x, parallel=True).data
        worst = max(worst, float(np.max(np.abs(y_seq - y_par))))
    return CheckResult("scan.parallel_vs_sequential", worst < SCAN_TOL, worst,
                       note=f"instances={n_instances}")


def check_scan_causality(seed: int = 0) -> CheckResult:
    """Perturbing the driven input at t must leave outputs before t unchanged."""
    rng = np.random.default_rng(seed)
    T, di, ds = 16, 3, 2
    abar, bx, C, D, x = random_scan_inputs(rng, T, di, ds)
    base = ops.selective_scan(abar, bx, C, D, x).data
    worst = 0.0
    for t in (1, T // 2, T - 1):
        bx2, x2 = bx.copy(), x.copy()
        bx2[t] += 1.0
        x2[t] += 1.0
        pert = ops.selective_scan(abar, bx2, C, D, x2).data
        worst = max(worst, float(np.max(np.abs(pert[:t] - base[:t]))))
    return CheckResult("scan.causality", worst == 0.0, worst)


def check_loss_analytics() -> CheckResult:
    """Closed-form contrastive-loss cases and invariances."""
    worst = 0.0
    # B=1, matched pair: numerator equals the whole denominator
    v = np.array([[0.6, 0.8]])
    S1 = align.similarity_matrix(Tensor(v), Tensor(v), tau=1.0)
    worst = max(worst, abs(align.contrastive_loss(S1, "paper").item()))
    # B=2, all four cosines equal -> each softmax term is 1/4
    S2 = Tensor(np.full((2, 2), 3.7))
    worst = max(worst, abs(align.contrastive_loss(S2, "paper").item() - np.log(4.0)))
    # paired permutation invariance, both variants
    rng = np.random.default_rng(5)
    S = rng.normal(size=(4, 4))
    perm = rng.permutation(4)
    for variant in ("paper", "symmetric"):
        a = align.contrastive_loss(Tensor(S), variant).item()
        b = align.contrastive_loss(Tensor(S[np.ix_(perm, perm)]), variant).item()
        worst = max(worst, abs(a - b))
    return CheckResult("loss.analytics", worst < 1e-9, worst)


def check_softmax_rows(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    x = rng.normal(scale=50.0, size=(6, 9))
    y = ops.softmax(Tensor(x), axis=1).data
    worst = float(np.max(np.abs(y.sum(axis=1) - 1.0)))
    in_range = bool(np.all((y >= 0.0) & (y <= 1.0)))
    return CheckResult("softmax.row_sums", worst < 1e-9 and in_range, worst)


def check_io_roundtrip(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    ok = True
    for shape in ((3, 4), (2, 2), (7,), (2, 3, 5)):
        arr = rng.normal(size=shape)
        back = tensor_io.tensor_from_bytes(tensor_io.tensor_bytes(arr))
        ok &= bool(np.array_equal(arr, back)) and back.dtype == np.float64
    for blob, exc in (
        (b"XXXX" + b"\x00" * 20, tensor_io.BadMagicError),
        (tensor_io.tensor_bytes(rng.normal(size=3))[:-4], tensor_io.TruncatedFileError),
    ):
        try:
            tensor_io.tensor_from_bytes(blob)
            ok = False
        except exc:
            pass
    return CheckResult("io.mgit_roundtrip", ok, 0.0)


def check_negative_control(seed: int = 0) -> CheckResult:
    """A deliberately wrong backward rule must be caught by the oracle."""
    x = Tensor(np.array([0.3, -0.7, 1.1]), requires_grad=True)

    def broken_square(t):
        out = t.data * t.data
        return make_node(out, (t,), lambda g: (g * t.data,))  # missing factor 2

    def f():
        return ops.tsum(broken_square(x))

    report = finite_diff_check(f, {"x": x})
    return CheckResult("gradcheck.negative_control", report.worst > GRAD_TOL,
                       report.worst, note="expected failure detected")


def run_verification(seeds: int = 5, scan_instances: int = 100,
                     stream=None) -> tuple[bool, str]:
    """Run every check; returns (all_passed, report_text)."""
    results: list[CheckResult] = []
    for s in range(seeds):
        results.append(check_encoder_gradients(s, "paper"))
        results.append(check_encoder_gradients(s, "symmetric"))
        results.append(check_decoder_gradients(s))
    results.append(check_scan_equivalence(scan_instances))
    results.append(check_scan_causality())
    results.append(check_loss_analytics())
    results.append(check_softmax_rows())
    results.append(check_io_roundtrip())
    results.append(check_negative_control())

    buf = io.StringIO()
    for r in results:
        line = r.line()
        buf.write(line + "\n")
        if stream is not None:
            print(line, file=stream)
    return all(r.passed for r in results), buf.getvalue()
