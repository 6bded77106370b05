"""Acceptance gate: one test per binding criterion, at the stated tolerances.

These are end-to-end and slow (the pretraining fixture alone runs the full
default 20-epoch schedule). Run them explicitly:

    python3 -m pytest tests/test_acceptance.py -v

Everything here uses the *default* configuration and public entry points;
nothing is retuned per-test.
"""

import os

import numpy as np
import pytest

from mgi import data, train, verify
from mgi.config import RunConfig
from mgi.tensor_io import read_tensor, tensor_bytes, write_tensor


@pytest.fixture(scope="session")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="session")
def dataset(workdir):
    """Default synthetic dataset: 512 train + 128 test pairs, master seed 0."""
    cfg = RunConfig()
    n = cfg.data.n_train + cfg.data.n_test
    manifest = data.build_dataset(cfg.data, n, cfg.seed, str(workdir / "data"))
    return manifest


@pytest.fixture(scope="session")
def pretrained(workdir, dataset):
    """Default-config contrastive pretraining, seed 0."""
    cfg = RunConfig()
    out = str(workdir / "pretrain")
    ckpt = train.pretrain(cfg, dataset, out, log=lambda s: None)
    return out, ckpt


def _finetune_dice(workdir, dataset, pretrain_dir, seed, zero_genes):
    cfg = RunConfig()
    cfg.seed = seed
    tag = f"finetune_s{seed}" + ("_zero" if zero_genes else "")
    out = str(workdir / tag)
    train.finetune(cfg, pretrain_dir, dataset, out,
                   zero_genes=zero_genes, log=lambda s: None)
    metrics = train.evaluate(out, dataset, "test", zero_genes=zero_genes)
    return metrics["mean_dice"]


class TestGradientIntegrity:
    def test_verification_suite_five_seeds(self):
        ok, report = verify.run_verification(seeds=5)
        assert ok, report


class TestScanEquivalence:
    def test_parallel_matches_sequential_100_instances(self):
        res = verify.check_scan_equivalence(n_instances=100)
        assert res.max_err < 1e-10, res

    def test_causality_exact(self):
        res = verify.check_scan_causality()
        assert res.max_err == 0.0, res


class TestLossAnalytics:
    def test_single_pair_zero(self):
        from mgi import align
        from mgi.autodiff import Tensor
        v = np.array([[0.6, 0.8]])
        S = align.similarity_matrix(Tensor(v), Tensor(v), tau=0.07)
        assert abs(align.contrastive_loss(S, "paper").item()) <= 1e-12

    def test_two_by_two_equal_cosines_log4(self):
        from mgi import align
        from mgi.autodiff import Tensor
        S = Tensor(np.full((2, 2), 0.3 / 0.07))
        got = align.contrastive_loss(S, "paper").item()
        assert abs(got - np.log(4.0)) <= 1e-9

    @pytest.mark.parametrize("variant", ["paper", "symmetric"])
    def test_batch_permutation_invariance(self, variant):
        from mgi import align
        from mgi.autodiff import Tensor
        rng = np.random.default_rng(0)
        S = rng.normal(size=(8, 8))
        perm = rng.permutation(8)
        a = align.contrastive_loss(Tensor(S), variant).item()
        b = align.contrastive_loss(Tensor(S[np.ix_(perm, perm)]), variant).item()
        assert abs(a - b) <= 1e-12


class TestContrastiveLearningWorks:
    def test_loss_halves(self, pretrained):
        _, ckpt = pretrained
        hist = ckpt.loss_history
        assert hist[-1] < 0.5 * hist[0], hist

    def test_test_split_retrieval(self, pretrained, dataset):
        out, _ = pretrained
        m = train.evaluate(out, dataset, "test")
        assert m["n_samples"] == 128.0
        assert m["recall@1_gene_to_image"] >= 0.25, m
        assert m["recall@5_gene_to_image"] >= 0.60, m


class TestFusionImprovesSegmentation:
    def test_dice_and_gene_ablation_three_seeds(self, workdir, dataset, pretrained):
        pre_dir, _ = pretrained
        full, ablated = [], []
        for seed in (0, 1, 2):
            full.append(_finetune_dice(workdir, dataset, pre_dir, seed, False))
            ablated.append(_finetune_dice(workdir, dataset, pre_dir, seed, True))
        mean_full = float(np.mean(full))
        mean_abl = float(np.mean(ablated))
        assert mean_full >= 0.75, (full, ablated)
        assert mean_full - mean_abl >= 0.03, (full, ablated)


class TestFormatAndDeterminism:
    def test_container_roundtrip_bitwise(self, tmp_path):
        rng = np.random.default_rng(1)
        for shape in [(), (7,), (3, 5), (1, 64, 64)]:
            arr = rng.normal(size=shape)
            path = tmp_path / "t.mgit"
            write_tensor(path, arr)
            back = read_tensor(path)
            assert np.asarray(arr).shape == back.shape
            assert np.asarray(arr, dtype=np.float64).tobytes() == back.tobytes()
            assert tensor_bytes(arr) == tensor_bytes(back)

    def test_eval_twice_identical_report(self, pretrained, dataset):
        out, _ = pretrained
        a = train.metrics_report(train.evaluate(out, dataset, "test"))
        b = train.metrics_report(train.evaluate(out, dataset, "test"))
        assert a == b
