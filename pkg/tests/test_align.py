import numpy as np
import pytest

from mgi import align
from mgi.autodiff import ShapeError, Tensor, backward
from mgi.gradcheck import finite_diff_check


def unit_rows(rng, B, d):
    v = rng.normal(size=(B, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


class TestMixedPool:
    def test_equal_tokens_pass_through(self):
        v = np.array([1.0, -2.0, 0.5])
        tokens = Tensor(np.tile(v, (4, 1)))
        assert np.allclose(align.mixed_pool(tokens).data, v)

    def test_zero_and_positive_token(self):
        v = np.array([2.0, 4.0])
        tokens = Tensor(np.stack([np.zeros(2), v]))
        assert np.allclose(align.mixed_pool(tokens).data, 0.75 * v)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(0)
        tokens = rng.normal(size=(6, 5))
        a = align.mixed_pool(Tensor(tokens)).data
        b = align.mixed_pool(Tensor(tokens[rng.permutation(6)])).data
        assert np.max(np.abs(a - b)) < 1e-12  # summation order may differ

    def test_empty_rejected(self):
        with pytest.raises(ShapeError):
            align.mixed_pool(Tensor(np.zeros(3)))


class TestProjectFeatures:
    def test_unit_norm_contract(self):
        rng = np.random.default_rng(1)
        out = align.project_features(Tensor(rng.normal(size=4)),
                                     Tensor(rng.normal(size=(4, 6))))
        assert abs(np.linalg.norm(out.data) - 1.0) < 1e-9

    def test_scale_invariance(self):
        rng = np.random.default_rng(2)
        pooled = rng.normal(size=4)
        w = Tensor(rng.normal(size=(4, 6)))
        a = align.project_features(Tensor(pooled), w).data
        b = align.project_features(Tensor(3.5 * pooled), w).data
        assert np.max(np.abs(a - b)) < 1e-12

    def test_against_normalize_oracle(self):
        rng = np.random.default_rng(3)
        pooled, w = rng.normal(size=4), rng.normal(size=(4, 6))
        got = align.project_features(Tensor(pooled), Tensor(w)).data
        raw = pooled @ w
        assert np.max(np.abs(got - raw / np.linalg.norm(raw))) < 1e-12

    def test_degenerate_zero_projection_raises(self):
        with pytest.raises(ValueError):
            align.project_features(Tensor(np.ones(3)), Tensor(np.zeros((3, 4))))


class TestSimilarityMatrix:
    def test_self_similarity_diagonal(self):
        rng = np.random.default_rng(4)
        v = unit_rows(rng, 3, 5)
        S = align.similarity_matrix(Tensor(v), Tensor(v), tau=1.0).data
        assert np.allclose(np.diag(S), 1.0, atol=1e-12)

    def test_orthogonal_sets(self):
        I = Tensor(np.eye(4)[:2])
        G = Tensor(np.eye(4)[2:])
        S = align.similarity_matrix(I, G, tau=0.5).data
        assert np.array_equal(S, np.zeros((2, 2)))

    def test_against_dot_product_oracle(self):
        rng = np.random.default_rng(5)
        I, G = unit_rows(rng, 4, 6), unit_rows(rng, 4, 6)
        tau = 0.07
        S = align.similarity_matrix(Tensor(I), Tensor(G), tau).data
        assert np.max(np.abs(S - I @ G.T / tau)) < 1e-12
        assert np.all(np.abs(S * tau) <= 1.0 + 1e-9)

    def test_nonpositive_tau_rejected(self):
        with pytest.raises(ValueError):
            align.similarity_matrix(Tensor(np.eye(2)), Tensor(np.eye(2)), tau=0.0)


def paper_loss_oracle(S):
    B = S.shape[0]
    return float(np.log(np.exp(S).sum()) - np.trace(S) / B)


def symmetric_loss_oracle(S):
    B = S.shape[0]
    def ce(M):
        lse = np.log(np.exp(M - M.max(axis=1, keepdims=True)).sum(axis=1)) \
            + M.max(axis=1)
        return float(np.mean(lse - np.diag(M)))
    return 0.5 * (ce(S) + ce(S.T))


class TestContrastiveLoss:
    def test_single_matched_pair_is_exactly_zero(self):
        v = np.array([[0.6, 0.8]])
        S = align.similarity_matrix(Tensor(v), Tensor(v), tau=0.07)
        assert align.contrastive_loss(S, "paper").item() == pytest.approx(0.0, abs=1e-12)

    def test_two_by_two_equal_cosines(self):
        S = Tensor(np.full((2, 2), 1.9))
        assert align.contrastive_loss(S, "paper").item() == pytest.approx(np.log(4.0), abs=1e-9)

    @pytest.mark.parametrize("variant,oracle", [("paper", paper_loss_oracle),
                                                ("symmetric", symmetric_loss_oracle)])
    def test_against_direct_formula_oracle(self, variant, oracle):
        rng = np.random.default_rng(6)
        S = rng.normal(size=(5, 5))
        got = align.contrastive_loss(Tensor(S), variant).item()
        assert got == pytest.approx(oracle(S), abs=1e-10)

    @pytest.mark.parametrize("variant", ["paper", "symmetric"])
    def test_batch_permutation_invariance(self, variant):
        rng = np.random.default_rng(7)
        S = rng.normal(size=(6, 6))
        perm = rng.permutation(6)
        a = align.contrastive_loss(Tensor(S), variant).item()
        b = align.contrastive_loss(Tensor(S[np.ix_(perm, perm)]), variant).item()
        assert a == pytest.approx(b, abs=1e-12)

    def test_prenorm_rescaling_leaves_loss_unchanged(self):
        rng = np.random.default_rng(8)
        pooled = [rng.normal(size=4) for _ in range(3)]
        w = Tensor(rng.normal(size=(4, 5)))
        feats = lambda scale: Tensor(np.stack(
            [align.project_features(Tensor(s * p), w).data for s, p in zip(scale, pooled)]))
        G = Tensor(unit_rows(rng, 3, 5))
        a = align.contrastive_loss(align.similarity_matrix(feats([1, 1, 1]), G, 0.07), "paper")
        b = align.contrastive_loss(align.similarity_matrix(feats([2, 9, 0.3]), G, 0.07), "paper")
        assert a.item() == pytest.approx(b.item(), abs=1e-12)

    def test_symmetric_minimized_at_ideal_similarity(self):
        tau = 0.25
        B = 4
        ideal = (2 * np.eye(B) - 1.0) / tau
        base = align.contrastive_loss(Tensor(ideal), "symmetric").item()
        rng = np.random.default_rng(9)
        for _ in range(25):
            pert = ideal + rng.uniform(-0.2, 0.2, size=(B, B)) / tau
            pert = np.clip(pert, -1 / tau, 1 / tau)
            assert align.contrastive_loss(Tensor(pert), "symmetric").item() >= base - 1e-12

    @pytest.mark.parametrize("variant", ["paper", "symmetric"])
    def test_gradient_wrt_similarity_matches_finite_differences(self, variant):
        rng = np.random.default_rng(10)
        S = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
        report = finite_diff_check(lambda: align.contrastive_loss(S, variant), {"S": S})
        assert report.worst < 1e-6, report.lines()

    def test_nonsquare_rejected(self):
        with pytest.raises(ShapeError):
            align.contrastive_loss(Tensor(np.zeros((2, 3))), "paper")

    def test_unknown_variant_rejected(self):
        with pytest.raises(ValueError):
            align.contrastive_loss(Tensor(np.zeros((2, 2))), "clip")
