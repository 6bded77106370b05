import numpy as np
import pytest

from mgi import data
from mgi.config import DataConfig


CFG = DataConfig(image_size=32, n_genes=64, noise_sigma=0.1, max_lesions=3)


class TestMorphology:
    def test_lesion_count_range(self):
        counts = set()
        for i in range(50):
            m = data.sample_morphology(np.random.default_rng(i), CFG)
            counts.add(len(m.angles))
            assert m.radii.min() >= 2.0
        assert counts == {1, 2, 3}

    def test_lesions_fit_inside_image(self):
        for i in range(50):
            m = data.sample_morphology(np.random.default_rng(i), CFG)
            margin = m.radii.max(axis=1)
            assert np.all(m.centers - margin[:, None] >= 0.0)
            assert np.all(m.centers + margin[:, None] <= CFG.image_size)

    def test_tiny_image_still_valid(self):
        tiny = DataConfig(image_size=8, n_genes=16)
        m = data.sample_morphology(np.random.default_rng(0), tiny)
        assert np.all(m.radii >= 2.0)

    def test_flatten_dimension_and_padding(self):
        m = data.sample_morphology(np.random.default_rng(3), CFG)
        theta = data.flatten_morphology(m, CFG)
        assert theta.shape == (data.morphology_dim(CFG),)
        n = len(m.angles)
        assert np.all(theta[n * 8 : -1] == 0.0)
        assert theta[-1] == n / CFG.max_lesions


class TestRender:
    def test_image_range_and_shapes(self):
        rng = np.random.default_rng(4)
        m = data.sample_morphology(rng, CFG)
        img, mask = data.render_sample(m, rng, CFG)
        assert img.shape == (1, 32, 32) and mask.shape == (32, 32)
        assert img.min() >= 0.0 and img.max() <= 1.0
        assert set(np.unique(mask)) <= {0.0, 1.0}

    def test_mask_pixel_count_tracks_ellipse_area(self):
        m = data.MorphologyParams(
            centers=np.array([[16.0, 16.0]]),
            radii=np.array([[6.0, 4.0]]),
            angles=np.array([0.3]),
            intensities=np.array([0.8]),
        )
        _, mask = data.render_sample(m, np.random.default_rng(0), CFG)
        area = np.pi * 6.0 * 4.0
        assert abs(mask.sum() - area) < 0.15 * area

    def test_mask_nonempty_and_brighter_than_background(self):
        rng = np.random.default_rng(5)
        m = data.sample_morphology(rng, CFG)
        img, mask = data.render_sample(m, rng, CFG)
        assert mask.sum() > 0
        inside = img[0][mask > 0].mean()
        outside = img[0][mask == 0].mean()
        assert inside > outside + 0.2


class TestGenSyntheticPair:
    def test_deterministic_per_index(self):
        a = data.gen_synthetic_pair(7, 3, CFG)
        b = data.gen_synthetic_pair(7, 3, CFG)
        assert np.array_equal(a.image, b.image)
        assert np.array_equal(a.genes, b.genes)
        assert np.array_equal(a.mask, b.mask)

    def test_distinct_across_indices_and_seeds(self):
        a = data.gen_synthetic_pair(7, 3, CFG)
        b = data.gen_synthetic_pair(7, 4, CFG)
        c = data.gen_synthetic_pair(8, 3, CFG)
        assert not np.array_equal(a.genes, b.genes)
        assert not np.array_equal(a.genes, c.genes)

    def test_noiseless_genes_are_exact_linear_mixture(self):
        cfg = DataConfig(image_size=32, n_genes=64, noise_sigma=0.0)
        pair = data.gen_synthetic_pair(1, 0, cfg)
        mixer = data.mixing_matrix(1, cfg)
        # recover theta by least squares; residual must vanish
        theta, res, rank, _ = np.linalg.lstsq(mixer, pair.genes, rcond=None)
        assert rank == data.morphology_dim(cfg)
        recon = mixer @ theta
        assert np.max(np.abs(recon - pair.genes)) < 1e-9

    def test_genes_linearly_predict_morphology(self):
        # R^2 of a linear probe genes -> lesion-count feature should be high:
        # the mixture is linear and the noise is small.
        cfg = DataConfig(image_size=32, n_genes=64, noise_sigma=0.1)
        mixer = data.mixing_matrix(11, cfg)
        G, y = [], []
        for i in range(200):
            pair = data.gen_synthetic_pair(11, i, cfg, mixer=mixer)
            rng = np.random.default_rng([11, i])
            theta = data.flatten_morphology(data.sample_morphology(rng, cfg), cfg)
            G.append(pair.genes)
            y.append(theta[-1])
        G, y = np.stack(G), np.array(y)
        coef, *_ = np.linalg.lstsq(np.c_[G, np.ones(len(y))], y, rcond=None)
        pred = np.c_[G, np.ones(len(y))] @ coef
        r2 = 1.0 - np.sum((y - pred) ** 2) / np.sum((y - y.mean()) ** 2)
        assert r2 > 0.9


class TestDatasetPersistence:
    def test_build_read_load_roundtrip(self, tmp_path):
        manifest = data.build_dataset(CFG, 20, 5, str(tmp_path))
        entries = data.read_manifest(manifest)
        assert len(entries) == 20
        sample = data.load_sample(entries[3])
        fresh = data.gen_synthetic_pair(5, 3, CFG)
        assert np.array_equal(sample.image, fresh.image)
        assert np.array_equal(sample.genes, fresh.genes)
        assert np.array_equal(sample.mask, fresh.mask)

    def test_split_is_80_20_and_seed_stable(self, tmp_path):
        manifest = data.build_dataset(CFG, 20, 5, str(tmp_path))
        train = data.read_manifest(manifest, "train")
        test = data.read_manifest(manifest, "test")
        assert len(train) == 16 and len(test) == 4
        assert {e.sample_id for e in train}.isdisjoint({e.sample_id for e in test})
        # same ids, same seed -> identical assignment
        ids = [f"s{i:05d}" for i in range(20)]
        assert data._split_of(ids, 5) == data._split_of(ids, 5)

    def test_split_changes_with_seed(self):
        ids = [f"s{i:05d}" for i in range(200)]
        assert data._split_of(ids, 1) != data._split_of(ids, 2)

    def test_too_few_samples_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            data.build_dataset(CFG, 5, 0, str(tmp_path))

    def test_missing_split_rejected(self, tmp_path):
        manifest = data.build_dataset(CFG, 12, 0, str(tmp_path))
        with pytest.raises(ValueError):
            data.read_manifest(manifest, "validation")


class TestStandardization:
    def test_statistics_match_numpy(self, tmp_path):
        manifest = data.build_dataset(CFG, 15, 2, str(tmp_path))
        entries = data.read_manifest(manifest, "train")
        mean, std = data.gene_standardization(entries)
        stacked = np.stack([data.load_sample(e).genes for e in entries])
        assert np.allclose(mean, stacked.mean(axis=0))
        assert np.allclose(std, stacked.std(axis=0))
        z = np.stack([data.standardize_genes(data.load_sample(e).genes, mean, std)
                      for e in entries])
        assert np.max(np.abs(z.mean(axis=0))) < 1e-10
        assert np.max(np.abs(z.std(axis=0) - 1.0)) < 1e-10

    def test_constant_gene_does_not_divide_by_zero(self):
        genes = np.array([1.0, 2.0])
        mean = np.array([1.0, 0.0])
        std = np.maximum(np.array([0.0, 1.0]), 1e-8)
        z = data.standardize_genes(genes, mean, std)
        assert np.all(np.isfinite(z))


class TestBatchIter:
    def entries(self, n):
        return [data.ManifestEntry(f"s{i}", "", "", "", "train") for i in range(n)]

    def test_epoch_covers_every_entry_once(self):
        entries = self.entries(10)
        seen = [e.sample_id for b in data.batch_iter(entries, 3, 0, drop_last=False)
                for e in b]
        assert sorted(seen) == sorted(e.sample_id for e in entries)

    def test_drop_last(self):
        batches = list(data.batch_iter(self.entries(10), 3, 0, drop_last=True))
        assert [len(b) for b in batches] == [3, 3, 3]

    def test_seeded_shuffle_reproducible_and_varying(self):
        entries = self.entries(12)
        a = [[e.sample_id for e in b] for b in data.batch_iter(entries, 4, 9, True)]
        b = [[e.sample_id for e in b] for b in data.batch_iter(entries, 4, 9, True)]
        c = [[e.sample_id for e in b] for b in data.batch_iter(entries, 4, 10, True)]
        assert a == b
        assert a != c

    def test_oversized_batch_rejected(self):
        with pytest.raises(ValueError):
            list(data.batch_iter(self.entries(3), 4, 0, drop_last=False))
