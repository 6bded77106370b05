"""Synthetic paired image/gene/mask samples, dataset persistence, batching.

Each sample draws lesion morphology (up to ``max_lesions`` ellipses),
renders them anti-aliased onto a noisy background, and emits a gene vector
as a fixed random linear mixture of the flattened morphology plus Gaussian
noise. The mixing matrix depends only on the master seed, so the image and
the gene vector of a pair carry the same underlying signal by construction.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass

import numpy as np

from .config import DataConfig
from .tensor_io import read_tensor, write_tensor

_MIXER_STREAM = 999983  # rng stream tag for the mixing matrix
_FIELDS_PER_LESION = 8  # cx, cy, a, b, cos, sin, intensity, area


@dataclass
class PairedSample:
    sample_id: str
    image: np.ndarray  # (1, H, W) in [0, 1]
    genes: np.ndarray  # (n_genes,)
    mask: np.ndarray   # (H, W) binary


@dataclass
class MorphologyParams:
    centers: np.ndarray     # (n_lesions, 2)
    radii: np.ndarray       # (n_lesions, 2), each >= 2
    angles: np.ndarray      # (n_lesions,)
    intensities: np.ndarray  # (n_lesions,)


@dataclass
class ManifestEntry:
    sample_id: str
    image_path: str
    genes_path: str
    mask_path: str
    split: str


def morphology_dim(cfg: DataConfig) -> int:
    return cfg.max_lesions * _FIELDS_PER_LESION + 1


def sample_morphology(rng: np.random.Generator, cfg: DataConfig) -> MorphologyParams:
    H = cfg.image_size
    n = int(rng.integers(1, cfg.max_lesions + 1))
    # radii >= 2 px, capped so lesions always fit inside the image; the wide
    # range keeps lesion size/area variance high (the cross-modal signal),
    # and the floor keeps every lesion several patches wide
    r_min = max(2.0, min(3.5, H / 8.0))
    r_max = max(r_min + 0.01, min(H / 5.0, H / 2.0 - 1.5))
    # intensity doubles as an *infiltration factor* shared by the sample's
    # lesions: rendering draws every lesion at a fixed contrast but scales
    # its visible halo by halo_scale(intensity), while the mask stays the
    # true ellipse support. The factor is recoverable from the paired gene
    # vector, not from the image, which is what gives the gene-conditioned
    # decoder an honest edge over an image-only model.
    phi = rng.uniform(0.25, 0.85)
    radii = rng.uniform(r_min, r_max, size=(n, 2))
    margin = radii.max(axis=1) * max(1.0, halo_scale(phi)) + 1.0
    centers = np.stack(
        [rng.uniform(margin, H - margin), rng.uniform(margin, H - margin)], axis=1
    )
    angles = rng.uniform(0.0, np.pi, size=n)
    intensities = np.full(n, phi)
    # canonical order (largest area first) so the flattened vector is a
    # well-defined function of the rendered morphology, not of draw order
    order = np.argsort(-(radii[:, 0] * radii[:, 1]), kind="stable")
    return MorphologyParams(centers[order], radii[order], angles[order],
                            intensities[order])


def halo_scale(intensity: float) -> float:
    """Visible-halo radius relative to the mask support, in [0.60, 1.40]."""
    return 0.2667 + 1.3333 * intensity


def flatten_morphology(m: MorphologyParams, cfg: DataConfig) -> np.ndarray:
    """Zero-padded morphology feature vector driving the gene mixture."""
    H = float(cfg.image_size)
    theta = np.zeros(morphology_dim(cfg))
    for i in range(len(m.angles)):
        a, b = m.radii[i]
        base = i * _FIELDS_PER_LESION
        theta[base : base + _FIELDS_PER_LESION] = [
            m.centers[i, 0] / H,
            m.centers[i, 1] / H,
            a / H,
            b / H,
            np.cos(2 * m.angles[i]),
            np.sin(2 * m.angles[i]),
            m.intensities[i],
            np.pi * a * b / (H * H),
        ]
    theta[-1] = len(m.angles) / cfg.max_lesions
    return theta


def render_sample(m: MorphologyParams, rng: np.random.Generator,
                  cfg: DataConfig) -> tuple[np.ndarray, np.ndarray]:
    """Anti-aliased ellipse rendering; the mask is the exact ellipse support."""
    H = cfg.image_size
    yy, xx = np.meshgrid(np.arange(H) + 0.5, np.arange(H) + 0.5, indexing="ij")
    image = cfg.background_noise * rng.random((H, H))
    mask = np.zeros((H, H), dtype=np.float64)
    for i in range(len(m.angles)):
        cy, cx = m.centers[i]
        a, b = m.radii[i]
        c, s = np.cos(m.angles[i]), np.sin(m.angles[i])
        u = (yy - cy) * c + (xx - cx) * s
        v = -(yy - cy) * s + (xx - cx) * c
        r = np.sqrt((u / a) ** 2 + (v / b) ** 2)
        mask = np.maximum(mask, (r <= 1.0).astype(np.float64))
        # the visible halo is the support scaled by the infiltration factor,
        # drawn at fixed contrast with a ~1-pixel anti-aliased edge; the
        # brightness deliberately carries no information about the factor
        h = halo_scale(m.intensities[i])
        r_vis = np.sqrt((u / (a * h)) ** 2 + (v / (b * h)) ** 2)
        soft = np.clip((1.0 - r_vis) * min(a * h, b * h) + 0.5, 0.0, 1.0)
        image += 0.55 * soft
    return np.clip(image, 0.0, 1.0)[None, :, :], mask


def mixing_matrix(master_seed: int, cfg: DataConfig) -> np.ndarray:
    k = morphology_dim(cfg)
    rng = np.random.default_rng([master_seed, _MIXER_STREAM])
    return rng.normal(0.0, 1.0 / np.sqrt(k), size=(cfg.n_genes, k))


def gen_synthetic_pair(master_seed: int, index: int, cfg: DataConfig,
                       mixer: np.ndarray | None = None) -> PairedSample:
    """Deterministic sample #index under the given master seed."""
    if mixer is None:
        mixer = mixing_matrix(master_seed, cfg)
    rng = np.random.default_rng([master_seed, index])
    morph = sample_morphology(rng, cfg)
    image, mask = render_sample(morph, rng, cfg)
    theta = flatten_morphology(morph, cfg)
    genes = mixer @ theta + cfg.noise_sigma * rng.normal(size=cfg.n_genes)
    return PairedSample(f"s{index:05d}", image, genes, mask)


def _split_of(sample_ids: list[str], master_seed: int,
              train_frac: float = 0.8) -> dict[str, str]:
    """Deterministic 80/20 assignment: order ids by a seeded hash, cut at 80%."""
    def digest(sid: str) -> bytes:
        return hashlib.sha256(f"{master_seed}:{sid}".encode()).digest()

    ranked = sorted(sample_ids, key=digest)
    n_train = round(train_frac * len(sample_ids))
    train = set(ranked[:n_train])
    return {sid: ("train" if sid in train else "test") for sid in sample_ids}


def build_dataset(cfg: DataConfig, n_samples: int, master_seed: int,
                  out_dir: str) -> str:
    """Write sample tensor files plus the tab-separated manifest; returns its path."""
    if n_samples < 10:
        raise ValueError("need at least 10 samples for a meaningful split")
    sample_dir = os.path.join(out_dir, "samples")
    os.makedirs(sample_dir, exist_ok=True)
    mixer = mixing_matrix(master_seed, cfg)
    ids = [f"s{i:05d}" for i in range(n_samples)]
    split = _split_of(ids, master_seed)
    manifest_path = os.path.join(out_dir, "manifest.tsv")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        for i, sid in enumerate(ids):
            sample = gen_synthetic_pair(master_seed, i, cfg, mixer=mixer)
            paths = {
                kind: os.path.join(sample_dir, f"{sid}.{kind}.mgit")
                for kind in ("image", "genes", "mask")
            }
            write_tensor(paths["image"], sample.image)
            write_tensor(paths["genes"], sample.genes)
            write_tensor(paths["mask"], sample.mask)
            fh.write("\t".join([sid, paths["image"], paths["genes"], paths["mask"],
                                split[sid]]) + "\n")
    return manifest_path


def read_manifest(path: str, split: str | None = None) -> list[ManifestEntry]:
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            sid, img, genes, mask, tag = line.split("\t")
            if split is None or tag == split:
                entries.append(ManifestEntry(sid, img, genes, mask, tag))
    if split is not None and not entries:
        raise ValueError(f"split {split!r} is empty in {path}")
    return entries


def load_sample(entry: ManifestEntry) -> PairedSample:
    return PairedSample(
        entry.sample_id,
        read_tensor(entry.image_path),
        read_tensor(entry.genes_path),
        read_tensor(entry.mask_path),
    )


def gene_standardization(entries: list[ManifestEntry]) -> tuple[np.ndarray, np.ndarray]:
    """Per-gene mean/std over a (training) split; std floored at 1e-8."""
    stacked = np.stack([read_tensor(e.genes_path) for e in entries])
    return stacked.mean(axis=0), np.maximum(stacked.std(axis=0), 1e-8)


def standardize_genes(genes: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return (genes - mean) / std


def batch_iter(entries: list[ManifestEntry], batch_size: int, epoch_seed: int,
               drop_last: bool):
    """Seeded shuffle, then fixed-size batches of manifest entries."""
    if not entries:
        raise ValueError("cannot batch an empty split")
    if batch_size > len(entries):
        raise ValueError("batch size exceeds split size")
    order = np.random.default_rng(epoch_seed).permutation(len(entries))
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        if drop_last and len(idx) < batch_size:
            return
        yield [entries[i] for i in idx]
