"""Synthetic stand-ins for landmark datasets.

Two generators:

* :func:`generate_synthetic_corpus` builds feature sets where every class
  ("landmark") owns a few descriptor cluster centres of decreasing
  prominence. A configurable fraction
  of each image's features is jittered around its class centres; the rest is
  uniform noise. Planted features get larger keypoint scales than noise, so
  scale- and statistics-based reduction have real signal to find.
* :func:`generate_synthetic_bags` draws already-quantized bags from a Zipf
  word distribution, for index-scale timing runs where k-means would be the
  bottleneck.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bow import BagOfWords
from .errors import ConfigError
from .evaluation import RetrievalGroundTruth
from .featureio import FeatureSet


@dataclass(frozen=True)
class SyntheticConfig:
    n_classes: int = 12
    images_per_class: int = 20
    features_per_image: int = 300
    dimensionality: int = 32
    clusters_per_class: int = 4
    cluster_decay: float = 0.6
    noise_fraction: float = 0.0
    center_spread: float = 10.0
    jitter: float = 0.05
    planted_scale: float = 4.0
    noise_scale: float = 1.5
    scale_sigma: float = 0.35
    train_fraction: float = 0.2
    image_size: float = 500.0
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 1 or self.images_per_class < 1:
            raise ConfigError("need at least one class and one image per class")
        if self.features_per_image < 0 or self.dimensionality < 1 or self.clusters_per_class < 1:
            raise ConfigError("features_per_image >= 0, dimensionality >= 1 and clusters_per_class >= 1 required")
        if not 0.0 <= self.noise_fraction <= 1.0:
            raise ConfigError(f"noise_fraction must lie in [0, 1], got {self.noise_fraction}")
        if not 0.0 <= self.train_fraction <= 1.0:
            raise ConfigError(f"train_fraction must lie in [0, 1], got {self.train_fraction}")
        if min(self.planted_scale, self.noise_scale) <= 0 or self.scale_sigma < 0:
            raise ConfigError("scales must be positive")
        if not 0.0 < self.cluster_decay <= 1.0:
            raise ConfigError("cluster_decay must lie in (0, 1]")
        if self.jitter < 0 or self.center_spread <= 0:
            raise ConfigError("jitter must be >= 0 and center_spread > 0")


@dataclass
class SyntheticCorpus:
    """Generated images plus everything needed to evaluate on them.

    ``ground_truth`` holds one record per test image: its positives are the
    other images of the same class, and the query image itself is ignored.
    """

    feature_sets: list[FeatureSet]
    labels: dict[str, str]
    train_ids: list[str]
    test_ids: list[str]
    ground_truth: list[RetrievalGroundTruth]
    centers: np.ndarray = field(repr=False)

    def subset(self, ids) -> list[FeatureSet]:
        wanted = set(ids)
        return [fs for fs in self.feature_sets if fs.image_id in wanted]

    @property
    def train(self) -> list[FeatureSet]:
        return self.subset(self.train_ids)

    @property
    def test(self) -> list[FeatureSet]:
        return self.subset(self.test_ids)


def image_name(c: int, i: int) -> str:
    return f"c{c:02d}_i{i:03d}"


def generate_synthetic_corpus(cfg: SyntheticConfig) -> SyntheticCorpus:
    rng = np.random.default_rng(cfg.seed)
    d, m = cfg.dimensionality, cfg.features_per_image
    centers = rng.normal(0.0, cfg.center_spread, size=(cfg.n_classes, cfg.clusters_per_class, d))
    lo = centers.min(axis=(0, 1))
    hi = centers.max(axis=(0, 1))
    # cluster j of a class is drawn with weight decay**j: one dominant structure per landmark
    weights = cfg.cluster_decay ** np.arange(cfg.clusters_per_class)
    weights /= weights.sum()
    n_noise = int(round(cfg.noise_fraction * m))
    n_planted = m - n_noise
    n_train = min(cfg.images_per_class, int(round(cfg.train_fraction * cfg.images_per_class)))
    if cfg.train_fraction > 0:
        n_train = max(n_train, 1)

    feature_sets, labels, train_ids, test_ids = [], {}, [], []
    members: dict[int, list[str]] = {}
    for c in range(cfg.n_classes):
        for i in range(cfg.images_per_class):
            image_id = image_name(c, i)
            which = rng.choice(cfg.clusters_per_class, size=n_planted, p=weights)
            planted = centers[c, which] + rng.normal(0.0, cfg.jitter, size=(n_planted, d))
            noise = rng.uniform(lo, hi, size=(n_noise, d))
            desc = np.concatenate([planted, noise])
            scales = np.concatenate(
                [
                    rng.lognormal(np.log(cfg.planted_scale), cfg.scale_sigma, size=n_planted),
                    rng.lognormal(np.log(cfg.noise_scale), cfg.scale_sigma, size=n_noise),
                ]
            )
            geometry = np.column_stack(
                [
                    rng.uniform(0, cfg.image_size, size=m),
                    rng.uniform(0, cfg.image_size, size=m),
                    scales,
                    rng.uniform(-np.pi, np.pi, size=m),
                ]
            ).astype(np.float32)
            # float32 rounding must not turn a tiny lognormal draw into 0
            geometry[:, 2] = np.maximum(geometry[:, 2], np.float32(1e-6))
            perm = rng.permutation(m)
            feature_sets.append(FeatureSet(image_id, geometry[perm], desc[perm].astype(np.float32), d))
            labels[image_id] = f"class{c:02d}"
            members.setdefault(c, []).append(image_id)
            (train_ids if i < n_train else test_ids).append(image_id)

    ground_truth = []
    class_of = {i: c for c, ids in members.items() for i in ids}
    for image_id in test_ids:
        c = class_of[image_id]
        positives = [j for j in members[c] if j != image_id]
        if positives:
            ground_truth.append(RetrievalGroundTruth(image_id, positives, {image_id}))
    return SyntheticCorpus(feature_sets, labels, train_ids, test_ids, ground_truth, centers)


def zipf_probabilities(vocab_size: int, exponent: float) -> np.ndarray:
    p = 1.0 / np.arange(1, vocab_size + 1, dtype=np.float64) ** exponent
    return p / p.sum()


def generate_synthetic_bags(
    n_images: int,
    tokens_per_image: int,
    vocab_size: int,
    zipf_exponent: float = 0.8,
    seed: int = 0,
    prefix: str = "img",
) -> list[BagOfWords]:
    """Bags whose tokens are i.i.d. Zipf draws over ``vocab_size`` words.

    Word ids are shuffled so popularity is not tied to id order.
    """
    if n_images < 0 or tokens_per_image < 0 or vocab_size < 1:
        raise ConfigError("invalid synthetic bag parameters")
    rng = np.random.default_rng(seed)
    relabel = rng.permutation(vocab_size)
    p = zipf_probabilities(vocab_size, zipf_exponent)
    tokens = relabel[rng.choice(vocab_size, size=(n_images, tokens_per_image), p=p)]
    tokens.sort(axis=1)
    width = len(str(max(n_images - 1, 0)))
    bags = []
    for i, row in enumerate(tokens):
        if len(row):
            starts = np.flatnonzero(np.r_[True, row[1:] != row[:-1]])
            words = row[starts]
            counts = np.diff(np.r_[starts, len(row)])
        else:
            words = counts = np.zeros(0, np.int64)
        bags.append(BagOfWords(f"{prefix}{i:0{width}d}", words, counts))
    return bags
