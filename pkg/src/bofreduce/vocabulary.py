"""Visual vocabulary: k-means codebook construction and word assignment.

Vocabulary file (``.bofv``), little-endian: magic ``b"BOFV"``, version u32 = 1,
K u32, D u32, then K x D f32 centroids, row-major by word id.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, FormatError
from .featureio import FeatureSet

logger = logging.getLogger(__name__)

MAGIC = b"BOFV"
VERSION = 1
HEADER = struct.Struct("<4sIII")
HEADER_SIZE = HEADER.size  # 16

# upper bound on the (rows x K x D) difference tensor built per chunk
_CHUNK_ELEMENTS = 1 << 22


@dataclass(frozen=True, eq=False)
class Vocabulary:
    """K centroid descriptors; word id ``w`` is row ``w`` of ``centroids``."""

    centroids: np.ndarray

    def __post_init__(self):
        c = np.ascontiguousarray(self.centroids, dtype=np.float32)
        if c.ndim != 2 or c.shape[0] < 1 or c.shape[1] < 1:
            raise ConfigError(f"vocabulary needs shape (K>=1, D>=1), got {c.shape}")
        c.setflags(write=False)
        object.__setattr__(self, "centroids", c)

    @property
    def size(self) -> int:
        return self.centroids.shape[0]

    @property
    def dimensionality(self) -> int:
        return self.centroids.shape[1]

    def __len__(self) -> int:
        return self.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, Vocabulary):
            return NotImplemented
        return np.array_equal(self.centroids, other.centroids)

    __hash__ = None


@dataclass(frozen=True)
class KMeansConfig:
    """Clustering knobs.

    ``convergence_tolerance`` is on the relative inertia improvement between
    consecutive iterations. ``n_init`` independent k-means++ runs are made and
    the lowest final inertia wins. With ``refine`` every run is polished by
    single-point transfers after Lloyd converges, which escapes some Lloyd
    fixed points at a per-point Python cost; leave it off for large samples.
    """

    k: int
    max_iterations: int = 100
    convergence_tolerance: float = 1e-4
    seed: int = 0
    sample_cap: int | None = None
    n_init: int = 1
    refine: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if self.convergence_tolerance < 0:
            raise ConfigError("convergence_tolerance must be >= 0")
        if self.sample_cap is not None and self.sample_cap < 1:
            raise ConfigError("sample_cap must be positive")
        if self.n_init < 1:
            raise ConfigError("n_init must be >= 1")


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    inertia: float
    inertia_history: list[float] = field(default_factory=list)
    iterations: int = 0


# ---------------------------------------------------------------------------
# exhaustive nearest-centroid search
# ---------------------------------------------------------------------------


def squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Exact (n, K) squared Euclidean distances, computed as sums of squared differences."""
    points = np.asarray(points, dtype=np.float64)
    centroids = np.asarray(centroids, dtype=np.float64)
    n, k = len(points), len(centroids)
    out = np.empty((n, k), dtype=np.float64)
    rows = max(1, _CHUNK_ELEMENTS // max(1, k * centroids.shape[1]))
    for start in range(0, n, rows):
        diff = points[start : start + rows, None, :] - centroids[None, :, :]
        np.einsum("nkd,nkd->nk", diff, diff, out=out[start : start + rows])
    return out


def _nearest(points: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d = squared_distances(points, centroids)
    # argmin returns the first minimum, i.e. the lowest word id among ties
    labels = np.argmin(d, axis=1) if len(d) else np.zeros(0, dtype=np.intp)
    return labels, d[np.arange(len(d)), labels]


def nearest_words(descriptors: np.ndarray, vocab: Vocabulary) -> np.ndarray:
    """Word id of every row of ``descriptors`` (exhaustive search)."""
    descriptors = np.asarray(descriptors)
    if descriptors.ndim != 2 or descriptors.shape[1] != vocab.dimensionality:
        raise ConfigError(
            f"descriptors have shape {descriptors.shape}, vocabulary expects D={vocab.dimensionality}"
        )
    return _nearest(descriptors, vocab.centroids)[0].astype(np.int64)


def nearest_word(descriptor, vocab: Vocabulary) -> int:
    """Id of the closest centroid; ties go to the lowest id."""
    descriptor = np.asarray(descriptor)
    if descriptor.ndim != 1 or descriptor.shape[0] != vocab.dimensionality:
        raise ConfigError(f"descriptor length {descriptor.shape} != D={vocab.dimensionality}")
    return int(nearest_words(descriptor[None, :], vocab)[0])


def assign_words(fs: FeatureSet, vocab: Vocabulary):
    """Quantize every feature of ``fs`` and count word occurrences."""
    from .bow import BagOfWords

    if fs.dimensionality != vocab.dimensionality:
        raise ConfigError(f"feature D={fs.dimensionality} but vocabulary D={vocab.dimensionality}")
    return BagOfWords.from_tokens(fs.image_id, nearest_words(fs.descriptors, vocab))


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------


def kmeans_plus_plus(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: first centre uniform, then proportional to squared distance."""
    n = len(points)
    centers = np.empty((k, points.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centers[0] = points[first]
    closest = squared_distances(points, centers[:1])[:, 0]
    for j in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            # fewer distinct points than k; any point will do, repair handles the rest
            idx = int(rng.integers(n))
        centers[j] = points[idx]
        np.minimum(closest, squared_distances(points, centers[j : j + 1])[:, 0], out=closest)
    return centers


def _update_centroids(points, labels, dists, centroids):
    k, dim = centroids.shape
    counts = np.bincount(labels, minlength=k)
    sums = np.zeros((k, dim), dtype=np.float64)
    np.add.at(sums, labels, points)
    new = centroids.copy()
    filled = counts > 0
    new[filled] = sums[filled] / counts[filled, None]
    empty = np.flatnonzero(~filled)
    if len(empty):
        # re-seed each empty cluster at the point farthest from its centroid
        remaining = dists.copy()
        for j in empty:
            far = int(np.argmax(remaining))
            new[j] = points[far]
            remaining[far] = -1.0
        logger.debug("re-seeded %d empty clusters", len(empty))
    return new


def lloyd(points: np.ndarray, initial: np.ndarray, max_iterations: int, tol: float) -> KMeansResult:
    """Lloyd iterations from ``initial``; inertia is recorded after every assignment."""
    centroids = np.array(initial, dtype=np.float64)
    labels, dists = _nearest(points, centroids)
    inertia = float(dists.sum())
    history = [inertia]
    it = 0
    for it in range(1, max_iterations + 1):
        centroids = _update_centroids(points, labels, dists, centroids)
        new_labels, dists = _nearest(points, centroids)
        prev, inertia = inertia, float(dists.sum())
        history.append(inertia)
        unchanged = np.array_equal(new_labels, labels)
        labels = new_labels
        if unchanged or prev == 0.0 or (prev - inertia) < tol * prev:
            break
    return KMeansResult(centroids, labels, inertia, history, it)


def _partition_centroids(points, labels, centroids):
    counts = np.bincount(labels, minlength=len(centroids))
    sums = np.zeros(centroids.shape, dtype=np.float64)
    np.add.at(sums, labels, points)
    out = centroids.copy()
    filled = counts > 0
    out[filled] = sums[filled] / counts[filled, None]
    return out, counts.astype(np.float64)


def _partition_inertia(points, labels, centroids) -> float:
    # same arithmetic as the Lloyd assignment step, so equal partitions give equal sums
    return float(squared_distances(points, centroids)[np.arange(len(points)), labels].sum())


def transfer_refine(points: np.ndarray, start: KMeansResult, max_iterations: int, tol: float) -> KMeansResult:
    """Move single points between clusters while that lowers the inertia, then finish with Lloyd.

    Moving ``x`` from cluster ``a`` (size ``na``) to ``b`` changes the inertia by
    ``nb/(nb+1)*|x-cb|^2 - na/(na-1)*|x-ca|^2``; a point is moved to the cluster
    with the most negative change. The history continues that of ``start``.
    """
    labels = start.labels.copy()
    centroids, counts = _partition_centroids(points, labels, start.centroids)
    history = list(start.inertia_history)
    inertia = history[-1]
    for _ in range(max_iterations):
        moved = False
        saved = labels.copy(), centroids.copy()
        for i in range(len(points)):
            a = labels[i]
            if counts[a] <= 1:
                continue
            d = ((centroids - points[i]) ** 2).sum(axis=1)
            gain = counts / (counts + 1.0) * d
            gain[a] = np.inf
            b = int(np.argmin(gain))
            if gain[b] < counts[a] / (counts[a] - 1.0) * d[a] * (1.0 - 1e-12):
                centroids[a] = (centroids[a] * counts[a] - points[i]) / (counts[a] - 1.0)
                centroids[b] = (centroids[b] * counts[b] + points[i]) / (counts[b] + 1.0)
                counts[a] -= 1.0
                counts[b] += 1.0
                labels[i] = b
                moved = True
        if not moved:
            break
        # recompute exactly so incremental updates cannot drift
        centroids, counts = _partition_centroids(points, labels, centroids)
        new = _partition_inertia(points, labels, centroids)
        if new >= inertia:
            labels, centroids = saved
            break
        inertia = new
        history.append(inertia)
    res = lloyd(points, centroids, max_iterations, tol)
    # the first Lloyd assignment can only match or beat the partition it starts from
    res.inertia_history = history + res.inertia_history
    res.iterations += start.iterations
    return res


def kmeans(points: np.ndarray, cfg: KMeansConfig) -> KMeansResult:
    """Best of ``cfg.n_init`` seeded k-means++ / Lloyd runs on ``points``."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] == 0:
        raise ConfigError("descriptors must be non-empty vectors")
    if cfg.k > len(points):
        raise ConfigError(f"k={cfg.k} exceeds the {len(points)} available descriptors")
    rng = np.random.default_rng(cfg.seed)
    best = None
    for _ in range(cfg.n_init):
        init = kmeans_plus_plus(points, cfg.k, rng)
        res = lloyd(points, init, cfg.max_iterations, cfg.convergence_tolerance)
        if cfg.refine and cfg.k > 1:
            res = transfer_refine(points, res, cfg.max_iterations, cfg.convergence_tolerance)
        if best is None or res.inertia < best.inertia:
            best = res
    return best


def sample_descriptors(corpus: Sequence[FeatureSet], sample_cap: int | None, seed: int) -> np.ndarray:
    if not corpus:
        raise ConfigError("empty corpus")
    dims = {fs.dimensionality for fs in corpus}
    if len(dims) != 1:
        raise ConfigError(f"mixed descriptor dimensionalities {sorted(dims)}")
    data = np.concatenate([fs.descriptors for fs in corpus], axis=0)
    if sample_cap is not None and len(data) > sample_cap:
        # separate stream from the clustering RNG so the cap does not shift seeding
        idx = np.random.default_rng([seed, 1]).choice(len(data), size=sample_cap, replace=False)
        data = data[np.sort(idx)]
    return data


def build_vocabulary(corpus: Sequence[FeatureSet], cfg: KMeansConfig) -> Vocabulary:
    """Cluster the (optionally subsampled) descriptors of ``corpus`` into ``cfg.k`` words."""
    data = sample_descriptors(corpus, cfg.sample_cap, cfg.seed)
    res = kmeans(data, cfg)
    logger.info("k-means: K=%d, %d points, %d iterations, inertia %.6g", cfg.k, len(data), res.iterations, res.inertia)
    return Vocabulary(res.centroids)


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------


def vocabulary_to_bytes(vocab: Vocabulary) -> bytes:
    return HEADER.pack(MAGIC, VERSION, vocab.size, vocab.dimensionality) + vocab.centroids.astype("<f4").tobytes()


def vocabulary_from_bytes(data: bytes, path=None) -> Vocabulary:
    if len(data) < HEADER_SIZE:
        raise FormatError(f"vocabulary header needs {HEADER_SIZE} bytes, file has {len(data)}", len(data), path)
    magic, version, k, dim = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0, path)
    if version != VERSION:
        raise FormatError(f"unsupported vocabulary version {version}", 4, path)
    if k == 0:
        raise FormatError("vocabulary has K=0 words", 8, path)
    if dim == 0:
        raise FormatError("vocabulary has D=0", 12, path)
    end = HEADER_SIZE + 4 * k * dim
    if len(data) < end:
        row = 4 * dim
        complete = (len(data) - HEADER_SIZE) // row
        raise FormatError(f"truncated centroid payload: {complete} of {k} rows", HEADER_SIZE + complete * row, path)
    if len(data) > end:
        raise FormatError(f"{len(data) - end} trailing bytes", end, path)
    c = np.frombuffer(data, dtype="<f4", count=k * dim, offset=HEADER_SIZE).reshape(k, dim)
    return Vocabulary(c.astype(np.float32))


def save_vocabulary(vocab: Vocabulary, path) -> None:
    Path(path).write_bytes(vocabulary_to_bytes(vocab))


def load_vocabulary(path) -> Vocabulary:
    return vocabulary_from_bytes(Path(path).read_bytes(), path)
