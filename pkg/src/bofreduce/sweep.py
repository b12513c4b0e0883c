"""Effectiveness-versus-description-length sweeps.

For every (criterion, site, retention) the harness reduces the dataset side,
the query side or both, rebuilds the index when the dataset changed, and
records the task metric next to the mean tokens and mean distinct words per
image of the reduced side (the dataset for ``dataset``/``both``, the queries
for ``query``).

Criteria:

``scale``, ``random``
    feature-level reduction before word assignment. Each image's features are
    quantized once and the cached word of every feature is reused, which is
    equivalent to pruning the features and re-assigning them.
``tf``, ``idf``, ``tfidf``, ``random_words``
    word-level reduction of the assigned bags. Statistics for idf always come
    from the unreduced dataset.
"""

from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .bow import (
    BagOfWords,
    CorpusStats,
    WordPruneConfig,
    compute_corpus_stats,
    mean_words,
    prune_words,
)
from .errors import ConfigError, DataError
from .evaluation import (
    RetrievalGroundTruth,
    accuracy,
    average_precision,
    macro_f1,
    mean_average_precision,
)
from .featureio import FeatureSet, RetentionSpec, derive_seed, select_by_scale, select_random
from .index import DEFAULT_K, build_index, predict_labels, query
from .vocabulary import Vocabulary, nearest_words

FEATURE_CRITERIA = ("random", "scale")
WORD_CRITERIA = ("tf", "idf", "tfidf", "random_words")
ALL_CRITERIA = FEATURE_CRITERIA + WORD_CRITERIA
SITES = ("dataset", "query", "both")
TASKS = ("retrieval", "recognition")

CSV_COLUMNS = [
    "criterion",
    "site",
    "retention",
    "mean_tokens",
    "mean_distinct",
    "metric_name",
    "metric_value",
    "mean_query_us",
    "seed",
]


@dataclass(frozen=True, eq=False)
class AssignedImage:
    """Word id and keypoint scale of every feature of one image, in feature order."""

    image_id: str
    words: np.ndarray
    scales: np.ndarray

    def to_bag(self, indices=None) -> BagOfWords:
        w = self.words if indices is None else self.words[indices]
        return BagOfWords.from_tokens(self.image_id, w)


def assign_images(feature_sets: Sequence[FeatureSet], vocab: Vocabulary) -> list[AssignedImage]:
    return [AssignedImage(fs.image_id, nearest_words(fs.descriptors, vocab), fs.scales.copy()) for fs in feature_sets]


def load_word_file(path, image_id: str | None = None) -> AssignedImage:
    """Read one pre-quantized image in the Oxford Buildings word-file layout.

    Two header lines (vocabulary size, feature count) are followed by one
    ``word x y a b c`` line per feature, where ``a x^2 + 2b xy + c y^2 = 1``
    is the affine region. The keypoint scale is taken as the geometric mean
    of the ellipse semi-axes, ``(ac - b^2) ** -0.25``.
    """
    path = Path(path)
    lines = [ln.split() for ln in path.read_text().splitlines() if ln.strip()]
    if len(lines) < 2 or len(lines[0]) != 1 or len(lines[1]) != 1:
        raise DataError(f"{path}: expected two header lines")
    rows = lines[2:]
    if len(rows) != int(lines[1][0]):
        raise DataError(f"{path}: header declares {lines[1][0]} features, found {len(rows)}")
    if any(len(r) != 6 for r in rows):
        raise DataError(f"{path}: feature lines need 6 fields")
    arr = np.array(rows, dtype=np.float64).reshape(-1, 6)
    det = arr[:, 3] * arr[:, 5] - arr[:, 4] ** 2
    if np.any(det <= 0):
        raise DataError(f"{path}: degenerate affine region")
    return AssignedImage(image_id or path.stem, arr[:, 0].astype(np.int64), det**-0.25)


def load_word_files(directory, suffix: str = ".txt") -> list[AssignedImage]:
    """Every word file of ``directory``, sorted by image id."""
    files = sorted(Path(directory).glob(f"*{suffix}"))
    if not files:
        raise DataError(f"no *{suffix} word files in {directory}")
    return [load_word_file(f) for f in files]


@dataclass(frozen=True)
class SweepPoint:
    criterion: str
    site: str
    retention: float
    mean_tokens: float
    mean_distinct: float
    metric_name: str
    metric_value: float
    mean_query_us: float | None = None
    seed: int = 0


def reduce_images(
    images: Sequence[AssignedImage],
    criterion: str,
    keep: RetentionSpec,
    stats: CorpusStats | None,
    tie_policy: str = "keep_whole_tie_group",
    seed: int = 0,
) -> list[BagOfWords]:
    """Apply one criterion to a list of assigned images."""
    if criterion not in ALL_CRITERIA:
        raise ConfigError(f"unknown criterion {criterion!r}; expected one of {ALL_CRITERIA}")
    if keep.is_identity:
        return [img.to_bag() for img in images]
    if criterion == "scale":
        return [img.to_bag(select_by_scale(img.scales, keep)) for img in images]
    if criterion == "random":
        return [img.to_bag(select_random(len(img.words), keep, derive_seed(seed, img.image_id))) for img in images]
    cfg = WordPruneConfig("random" if criterion == "random_words" else criterion, keep, tie_policy, seed)
    return [prune_words(img.to_bag(), stats, cfg) for img in images]


def _evaluate(ix, q_bags, task, labels, ground_truth, k, time_queries):
    """Return ([(metric_name, value)], mean query microseconds or None)."""
    elapsed = 0
    n_calls = 0
    if task == "retrieval":
        by_id = {b.image_id: b for b in q_bags}
        aps = []
        for gt in ground_truth:
            t0 = time.perf_counter_ns()
            res = query(ix, by_id[gt.query_id], k)
            elapsed += time.perf_counter_ns() - t0
            n_calls += 1
            aps.append(average_precision(res, gt))
        metrics = [("mAP", mean_average_precision(aps))]
    else:
        t0 = time.perf_counter_ns()
        preds = predict_labels(ix, q_bags)
        elapsed = time.perf_counter_ns() - t0
        n_calls = len(q_bags)
        truth = {b.image_id: labels[b.image_id] for b in q_bags}
        metrics = [("accuracy", accuracy(preds, truth)), ("macro_f1", macro_f1(preds, truth).macro_f1)]
    us = elapsed / 1000.0 / n_calls if (time_queries and n_calls) else None
    return metrics, us


def run_sweep(
    dataset: Sequence[FeatureSet | AssignedImage],
    vocab: Vocabulary | None,
    criteria: Sequence[str],
    retentions: Sequence[float],
    sites: Sequence[str] = ("dataset",),
    task: str = "recognition",
    *,
    queries: Sequence[FeatureSet | AssignedImage] | None = None,
    labels: Mapping[str, str] | None = None,
    ground_truth: Sequence[RetrievalGroundTruth] | None = None,
    tie_policy: str = "keep_whole_tie_group",
    seed: int = 0,
    k: int = DEFAULT_K,
    time_queries: bool = False,
) -> list[SweepPoint]:
    """Evaluate every (criterion, site, retention) combination.

    Recognition indexes ``dataset`` (labelled through ``labels``) and
    classifies each image of ``queries``. Retrieval indexes ``dataset`` and
    runs one query per ``ground_truth`` record; query images are looked up in
    ``queries`` or, when that is omitted, in ``dataset``.

    Rows come back ordered by criterion, then site, then retention, in the
    order given. Unless ``time_queries`` is set the output depends only on
    the inputs and ``seed``.
    """
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}; expected one of {TASKS}")
    for s in sites:
        if s not in SITES:
            raise ConfigError(f"unknown site {s!r}; expected one of {SITES}")
    for c in criteria:
        if c not in ALL_CRITERIA:
            raise ConfigError(f"unknown criterion {c!r}; expected one of {ALL_CRITERIA}")
    keeps = [RetentionSpec.coerce(float(p)) for p in retentions]

    def _assigned(items):
        if items and isinstance(items[0], FeatureSet):
            if vocab is None:
                raise ConfigError("feature sets need a vocabulary")
            return assign_images(items, vocab)
        return list(items)

    ds_images = _assigned(list(dataset))
    if task == "retrieval":
        if not ground_truth:
            raise ConfigError("retrieval sweep needs ground truth")
        pool = {img.image_id: img for img in (_assigned(list(queries)) if queries is not None else ds_images)}
        missing = [g.query_id for g in ground_truth if g.query_id not in pool]
        if missing:
            raise DataError(f"{len(missing)} ground-truth queries have no image, e.g. {missing[0]!r}")
        q_images = [pool[g.query_id] for g in ground_truth]
        # one query image may serve several ground-truth records
        q_images = list({img.image_id: img for img in q_images}.values())
        index_labels = None
    else:
        if queries is None or labels is None:
            raise ConfigError("recognition sweep needs queries and labels")
        q_images = _assigned(list(queries))
        index_labels = labels

    full_ds = [img.to_bag() for img in ds_images]
    full_q = [img.to_bag() for img in q_images]
    stats = compute_corpus_stats(full_ds)
    full_ix = build_index(full_ds, index_labels)

    points = []
    for criterion in criteria:
        for site in sites:
            for keep in keeps:
                if site in ("dataset", "both"):
                    ds_bags = reduce_images(ds_images, criterion, keep, stats, tie_policy, seed)
                    ix = full_ix if keep.is_identity else build_index(ds_bags, index_labels)
                else:
                    ds_bags, ix = full_ds, full_ix
                if site in ("query", "both"):
                    q_bags = reduce_images(q_images, criterion, keep, stats, tie_policy, seed)
                else:
                    q_bags = full_q
                tokens, distinct = mean_words(q_bags if site == "query" else ds_bags)
                metrics, us = _evaluate(ix, q_bags, task, index_labels, ground_truth, k, time_queries)
                for name, value in metrics:
                    points.append(SweepPoint(criterion, site, keep.value, tokens, distinct, name, value, us, seed))
    return points


def write_sweep_csv(points: Sequence[SweepPoint], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for p in points:
            row = asdict(p)
            row["mean_query_us"] = "" if p.mean_query_us is None else repr(p.mean_query_us)
            for key in ("retention", "mean_tokens", "mean_distinct", "metric_value"):
                row[key] = repr(float(row[key]))
            writer.writerow(row)


def read_sweep_csv(path) -> list[SweepPoint]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(
                SweepPoint(
                    row["criterion"],
                    row["site"],
                    float(row["retention"]),
                    float(row["mean_tokens"]),
                    float(row["mean_distinct"]),
                    row["metric_name"],
                    float(row["metric_value"]),
                    float(row["mean_query_us"]) if row["mean_query_us"] else None,
                    int(row["seed"]),
                )
            )
    return out
