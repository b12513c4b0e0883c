"""Query latency against the number of distinct words per image.

Every grid point reduces the queries (``query_only``) or the queries and the
indexed images (``query_and_dataset``), then times each query. Index
construction is outside the timed region, warm-up runs are discarded, and
alongside wall-clock time the harness records the number of posting entries
walked, which does not depend on the machine.
"""

from __future__ import annotations

import csv
import statistics
import time
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .bow import BagOfWords, WordPruneConfig, compute_corpus_stats, mean_words, prune_corpus
from .errors import ConfigError
from .featureio import RetentionSpec
from .index import DEFAULT_K, build_index, query
from .synthetic import generate_synthetic_bags

BENCH_SITES = ("query_only", "query_and_dataset")
CSV_COLUMNS = [
    "retention",
    "site",
    "mean_distinct_query",
    "mean_distinct_doc",
    "mean_us",
    "median_us",
    "p95_us",
    "postings_touched",
]


@dataclass(frozen=True)
class BenchConfig:
    """Benchmark parameters; the synthetic corpus fields apply only when no bags are supplied."""

    n_images: int = 50_000
    tokens_per_image: int = 300
    vocab_size: int = 20_000
    zipf_exponent: float = 0.8
    query_count: int = 100
    repetitions: int = 3
    warmup: int = 1
    site: str = "query_and_dataset"
    retentions: tuple[float, ...] = (1.0, 0.5, 0.25, 0.1)
    criterion: str = "tfidf"
    tie_policy: str = "exact_budget"
    k: int = DEFAULT_K
    seed: int = 0

    def __post_init__(self):
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.warmup < 0:
            raise ConfigError("warmup must be >= 0")
        if self.site not in BENCH_SITES:
            raise ConfigError(f"site must be one of {BENCH_SITES}")
        object.__setattr__(self, "retentions", tuple(float(p) for p in self.retentions))
        for p in self.retentions:
            RetentionSpec.fraction(p)

    def prune_config(self, p: float) -> WordPruneConfig:
        return WordPruneConfig(self.criterion, RetentionSpec.fraction(p), self.tie_policy, self.seed)


@dataclass(frozen=True)
class BenchRow:
    """One grid point; ``postings_touched`` is summed over the query set."""

    retention: float
    site: str
    mean_distinct_query: float
    mean_distinct_doc: float
    mean_us: float
    median_us: float
    p95_us: float
    postings_touched: int


def synthetic_workload(cfg: BenchConfig) -> tuple[list[BagOfWords], list[BagOfWords]]:
    """Dataset and query bags drawn from one Zipf word distribution."""
    bags = generate_synthetic_bags(
        cfg.n_images + cfg.query_count, cfg.tokens_per_image, cfg.vocab_size, cfg.zipf_exponent, cfg.seed, "img"
    )
    queries = [BagOfWords(f"q{i:06d}", b.word_ids, b.tfs) for i, b in enumerate(bags[cfg.n_images :])]
    return bags[: cfg.n_images], queries


def run_bench(
    cfg: BenchConfig,
    dataset: Sequence[BagOfWords] | None = None,
    queries: Sequence[BagOfWords] | None = None,
) -> list[BenchRow]:
    """Time ``queries`` against ``dataset`` for every retention of ``cfg``.

    Both default to the synthetic workload described by ``cfg``.
    """
    if dataset is None or queries is None:
        gen_ds, gen_q = synthetic_workload(cfg)
        dataset = gen_ds if dataset is None else dataset
        queries = gen_q if queries is None else queries
    if len(queries) == 0:
        return []
    stats = compute_corpus_stats(dataset)
    full_ix = build_index(dataset) if cfg.site == "query_only" else None

    rows = []
    for p in cfg.retentions:
        prune = cfg.prune_config(p)
        q_bags = prune_corpus(queries, stats, prune)
        if cfg.site == "query_and_dataset":
            ds_bags = prune_corpus(dataset, stats, prune)
            ix = build_index(ds_bags)
        else:
            ds_bags, ix = dataset, full_ix

        timings = []
        touched = 0
        for q in q_bags:
            for _ in range(cfg.warmup):
                query(ix, q, cfg.k)
            for _ in range(cfg.repetitions):
                t0 = time.perf_counter_ns()
                res = query(ix, q, cfg.k)
                timings.append((time.perf_counter_ns() - t0) / 1000.0)
            touched += res.postings_touched
        rows.append(
            BenchRow(
                retention=p,
                site=cfg.site,
                mean_distinct_query=mean_words(q_bags)[1],
                mean_distinct_doc=mean_words(ds_bags)[1],
                mean_us=statistics.fmean(timings),
                median_us=statistics.median(timings),
                p95_us=float(np.percentile(timings, 95)),
                postings_touched=touched,
            )
        )
    return rows


def write_bench_csv(rows: Sequence[BenchRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow(asdict(r))
