"""Bag-of-features image retrieval with configurable visual-word reduction."""

from .bow import (
    BagOfWords,
    CorpusStats,
    ReductionStats,
    WordPruneConfig,
    compute_corpus_stats,
    corpus_reduction_report,
    load_bows,
    load_corpus_stats,
    prune_words,
    save_bows,
    save_corpus_stats,
    word_score,
)
from .errors import BofError, ConfigError, DataError, FormatError, InvariantError
from .evaluation import (
    RetrievalGroundTruth,
    accuracy,
    average_precision,
    load_ground_truth,
    macro_f1,
    mean_average_precision,
    micro_prf,
)
from .featureio import (
    FeatureSet,
    LocalFeature,
    RetentionSpec,
    load_features,
    prune_by_scale,
    prune_random_features,
    save_features,
)
from .index import (
    InvertedIndex,
    NoMatch,
    RankedResult,
    build_index,
    classify_1nn,
    index_size_report,
    linear_scan_query,
    load_index,
    query,
    save_index,
)
from .sweep import AssignedImage, load_word_files, run_sweep
from .synthetic import SyntheticConfig, generate_synthetic_bags, generate_synthetic_corpus
from .vocabulary import (
    KMeansConfig,
    Vocabulary,
    assign_words,
    build_vocabulary,
    load_vocabulary,
    nearest_word,
    save_vocabulary,
    transfer_refine,
)

__version__ = "0.1.0"

__all__ = [
    "accuracy",
    "assign_words",
    "AssignedImage",
    "average_precision",
    "BagOfWords",
    "BofError",
    "build_index",
    "build_vocabulary",
    "classify_1nn",
    "compute_corpus_stats",
    "ConfigError",
    "corpus_reduction_report",
    "CorpusStats",
    "DataError",
    "FeatureSet",
    "FormatError",
    "generate_synthetic_bags",
    "generate_synthetic_corpus",
    "index_size_report",
    "InvariantError",
    "InvertedIndex",
    "KMeansConfig",
    "linear_scan_query",
    "load_bows",
    "load_corpus_stats",
    "load_features",
    "load_ground_truth",
    "load_index",
    "load_vocabulary",
    "load_word_files",
    "LocalFeature",
    "macro_f1",
    "mean_average_precision",
    "micro_prf",
    "nearest_word",
    "NoMatch",
    "prune_by_scale",
    "prune_random_features",
    "prune_words",
    "query",
    "RankedResult",
    "ReductionStats",
    "RetentionSpec",
    "RetrievalGroundTruth",
    "run_sweep",
    "save_bows",
    "save_corpus_stats",
    "save_features",
    "save_index",
    "save_vocabulary",
    "SyntheticConfig",
    "transfer_refine",
    "Vocabulary",
    "word_score",
    "WordPruneConfig",
]
