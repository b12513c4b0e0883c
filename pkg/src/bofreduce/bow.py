"""Bags of visual words, corpus statistics and word-level reduction.

BoW file (text)::

    BOFW 1
    image_id<TAB>w1:tf1 w2:tf2 ...

one line per image with ascending word ids. Corpus-stats file (text): first
line ``N``, then ``word_id<TAB>df`` lines in ascending word id.

idf is ``ln(N / df)`` with no smoothing; a word the statistics have never
seen has idf 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError, FormatError
from .featureio import RetentionSpec, derive_seed

CRITERIA = ("random", "tf", "idf", "tfidf")
TIE_POLICIES = ("keep_whole_tie_group", "exact_budget")
TIE_POLICY_ALIASES = {"whole": "keep_whole_tie_group", "exact": "exact_budget"}

BOW_HEADER = "BOFW 1"


@dataclass(frozen=True, eq=False)
class BagOfWords:
    """Sparse word histogram of one image.

    ``word_ids`` is strictly increasing and ``tfs`` holds the matching
    occurrence counts (all >= 1).
    """

    image_id: str
    word_ids: np.ndarray
    tfs: np.ndarray

    def __post_init__(self):
        w = np.ascontiguousarray(self.word_ids, dtype=np.int64).reshape(-1)
        t = np.ascontiguousarray(self.tfs, dtype=np.int64).reshape(-1)
        if len(w) != len(t):
            raise DataError(f"{len(w)} word ids but {len(t)} term frequencies")
        if len(w):
            if np.any(np.diff(w) <= 0):
                raise DataError(f"word ids of {self.image_id!r} are not strictly increasing")
            if w[0] < 0:
                raise DataError("negative word id")
            if np.any(t < 1):
                raise DataError(f"term frequency < 1 in {self.image_id!r}")
        w.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "word_ids", w)
        object.__setattr__(self, "tfs", t)

    @classmethod
    def from_tokens(cls, image_id: str, tokens) -> "BagOfWords":
        words, counts = np.unique(np.asarray(tokens, dtype=np.int64), return_counts=True)
        return cls(image_id, words, counts)

    @classmethod
    def from_entries(cls, image_id: str, entries: Iterable[tuple[int, int]]) -> "BagOfWords":
        entries = sorted(entries)
        return cls(image_id, [w for w, _ in entries], [t for _, t in entries])

    @classmethod
    def from_counts(cls, image_id: str, counts: dict[int, int]) -> "BagOfWords":
        return cls.from_entries(image_id, counts.items())

    @property
    def entries(self) -> list[tuple[int, int]]:
        return list(zip(self.word_ids.tolist(), self.tfs.tolist()))

    @property
    def total_tokens(self) -> int:
        return int(self.tfs.sum())

    @property
    def distinct_words(self) -> int:
        return len(self.word_ids)

    def as_dict(self) -> dict[int, int]:
        return dict(zip(self.word_ids.tolist(), self.tfs.tolist()))

    def select(self, mask) -> "BagOfWords":
        return BagOfWords(self.image_id, self.word_ids[mask], self.tfs[mask])

    def __len__(self) -> int:
        return len(self.word_ids)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BagOfWords):
            return NotImplemented
        return (
            self.image_id == other.image_id
            and np.array_equal(self.word_ids, other.word_ids)
            and np.array_equal(self.tfs, other.tfs)
        )

    __hash__ = None

    def __repr__(self) -> str:
        return f"BagOfWords({self.image_id!r}, {self.entries!r})"


@dataclass(frozen=True, eq=False)
class CorpusStats:
    """Document frequencies over a corpus of ``n_images`` bags.

    ``words`` are the ascending ids that occur at least once, ``dfs`` their
    document frequencies.
    """

    n_images: int
    words: np.ndarray
    dfs: np.ndarray

    def __post_init__(self):
        if self.n_images < 1:
            raise DataError("corpus statistics need at least one image")
        w = np.ascontiguousarray(self.words, dtype=np.int64).reshape(-1)
        d = np.ascontiguousarray(self.dfs, dtype=np.int64).reshape(-1)
        if len(w) != len(d):
            raise DataError("words and dfs differ in length")
        if len(w) and (np.any(np.diff(w) <= 0) or np.any(d < 1) or np.any(d > self.n_images)):
            raise DataError("corpus statistics violate 1 <= df <= N or word ordering")
        idf = np.log(self.n_images / d.astype(np.float64)) if len(d) else np.zeros(0)
        for a in (w, d, idf):
            a.setflags(write=False)
        object.__setattr__(self, "words", w)
        object.__setattr__(self, "dfs", d)
        object.__setattr__(self, "idfs", idf)

    @property
    def N(self) -> int:
        return self.n_images

    @property
    def df(self) -> dict[int, int]:
        return dict(zip(self.words.tolist(), self.dfs.tolist()))

    @property
    def idf(self) -> dict[int, float]:
        return dict(zip(self.words.tolist(), self.idfs.tolist()))

    def lookup(self, word_ids) -> tuple[np.ndarray, np.ndarray]:
        """Positions of ``word_ids`` in ``words`` and a mask of which are present."""
        word_ids = np.asarray(word_ids, dtype=np.int64)
        pos = np.searchsorted(self.words, word_ids)
        pos_c = np.minimum(pos, max(len(self.words) - 1, 0))
        present = (pos < len(self.words)) & (self.words[pos_c] == word_ids) if len(self.words) else np.zeros(len(word_ids), bool)
        return pos_c, present

    def idf_of(self, word_ids) -> np.ndarray:
        """idf of each id; 0 for ids the corpus never saw."""
        pos, present = self.lookup(word_ids)
        out = np.zeros(len(pos), dtype=np.float64)
        if len(self.words):
            out[present] = self.idfs[pos[present]]
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, CorpusStats):
            return NotImplemented
        return (
            self.n_images == other.n_images
            and np.array_equal(self.words, other.words)
            and np.array_equal(self.dfs, other.dfs)
        )

    __hash__ = None


def compute_corpus_stats(corpus: Sequence[BagOfWords]) -> CorpusStats:
    """Document frequency (presence, not tf) of every word in ``corpus``."""
    if len(corpus) == 0:
        raise DataError("cannot compute statistics of an empty corpus")
    allw = np.concatenate([b.word_ids for b in corpus]) if corpus else np.zeros(0, np.int64)
    words, dfs = np.unique(allw, return_counts=True)
    return CorpusStats(len(corpus), words, dfs)


# ---------------------------------------------------------------------------
# scoring and pruning
# ---------------------------------------------------------------------------


def _check_criterion(criterion: str) -> str:
    if criterion not in CRITERIA:
        raise ConfigError(f"unknown word criterion {criterion!r}; expected one of {CRITERIA}")
    return criterion


def score_array(bow: BagOfWords, stats: CorpusStats | None, criterion: str) -> np.ndarray:
    """Per-entry scores aligned with ``bow.word_ids`` (not defined for ``random``)."""
    if criterion == "tf":
        return bow.tfs.astype(np.float64)
    if stats is None:
        raise ConfigError(f"criterion {criterion!r} needs corpus statistics")
    idf = stats.idf_of(bow.word_ids)
    if criterion == "idf":
        return idf
    if criterion == "tfidf":
        return bow.tfs * idf
    raise ConfigError(f"no deterministic score for criterion {criterion!r}")


def word_score(bow: BagOfWords, stats: CorpusStats | None, criterion: str) -> dict[int, float]:
    """Importance of every word of ``bow`` under ``criterion`` (tf, idf or tfidf)."""
    return dict(zip(bow.word_ids.tolist(), score_array(bow, stats, criterion).tolist()))


@dataclass(frozen=True)
class WordPruneConfig:
    criterion: str
    keep: RetentionSpec
    tie_policy: str = "keep_whole_tie_group"
    seed: int = 0

    def __post_init__(self):
        _check_criterion(self.criterion)
        object.__setattr__(self, "keep", RetentionSpec.coerce(self.keep))
        policy = TIE_POLICY_ALIASES.get(self.tie_policy, self.tie_policy)
        if policy not in TIE_POLICIES:
            raise ConfigError(f"unknown tie policy {self.tie_policy!r}")
        object.__setattr__(self, "tie_policy", policy)


def _random_scores(bow: BagOfWords, seed: int) -> np.ndarray:
    return np.random.default_rng(derive_seed(seed, bow.image_id)).random(len(bow))


def kept_mask(tfs: np.ndarray, scores: np.ndarray, word_ids: np.ndarray, budget: int, tie_policy: str) -> np.ndarray:
    """Boolean mask of entries kept under a token ``budget``.

    Entries are ranked by score descending, then word id ascending, and the
    shortest prefix holding at least ``budget`` tokens is kept. With
    ``keep_whole_tie_group`` the prefix is widened to every entry scoring at
    least as high as its last member.
    """
    m = len(tfs)
    mask = np.zeros(m, dtype=bool)
    if m == 0 or budget <= 0:
        return mask
    order = np.lexsort((word_ids, -scores))
    cum = np.cumsum(tfs[order])
    n = int(np.searchsorted(cum, budget, side="left")) + 1
    n = min(n, m)
    if tie_policy == "exact_budget":
        mask[order[:n]] = True
    else:
        mask[scores >= scores[order[n - 1]]] = True
    return mask


def prune_words(bow: BagOfWords, stats: CorpusStats | None, cfg: WordPruneConfig) -> BagOfWords:
    """Drop whole words of ``bow`` until roughly ``cfg.keep`` of its tokens remain."""
    if cfg.keep.is_identity or len(bow) == 0:
        return bow
    if cfg.criterion == "random":
        scores = _random_scores(bow, cfg.seed)
    else:
        scores = score_array(bow, stats, cfg.criterion)
    budget = cfg.keep.count(bow.total_tokens)
    return bow.select(kept_mask(bow.tfs, scores, bow.word_ids, budget, cfg.tie_policy))


def prune_corpus(corpus: Sequence[BagOfWords], stats: CorpusStats | None, cfg: WordPruneConfig) -> list[BagOfWords]:
    return [prune_words(b, stats, cfg) for b in corpus]


# ---------------------------------------------------------------------------
# reduction report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReductionStats:
    mean_tokens_before: float
    mean_distinct_before: float
    mean_tokens_after: float
    mean_distinct_after: float
    n_images: int


def mean_words(corpus: Sequence[BagOfWords]) -> tuple[float, float]:
    """Mean tokens and mean distinct words per image."""
    if not corpus:
        return 0.0, 0.0
    tokens = sum(b.total_tokens for b in corpus)
    distinct = sum(len(b) for b in corpus)
    return tokens / len(corpus), distinct / len(corpus)


def corpus_reduction_report(before: Sequence[BagOfWords], after: Sequence[BagOfWords]) -> ReductionStats:
    ids_before = sorted(b.image_id for b in before)
    ids_after = sorted(b.image_id for b in after)
    if ids_before != ids_after:
        raise DataError("corpora before and after reduction hold different image ids")
    tb, db = mean_words(before)
    ta, da = mean_words(after)
    return ReductionStats(tb, db, ta, da, len(before))


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def _check_id(image_id: str) -> None:
    if not image_id or any(c in image_id for c in "\t\n\r"):
        raise DataError(f"image id {image_id!r} is empty or contains a tab/newline")


def bows_to_text(corpus: Sequence[BagOfWords]) -> str:
    lines = [BOW_HEADER]
    for b in corpus:
        _check_id(b.image_id)
        lines.append(b.image_id + "\t" + " ".join(f"{w}:{t}" for w, t in zip(b.word_ids.tolist(), b.tfs.tolist())))
    return "\n".join(lines) + "\n"


def bows_from_text(text: str, path=None) -> list[BagOfWords]:
    lines = text.split("\n")
    if not lines or lines[0].rstrip("\r") != BOW_HEADER:
        raise FormatError(f"missing {BOW_HEADER!r} header", 1, path)
    out = []
    for lineno, line in enumerate(lines[1:], 2):
        if not line:
            continue
        image_id, sep, body = line.partition("\t")
        if not sep or not image_id:
            raise FormatError("expected 'image_id<TAB>entries'", lineno, path)
        words, tfs = [], []
        for tok in body.split():
            w, colon, t = tok.partition(":")
            if not colon:
                raise FormatError(f"bad entry {tok!r}", lineno, path)
            try:
                words.append(int(w))
                tfs.append(int(t))
            except ValueError:
                raise FormatError(f"bad entry {tok!r}", lineno, path) from None
        try:
            out.append(BagOfWords(image_id, words, tfs))
        except DataError as exc:
            raise FormatError(str(exc), lineno, path) from None
    return out


def save_bows(corpus: Sequence[BagOfWords], path) -> None:
    Path(path).write_text(bows_to_text(corpus))


def load_bows(path) -> list[BagOfWords]:
    return bows_from_text(Path(path).read_text(), path)


def stats_to_text(stats: CorpusStats) -> str:
    lines = [str(stats.n_images)]
    lines.extend(f"{w}\t{d}" for w, d in zip(stats.words.tolist(), stats.dfs.tolist()))
    return "\n".join(lines) + "\n"


def stats_from_text(text: str, path=None) -> CorpusStats:
    lines = [ln for ln in text.split("\n") if ln]
    if not lines:
        raise FormatError("empty corpus statistics file", 1, path)
    try:
        n = int(lines[0])
        pairs = [tuple(int(x) for x in ln.split("\t")) for ln in lines[1:]]
    except ValueError:
        raise FormatError("non-integer field in corpus statistics", None, path) from None
    if any(len(p) != 2 for p in pairs):
        raise FormatError("expected 'word_id<TAB>df' lines", None, path)
    try:
        return CorpusStats(n, [p[0] for p in pairs], [p[1] for p in pairs])
    except DataError as exc:
        raise FormatError(str(exc), None, path) from None


def save_corpus_stats(stats: CorpusStats, path) -> None:
    Path(path).write_text(stats_to_text(stats))


def load_corpus_stats(path) -> CorpusStats:
    return stats_from_text(Path(path).read_text(), path)
