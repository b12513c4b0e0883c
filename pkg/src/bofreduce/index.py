"""Inverted file with tf*idf cosine ranking and 1-NN landmark recognition.

Weights are raw tf times ln-idf for documents and queries alike; the idf of a
query word always comes from the index statistics. Posting lists live in one
CSR block: the postings of the ``i``-th indexed word occupy
``post_docs[ptr[i]:ptr[i + 1]]`` and are ordered by document ordinal, and
ordinals follow ascending image id.

Index file (``.bofi``), little-endian::

    magic b"BOFI" | version u32 = 1 | N u32 | W u32
    W word blocks, ascending word id:
        word_id u32 | df u32 | postings length u32 (== df)
        postings length x (image ordinal u32, tf u32)
    N image ids by ordinal: byte length u32 | UTF-8 bytes
    N document norms by ordinal: f64
    has_labels u32 (0 or 1)
    if 1, N labels by ordinal: byte length u32 | UTF-8 bytes
"""

from __future__ import annotations

import bisect
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .bow import BagOfWords, CorpusStats, compute_corpus_stats
from .errors import ConfigError, DataError, FormatError

MAGIC = b"BOFI"
VERSION = 1
HEADER = struct.Struct("<4sIII")
DEFAULT_K = 100


class NoMatch(LookupError):
    """The query shares no informative word with any indexed image."""


@dataclass(frozen=True)
class RankedResult:
    """Top-k documents by descending score, ties by ascending image id.

    ``postings_touched`` is the number of posting entries the inverted-file
    search walked to produce the ranking (0 for the linear scan).
    """

    items: list[tuple[str, float]] = field(default_factory=list)
    postings_touched: int = 0

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self) -> Iterator[tuple[str, float]]:
        return iter(self.items)

    def __getitem__(self, i):
        return self.items[i]

    @property
    def ids(self) -> list[str]:
        return [i for i, _ in self.items]

    @property
    def scores(self) -> list[float]:
        return [s for _, s in self.items]


@dataclass(frozen=True, eq=False)
class InvertedIndex:
    stats: CorpusStats
    ptr: np.ndarray
    post_docs: np.ndarray
    post_tfs: np.ndarray
    image_ids: tuple[str, ...]
    doc_norms: np.ndarray
    labels: tuple[str, ...] | None = None

    @property
    def n_images(self) -> int:
        return len(self.image_ids)

    @property
    def words(self) -> np.ndarray:
        return self.stats.words

    @property
    def postings(self) -> dict[int, list[tuple[str, int]]]:
        """word id -> [(image_id, tf), ...] sorted by image id."""
        out = {}
        for i, w in enumerate(self.words.tolist()):
            lo, hi = self.ptr[i], self.ptr[i + 1]
            out[w] = [(self.image_ids[d], int(t)) for d, t in zip(self.post_docs[lo:hi], self.post_tfs[lo:hi])]
        return out

    @property
    def doc_norm(self) -> dict[str, float]:
        return dict(zip(self.image_ids, self.doc_norms.tolist()))

    @property
    def label_map(self) -> dict[str, str] | None:
        return None if self.labels is None else dict(zip(self.image_ids, self.labels))

    def posting_lengths(self, word_ids) -> np.ndarray:
        """Posting-list length of each id (0 when the word is not indexed)."""
        pos, present = self.stats.lookup(word_ids)
        out = np.zeros(len(pos), dtype=np.int64)
        if len(self.words):
            out[present] = self.ptr[pos[present] + 1] - self.ptr[pos[present]]
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, InvertedIndex):
            return NotImplemented
        return (
            self.stats == other.stats
            and self.image_ids == other.image_ids
            and self.labels == other.labels
            and np.array_equal(self.ptr, other.ptr)
            and np.array_equal(self.post_docs, other.post_docs)
            and np.array_equal(self.post_tfs, other.post_tfs)
            and np.array_equal(self.doc_norms, other.doc_norms)
        )

    __hash__ = None


def build_index(corpus: Sequence[BagOfWords], labels: Mapping[str, str] | None = None) -> InvertedIndex:
    """Invert ``corpus``; statistics are computed from the bags as given."""
    if len(corpus) == 0:
        raise DataError("cannot index an empty corpus")
    bags = sorted(corpus, key=lambda b: b.image_id)
    ids = tuple(b.image_id for b in bags)
    for a, b in zip(ids, ids[1:]):
        if a == b:
            raise DataError(f"duplicate image id {a!r}")
    label_tuple = None
    if labels is not None:
        missing = [i for i in ids if i not in labels]
        if missing:
            raise DataError(f"{len(missing)} indexed images have no label, e.g. {missing[0]!r}")
        label_tuple = tuple(str(labels[i]) for i in ids)

    stats = compute_corpus_stats(bags)
    lengths = np.array([len(b) for b in bags], dtype=np.int64)
    allw = np.concatenate([b.word_ids for b in bags])
    allt = np.concatenate([b.tfs for b in bags])
    alld = np.repeat(np.arange(len(bags), dtype=np.int64), lengths)

    weights = allt * stats.idf_of(allw)
    doc_norms = np.sqrt(np.bincount(alld, weights=weights * weights, minlength=len(bags)))

    order = np.lexsort((alld, allw))
    sorted_words = allw[order]
    ptr = np.searchsorted(sorted_words, stats.words, side="left")
    ptr = np.append(ptr, len(sorted_words)).astype(np.int64)
    return _freeze(InvertedIndex(stats, ptr, alld[order], allt[order], ids, doc_norms, label_tuple))


def _freeze(ix: InvertedIndex) -> InvertedIndex:
    for a in (ix.ptr, ix.post_docs, ix.post_tfs, ix.doc_norms):
        a.setflags(write=False)
    return ix


def _top_k(ordinals: np.ndarray, scores: np.ndarray, k: int) -> np.ndarray:
    """Positions of the top ``k`` by (score desc, ordinal asc)."""
    if len(scores) > k:
        kth = np.partition(scores, len(scores) - k)[len(scores) - k]
        keep = np.flatnonzero(scores >= kth)
        ordinals, scores, base = ordinals[keep], scores[keep], keep
    else:
        base = np.arange(len(scores))
    order = np.lexsort((ordinals, -scores))[:k]
    return base[order]


def query(ix: InvertedIndex, q: BagOfWords, k: int = DEFAULT_K) -> RankedResult:
    """Cosine top-k over the posting lists of the query's words."""
    if k < 1:
        raise ConfigError("k must be >= 1")
    if len(q) == 0:
        return RankedResult()
    pos, present = ix.stats.lookup(q.word_ids)
    pos = pos[present]
    if len(pos) == 0:
        return RankedResult()
    idf = ix.stats.idfs[pos]
    qw = q.tfs[present] * idf
    # absent query words have idf 0 and add nothing to the norm
    qnorm = math.sqrt(float(np.dot(qw, qw)))

    starts = ix.ptr[pos]
    lengths = ix.ptr[pos + 1] - starts
    touched = int(lengths.sum())
    if qnorm == 0.0:
        return RankedResult([], touched)

    # walk the postings of every query word, ascending word id then posting order
    shift = np.repeat(starts - (np.cumsum(lengths) - lengths), lengths)
    idx = shift + np.arange(touched)
    dw = ix.post_tfs[idx] * np.repeat(idf, lengths)
    contrib = np.repeat(qw, lengths) * dw
    acc = np.bincount(ix.post_docs[idx], weights=contrib, minlength=ix.n_images)

    cand = np.flatnonzero(acc > 0)
    scores = acc[cand] / (qnorm * ix.doc_norms[cand])
    top = _top_k(cand, scores, k)
    items = [(ix.image_ids[cand[i]], float(scores[i])) for i in top]
    return RankedResult(items, touched)


def linear_scan_query(corpus: Sequence[BagOfWords], stats: CorpusStats, q: BagOfWords, k: int = DEFAULT_K) -> RankedResult:
    """Same ranking as :func:`query`, by scoring every document in turn."""
    if k < 1:
        raise ConfigError("k must be >= 1")
    idf = stats.idf
    qw = {w: tf * idf.get(w, 0.0) for w, tf in q.entries}
    qnorm = math.sqrt(sum(v * v for v in qw.values()))
    if qnorm == 0.0:
        return RankedResult()
    scored = []
    for doc in corpus:
        norm_sq = 0.0
        dot = 0.0
        for w, tf in doc.entries:
            dw = tf * idf.get(w, 0.0)
            norm_sq += dw * dw
            if w in qw:
                dot += qw[w] * dw
        if dot > 0.0:
            scored.append((-(dot / (qnorm * math.sqrt(norm_sq))), doc.image_id))
    scored.sort()
    return RankedResult([(i, -s) for s, i in scored[:k]])


def classify_1nn(ix: InvertedIndex, q: BagOfWords) -> str:
    """Label of the most similar indexed image.

    Raises:
        ConfigError: the index carries no labels.
        NoMatch: no indexed image shares an informative word with ``q``.
    """
    if ix.labels is None:
        raise ConfigError("index has no labels")
    res = query(ix, q, k=1)
    if not res.items:
        raise NoMatch(q.image_id)
    return ix.labels[bisect.bisect_left(ix.image_ids, res.items[0][0])]


def predict_labels(ix: InvertedIndex, queries: Sequence[BagOfWords]) -> dict[str, str | None]:
    """1-NN label per query image; ``None`` marks "no match"."""
    if ix.labels is None:
        raise ConfigError("index has no labels")
    out = {}
    for q in queries:
        try:
            out[q.image_id] = classify_1nn(ix, q)
        except NoMatch:
            out[q.image_id] = None
    return out


@dataclass(frozen=True)
class IndexSizeReport:
    n_images: int
    distinct_words: int
    total_postings: int
    mean_posting_length: float

    def as_dict(self) -> dict:
        return {
            "n_images": self.n_images,
            "distinct_words": self.distinct_words,
            "total_postings": self.total_postings,
            "mean_posting_length": self.mean_posting_length,
        }


def index_size_report(ix: InvertedIndex) -> IndexSizeReport:
    w = len(ix.words)
    total = int(ix.ptr[-1]) if len(ix.ptr) else 0
    return IndexSizeReport(ix.n_images, w, total, total / w if w else 0.0)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def _pack_strings(strings) -> bytes:
    parts = []
    for s in strings:
        b = s.encode("utf-8")
        parts.append(struct.pack("<I", len(b)))
        parts.append(b)
    return b"".join(parts)


def index_to_bytes(ix: InvertedIndex) -> bytes:
    n, w = ix.n_images, len(ix.words)
    parts = [HEADER.pack(MAGIC, VERSION, n, w)]
    lengths = np.diff(ix.ptr)
    for i in range(w):
        lo, hi = ix.ptr[i], ix.ptr[i + 1]
        parts.append(struct.pack("<III", int(ix.words[i]), int(ix.stats.dfs[i]), int(lengths[i])))
        block = np.empty((hi - lo, 2), dtype="<u4")
        block[:, 0] = ix.post_docs[lo:hi]
        block[:, 1] = ix.post_tfs[lo:hi]
        parts.append(block.tobytes())
    parts.append(_pack_strings(ix.image_ids))
    parts.append(ix.doc_norms.astype("<f8").tobytes())
    if ix.labels is None:
        parts.append(struct.pack("<I", 0))
    else:
        parts.append(struct.pack("<I", 1))
        parts.append(_pack_strings(ix.labels))
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.off, self.path = data, 0, path

    def take(self, n: int, what: str) -> bytes:
        if self.off + n > len(self.data):
            raise FormatError(f"truncated {what}", self.off, self.path)
        chunk = self.data[self.off : self.off + n]
        self.off += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def strings(self, count: int, what: str) -> list[str]:
        out = []
        for _ in range(count):
            start = self.off
            raw = self.take(self.u32(what), what)
            try:
                out.append(raw.decode("utf-8"))
            except UnicodeDecodeError:
                raise FormatError(f"invalid UTF-8 in {what}", start, self.path) from None
        return out


def index_from_bytes(data: bytes, path=None) -> InvertedIndex:
    r = _Reader(data, path)
    magic, version, n, w = HEADER.unpack(r.take(HEADER.size, "header"))
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0, path)
    if version != VERSION:
        raise FormatError(f"unsupported index version {version}", 4, path)
    if n == 0:
        raise FormatError("index holds no images", 8, path)
    words = np.empty(w, dtype=np.int64)
    dfs = np.empty(w, dtype=np.int64)
    ptr = np.zeros(w + 1, dtype=np.int64)
    blocks = []
    for i in range(w):
        start = r.off
        words[i], dfs[i], plen = struct.unpack("<III", r.take(12, "word block"))
        if plen != dfs[i]:
            raise FormatError(f"word {words[i]}: df {dfs[i]} != postings length {plen}", start, path)
        if i and words[i] <= words[i - 1]:
            raise FormatError("word ids not strictly increasing", start, path)
        block = np.frombuffer(r.take(8 * plen, "postings"), dtype="<u4").reshape(plen, 2)
        if plen and (np.any(block[:, 0] >= n) or np.any(np.diff(block[:, 0].astype(np.int64)) <= 0) or np.any(block[:, 1] == 0)):
            raise FormatError(f"invalid postings for word {words[i]}", start + 12, path)
        blocks.append(block)
        ptr[i + 1] = ptr[i] + plen
    ids = r.strings(n, "image id table")
    if any(a >= b for a, b in zip(ids, ids[1:])):
        raise FormatError("image ids not strictly ascending", None, path)
    norms = np.frombuffer(r.take(8 * n, "document norms"), dtype="<f8").astype(np.float64)
    flag_at = r.off
    flag = r.u32("label flag")
    labels = None
    if flag == 1:
        labels = tuple(r.strings(n, "label table"))
    elif flag != 0:
        raise FormatError(f"label flag must be 0 or 1, got {flag}", flag_at, path)
    if r.off != len(data):
        raise FormatError(f"{len(data) - r.off} trailing bytes", r.off, path)
    post = np.concatenate(blocks).astype(np.int64) if blocks else np.zeros((0, 2), np.int64)
    try:
        stats = CorpusStats(n, words, dfs)
    except DataError as exc:
        raise FormatError(str(exc), None, path) from None
    return _freeze(InvertedIndex(stats, ptr, post[:, 0].copy(), post[:, 1].copy(), tuple(ids), norms, labels))


def save_index(ix: InvertedIndex, path) -> None:
    Path(path).write_bytes(index_to_bytes(ix))


def load_index(path) -> InvertedIndex:
    return index_from_bytes(Path(path).read_bytes(), path)
