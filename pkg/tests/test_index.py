import math

import numpy as np
import pytest

from bofreduce.bow import BagOfWords, WordPruneConfig, compute_corpus_stats, prune_corpus
from bofreduce.errors import ConfigError, DataError, FormatError
from bofreduce.index import (
    NoMatch,
    build_index,
    classify_1nn,
    index_from_bytes,
    index_size_report,
    index_to_bytes,
    linear_scan_query,
    load_index,
    predict_labels,
    query,
    save_index,
)
from bofreduce.synthetic import generate_synthetic_bags
from bofreduce.vocabulary import KMeansConfig, assign_words, build_vocabulary

from .oracles import brute_cosine_ranking, brute_transpose


def bag(entries, image_id):
    return BagOfWords.from_entries(image_id, entries)


def same_ranking(got, want, k, tol=1e-9, tie=1e-12):
    """Equal orderings up to reordering inside groups of numerically tied scores."""
    g, w = list(got), list(want)
    assert len(g) == len(w)
    for (_, a), (_, b) in zip(g, w):
        assert abs(a - b) <= tol
    i = 0
    while i < len(w):
        j = i
        while j + 1 < len(w) and abs(w[j + 1][1] - w[i][1]) <= tie:
            j += 1
        ids_g = {x for x, _ in g[i : j + 1]}
        ids_w = {x for x, _ in w[i : j + 1]}
        if j + 1 == k:
            # a tie group cut by k may legitimately keep different members
            assert len(ids_g) == len(ids_w)
        else:
            assert ids_g == ids_w
        i = j + 1
    return True


def test_same_ranking_helper_rejects_swaps():
    with pytest.raises(AssertionError):
        same_ranking([("a", 0.9), ("b", 0.5)], [("b", 0.9), ("a", 0.5)], 10)


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------


def test_single_image_index():
    ix = build_index([bag([(4, 2)], "only")])
    assert ix.stats.N == 1 and ix.stats.df == {4: 1} and ix.stats.idf[4] == 0.0
    assert ix.doc_norm == {"only": 0.0}
    assert query(ix, bag([(4, 1)], "q")).items == []


def test_disjoint_images():
    ix = build_index([bag([(1, 1), (2, 3)], "a"), bag([(5, 2)], "b")])
    assert all(len(p) == 1 for p in ix.postings.values())
    assert index_size_report(ix).mean_posting_length == 1.0


def test_postings_match_transpose():
    corpus = generate_synthetic_bags(500, 30, 800, seed=4)
    ix = build_index(corpus)
    docs = {b.image_id: b.as_dict() for b in corpus}
    assert ix.postings == brute_transpose(docs)
    for b in corpus:
        w = np.array([tf * ix.stats.idf[x] for x, tf in b.entries])
        assert ix.doc_norm[b.image_id] == pytest.approx(math.sqrt(float((w * w).sum())), rel=1e-12)


def test_duplicate_ids_rejected():
    with pytest.raises(DataError):
        build_index([bag([(1, 1)], "a"), bag([(2, 1)], "a")])
    with pytest.raises(DataError):
        build_index([])
    with pytest.raises(DataError):
        build_index([bag([(1, 1)], "a")], labels={"b": "x"})


def test_index_size_report_recount():
    corpus = generate_synthetic_bags(500, 25, 600, seed=5)
    r = index_size_report(build_index(corpus))
    post = brute_transpose({b.image_id: b.as_dict() for b in corpus})
    assert r.total_postings == sum(len(v) for v in post.values())
    assert r.distinct_words == len(post)
    assert r.mean_posting_length == r.total_postings / r.distinct_words
    single = build_index([bag([(1, 1), (3, 2), (8, 1)], "x")])
    assert index_size_report(single).distinct_words == 3


# ---------------------------------------------------------------------------
# query
# ---------------------------------------------------------------------------


def test_self_query_scores_one():
    corpus = generate_synthetic_bags(60, 40, 300, seed=6)
    ix = build_index(corpus)
    for b in corpus[:20]:
        res = query(ix, b, 5)
        assert res.ids[0] == b.image_id
        assert res.scores[0] == pytest.approx(1.0, abs=1e-9)


def test_query_without_indexed_words():
    ix = build_index([bag([(1, 1)], "a"), bag([(2, 1)], "b")])
    assert query(ix, bag([(9, 3)], "q")).items == []
    assert query(ix, BagOfWords("q", [], [])).items == []
    with pytest.raises(ConfigError):
        query(ix, bag([(1, 1)], "q"), k=0)


def test_ties_break_by_image_id():
    corpus = [bag([(1, 1), (9, 1)], n) for n in ("d", "b", "c")] + [bag([(5, 1)], "a")]
    res = query(build_index(corpus), bag([(1, 1)], "q"))
    assert res.ids == ["b", "c", "d"]
    assert len(set(res.scores)) == 1


def test_linear_scan_matches_brute_oracle():
    rng = np.random.default_rng(7)
    corpus = generate_synthetic_bags(200, 20, 150, seed=7)
    stats = compute_corpus_stats(corpus)
    docs = {b.image_id: b.as_dict() for b in corpus}
    for _ in range(60):
        q = BagOfWords.from_tokens("q", rng.integers(0, 160, size=rng.integers(1, 25)))
        got = linear_scan_query(corpus, stats, q, 30)
        same_ranking(got, brute_cosine_ranking(docs, q.as_dict(), 30), 30)


def test_query_matches_linear_scan_500_docs():
    rng = np.random.default_rng(8)
    corpus = generate_synthetic_bags(500, 30, 1000, seed=8)
    ix = build_index(corpus)
    for i in range(200):
        q = corpus[i] if i % 2 else BagOfWords.from_tokens("q", rng.integers(0, 1000, size=30))
        same_ranking(query(ix, q, 100), linear_scan_query(corpus, ix.stats, q, 100), 100)


def test_scores_bounded_and_symmetric():
    corpus = generate_synthetic_bags(40, 15, 60, seed=9)
    ix = build_index(corpus)
    scores = {}
    for b in corpus:
        for d, s in query(ix, b, 40):
            assert 0.0 < s <= 1.0 + 1e-12
            scores[(b.image_id, d)] = s
    for (a, d), s in scores.items():
        assert scores[(d, a)] == pytest.approx(s, abs=1e-12)


def test_postings_touched_counter():
    corpus = generate_synthetic_bags(300, 25, 400, seed=10)
    ix = build_index(corpus)
    post = ix.postings
    rng = np.random.default_rng(10)
    for _ in range(50):
        q = BagOfWords.from_tokens("q", rng.integers(0, 450, size=20))
        assert query(ix, q).postings_touched == sum(len(post.get(w, [])) for w in q.as_dict())


def test_pruned_query_only_reaches_shared_words():
    corpus = generate_synthetic_bags(200, 40, 300, seed=11)
    stats = compute_corpus_stats(corpus)
    cfg = WordPruneConfig("tfidf", 0.25, "exact_budget")
    pruned = prune_corpus(corpus, stats, cfg)
    ix = build_index(pruned)
    docs = {b.image_id: b.as_dict() for b in pruned}
    for q in prune_corpus(corpus[:30], stats, cfg):
        for d, _ in query(ix, q):
            assert set(q.as_dict()) & set(docs[d])


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------


def test_classify_examples():
    corpus = [bag([(1, 2), (2, 1)], "a"), bag([(3, 1), (4, 2)], "b"), bag([(5, 1)], "c")]
    ix = build_index(corpus, {"a": "tower", "b": "bridge", "c": "dome"})
    assert classify_1nn(ix, corpus[1]) == "bridge"
    with pytest.raises(NoMatch):
        classify_1nn(ix, BagOfWords("q", [], []))
    assert predict_labels(ix, [BagOfWords("q", [], []), corpus[0]]) == {"q": None, "a": "tower"}
    with pytest.raises(ConfigError):
        classify_1nn(build_index(corpus), corpus[0])


def test_classify_matches_brute_cosine(small_corpus):
    vocab = build_vocabulary(small_corpus.train, KMeansConfig(k=24, seed=0))
    train = [assign_words(fs, vocab) for fs in small_corpus.train]
    test = [assign_words(fs, vocab) for fs in small_corpus.test]
    ix = build_index(train, small_corpus.labels)
    docs = {b.image_id: b.as_dict() for b in train}
    for q in test:
        best = brute_cosine_ranking(docs, q.as_dict(), 1)
        assert classify_1nn(ix, q) == small_corpus.labels[best[0][0]]


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def test_index_round_trip(tmp_path):
    corpus = generate_synthetic_bags(80, 20, 100, seed=12)
    labels = {b.image_id: f"c{i % 3}" for i, b in enumerate(corpus)}
    for lab in (None, labels):
        ix = build_index(corpus, lab)
        save_index(ix, tmp_path / "x.bofi")
        loaded = load_index(tmp_path / "x.bofi")
        assert loaded == ix
        assert index_to_bytes(loaded) == (tmp_path / "x.bofi").read_bytes()
        q = corpus[3]
        assert query(loaded, q).items == query(ix, q).items


def test_index_header_layout():
    ix = build_index([bag([(7, 2)], "a"), bag([(7, 1), (9, 1)], "b")])
    data = index_to_bytes(ix)
    assert data[:4] == b"BOFI"
    assert np.frombuffer(data[4:16], "<u4").tolist() == [1, 2, 2]
    # word 7: id, df, length, then (ordinal, tf) pairs
    assert np.frombuffer(data[16:44], "<u4").tolist() == [7, 2, 2, 0, 2, 1, 1]


def test_corrupt_index_rejected():
    data = index_to_bytes(build_index(generate_synthetic_bags(10, 5, 20, seed=1)))
    with pytest.raises(FormatError):
        index_from_bytes(b"XXXX" + data[4:])
    with pytest.raises(FormatError):
        index_from_bytes(data[:-3])
    with pytest.raises(FormatError):
        index_from_bytes(data + b"\0")
