"""Slow, obviously-correct reference implementations used as test oracles.

None of these import the package's algorithms; they work on plain Python
containers so a shared bug cannot hide on both sides of a comparison.
"""

import math
from itertools import permutations

import numpy as np


def brute_nearest(point, centroids):
    """Lowest index among the centroids at minimum squared distance."""
    best, best_d = None, None
    for j, c in enumerate(centroids):
        d = sum((float(a) - float(b)) ** 2 for a, b in zip(point, c))
        if best_d is None or d < best_d:
            best, best_d = j, d
    return best


def brute_counts(descriptors, centroids):
    counts = {}
    for row in descriptors:
        w = brute_nearest(row, centroids)
        counts[w] = counts.get(w, 0) + 1
    return counts


def lloyd_restart_oracle(points, k, restarts=50, seed=0, max_iterations=500):
    """Best final inertia of ``restarts`` plain Lloyd runs from random data points."""
    points = np.asarray(points, dtype=np.float64)
    best = math.inf
    for r in range(restarts):
        rng = np.random.default_rng([seed, r, 7919])
        centers = points[rng.choice(len(points), size=k, replace=False)].copy()
        labels = None
        for _ in range(max_iterations):
            d = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            new = d.argmin(axis=1)
            if labels is not None and np.array_equal(new, labels):
                break
            labels = new
            for j in range(k):
                members = points[labels == j]
                if len(members):
                    centers[j] = members.mean(axis=0)
        d = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        best = min(best, float(d.min(axis=1).sum()))
    return best


def brute_df(bags):
    """{word: number of bags containing it} from a list of {word: tf} dicts."""
    df = {}
    for bag in bags:
        for w in bag:
            df[w] = df.get(w, 0) + 1
    return df


def brute_idf(n, df):
    return math.log(n / df)


def brute_cosine_ranking(docs, q, k):
    """Cosine top-k over ``docs`` ({id: {word: tf}}) with ln(N/df) weights.

    Ties go to the ascending image id; documents with score 0 are omitted.
    """
    n = len(docs)
    df = brute_df(docs.values())
    idf = {w: brute_idf(n, c) for w, c in df.items()}

    def vec(bag):
        return {w: tf * idf.get(w, 0.0) for w, tf in bag.items()}

    qv = vec(q)
    qn = math.sqrt(sum(v * v for v in qv.values()))
    out = []
    for image_id, bag in docs.items():
        dv = vec(bag)
        dn = math.sqrt(sum(v * v for v in dv.values()))
        dot = sum(qv[w] * dv[w] for w in qv if w in dv)
        if dot > 0 and qn > 0 and dn > 0:
            out.append((image_id, dot / (qn * dn)))
    out.sort(key=lambda t: (-t[1], t[0]))
    return out[:k]


def brute_transpose(docs):
    """{word: [(image_id, tf)]} sorted by image id."""
    post = {}
    for image_id in sorted(docs):
        for w, tf in docs[image_id].items():
            post.setdefault(w, []).append((image_id, tf))
    return post


def brute_ap(ranked, positives, ignored):
    """AP straight from the precision-at-rank definition, one rank at a time."""
    kept = [r for r in ranked if r not in ignored]
    precisions = []
    for r in range(1, len(kept) + 1):
        if kept[r - 1] in positives:
            prefix = kept[:r]
            precisions.append(sum(1 for x in prefix if x in positives) / r)
    return sum(precisions) / len(positives)


def brute_exact_budget(entries, scores, budget):
    """Minimal score-ordered prefix reaching ``budget`` tokens, found by enumeration.

    ``entries`` are (word, tf) pairs. Every ordering consistent with
    (score desc, word asc) is the same ordering, so enumerating all
    permutations and keeping the sorted ones checks the sort itself.
    """
    if budget <= 0 or not entries:
        return set()
    key = {w: (-scores[w], w) for w, _ in entries}
    candidates = [p for p in permutations(entries) if all(key[a[0]] < key[b[0]] for a, b in zip(p, p[1:]))]
    assert len(candidates) == 1
    kept, total = set(), 0
    for w, tf in candidates[0]:
        if total >= budget:
            break
        kept.add(w)
        total += tf
    return kept


def brute_keep_whole(entries, scores, budget):
    exact = brute_exact_budget(entries, scores, budget)
    if not exact:
        return set()
    cut = min(scores[w] for w in exact)
    return {w for w, _ in entries if scores[w] >= cut}


def brute_scale_keep(scales, n):
    """Indices of the n largest scales, earlier positions first among equals."""
    ranked = sorted(range(len(scales)), key=lambda i: (-scales[i], i))
    return sorted(ranked[:n])


def ceil_keep(p, m):
    """Retention count for fraction p of m items, using exact rational arithmetic."""
    from fractions import Fraction

    if m == 0:
        return 0
    x = Fraction(p).limit_denominator(10**6) * m
    return max(1, min(m, math.ceil(x)))
