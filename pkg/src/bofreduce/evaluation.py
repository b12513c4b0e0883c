"""Retrieval and recognition effectiveness measures.

Average precision is the non-interpolated kind: precision summed at the rank
of every positive, divided by the number of positives, after ambiguous
("junk") images have been dropped from the ranking. Per-class precision,
recall and F1 use the 0/0 -> 0 convention.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import DataError, FormatError

NO_MATCH = None


@dataclass(frozen=True)
class RetrievalGroundTruth:
    query_id: str
    positives: frozenset[str]
    ignored: frozenset[str] = frozenset()
    name: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "positives", frozenset(self.positives))
        object.__setattr__(self, "ignored", frozenset(self.ignored))
        if not self.positives:
            raise DataError(f"query {self.query_id!r} has no positives")
        if self.positives & self.ignored:
            raise DataError(f"query {self.query_id!r}: positives and ignored sets overlap")


def _ranked_ids(ranked) -> list[str]:
    if hasattr(ranked, "ids"):
        return ranked.ids
    return [r[0] if isinstance(r, tuple) else r for r in ranked]


def average_precision(ranked, gt: RetrievalGroundTruth) -> float:
    """AP of a ranking (a RankedResult or a sequence of ids) against ``gt``."""
    ids = _ranked_ids(ranked)
    if len(set(ids)) != len(ids):
        raise DataError("ranked list contains duplicate ids")
    hits = 0
    total = 0.0
    rank = 0
    for image_id in ids:
        if image_id in gt.ignored:
            continue
        rank += 1
        if image_id in gt.positives:
            hits += 1
            total += hits / rank
    return total / len(gt.positives)


def mean_average_precision(aps: Iterable[float]) -> float:
    aps = list(aps)
    if not aps:
        raise DataError("mAP needs at least one query")
    return sum(aps) / len(aps)


def _paired(predictions: Mapping[str, str | None], truth: Mapping[str, str]):
    if set(predictions) != set(truth):
        raise DataError("predictions and ground truth cover different items")
    if not truth:
        raise DataError("empty ground truth")
    return [(truth[i], predictions[i]) for i in sorted(truth)]


def accuracy(predictions: Mapping[str, str | None], truth: Mapping[str, str]) -> float:
    """Fraction of items whose predicted label is the true one ("no match" is wrong)."""
    pairs = _paired(predictions, truth)
    return sum(1 for t, p in pairs if p is not None and p == t) / len(pairs)


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int


@dataclass(frozen=True)
class MacroF1:
    macro_f1: float
    per_class: dict[str, ClassScores] = field(default_factory=dict)

    def __float__(self) -> float:
        return self.macro_f1


def _ratio(a: int, b: int) -> float:
    return a / b if b else 0.0


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def macro_f1(predictions: Mapping[str, str | None], truth: Mapping[str, str]) -> MacroF1:
    """Unweighted mean of per-class F1 over the classes present in ``truth``."""
    pairs = _paired(predictions, truth)
    tp, fp, fn = Counter(), Counter(), Counter()
    for t, p in pairs:
        if p == t:
            tp[t] += 1
        else:
            fn[t] += 1
            if p is not None:
                fp[p] += 1
    per_class = {}
    for c in sorted(set(truth.values())):
        prec = _ratio(tp[c], tp[c] + fp[c])
        rec = _ratio(tp[c], tp[c] + fn[c])
        per_class[c] = ClassScores(prec, rec, _f1(prec, rec), tp[c], fp[c], fn[c])
    return MacroF1(sum(s.f1 for s in per_class.values()) / len(per_class), per_class)


def micro_prf(predictions: Mapping[str, str | None], truth: Mapping[str, str]) -> tuple[float, float, float]:
    """Micro-averaged precision, recall and F1.

    A "no match" prediction counts as a false positive of a pseudo-class, so
    every item contributes exactly one prediction and all three values equal
    the accuracy.
    """
    pairs = _paired(predictions, truth)
    tp = sum(1 for t, p in pairs if p is not None and p == t)
    fp = fn = len(pairs) - tp
    prec = _ratio(tp, tp + fp)
    rec = _ratio(tp, tp + fn)
    # the count form 2tp / (2tp + fp + fn) rounds once, so it equals tp / n exactly
    return prec, rec, _ratio(2 * tp, 2 * tp + fp + fn)


# ---------------------------------------------------------------------------
# ground truth files
# ---------------------------------------------------------------------------


def load_ground_truth_json(path) -> list[RetrievalGroundTruth]:
    """Read ``[{query_id, positives, ignored}, ...]`` (a JSON list or JSON lines)."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
        records = data if isinstance(data, list) else [data]
    except json.JSONDecodeError:
        try:
            records = [json.loads(ln) for ln in text.splitlines() if ln.strip()]
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid ground-truth JSON: {exc.msg}", exc.lineno, path) from None
    out = []
    for i, rec in enumerate(records):
        try:
            out.append(
                RetrievalGroundTruth(
                    rec["query_id"], rec["positives"], rec.get("ignored", []), rec.get("name")
                )
            )
        except (KeyError, TypeError) as exc:
            raise FormatError(f"ground-truth record {i} is missing {exc}", None, path) from None
    return out


def save_ground_truth_json(gts: Sequence[RetrievalGroundTruth], path) -> None:
    records = []
    for g in gts:
        rec = {"query_id": g.query_id, "positives": sorted(g.positives), "ignored": sorted(g.ignored)}
        if g.name is not None:
            rec["name"] = g.name
        records.append(rec)
    Path(path).write_text(json.dumps(records, indent=1) + "\n")


def _lines(path) -> list[str]:
    return [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]


def load_oxford_ground_truth(directory, prefix: str = "oxc1_") -> list[RetrievalGroundTruth]:
    """Read an Oxford Buildings ``gt_files`` directory.

    Every ``<name>_query.txt`` names the query image in its first token (the
    ``oxc1_`` prefix is stripped; the ROI coordinates are ignored). good and
    ok lists form the positives, junk is ignored.
    """
    directory = Path(directory)
    out = []
    for qfile in sorted(directory.glob("*_query.txt")):
        name = qfile.name[: -len("_query.txt")]
        tokens = qfile.read_text().split()
        if not tokens:
            raise FormatError("empty query file", 1, qfile)
        query_id = tokens[0][len(prefix) :] if tokens[0].startswith(prefix) else tokens[0]
        sets = {}
        for kind in ("good", "ok", "junk"):
            f = directory / f"{name}_{kind}.txt"
            sets[kind] = set(_lines(f)) if f.exists() else set()
        out.append(RetrievalGroundTruth(query_id, sets["good"] | sets["ok"], sets["junk"] - sets["good"] - sets["ok"], name))
    if not out:
        raise DataError(f"no *_query.txt files in {directory}")
    return out


def load_ground_truth(path) -> list[RetrievalGroundTruth]:
    """Oxford directory or consolidated JSON, whichever ``path`` is."""
    path = Path(path)
    return load_oxford_ground_truth(path) if path.is_dir() else load_ground_truth_json(path)
