"""Command-line pipeline: one subcommand per stage, files in between.

Every subcommand prints a one-line JSON summary on stdout; logs go to stderr.
Failures print ``{"error": ..., "message": ..., "exit_code": ...}`` on stderr
and exit with 2 (configuration), 3 (data) or 4 (internal invariant).

``--config FILE`` reads a JSON object whose keys are option names (dashes or
underscores). Top-level keys apply to every subcommand, and a nested object
under a subcommand's name applies to that subcommand only. Flags given on the
command line win over the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import bench as bench_mod
from .bow import (
    CRITERIA as WORD_CRITERIA,
    WordPruneConfig,
    compute_corpus_stats,
    corpus_reduction_report,
    load_bows,
    load_corpus_stats,
    prune_corpus,
    save_bows,
    save_corpus_stats,
)
from .errors import ConfigError, DataError, InvariantError
from .evaluation import (
    accuracy,
    average_precision,
    load_ground_truth,
    macro_f1,
    mean_average_precision,
    micro_prf,
    save_ground_truth_json,
)
from .featureio import (
    RetentionSpec,
    derive_seed,
    load_any_features,
    load_manifest_features,
    prune_by_scale,
    prune_random_features,
    read_labels,
    read_manifest,
    save_features,
    save_features_text,
    write_labels,
    write_manifest,
)
from .index import build_index, index_size_report, load_index, predict_labels, query, save_index
from .synthetic import SyntheticConfig, generate_synthetic_corpus
from .sweep import SITES, load_word_files, run_sweep, write_sweep_csv
from .vocabulary import KMeansConfig, assign_words, build_vocabulary, load_vocabulary, save_vocabulary

logger = logging.getLogger("bofreduce")

EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 2, 3, 4
ALL_CRITERIA = ("random", "scale", "tf", "idf", "tfidf")
TIE_CHOICES = ("whole", "exact", "keep_whole_tie_group", "exact_budget")


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


# ---------------------------------------------------------------------------
# argument helpers
# ---------------------------------------------------------------------------


def _retention(text) -> RetentionSpec:
    """Fractions in (0, 1]; integers above 1 are absolute counts."""
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise ConfigError(f"invalid retention {text!r}") from None
    if value > 1 and value == int(value):
        return RetentionSpec.absolute(int(value))
    return RetentionSpec.fraction(value)


def _list(text, convert=str):
    if isinstance(text, (list, tuple)):
        return [convert(t) for t in text]
    return [convert(t.strip()) for t in str(text).split(",") if t.strip()]


def _tie(policy: str) -> str:
    return {"whole": "keep_whole_tie_group", "exact": "exact_budget"}.get(policy, policy)


def _require(args, *names):
    for name in names:
        if getattr(args, name, None) in (None, ""):
            raise ConfigError(f"--{name.replace('_', '-')} is required")


def _load_labels(path):
    return read_labels(path) if path else None


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen_synthetic(args) -> dict:
    _require(args, "out")
    cfg = SyntheticConfig(
        n_classes=args.n_classes,
        images_per_class=args.images_per_class,
        features_per_image=args.features_per_image,
        dimensionality=args.dim,
        clusters_per_class=args.clusters_per_class,
        noise_fraction=args.noise_fraction,
        train_fraction=args.train_fraction,
        seed=args.seed,
    )
    corpus = generate_synthetic_corpus(cfg)
    out = Path(args.out)
    feat_dir = out / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    suffix = ".boft" if args.text else ".boff"
    entries = []
    for fs in corpus.feature_sets:
        p = feat_dir / f"{fs.image_id}{suffix}"
        (save_features_text if args.text else save_features)(fs, p)
        entries.append((fs.image_id, Path("features") / p.name))
    by_id = dict(entries)
    write_manifest(entries, out / "manifest.tsv")
    write_manifest([(i, by_id[i]) for i in corpus.train_ids], out / "train.tsv")
    write_manifest([(i, by_id[i]) for i in corpus.test_ids], out / "test.tsv")
    write_labels(corpus.labels, out / "labels.tsv")
    save_ground_truth_json(corpus.ground_truth, out / "groundtruth.json")
    return {
        "images": len(corpus.feature_sets),
        "train": len(corpus.train_ids),
        "test": len(corpus.test_ids),
        "queries": len(corpus.ground_truth),
        "outputs": {
            name: str(out / name) for name in ("manifest.tsv", "train.tsv", "test.tsv", "labels.tsv", "groundtruth.json")
        },
    }


def cmd_build_vocab(args) -> dict:
    _require(args, "manifest", "out", "k")
    corpus = load_manifest_features(args.manifest)
    cfg = KMeansConfig(
        k=args.k,
        max_iterations=args.max_iterations,
        convergence_tolerance=args.tolerance,
        seed=args.seed,
        sample_cap=args.sample_cap,
        n_init=args.n_init,
        refine=args.refine,
    )
    vocab = build_vocabulary(corpus, cfg)
    save_vocabulary(vocab, args.out)
    return {"images": len(corpus), "k": vocab.size, "dimensionality": vocab.dimensionality, "outputs": {"vocab": args.out}}


def cmd_prune_features(args) -> dict:
    _require(args, "manifest", "out_dir", "retention")
    criterion = args.criterion or "scale"
    if criterion not in ("scale", "random"):
        raise ConfigError("prune-features supports --criterion scale or random")
    keep = _retention(args.retention)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries, before, after = [], 0, 0
    for image_id, path in read_manifest(args.manifest):
        fs = load_any_features(path, image_id)
        if criterion == "scale":
            pruned = prune_by_scale(fs, keep)
        else:
            pruned = prune_random_features(fs, keep, derive_seed(args.seed, image_id))
        target = out / f"{image_id}.boff"
        save_features(pruned, target)
        entries.append((image_id, target.name))
        before += len(fs)
        after += len(pruned)
    write_manifest(entries, out / "manifest.tsv")
    n = max(len(entries), 1)
    return {
        "images": len(entries),
        "mean_features_before": before / n,
        "mean_features_after": after / n,
        "outputs": {"manifest": str(out / "manifest.tsv")},
    }


def cmd_assign(args) -> dict:
    _require(args, "manifest", "vocab", "out")
    vocab = load_vocabulary(args.vocab)
    bags = [assign_words(load_any_features(p, i), vocab) for i, p in read_manifest(args.manifest)]
    save_bows(bags, args.out)
    tokens = sum(b.total_tokens for b in bags)
    return {"images": len(bags), "tokens": tokens, "outputs": {"bow": args.out}}


def _stats_for(args, bags):
    if args.stats:
        return load_corpus_stats(args.stats)
    if args.stats_bow:
        return compute_corpus_stats(load_bows(args.stats_bow))
    return compute_corpus_stats(bags)


def cmd_prune_words(args) -> dict:
    _require(args, "bow", "out", "retention")
    criterion = args.criterion or "tfidf"
    if criterion not in WORD_CRITERIA:
        raise ConfigError(f"prune-words supports --criterion {'|'.join(WORD_CRITERIA)}")
    bags = load_bows(args.bow)
    stats = _stats_for(args, bags)
    cfg = WordPruneConfig(criterion, _retention(args.retention), _tie(args.tie_policy), args.seed)
    pruned = prune_corpus(bags, stats, cfg)
    save_bows(pruned, args.out)
    outputs = {"bow": args.out}
    if args.save_stats:
        save_corpus_stats(stats, args.save_stats)
        outputs["stats"] = args.save_stats
    rep = corpus_reduction_report(bags, pruned)
    return {
        "images": len(bags),
        "mean_tokens_before": rep.mean_tokens_before,
        "mean_distinct_before": rep.mean_distinct_before,
        "mean_tokens_after": rep.mean_tokens_after,
        "mean_distinct_after": rep.mean_distinct_after,
        "outputs": outputs,
    }


def cmd_build_index(args) -> dict:
    _require(args, "bow", "out")
    ix = build_index(load_bows(args.bow), _load_labels(args.labels))
    save_index(ix, args.out)
    summary = {"images": ix.n_images, "labelled": ix.labels is not None, "outputs": {"index": args.out}}
    if args.stats:
        summary["index_stats"] = index_size_report(ix).as_dict()
    return summary


def cmd_query(args) -> dict:
    _require(args, "index", "bow", "out")
    ix = load_index(args.index)
    queries = load_bows(args.bow)
    touched = 0
    t0 = time.perf_counter()
    with open(args.out, "w") as fh:
        for q in queries:
            res = query(ix, q, args.k)
            touched += res.postings_touched
            fh.write(json.dumps({"query_id": q.image_id, "results": res.items, "postings_touched": res.postings_touched}) + "\n")
    return {
        "queries": len(queries),
        "postings_touched": touched,
        "seconds": time.perf_counter() - t0,
        "outputs": {"results": args.out},
    }


def cmd_classify(args) -> dict:
    _require(args, "index", "bow", "out")
    ix = load_index(args.index)
    preds = predict_labels(ix, load_bows(args.bow))
    Path(args.out).write_text("".join(f"{i}\t{'' if p is None else p}\n" for i, p in preds.items()))
    return {
        "queries": len(preds),
        "no_match": sum(p is None for p in preds.values()),
        "outputs": {"predictions": args.out},
    }


def cmd_eval_retrieval(args) -> dict:
    _require(args, "index", "bow", "gt")
    ix = load_index(args.index)
    bags = {b.image_id: b for b in load_bows(args.bow)}
    gts = load_ground_truth(args.gt)
    missing = [g.query_id for g in gts if g.query_id not in bags]
    if missing:
        raise DataError(f"{len(missing)} ground-truth queries have no bag, e.g. {missing[0]!r}")
    aps = {}
    for g in gts:
        aps[g.name or g.query_id] = average_precision(query(ix, bags[g.query_id], args.k), g)
    summary = {"queries": len(gts), "mAP": mean_average_precision(aps.values())}
    if args.out:
        Path(args.out).write_text(json.dumps({"mAP": summary["mAP"], "ap": aps}, indent=1) + "\n")
        summary["outputs"] = {"report": args.out}
    return summary


def cmd_eval_recognition(args) -> dict:
    _require(args, "index", "bow", "labels")
    ix = load_index(args.index)
    queries = load_bows(args.bow)
    labels = read_labels(args.labels)
    missing = [q.image_id for q in queries if q.image_id not in labels]
    if missing:
        raise DataError(f"{len(missing)} query images have no label, e.g. {missing[0]!r}")
    preds = predict_labels(ix, queries)
    truth = {q.image_id: labels[q.image_id] for q in queries}
    mf = macro_f1(preds, truth)
    p, r, f = micro_prf(preds, truth)
    summary = {
        "queries": len(queries),
        "accuracy": accuracy(preds, truth),
        "macro_f1": mf.macro_f1,
        "micro_precision": p,
        "micro_recall": r,
        "micro_f1": f,
        "no_match": sum(v is None for v in preds.values()),
    }
    if args.out:
        per_class = {c: vars(s) for c, s in mf.per_class.items()}
        Path(args.out).write_text(json.dumps({**summary, "per_class": per_class}, indent=1) + "\n")
        summary["outputs"] = {"report": args.out}
    return summary


def cmd_sweep(args) -> dict:
    _require(args, "out")
    task = args.task
    criteria = _list(args.criterion or ",".join(ALL_CRITERIA))
    for c in criteria:
        if c not in ALL_CRITERIA + ("random_words",):
            raise ConfigError(f"unknown criterion {c!r}")
    retentions = _list(args.retention or "1.0", float)
    sites = _list(args.site or "dataset")
    for s in sites:
        if s not in SITES:
            raise ConfigError(f"--site must be among {SITES}")
    if args.word_files:
        # pre-quantized images: no vocabulary needed
        vocab = None
        dataset = load_word_files(args.word_files)
        queries = load_word_files(args.queries_word_files) if args.queries_word_files else None
    else:
        _require(args, "manifest", "vocab")
        vocab = load_vocabulary(args.vocab)
        dataset = load_manifest_features(args.manifest)
        queries = load_manifest_features(args.queries_manifest) if args.queries_manifest else None
    if task == "recognition":
        if queries is None:
            raise ConfigError("recognition sweep needs --queries-manifest or --queries-word-files")
        _require(args, "labels")
        kwargs = {"queries": queries, "labels": read_labels(args.labels)}
    else:
        _require(args, "gt")
        kwargs = {"ground_truth": load_ground_truth(args.gt), "queries": queries}
    t0 = time.perf_counter()
    points = run_sweep(
        dataset,
        vocab,
        criteria,
        retentions,
        sites,
        task,
        tie_policy=_tie(args.tie_policy),
        seed=args.seed,
        k=args.k,
        time_queries=args.time,
        **kwargs,
    )
    write_sweep_csv(points, args.out)
    return {"rows": len(points), "seconds": time.perf_counter() - t0, "outputs": {"csv": args.out}}


def cmd_bench(args) -> dict:
    _require(args, "out")
    site = {"query": "query_only", "both": "query_and_dataset"}.get(args.site or "both", args.site)
    cfg = bench_mod.BenchConfig(
        n_images=args.n_images,
        tokens_per_image=args.tokens_per_image,
        vocab_size=args.vocab_size,
        zipf_exponent=args.zipf,
        query_count=args.queries,
        repetitions=args.repetitions,
        warmup=args.warmup,
        site=site,
        retentions=tuple(_list(args.retention or "1.0,0.5,0.25,0.1", float)),
        criterion=args.criterion or "tfidf",
        tie_policy=_tie(args.tie_policy or "exact"),
        k=args.k,
        seed=args.seed,
    )
    dataset = load_bows(args.bow) if args.bow else None
    queries = load_bows(args.queries_bow) if args.queries_bow else None
    t0 = time.perf_counter()
    rows = bench_mod.run_bench(cfg, dataset, queries)
    bench_mod.write_bench_csv(rows, args.out)
    return {
        "rows": len(rows),
        "postings_touched": [r.postings_touched for r in rows],
        "seconds": time.perf_counter() - t0,
        "outputs": {"csv": args.out},
    }


def cmd_index_stats(args) -> dict:
    _require(args, "index")
    return index_size_report(load_index(args.index)).as_dict()


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _common(p, *, criterion=False, retention=False, site=False, tie=False, k=False):
    p.add_argument("--seed", type=int, default=0)
    if criterion:
        p.add_argument("--criterion", help="random|scale|tf|idf|tfidf (comma list for sweep)")
    if retention:
        p.add_argument("--retention", help="kept fraction in (0,1], or an integer count > 1")
    if site:
        p.add_argument("--site", help="dataset|query|both")
    if tie:
        p.add_argument("--tie-policy", default="whole", choices=TIE_CHOICES)
    if k:
        p.add_argument("--k", type=int, default=100)


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="bofreduce", description=__doc__.split("\n")[0])
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser)

    p = sub.add_parser("gen-synthetic", help="write a planted synthetic corpus")
    _common(p)
    p.add_argument("--out")
    p.add_argument("--n-classes", type=int, default=12)
    p.add_argument("--images-per-class", type=int, default=20)
    p.add_argument("--features-per-image", type=int, default=300)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--clusters-per-class", type=int, default=4)
    p.add_argument("--noise-fraction", type=float, default=0.0)
    p.add_argument("--train-fraction", type=float, default=0.2)
    p.add_argument("--text", action="store_true", help="write the text feature format")
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("build-vocab", help="k-means vocabulary from a feature manifest")
    _common(p)
    p.add_argument("--manifest")
    p.add_argument("--out")
    p.add_argument("--k", type=int)
    p.add_argument("--max-iterations", type=int, default=100)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--sample-cap", type=int)
    p.add_argument("--n-init", type=int, default=1)
    p.add_argument("--refine", action="store_true", help="polish each run with single-point transfers")
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("prune-features", help="scale or random reduction before assignment")
    _common(p, criterion=True, retention=True)
    p.add_argument("--manifest")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_prune_features)

    p = sub.add_parser("assign", help="quantize features into bags of words")
    _common(p)
    p.add_argument("--manifest")
    p.add_argument("--vocab")
    p.add_argument("--out")
    p.set_defaults(func=cmd_assign)

    p = sub.add_parser("prune-words", help="tf/idf/tfidf/random word reduction")
    _common(p, criterion=True, retention=True, tie=True)
    p.add_argument("--bow")
    p.add_argument("--out")
    p.add_argument("--stats", help="corpus statistics file for idf")
    p.add_argument("--stats-bow", help="bag file to compute idf statistics from")
    p.add_argument("--save-stats")
    p.set_defaults(func=cmd_prune_words)

    p = sub.add_parser("build-index", help="inverted index from bags")
    _common(p)
    p.add_argument("--bow")
    p.add_argument("--labels")
    p.add_argument("--out")
    p.add_argument("--stats", action="store_true", help="include the index size report")
    p.set_defaults(func=cmd_build_index)

    p = sub.add_parser("query", help="top-k retrieval for every bag of a file")
    _common(p, k=True)
    p.add_argument("--index")
    p.add_argument("--bow")
    p.add_argument("--out")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("classify", help="1-NN landmark labels")
    _common(p)
    p.add_argument("--index")
    p.add_argument("--bow")
    p.add_argument("--out")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("eval-retrieval", help="mAP against ground truth")
    _common(p, k=True)
    p.add_argument("--index")
    p.add_argument("--bow")
    p.add_argument("--gt", help="ground-truth JSON or Oxford gt_files directory")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_retrieval)

    p = sub.add_parser("eval-recognition", help="accuracy and macro-F1")
    _common(p)
    p.add_argument("--index")
    p.add_argument("--bow")
    p.add_argument("--labels")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_recognition)

    p = sub.add_parser("sweep", help="metric vs words-per-image CSV")
    _common(p, criterion=True, retention=True, site=True, tie=True, k=True)
    p.add_argument("--task", choices=("retrieval", "recognition"), default="recognition")
    p.add_argument("--manifest", help="dataset (indexed) images")
    p.add_argument("--queries-manifest")
    p.add_argument("--word-files", help="directory of pre-quantized word files instead of --manifest/--vocab")
    p.add_argument("--queries-word-files")
    p.add_argument("--vocab")
    p.add_argument("--labels")
    p.add_argument("--gt")
    p.add_argument("--out")
    p.add_argument("--time", action="store_true", help="fill mean_query_us (makes rows non-reproducible)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", help="query latency vs distinct words CSV")
    _common(p, criterion=True, retention=True, site=True, k=True)
    p.add_argument("--tie-policy", default="exact", choices=TIE_CHOICES)
    p.add_argument("--bow", help="dataset bags (default: synthetic)")
    p.add_argument("--queries-bow")
    p.add_argument("--n-images", type=int, default=50_000)
    p.add_argument("--tokens-per-image", type=int, default=300)
    p.add_argument("--vocab-size", type=int, default=20_000)
    p.add_argument("--zipf", type=float, default=0.8)
    p.add_argument("--queries", type=int, default=100)
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("index-stats", help="posting-list statistics of an index as JSON")
    _common(p)
    p.add_argument("--index")
    p.set_defaults(func=cmd_index_stats)

    parser._subcommands = sub.choices  # noqa: SLF001 - used by _apply_config
    return parser


def _apply_config(parser, argv):
    pre, _ = parser.parse_known_args(argv)
    if not pre.config:
        return
    try:
        config = json.loads(Path(pre.config).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {pre.config} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {pre.config}: {exc}") from None
    if not isinstance(config, dict):
        raise ConfigError("config file must hold a JSON object")
    sub = parser._subcommands[pre.command]
    known = {a.dest for a in sub._actions}
    nested = [k for k, v in config.items() if isinstance(v, dict)]
    for key in nested:
        if key not in parser._subcommands:
            raise ConfigError(f"config section {key!r} is not a subcommand")
    values = {k: v for k, v in config.items() if k not in nested}
    values.update(config.get(pre.command, {}))
    defaults = {}
    for key, value in values.items():
        dest = key.replace("-", "_")
        if dest not in known:
            raise ConfigError(f"config key {key!r} is not an option of {pre.command}")
        defaults[dest] = value
    sub.set_defaults(**defaults)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        parser = build_parser()
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.INFO,
            stream=sys.stderr,
            format="%(asctime)s %(name)s %(levelname)s %(message)s",
        )
        t0 = time.perf_counter()
        summary = args.func(args)
        summary = {"command": args.command, **summary, "elapsed_s": time.perf_counter() - t0}
        print(json.dumps(summary))
        return 0
    except ConfigError as exc:
        return _fail("config", exc, EXIT_CONFIG)
    except (DataError, OSError, KeyError) as exc:
        return _fail("data", exc, EXIT_DATA)
    except (InvariantError, AssertionError) as exc:
        return _fail("invariant", exc, EXIT_INTERNAL)
    except Exception as exc:  # noqa: BLE001 - anything unexpected is an internal failure
        logger.exception("internal error")
        return _fail("internal", exc, EXIT_INTERNAL)


def _fail(kind, exc, code) -> int:
    print(json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc), "exit_code": code}), file=sys.stderr)
    return code


def run() -> None:
    sys.exit(main())
