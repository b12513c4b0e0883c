"""
Query cost against distinct words per image
===========================================

Fewer distinct words per image means shorter posting-list walks. The
postings-touched counter shows this independently of the machine; the
wall-clock columns should follow the same trend.
"""

from bofreduce.bench import BenchConfig, run_bench

# A 5k-image Zipf corpus keeps this quick; the default configuration uses 50k.
cfg = BenchConfig(n_images=5_000, query_count=50, repetitions=3)
for site in ("query_only", "query_and_dataset"):
    print(site)
    print(f"{'p':>6}{'distinct q':>12}{'distinct doc':>14}{'mean us':>10}{'postings':>12}")
    for row in run_bench(BenchConfig(**{**cfg.__dict__, "site": site})):
        print(f"{row.retention:>6.2f}{row.mean_distinct_query:>12.1f}{row.mean_distinct_doc:>14.1f}"
              f"{row.mean_us:>10.1f}{row.postings_touched:>12}")
