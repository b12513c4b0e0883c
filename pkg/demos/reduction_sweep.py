"""
How much of each image can we throw away?
=========================================

Add uniform noise features to the planted corpus, then keep only a fraction
of each image's words (or features) under several criteria and watch the
recognition accuracy.
"""

from bofreduce import KMeansConfig, SyntheticConfig, build_vocabulary, generate_synthetic_corpus, run_sweep

cfg = SyntheticConfig(n_classes=6, images_per_class=10, features_per_image=200, dimensionality=16,
                      noise_fraction=0.7, seed=0)
corpus = generate_synthetic_corpus(cfg)
vocab = build_vocabulary(corpus.train, KMeansConfig(k=60, seed=0))

# Feature-level criteria (random, scale) prune before quantization; word-level
# criteria (tf, idf, tfidf, random_words) prune the bags. "both" reduces the
# indexed images and the queries alike.
points = run_sweep(
    corpus.train, vocab, ["random", "scale", "tf", "idf", "tfidf", "random_words"], [1.0, 0.5, 0.25, 0.1],
    ["both"], queries=corpus.test, labels=corpus.labels,
)

print(f"{'criterion':<13}{'p':>6}{'tokens':>9}{'distinct':>10}{'accuracy':>10}")
for p in points:
    if p.metric_name == "accuracy":
        print(f"{p.criterion:<13}{p.retention:>6.2f}{p.mean_tokens:>9.1f}{p.mean_distinct:>10.1f}{p.metric_value:>10.3f}")
