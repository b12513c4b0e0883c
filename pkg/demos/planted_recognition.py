"""
Recognising landmarks in a planted synthetic corpus
===================================================

Twelve classes of twenty images each. Every class owns a few descriptor
clusters, so a visual vocabulary should separate the classes and a 1-NN
classifier over the inverted index should get every test image right.
"""

import numpy as np

from bofreduce import (
    KMeansConfig,
    SyntheticConfig,
    accuracy,
    assign_words,
    build_index,
    build_vocabulary,
    generate_synthetic_corpus,
    macro_f1,
)
from bofreduce.index import predict_labels

# Generate the corpus. A fifth of each class is indexed, the rest are queries.
corpus = generate_synthetic_corpus(SyntheticConfig(seed=0))
print(f"{len(corpus.train)} indexed images, {len(corpus.test)} queries")

# Cluster the descriptors of the indexed images into 48 visual words.
vocab = build_vocabulary(corpus.train, KMeansConfig(k=48, seed=0))
print("vocabulary shape", vocab.centroids.shape)

# Quantize every image into a bag of words.
train = [assign_words(fs, vocab) for fs in corpus.train]
test = [assign_words(fs, vocab) for fs in corpus.test]
print("mean distinct words per image", np.mean([len(b) for b in train]))

# Index the labelled images and classify each query by its best match.
ix = build_index(train, corpus.labels)
preds = predict_labels(ix, test)
truth = {q.image_id: corpus.labels[q.image_id] for q in test}
print("accuracy", accuracy(preds, truth))
print("macro-F1", macro_f1(preds, truth).macro_f1)
