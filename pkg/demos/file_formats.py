"""
The on-disk formats
===================

Features (BOFF binary, BOFT text), vocabularies (BOFV), bags of words (BOFW)
and inverted indexes (BOFI) all load back to equal objects and re-save to
identical bytes.
"""

import tempfile
from pathlib import Path

import numpy as np

from bofreduce import (
    FeatureSet,
    Vocabulary,
    assign_words,
    build_index,
    load_bows,
    load_features,
    load_index,
    load_vocabulary,
    save_bows,
    save_features,
    save_index,
    save_vocabulary,
)
from bofreduce.featureio import load_features_text, save_features_text

rng = np.random.default_rng(0)
out = Path(tempfile.mkdtemp())

# One image with 5 features: geometry is x, y, scale, orientation.
geometry = np.column_stack([rng.uniform(0, 640, (5, 2)), rng.uniform(1, 8, 5), rng.uniform(-3, 3, 5)])
fs = FeatureSet("img0", geometry, rng.normal(size=(5, 8)))
save_features(fs, out / "img0.boff")
save_features_text(fs, out / "img0.boft")
print((out / "img0.boft").read_text())
assert load_features(out / "img0.boff") == load_features_text(out / "img0.boft") == fs

vocab = Vocabulary(rng.normal(size=(4, 8)))
save_vocabulary(vocab, out / "v.bofv")
assert load_vocabulary(out / "v.bofv") == vocab

bags = [assign_words(fs, vocab)]
save_bows(bags, out / "bags.bofw")
print((out / "bags.bofw").read_text())
assert load_bows(out / "bags.bofw") == bags

ix = build_index(bags, {"img0": "tower"})
save_index(ix, out / "ix.bofi")
assert load_index(out / "ix.bofi") == ix

for f in sorted(out.iterdir()):
    print(f"{f.name:<12}{f.stat().st_size:>6} bytes")
