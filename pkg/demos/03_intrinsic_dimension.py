"""Local-PCA intrinsic dimension: a planted rank-5 manifold, then real HKS.

The estimate should be 5 on the planted set for every neighbourhood size;
on spectral descriptors of a small synthetic corpus it is low as well, which
is why a 15-d embedding has room to spare.
"""

import tempfile

import numpy as np

from spectral_siamese import build_corpus, compute_corpus_descriptors, estimate_intrinsic_dimension, \
    synth_corpus

rng = np.random.default_rng(0)
basis, _ = np.linalg.qr(rng.standard_normal((100, 5)))
x = rng.standard_normal((10_000, 5)) @ basis.T + 1e-6 * rng.standard_normal((10_000, 100))
for k in (6, 10, 15, 20, 25):
    rep = estimate_intrinsic_dimension(x, k, rng=k)
    print(f"planted rank 5, k={k:2d}: summary {rep.summary}, per-trial mode {rep.modal}")

with tempfile.TemporaryDirectory() as d:
    synth_corpus(d, subjects=3, poses=2, subdivisions=3)
    c = build_corpus(d, "manifest.txt")
    compute_corpus_descriptors(c, "HKS")
    pool = c.stacked("HKS")
    pool = pool[rng.choice(len(pool), 3000, replace=False)]
    for k in (6, 15, 25):
        rep = estimate_intrinsic_dimension(pool, k, rng=k)
        curve = np.round(rep.mean_residual_curve()[:7], 4)
        print(f"HKS, k={k:2d}: summary {rep.summary}; mean residual variance {curve}")
