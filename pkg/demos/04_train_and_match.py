"""Desk-scale version of the full pipeline.

Six training subjects in five poses each, plus two held-out subjects with
strong non-uniform scaling. Raw HKS fails across the held-out pair because
it is not invariant to the metric distortion; a Siamese branch trained on
the other subjects learns an embedding that recovers some matches.

Takes about two minutes, most of it computing 300 eigenpairs per mesh.
"""

import sys
import tempfile
from pathlib import Path

from spectral_siamese import TrainConfig, build_corpus, compute_corpus_descriptors, count_correct_matches, \
    embed_field, synth_corpus, train
from spectral_siamese.corpus import labelled_pairs
from spectral_siamese.matching import export_match_obj

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp())
synth_corpus(out, subjects=6, poses=5, seed=0, strong_subjects=2, subdivisions=4)
tr, te = build_corpus(out, "train.txt"), build_corpus(out, "test.txt")
print(f"corpus in {out}: {len(tr)} training and {len(te)} held-out models, {tr.vertex_count} vertices")
compute_corpus_descriptors(tr, "HKS")
compute_corpus_descriptors(te, "HKS")

# the paper's lr0 = 0.015 collapses the embedding at this scale
cfg = TrainConfig(batch_size=128, iterations=2000, lr0=0.001, eval_every=500)
params, history = train(tr, "HKS", cfg, validation=labelled_pairs(te, "HKS", 4096, batch=256))
for it, m in zip(history.eval_iterations, history.metrics):
    print(f"iteration {it:4d}: held-out LSS {m['LSS']:.3f}  TNR {m['TNR']:.3f}  FPR {m['FPR']:.3f}  "
          f"ERR {m['ERR']:.3f}")

a, b = te.find("s06", "p01"), te.find("s07", "p03")
raw = count_correct_matches(a.descriptors["HKS"], b.descriptors["HKS"], b.mesh)
deep = count_correct_matches(embed_field(params, a.descriptors["HKS"]),
                             embed_field(params, b.descriptors["HKS"]), b.mesh)
print(f"s06/p01 -> s07/p03 correct matches: raw HKS {raw.counts['correct']}, "
      f"DeepHKS {deep.counts['correct']} of {deep.counts['pairs']}")
export_match_obj(a.mesh, b.mesh, deep.correct, out / "deep_matches.obj")
print(f"wrote {out / 'deep_matches.obj'}")
