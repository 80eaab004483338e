import numpy as np
import pytest

import spectral_siamese.corpus as corpus_mod
from spectral_siamese.corpus import (base_shape, build_corpus, compute_corpus_descriptors,
                                     read_manifest, sample_batch, synth_corpus, write_manifest)
from spectral_siamese.errors import EmptyCorpus, ManifestParseError, MissingFile, VertexCountMismatch
from spectral_siamese.mesh import icosphere, save_mesh

from conftest import toy_corpus


def test_batch_halves_and_provenance(rng):
    c = toy_corpus()
    b = sample_batch(c, "HKS", 64, rng)
    assert len(b) == 64 and b.models[0] != b.models[1]
    assert np.all(b.labels[:32] == 1) and np.all((b.labels[32:] >= 0) & (b.labels[32:] <= 0.2))
    assert np.array_equal(b.vertices_f[:32], b.vertices_g[:32])
    assert np.all(b.vertices_f[32:] != b.vertices_g[32:])
    fa = c.models[[m.mesh_id for m in c.models].index(b.models[0])].descriptors["HKS"].values
    assert np.array_equal(b.rows_f, fa[b.vertices_f])
    tiny = sample_batch(c, "HKS", 2, rng)
    assert tiny.labels[0] == 1 and tiny.labels[1] <= 0.2


def test_batch_reproducible():
    c = toy_corpus()
    a = sample_batch(c, "HKS", 32, np.random.default_rng(5))
    b = sample_batch(c, "HKS", 32, np.random.default_rng(5))
    assert np.array_equal(a.rows_f, b.rows_f) and np.array_equal(a.labels, b.labels)


def test_soft_label_mean():
    c = toy_corpus()
    rng = np.random.default_rng(0)
    labels = np.concatenate([sample_batch(c, "HKS", 1000, rng).labels[500:] for _ in range(20)])
    assert len(labels) == 10_000
    assert abs(labels.mean() - 0.1) <= 0.01


def test_hard_labels():
    b = sample_batch(toy_corpus(), "HKS", 20, 0, soft_labels=False)
    assert np.all(b.labels[10:] == 0) and b.is_match.sum() == 10


def test_too_few_models():
    c = toy_corpus(n_models=2)
    one = type(c)(c.models[:1], c.vertex_count)
    with pytest.raises(EmptyCorpus):
        sample_batch(one, "HKS", 4)


def test_manifest_round_trip_and_errors(tmp_path):
    recs = [("a.obj", "s0", "p0"), ("b.obj", "s0", "p1")]
    write_manifest(recs, tmp_path / "m.txt")
    assert read_manifest(tmp_path / "m.txt") == recs
    (tmp_path / "bad.txt").write_text("a.obj s0\n")
    with pytest.raises(ManifestParseError):
        read_manifest(tmp_path / "bad.txt")


def test_build_corpus(tmp_path):
    save_mesh(icosphere(2), tmp_path / "a.obj")
    save_mesh(icosphere(2), tmp_path / "b.obj")
    save_mesh(icosphere(3), tmp_path / "big.obj")
    write_manifest([("a.obj", "s0", "p0"), ("b.obj", "s1", "p0")], tmp_path / "ok.txt")
    c = build_corpus(tmp_path, "ok.txt")
    assert len(c) == 2 and c.vertex_count == 162
    write_manifest([("a.obj", "s0", "p0"), ("big.obj", "s1", "p0")], tmp_path / "mixed.txt")
    with pytest.raises(VertexCountMismatch):
        build_corpus(tmp_path, "mixed.txt")
    write_manifest([("a.obj", "s0", "p0"), ("nope.obj", "s1", "p0")], tmp_path / "missing.txt")
    with pytest.raises(MissingFile):
        build_corpus(tmp_path, "missing.txt")
    write_manifest([("a.obj", "s0", "p0"), ("b.obj", "s0", "p0")], tmp_path / "dup.txt")
    with pytest.raises(ManifestParseError):
        build_corpus(tmp_path, "dup.txt")
    (tmp_path / "mask.txt").write_text("0 5 7\n")
    masked = build_corpus(tmp_path, "ok.txt", rigid_mask="mask.txt")
    assert masked.rigid_mask.sum() == 3 and masked.rigid_mask[5]


def test_descriptor_cache_is_reused(tmp_path, monkeypatch):
    save_mesh(icosphere(2), tmp_path / "a.obj")
    save_mesh(icosphere(2).transformed(scale=1.5), tmp_path / "b.obj")
    write_manifest([("a.obj", "s0", "p0"), ("b.obj", "s1", "p0")], tmp_path / "m.txt")
    c = build_corpus(tmp_path, "m.txt")
    compute_corpus_descriptors(c, "HKS", k_modes=60)
    assert (tmp_path / "a.hks.dsc").exists()
    first = c.models[1].descriptors["HKS"].values

    def boom(*a, **k):
        raise AssertionError("spectrum recomputed despite a valid cache")
    monkeypatch.setattr(corpus_mod, "mesh_spectrum", boom)
    again = build_corpus(tmp_path, "m.txt")
    compute_corpus_descriptors(again, "HKS", k_modes=60)
    assert np.array_equal(again.models[1].descriptors["HKS"].values, first)
    # different settings invalidate the cache
    with pytest.raises(AssertionError, match="recomputed"):
        compute_corpus_descriptors(again, "HKS", k_modes=50)


def test_synth_corpus_counts_and_determinism(tmp_path):
    recs = synth_corpus(tmp_path / "a", subjects=10, poses=5, seed=3, subdivisions=2)
    assert len(recs) == 50
    c = build_corpus(tmp_path / "a", "manifest.txt")
    assert len(c) == 50 and len(c.subjects) == 10
    synth_corpus(tmp_path / "b", subjects=10, poses=5, seed=3, subdivisions=2)
    for name, _, _ in recs[:: 7]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_synth_corpus_split(tmp_path):
    synth_corpus(tmp_path, subjects=6, poses=5, strong_subjects=2, subdivisions=1)
    assert len(read_manifest(tmp_path / "train.txt")) == 30
    assert {r[1] for r in read_manifest(tmp_path / "test.txt")} == {"s06", "s07"}


def test_subjects_change_hks_at_protrusions(tmp_path):
    synth_corpus(tmp_path, subjects=2, poses=1, seed=0, subdivisions=3)
    c = build_corpus(tmp_path, "manifest.txt")
    compute_corpus_descriptors(c, "HKS", cache=False)
    _, limbs = base_shape(3)
    tips = np.flatnonzero(limbs.max(axis=1) > 0.9)
    a, b = (m.descriptors["HKS"].values[tips] for m in c.models)
    rel = np.abs(a - b) / np.abs(a)
    assert np.median(rel) > 0.05
