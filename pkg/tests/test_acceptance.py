"""The twelve acceptance criteria, one test each.

Each test records a PASS/FAIL line (see ``conftest.pytest_terminal_summary``)
before asserting, so a failing criterion still reports its measured values.
"""

import math
import time

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from spectral_siamese.corpus import (PairBatch, base_shape, build_corpus, compute_corpus_descriptors,
                                     labelled_pairs, synth_corpus)
from spectral_siamese.descriptors import hks, wks
from spectral_siamese.intrinsic_dim import estimate_intrinsic_dimension
from spectral_siamese.laplace import mesh_spectrum
from spectral_siamese.matching import (classification_metrics, count_correct_matches, embed_field,
                                       match_nearest, matching_accuracy)
from spectral_siamese.mesh import TriMesh, icosphere
from spectral_siamese.siamese import (TrainConfig, _forward_cache, batch_gradients, batch_loss,
                                      contrastive_loss, init_params, save_model, train)

from conftest import ACCEPTANCE, random_rotation

# learning rate for the desk-scale run; the paper's 0.015 collapses the
# embedding on this corpus (see the decisions ledger)
DESK_LR = 0.001


def record(n, name, ok, detail=""):
    ACCEPTANCE[n] = (bool(ok), name, detail)
    print(f"criterion {n} {'PASS' if ok else 'FAIL'}: {name} ({detail})")
    assert ok, f"criterion {n} failed: {detail}"


@pytest.fixture(scope="session")
def test_meshes():
    body3, _ = base_shape(3)
    body4, _ = base_shape(4)
    ell = icosphere(4)
    ell = TriMesh(ell.vertices * [1.0, 0.6, 1.5], ell.faces)
    return {"icosphere3": icosphere(3), "body642": body3, "body2562": body4, "ellipsoid2562": ell}


@pytest.fixture(scope="session")
def spectra(test_meshes):
    return {k: mesh_spectrum(m, 300) for k, m in test_meshes.items()}


@pytest.fixture(scope="session")
def desk(tmp_path_factory):
    """6 training subjects x 5 poses plus 2 strongly scaled held-out subjects."""
    root = tmp_path_factory.mktemp("desk")
    synth_corpus(root, subjects=6, poses=5, seed=0, strong_subjects=2, subdivisions=4)
    tr = build_corpus(root, "train.txt")
    te = build_corpus(root, "test.txt")
    compute_corpus_descriptors(tr, "HKS")
    compute_corpus_descriptors(te, "HKS")
    cfg = TrainConfig(batch_size=128, iterations=2000, lr0=DESK_LR, eval_every=250, seed=0)
    # 16 model pairs of 256 so no single pair of held-out models dominates ERR
    val = labelled_pairs(te, "HKS", 4096, seed=0, batch=256)
    with threadpool_limits(limits=1):
        t0 = time.perf_counter()
        params, history = train(tr, "HKS", cfg, validation=val)
        elapsed = time.perf_counter() - t0
    return {"root": root, "train": tr, "test": te, "cfg": cfg, "val": val, "params": params,
            "history": history, "seconds": elapsed}


def test_c01_sphere_spectrum():
    mesh = icosphere(3)
    with threadpool_limits(limits=1):
        t0 = time.perf_counter()
        lam = mesh_spectrum(mesh, 17).eigenvalues
        dt = time.perf_counter() - t0
    expected = np.array([2] * 3 + [6] * 5 + [12] * 7 + [20])
    rel = np.abs(lam[1:] - expected) / expected
    record(1, "sphere spectrum clusters within 5%, < 10 s", mesh.n_vertices == 642
           and rel.max() <= 0.05 and dt < 10, f"max rel err {rel.max():.4f}, {dt:.2f} s")


def test_c02_mass_orthonormality(spectra):
    errs = {k: s.orthonormality_error() for k, s in spectra.items()}
    worst = max(errs.values())
    record(2, "mass-orthonormality < 1e-7 at m = 300", worst < 1e-7,
           ", ".join(f"{k} {v:.1e}" for k, v in errs.items()))


def test_c03_heat_trace(spectra):
    worst = 0.0
    for spec in spectra.values():
        h = hks(spec)
        times = np.asarray(h.params["times"])
        lhs = spec.mass @ h.values
        rhs = np.exp(-np.outer(times, spec.eigenvalues)).sum(axis=1)
        assert len(times) == 100
        worst = max(worst, float(np.max(np.abs(lhs - rhs) / np.abs(rhs))))
    record(3, "heat-trace identity to 1e-9 relative", worst <= 1e-9, f"max rel err {worst:.2e}")


def test_c04_isometry_invariance(test_meshes, spectra):
    rng = np.random.default_rng(4)
    worst = 0.0
    for key in ("body642", "body2562"):
        mesh = test_meshes[key]
        moved = mesh.transformed(random_rotation(rng), rng.normal(size=3) * 5)
        spec_b = mesh_spectrum(moved, 300)
        for fn in (hks, wks):
            a, b = fn(spectra[key]).values, fn(spec_b).values
            worst = max(worst, float(np.max(np.abs(a - b) / np.abs(a))))
    record(4, "HKS/WKS rigid-motion invariance to 1e-6 relative", worst <= 1e-6,
           f"max rel diff {worst:.2e}")


def test_c05_gradient_check():
    rng = np.random.default_rng(5)
    h, margin = 1e-5, 5.0
    worst, probes, skipped = 0.0, 0, 0
    while probes < 60:
        p = init_params(100, 78, 32, 15, seed=int(rng.integers(2 ** 31)))
        p = p.with_standardization(rng.normal(size=100), rng.uniform(0.5, 2, 100))
        f, g = rng.normal(size=(2, 1, 100))
        y = np.array([1.0 if rng.random() < 0.5 else rng.uniform(0, 0.2)])
        (ef, _, pre_f), (eg, _, pre_g) = _forward_cache(p, f), _forward_cache(p, g)
        d2 = float(np.sum((ef - eg) ** 2))
        # away from the hinge kink and from ReLU kinks a step of h could cross
        if abs(margin - d2) < 1e-6 or min(np.abs(z).min() for z in pre_f[:-1] + pre_g[:-1]) < 1e-4:
            skipped += 1
            continue
        _, grads = batch_gradients(p, f, g, y, margin)
        tensors = p.tensors()
        # one random direction over all parameters plus two single coordinates
        dirs = [[rng.normal(size=t.shape) for t in tensors]]
        for _ in range(2):
            ti = int(rng.integers(len(tensors)))
            flat = np.flatnonzero(np.abs(grads[ti]) > 1e-8)
            if len(flat) == 0:
                continue
            v = [np.zeros_like(t) for t in tensors]
            v[ti].flat[rng.choice(flat)] = 1.0
            dirs.append(v)
        for v in dirs:
            an = sum(float(np.sum(gr * vv)) for gr, vv in zip(grads, v))
            if abs(an) <= 1e-8:
                continue
            plus = batch_loss(p.with_tensors([t + h * vv for t, vv in zip(tensors, v)]), f, g, y, margin)
            minus = batch_loss(p.with_tensors([t - h * vv for t, vv in zip(tensors, v)]), f, g, y, margin)
            fd = (plus - minus) / (2 * h)
            worst = max(worst, abs(fd - an) / abs(an))
        probes += 1
    record(5, "analytic vs central-difference gradients, rel err < 1e-5", worst < 1e-5 and probes >= 50,
           f"{probes} probes, {skipped} near kinks skipped, max rel err {worst:.2e}")


def test_c06_loss_identities():
    rng = np.random.default_rng(6)
    e = rng.normal(size=15)
    far = e.copy()
    far[0] += 3.0  # squared distance 9 > 5
    ok = (contrastive_loss(e, e, 1, 5) == 0 and contrastive_loss(e, e, 0, 5) == 5
          and contrastive_loss(e, far, 0, 5) == 0)
    record(6, "contrastive loss identities (exact)", ok,
           f"{contrastive_loss(e, e, 1, 5)}, {contrastive_loss(e, e, 0, 5)}, {contrastive_loss(e, far, 0, 5)}")


def test_c07_intrinsic_dimension():
    rng = np.random.default_rng(7)
    basis, _ = np.linalg.qr(rng.standard_normal((100, 5)))
    x = rng.standard_normal((10_000, 5)) @ basis.T + 1e-6 * rng.standard_normal((10_000, 100))
    got = {k: estimate_intrinsic_dimension(x, k, rng=k).summary for k in (6, 10, 15, 20, 25)}
    record(7, "rank-5 manifold in 100-D, summary dimension 5 for k in {6..25}",
           all(v == 5 for v in got.values()), str(got))


def test_c08_err_identity(desk):
    sets = list(desk["history"].metrics)
    rng = np.random.default_rng(8)
    for _ in range(20):
        n = int(rng.integers(1, 500))
        pb = PairBatch(rng.normal(size=(n, 15)), rng.normal(size=(n, 15)) * rng.uniform(0.1, 2),
                       rng.integers(0, 2, n).astype(float))
        sets.append(classification_metrics(None, pb))
    sets.append(classification_metrics(desk["params"], desk["val"]))
    ok = all(m["ERR"] == m["TNR"] + m["FPR"] for m in sets)
    record(8, "ERR == TNR + FPR exactly", ok, f"{len(sets)} pair sets")


def test_c09_nearest_neighbour_oracle():
    rng = np.random.default_rng(9)
    cases = [(rng.normal(size=(1000, 15)), rng.normal(size=(1000, 15))),
             (rng.integers(0, 3, (600, 4)).astype(float), rng.integers(0, 3, (700, 4)).astype(float))]
    ok, ties = True, 0
    for a, b in cases:
        m = match_nearest(a, b)
        bl = b.tolist()
        for i, row in enumerate(a.tolist()):
            best, arg, count = math.inf, -1, 0
            for j, col in enumerate(bl):
                d = sum((u - v) ** 2 for u, v in zip(row, col))
                if d < best:
                    best, arg, count = d, j, 1
                elif d == best:
                    count += 1
            ties += count > 1
            ok &= m.target[i] == arg and m.distance[i] ** 2 == pytest.approx(best, rel=1e-12, abs=0)
    record(9, "match_nearest equals double-loop oracle incl. ties", ok, f"{ties} tied rows")


def test_c10_desk_scale_improvement(desk):
    te = desk["test"]
    a, b = te.find("s06", "p01"), te.find("s07", "p03")
    raw = count_correct_matches(a.descriptors["HKS"], b.descriptors["HKS"], b.mesh).counts["correct"]
    p = desk["params"]
    deep = count_correct_matches(embed_field(p, a.descriptors["HKS"]), embed_field(p, b.descriptors["HKS"]),
                                 b.mesh).counts["correct"]
    errs = [m["ERR"] for m in desk["history"].metrics]
    ok = (deep >= 1.5 * raw and deep > raw and errs[-1] < errs[0] and desk["seconds"] < 600)
    record(10, "DeepHKS >= 1.5x raw HKS correct matches, held-out ERR decreases", ok,
           f"raw {raw}, deep {deep}, ERR {errs[0]:.3f} -> {errs[-1]:.3f}, "
           f"train {desk['seconds']:.1f} s, lr0 {DESK_LR}")


def test_c11_determinism(desk, tmp_path):
    with threadpool_limits(limits=1):
        again, _ = train(desk["train"], "HKS", desk["cfg"], validation=desk["val"])
    save_model(desk["params"], tmp_path / "a.smn")
    save_model(again, tmp_path / "b.smn")
    same = (tmp_path / "a.smn").read_bytes() == (tmp_path / "b.smn").read_bytes()
    record(11, "byte-identical model files across two runs", same,
           f"{(tmp_path / 'a.smn').stat().st_size} bytes")


def test_c12_self_matching(test_meshes, spectra):
    mesh, spec = test_meshes["body2562"], spectra["body2562"]
    h = hks(spec)
    sampled = matching_accuracy(h, h, mesh, rng=12)
    full = count_correct_matches(h, h, mesh)
    ok = sampled.matching_accuracy == 1.0 and full.matching_accuracy == 1.0
    record(12, "raw-HKS self-matching accuracy 1.0 at 5% tolerance", ok,
           f"sampled {sampled.matching_accuracy}, all vertices {full.matching_accuracy}")
