import csv

import numpy as np
import pytest

from spectral_siamese.errors import TooFewSamples
from spectral_siamese.intrinsic_dim import estimate_intrinsic_dimension, local_pca_dimension


def linear_manifold(n, rank, ambient, noise, seed):
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.standard_normal((ambient, rank)))
    return rng.standard_normal((n, rank)) @ basis.T + noise * rng.standard_normal((n, ambient))


@pytest.fixture(scope="module")
def rank5():
    return linear_manifold(10_000, 5, 100, 1e-6, 0)


def test_plane_in_10d():
    x = linear_manifold(1000, 2, 10, 0.0, 1)
    assert estimate_intrinsic_dimension(x, 10, rng=0).summary == 2


def test_rank5_k20(rank5):
    rep = estimate_intrinsic_dimension(rank5, 20, rng=0)
    assert rep.summary == 5 and rep.modal == 5


def test_report_invariants(rank5):
    rep = estimate_intrinsic_dimension(rank5, 12, trials=50, rng=3)
    assert rep.residual_curves.shape == (50, 13)
    assert np.all((rep.dimensions >= 1) & (rep.dimensions <= 100))
    c = rep.residual_curves
    assert np.all(c[:, 0] == 1.0) and np.all(np.abs(c[:, -1]) <= 1e-12)
    assert np.all(np.diff(c, axis=1) <= 1e-15)


def test_local_pca_exact():
    patch = np.diag([3.0, 2.0, 1.0, 0.0])
    patch = np.vstack([patch, -patch])
    # covariance eigenvalues proportional to 9, 4, 1
    d, res = local_pca_dimension(patch, 0.99)
    assert d == 3
    assert res[1] == pytest.approx(5 / 14) and res[2] == pytest.approx(1 / 14)
    assert local_pca_dimension(patch, 0.9)[0] == 2


def test_rotation_and_scale_invariance(rank5, rng):
    q, _ = np.linalg.qr(rng.standard_normal((100, 100)))
    x = rank5[:2000]
    base = estimate_intrinsic_dimension(x, 10, trials=40, rng=5)
    rot = estimate_intrinsic_dimension(x @ q.T, 10, trials=40, rng=5)
    scaled = estimate_intrinsic_dimension(x * 37.0, 10, trials=40, rng=5)
    assert np.array_equal(base.dimensions, rot.dimensions)
    assert np.array_equal(base.dimensions, scaled.dimensions)


def test_errors():
    with pytest.raises(TooFewSamples):
        estimate_intrinsic_dimension(np.zeros((5, 3)), 5)
    with pytest.raises(TooFewSamples):
        estimate_intrinsic_dimension(np.zeros((50, 3)), 2)


def test_csv_export(tmp_path, rank5):
    rep = estimate_intrinsic_dimension(rank5[:500], 6, trials=3, rng=0)
    rep.write_csv(tmp_path / "c.csv")
    rows = list(csv.reader(open(tmp_path / "c.csv")))
    assert rows[0] == ["trial", "component", "residual"] and len(rows) == 1 + 3 * 7
