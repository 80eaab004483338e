"""Local-PCA intrinsic dimensionality of a descriptor population."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import TooFewSamples


@dataclass(frozen=True, eq=False)
class DimReport:
    trials: int
    k_neighbors: int
    dimensions: np.ndarray
    residual_curves: np.ndarray
    summary: int
    modal: int

    def mean_residual_curve(self) -> np.ndarray:
        return self.residual_curves.mean(axis=0)

    def write_csv(self, path) -> None:
        """One row per ``(trial, component, residual fraction)``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["trial", "component", "residual"])
            for t, curve in enumerate(self.residual_curves):
                for c, r in enumerate(curve):
                    w.writerow([t, c, repr(float(r))])


def local_pca_dimension(patch: np.ndarray, variance_threshold: float = 0.99):
    """Smallest ``d`` whose leading PCA eigenvalues reach the variance threshold.

    Returns ``(d, residual)`` where ``residual[c]`` is the fraction of variance
    left after ``c`` components (``residual[0] == 1``, ``residual[-1] == 0``).
    """
    centered = patch - patch.mean(axis=0)
    # singular values squared / (k - 1) are the covariance eigenvalues
    s = np.linalg.svd(centered, compute_uv=False)
    ev = s ** 2 / (len(patch) - 1)
    total = ev.sum()
    if total <= 0:
        return 1, np.r_[1.0, np.zeros(len(ev))]
    cum = np.cumsum(ev) / total
    residual = np.r_[1.0, np.clip(1.0 - cum, 0.0, 1.0)]
    residual[-1] = 0.0
    d = int(np.searchsorted(cum, variance_threshold - 1e-12) + 1)
    return min(max(d, 1), patch.shape[1]), residual


def estimate_intrinsic_dimension(samples, k_neighbors: int = 10, variance_threshold: float = 0.99,
                                 trials: int = 200, rng=None) -> DimReport:
    """Repeated local PCA on k-nearest-neighbour patches.

    Each trial picks a random sample, gathers it together with its
    ``k_neighbors`` nearest neighbours and records the PCA dimension reaching
    ``variance_threshold`` of the patch variance.

    ``summary`` applies the same threshold to the residual-variance curve
    averaged over trials. The per-trial mode is kept as ``modal``; it is
    unstable when the patch barely spans the manifold (k close to its
    dimension), where per-trial estimates split between two values.
    """
    x = np.asarray(samples, dtype=np.float64)
    if k_neighbors < 3:
        raise TooFewSamples(f"k_neighbors must be at least 3, got {k_neighbors}")
    if len(x) < k_neighbors + 1:
        raise TooFewSamples(f"{len(x)} samples cannot supply {k_neighbors} neighbours")
    rng = np.random.default_rng(rng)
    n_comp = min(k_neighbors, x.shape[1])
    dims = np.empty(trials, dtype=np.int64)
    curves = np.empty((trials, n_comp + 1))
    for t in range(trials):
        i = rng.integers(len(x))
        d2 = ((x - x[i]) ** 2).sum(axis=1)
        nbrs = np.argsort(d2, kind="stable")[:k_neighbors + 1]
        dims[t], res = local_pca_dimension(x[nbrs], variance_threshold)
        curves[t] = res[:n_comp + 1] if len(res) > n_comp else np.r_[res, np.zeros(n_comp + 1 - len(res))]
    values, counts = np.unique(dims, return_counts=True)
    mean_curve = curves.mean(axis=0)
    summary = int(np.argmax(mean_curve <= 1.0 - variance_threshold + 1e-12))
    summary = min(max(summary, 1), x.shape[1])
    return DimReport(trials, k_neighbors, dims, curves, summary, int(values[np.argmax(counts)]))
