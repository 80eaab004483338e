"""Cotangent Laplace-Beltrami operator and its generalized eigenproblem."""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse import linalg as splinalg

from .errors import ConvergenceFailure, FormatError, InsufficientVertices
from .mesh import TriMesh

COT_CLAMP = 1e6
DENSE_LIMIT = 1500
SHIFT = -1e-8
RESIDUAL_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class OperatorPair:
    """Cotangent stiffness matrix and lumped (diagonal) mass vector."""

    stiffness: sparse.csr_matrix
    mass: np.ndarray

    @property
    def mass_matrix(self) -> sparse.dia_matrix:
        return sparse.diags(self.mass)


@dataclass(frozen=True, eq=False)
class LaplaceSpectrum:
    """Smallest eigenpairs of ``L phi = lambda M phi``.

    ``eigenfunctions[:, k]`` is mass-orthonormal and sign-fixed so that its
    largest-magnitude entry is positive.
    """

    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    mass: np.ndarray

    @property
    def n_vertices(self) -> int:
        return self.eigenfunctions.shape[0]

    @property
    def n_modes(self) -> int:
        return len(self.eigenvalues)

    def truncated(self, m: int) -> "LaplaceSpectrum":
        return LaplaceSpectrum(self.eigenvalues[:m], self.eigenfunctions[:, :m], self.mass)

    def orthonormality_error(self) -> float:
        phi = self.eigenfunctions
        gram = phi.T @ (self.mass[:, None] * phi)
        return float(np.abs(gram - np.eye(phi.shape[1])).max())


def build_operators(mesh: TriMesh) -> OperatorPair:
    """Assemble cotangent stiffness and barycentric lumped mass.

    Off-diagonal ``L[i, j] = -(cot a + cot b) / 2`` over the triangles sharing
    edge ``(i, j)``; the diagonal makes every row sum to zero. ``M[i, i]`` is a
    third of the area of the triangles incident to ``i``. Cotangents are clamped
    to ``+-1e6`` on near-degenerate triangles, with a warning.
    """
    v, f = mesh.vertices, mesh.faces
    n = mesh.n_vertices
    cots = np.empty((len(f), 3))
    for k in range(3):
        # angle at corner k is opposite edge (k+1, k+2)
        a = v[f[:, (k + 1) % 3]] - v[f[:, k]]
        b = v[f[:, (k + 2) % 3]] - v[f[:, k]]
        cross = np.linalg.norm(np.cross(a, b), axis=1)
        dot = np.einsum("ij,ij->i", a, b)
        with np.errstate(divide="ignore", invalid="ignore"):
            cots[:, k] = dot / cross
    bad = ~np.isfinite(cots) | (np.abs(cots) > COT_CLAMP)
    if bad.any():
        warnings.warn(f"clamping {int(bad.sum())} cotangents on near-degenerate triangles",
                      RuntimeWarning, stacklevel=2)
        cots = np.where(np.isnan(cots), 0.0, np.clip(cots, -COT_CLAMP, COT_CLAMP))

    rows, cols, vals = [], [], []
    for k in range(3):
        i, j = f[:, (k + 1) % 3], f[:, (k + 2) % 3]
        w = -0.5 * cots[:, k]
        rows += [i, j]
        cols += [j, i]
        vals += [w, w]
    rows, cols, vals = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    off = sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    off.sum_duplicates()
    off = 0.5 * (off + off.T)
    diag = -np.asarray(off.sum(axis=1)).ravel()
    stiffness = (off + sparse.diags(diag)).tocsr()

    mass = np.zeros(n)
    areas = mesh.face_areas() / 3.0
    for k in range(3):
        np.add.at(mass, f[:, k], areas)
    return OperatorPair(stiffness, mass)


def _fix_signs(phi: np.ndarray) -> np.ndarray:
    # argmax returns the lowest index on ties
    idx = np.argmax(np.abs(phi), axis=0)
    signs = np.sign(phi[idx, np.arange(phi.shape[1])])
    signs[signs == 0] = 1.0
    return phi * signs


def _dense_eigs(ops: OperatorPair, m: int):
    inv_sqrt = 1.0 / np.sqrt(ops.mass)
    a = ops.stiffness.toarray() * inv_sqrt[:, None] * inv_sqrt[None, :]
    a = 0.5 * (a + a.T)
    evals, vecs = scipy.linalg.eigh(a, subset_by_index=[0, m - 1])
    return evals, vecs * inv_sqrt[:, None]


def _sparse_eigs(ops: OperatorPair, m: int):
    M = ops.mass_matrix.tocsc()
    try:
        evals, vecs = splinalg.eigsh(ops.stiffness.tocsc(), k=m, M=M, sigma=SHIFT,
                                     which="LM", tol=0.0)
    except splinalg.ArpackNoConvergence as exc:
        raise ConvergenceFailure(f"shift-invert Lanczos did not converge: {exc}") from None
    # Rayleigh-Ritz on the converged subspace restores exact M-orthonormality
    gram = vecs.T @ (ops.mass[:, None] * vecs)
    chol = np.linalg.cholesky(0.5 * (gram + gram.T))
    basis = scipy.linalg.solve_triangular(chol, vecs.T, lower=True).T
    proj = basis.T @ (ops.stiffness @ basis)
    evals, rot = np.linalg.eigh(0.5 * (proj + proj.T))
    return evals, basis @ rot


def spectrum_residuals(ops: OperatorPair, evals, phi) -> np.ndarray:
    """Relative residuals ``|L phi - lam M phi| / ((1 + lam) |M phi|)`` per mode."""
    mphi = ops.mass[:, None] * phi
    r = ops.stiffness @ phi - mphi * evals[None, :]
    return np.linalg.norm(r, axis=0) / ((1.0 + np.abs(evals)) * np.linalg.norm(mphi, axis=0))


def compute_spectrum(ops: OperatorPair, m: int, method: str = "auto") -> LaplaceSpectrum:
    """Smallest ``m`` eigenpairs of the generalized problem.

    ``method`` is ``"dense"``, ``"sparse"`` (shift-invert Lanczos) or ``"auto"``,
    which picks dense up to 1,500 vertices.
    """
    n = len(ops.mass)
    if m < 1 or m > n:
        raise InsufficientVertices(f"requested {m} eigenpairs from a {n}-vertex mesh")
    if method == "auto":
        method = "dense" if n <= DENSE_LIMIT else "sparse"
    if method == "dense":
        evals, phi = _dense_eigs(ops, m)
    elif method == "sparse":
        if m >= n - 1:
            raise InsufficientVertices(f"sparse solver needs m < n - 1 (m={m}, n={n})")
        evals, phi = _sparse_eigs(ops, m)
    else:
        raise ValueError(f"unknown eigensolver method {method!r}")

    order = np.argsort(evals, kind="stable")
    evals, phi = evals[order], phi[:, order]
    # one step of re-normalization in the mass inner product
    phi = phi / np.sqrt(np.einsum("ij,ij->j", phi, ops.mass[:, None] * phi))[None, :]
    phi = _fix_signs(phi)
    res = spectrum_residuals(ops, evals, phi)
    if not np.all(res <= RESIDUAL_TOL):
        raise ConvergenceFailure(
            f"eigenpair residual {res.max():.3e} exceeds {RESIDUAL_TOL:g} (mode {int(res.argmax())})")
    for a in (evals, phi):
        a.flags.writeable = False
    return LaplaceSpectrum(evals, phi, ops.mass.copy())


def mesh_spectrum(mesh: TriMesh, m: int, method: str = "auto") -> LaplaceSpectrum:
    return compute_spectrum(build_operators(mesh), m, method=method)


# ---------------------------------------------------------------------------
# LBS1 cache: magic, n, m (u64 LE), eigenvalues[m], mass[n], eigenfunctions n x m
# column-major, all float64 LE

_LBS_MAGIC = b"LBS1"


def save_spectrum(spec: LaplaceSpectrum, path) -> None:
    n, m = spec.eigenfunctions.shape
    with open(path, "wb") as fh:
        fh.write(_LBS_MAGIC)
        fh.write(struct.pack("<QQ", n, m))
        fh.write(np.asarray(spec.eigenvalues, dtype="<f8").tobytes())
        fh.write(np.asarray(spec.mass, dtype="<f8").tobytes())
        fh.write(np.asarray(spec.eigenfunctions, dtype="<f8").tobytes(order="F"))


def load_spectrum(path) -> LaplaceSpectrum:
    data = Path(path).read_bytes()
    if data[:4] != _LBS_MAGIC:
        raise FormatError(f"{path}: not an LBS1 spectrum file")
    n, m = struct.unpack_from("<QQ", data, 4)
    expected = 20 + 8 * (m + n + n * m)
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(data)}")
    off = 20
    evals = np.frombuffer(data, "<f8", m, off).astype(np.float64)
    off += 8 * m
    mass = np.frombuffer(data, "<f8", n, off).astype(np.float64)
    off += 8 * n
    phi = np.frombuffer(data, "<f8", n * m, off).reshape((n, m), order="F").astype(np.float64)
    return LaplaceSpectrum(evals, phi, mass)
