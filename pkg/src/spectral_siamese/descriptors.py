"""Per-vertex spectral descriptors: GPS, HKS and WKS."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InsufficientVertices, InvalidSchedule, ZeroEigenvalue, \
    ZeroEigenvalueInRange
from .laplace import LaplaceSpectrum

KINDS = ("GPS", "HKS", "WKS", "EMBEDDED")
KIND_TAGS = {k: i for i, k in enumerate(KINDS)}
DEFAULT_DIMS = {"GPS": 25, "HKS": 100, "WKS": 100, "EMBEDDED": 15}
ZERO_EIGENVALUE = 1e-12


@dataclass(frozen=True, eq=False)
class DescriptorField:
    """An ``(n_vertices, d)`` descriptor matrix tagged with its kind and parameters."""

    kind: str
    values: np.ndarray
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown descriptor kind {self.kind!r}")
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("descriptor values must be a 2-D array")
        if not np.isfinite(values).all():
            raise ValueError(f"{self.kind} descriptor contains NaN or inf")
        object.__setattr__(self, "values", values)

    @property
    def n_vertices(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class HksSchedule:
    times: np.ndarray
    k_modes: int = 300


@dataclass(frozen=True)
class WksSchedule:
    energies: np.ndarray
    sigma: float
    k_modes: int = 300
    normalize: bool = True


def hks_schedule(spectrum: LaplaceSpectrum, n: int = 100, k_modes: int = 300) -> HksSchedule:
    """Log-uniform times from ``4 ln10 / lam_last`` to ``4 ln10 / lam_2``.

    ``lam_last`` is the largest eigenvalue among the ``k_modes`` used.
    """
    _check_modes(spectrum, k_modes)
    if k_modes > spectrum.n_vertices - 2:
        raise InvalidSchedule(f"k_modes={k_modes} exceeds n_vertices - 2 = {spectrum.n_vertices - 2}")
    lam = spectrum.eigenvalues
    if k_modes < 3 or lam[2] <= ZERO_EIGENVALUE:
        raise InvalidSchedule("HKS schedule needs a positive lambda_2")
    t_min = 4 * np.log(10) / lam[k_modes - 1]
    t_max = 4 * np.log(10) / lam[2]
    if not t_min < t_max:
        raise InvalidSchedule(f"degenerate HKS time interval [{t_min:g}, {t_max:g}]")
    return HksSchedule(np.geomspace(t_min, t_max, n), k_modes)


def wks_schedule(spectrum: LaplaceSpectrum, n: int = 100, k_modes: int = 300,
                 sigma_factor: float = 7.0, normalize: bool = True) -> WksSchedule:
    """Energies uniform in ``[ln lam_1, ln lam_last]``; ``sigma = sigma_factor * spacing``."""
    _check_modes(spectrum, k_modes)
    lam = spectrum.eigenvalues
    if k_modes < 3 or lam[1] <= ZERO_EIGENVALUE:
        raise ZeroEigenvalue("WKS needs lambda_1 > 0 (is the mesh connected?)")
    lo, hi = np.log(lam[1]), np.log(lam[k_modes - 1])
    if not lo < hi:
        raise InvalidSchedule(f"degenerate WKS energy interval [{lo:g}, {hi:g}]")
    energies = np.linspace(lo, hi, n)
    sigma = sigma_factor * (hi - lo) / (n - 1)
    return WksSchedule(energies, float(sigma), k_modes, normalize)


def _check_modes(spectrum, k):
    if spectrum.n_modes < k:
        raise InsufficientVertices(f"spectrum has {spectrum.n_modes} modes, {k} required")


def gps(spectrum: LaplaceSpectrum, n: int = 25) -> DescriptorField:
    """Global point signature: ``phi_k(x) / sqrt(lam_k)`` for ``k = 1..n``."""
    _check_modes(spectrum, n + 1)
    lam = spectrum.eigenvalues[1:n + 1]
    if (lam <= ZERO_EIGENVALUE).any():
        raise ZeroEigenvalueInRange("zero eigenvalue beyond lambda_0; mesh is disconnected")
    values = spectrum.eigenfunctions[:, 1:n + 1] / np.sqrt(lam)[None, :]
    return DescriptorField("GPS", values, {"n": n})


def hks(spectrum: LaplaceSpectrum, schedule: HksSchedule | None = None) -> DescriptorField:
    """Heat kernel diagonal ``sum_k exp(-lam_k t) phi_k(x)^2`` at each scheduled time."""
    if schedule is None:
        schedule = hks_schedule(spectrum)
    k = schedule.k_modes
    _check_modes(spectrum, k)
    lam = spectrum.eigenvalues[:k]
    phi2 = spectrum.eigenfunctions[:, :k] ** 2
    weights = np.exp(-np.outer(lam, schedule.times))
    params = {"times": np.asarray(schedule.times).tolist(), "k_modes": k}
    return DescriptorField("HKS", phi2 @ weights, params)


def wks(spectrum: LaplaceSpectrum, schedule: WksSchedule | None = None) -> DescriptorField:
    """Wave kernel signature with a log-normal energy filter.

    Mode 0 is skipped since ``ln lam_0`` is undefined. With ``schedule.normalize``
    each energy band is divided by the sum of its filter weights.
    """
    if schedule is None:
        schedule = wks_schedule(spectrum)
    k = schedule.k_modes
    _check_modes(spectrum, k)
    lam = spectrum.eigenvalues[1:k]
    if (lam <= ZERO_EIGENVALUE).any():
        raise ZeroEigenvalue("WKS needs positive eigenvalues beyond lambda_0")
    phi2 = spectrum.eigenfunctions[:, 1:k] ** 2
    diff = np.asarray(schedule.energies)[None, :] - np.log(lam)[:, None]
    weights = np.exp(-diff ** 2 / (2 * schedule.sigma ** 2))
    if schedule.normalize:
        weights = weights / weights.sum(axis=0, keepdims=True)
    params = {"energies": np.asarray(schedule.energies).tolist(), "sigma": schedule.sigma,
              "k_modes": k, "normalize": schedule.normalize}
    return DescriptorField("WKS", phi2 @ weights, params)


def compute_descriptor(spectrum: LaplaceSpectrum, kind: str, n: int | None = None,
                       k_modes: int = 300, **kwargs) -> DescriptorField:
    """Dispatch on ``kind`` with the default sampling schedules."""
    kind = kind.upper()
    n = DEFAULT_DIMS[kind] if n is None else n
    if kind == "GPS":
        return gps(spectrum, n)
    if kind == "HKS":
        return hks(spectrum, hks_schedule(spectrum, n, k_modes))
    if kind == "WKS":
        return wks(spectrum, wks_schedule(spectrum, n, k_modes, **kwargs))
    raise ValueError(f"cannot compute a {kind} descriptor from a spectrum")


def required_modes(kind: str, n: int | None = None, k_modes: int = 300) -> int:
    kind = kind.upper()
    if kind == "GPS":
        return (DEFAULT_DIMS["GPS"] if n is None else n) + 1
    return k_modes


# ---------------------------------------------------------------------------
# DSC1 file: magic, kind tag (u8), n, d (u64 LE), params length (u64 LE) + JSON
# blob, then n x d float64 LE row-major

_DSC_MAGIC = b"DSC1"


def save_descriptor(desc: DescriptorField, path) -> None:
    blob = json.dumps(desc.params, sort_keys=True).encode()
    n, d = desc.values.shape
    with open(path, "wb") as fh:
        fh.write(_DSC_MAGIC)
        fh.write(struct.pack("<BQQQ", KIND_TAGS[desc.kind], n, d, len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(desc.values, dtype="<f8").tobytes())


def load_descriptor(path) -> DescriptorField:
    data = Path(path).read_bytes()
    if data[:4] != _DSC_MAGIC:
        raise FormatError(f"{path}: not a DSC1 descriptor file")
    tag, n, d, blen = struct.unpack_from("<BQQQ", data, 4)
    off = 4 + struct.calcsize("<BQQQ")
    if tag >= len(KINDS) or len(data) != off + blen + 8 * n * d:
        raise FormatError(f"{path}: corrupt DSC1 header or payload")
    params = json.loads(data[off:off + blen].decode())
    values = np.frombuffer(data, "<f8", n * d, off + blen).reshape(n, d).astype(np.float64)
    return DescriptorField(KINDS[tag], values, params)
