"""GPS, HKS and WKS on a body-like mesh, and what they are invariant to.

HKS integrates to the heat trace; WKS bands are normalized to unit mass;
both are unchanged by rigid motions, while uniform scaling shifts HKS along
its time axis (it is not scale invariant).
"""

import numpy as np

from spectral_siamese import gps, hks, mesh_spectrum, wks
from spectral_siamese.corpus import base_shape

mesh, _ = base_shape(3)
spec = mesh_spectrum(mesh, 300)
g, h, w = gps(spec), hks(spec), wks(spec)
print(f"{mesh.n_vertices} vertices -> GPS {g.values.shape}, HKS {h.values.shape}, WKS {w.values.shape}")

t = np.asarray(h.params["times"])
trace = np.exp(-np.outer(t, spec.eigenvalues)).sum(axis=1)
print(f"heat trace identity, max rel err: {np.max(np.abs(spec.mass @ h.values - trace) / trace):.1e}")
print(f"WKS band masses: min {np.min(spec.mass @ w.values):.12f}, max {np.max(spec.mass @ w.values):.12f}")

theta = 0.7
rot = np.array([[np.cos(theta), -np.sin(theta), 0], [np.sin(theta), np.cos(theta), 0], [0, 0, 1]])
moved = mesh_spectrum(mesh.transformed(rot, [3.0, -1.0, 2.0]), 300)
print(f"rigid motion, HKS max rel change: {np.max(np.abs(hks(moved).values - h.values) / h.values):.1e}")

scaled = mesh_spectrum(mesh.transformed(scale=1.5), 300)
print(f"scale 1.5, HKS max rel change: {np.max(np.abs(hks(scaled).values - h.values) / h.values):.2f}")
