"""Nearest-neighbour matching, rejection rules and evaluation metrics."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csgraph

from .descriptors import DescriptorField
from .errors import DimensionMismatch, EmptySample, EmptyTestSet, KindMismatch
from .mesh import TriMesh, edge_graph, shape_diameter
from .siamese import MlpParams, contrastive_loss, forward

BLOCK_BYTES = 32 * 2 ** 20


def embed_field(params: MlpParams, desc: DescriptorField, chunk: int = 4096) -> DescriptorField:
    """Row-wise forward pass of a descriptor field through a trained branch."""
    if desc.kind != params.kind:
        raise KindMismatch(f"model expects {params.kind} descriptors, got {desc.kind}")
    if desc.dim != params.d_in:
        raise DimensionMismatch(f"field has d={desc.dim}, model expects {params.d_in}")
    out = np.vstack([forward(params, desc.values[i:i + chunk])
                     for i in range(0, desc.n_vertices, chunk)]) if desc.n_vertices else \
        np.zeros((0, params.d_out))
    return DescriptorField("EMBEDDED", out, {"source_kind": desc.kind})


@dataclass(frozen=True, eq=False)
class Matches:
    """Nearest target for every source row, with the threshold verdict."""

    source: np.ndarray
    target: np.ndarray
    distance: np.ndarray
    accepted: np.ndarray
    threshold: float

    def __len__(self):
        return len(self.source)


def _values(x):
    return x.values if isinstance(x, DescriptorField) else np.asarray(x, dtype=np.float64)


def nearest_neighbors(source, target):
    """Exact nearest target row per source row; ties go to the lowest index.

    Returns ``(index, squared_distance)``.
    """
    a, b = _values(source), _values(target)
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatch(f"descriptor dims differ: {a.shape[1]} vs {b.shape[1]}")
    block = max(1, BLOCK_BYTES // max(1, 8 * b.shape[0] * b.shape[1]))
    idx = np.empty(len(a), dtype=np.int64)
    best = np.empty(len(a))
    for s in range(0, len(a), block):
        d2 = ((a[s:s + block, None, :] - b[None, :, :]) ** 2).sum(axis=2)
        idx[s:s + block] = np.argmin(d2, axis=1)
        best[s:s + block] = d2[np.arange(len(d2)), idx[s:s + block]]
    return idx, best


def match_nearest(source, target, threshold: float = 2.5, threshold_on_distance: bool = False,
                  sources=None) -> Matches:
    """Match every source vertex (or the listed ``sources``) to its nearest target.

    Pairs whose squared Euclidean distance exceeds ``threshold`` are rejected;
    with ``threshold_on_distance`` the plain distance is compared instead.
    """
    a = _values(source)
    src = np.arange(len(a)) if sources is None else np.asarray(sources, dtype=np.int64)
    idx, d2 = nearest_neighbors(a[src], target)
    dist = np.sqrt(d2)
    accepted = (dist if threshold_on_distance else d2) <= threshold
    return Matches(src, idx, dist, accepted, float(threshold))


def filter_by_geodesic(matches: Matches, target_mesh: TriMesh, ground_truth=None,
                       tolerance_fraction: float = 0.05, diameter: float | None = None,
                       only_accepted: bool = True) -> np.ndarray:
    """Boolean mask over ``matches``: geodesic error within the tolerance.

    A pair ``(s, t)`` is correct when the edge-graph geodesic on the target
    between ``t`` and ``ground_truth[s]`` is at most ``tolerance_fraction``
    times the shape diameter. ``ground_truth`` defaults to the identity
    (registered meshes).
    """
    graph = edge_graph(target_mesh)
    if diameter is None:
        diameter = shape_diameter(target_mesh, graph)
    limit = tolerance_fraction * diameter
    gt = matches.source if ground_truth is None else np.asarray(ground_truth)[matches.source]
    keep = np.zeros(len(matches), dtype=bool)
    consider = matches.accepted if only_accepted else np.ones(len(matches), dtype=bool)
    exact = consider & (matches.target == gt)
    keep |= exact
    todo = consider & ~exact
    if todo.any() and limit > 0:
        uniq, inv = np.unique(gt[todo], return_inverse=True)
        d = csgraph.dijkstra(graph, directed=False, indices=uniq, limit=limit * (1 + 1e-12))
        rows = np.flatnonzero(todo)
        keep[rows] = d[inv, matches.target[rows]] <= limit
    return keep


@dataclass
class MatchReport:
    pairs: list
    accepted: list
    correct: list
    counts: dict
    matching_accuracy: float
    metrics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "counts": self.counts,
            "matching_accuracy": self.matching_accuracy,
            "metrics": self.metrics,
            "pairs": [{"source": s, "target": t, "distance": d} for s, t, d in self.pairs],
            "accepted": [[s, t] for s, t, _ in self.accepted],
            "correct": [[s, t] for s, t, _ in self.correct],
        }

    def to_json(self, path=None, indent=1) -> str:
        text = json.dumps(self.to_dict(), indent=indent)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def build_report(matches: Matches, correct_mask: np.ndarray, metrics=None) -> MatchReport:
    triples = [(int(s), int(t), float(d)) for s, t, d in
               zip(matches.source, matches.target, matches.distance)]
    accepted = [p for p, ok in zip(triples, matches.accepted) if ok]
    correct = [p for p, ok in zip(triples, correct_mask) if ok]
    counts = {"pairs": len(triples), "accepted": len(accepted), "correct": len(correct)}
    acc = len(correct) / len(triples) if triples else 0.0
    return MatchReport(triples, accepted, correct, counts, acc, dict(metrics or {}))


def count_correct_matches(source, target, target_mesh: TriMesh, ground_truth=None,
                          threshold: float = 2.5, tolerance_fraction: float = 0.05,
                          threshold_on_distance: bool = False) -> MatchReport:
    """All-vertex protocol: match, reject by threshold, then by geodesic error."""
    m = match_nearest(source, target, threshold, threshold_on_distance)
    keep = filter_by_geodesic(m, target_mesh, ground_truth, tolerance_fraction)
    return build_report(m, keep)


def sample_vertices(n: int, sample_fraction: float = 0.10, rigid_mask=None, rng=None) -> np.ndarray:
    """``floor(sample_fraction * available)`` distinct vertices outside the mask, sorted."""
    available = np.arange(n) if rigid_mask is None else np.flatnonzero(~np.asarray(rigid_mask))
    k = int(np.floor(sample_fraction * len(available)))
    if k == 0:
        raise EmptySample("no vertices left to sample")
    rng = np.random.default_rng(rng)
    return np.sort(rng.choice(available, size=k, replace=False))


def matching_accuracy(source, target, target_mesh: TriMesh, ground_truth=None,
                      sample_fraction: float = 0.10, rigid_mask=None, rng=None,
                      threshold: float = 2.5, tolerance_fraction: float = 0.05,
                      threshold_on_distance: bool = False) -> MatchReport:
    """Sampled protocol: fraction of sampled vertices whose match is correct."""
    n = len(_values(source))
    src = sample_vertices(n, sample_fraction, rigid_mask, rng)
    m = match_nearest(source, target, threshold, threshold_on_distance, sources=src)
    keep = filter_by_geodesic(m, target_mesh, ground_truth, tolerance_fraction)
    return build_report(m, keep)


def classification_metrics(params: MlpParams | None, pairs, margin: float = 5.0,
                           threshold_on_distance: bool = False) -> dict:
    """LSS, TNR, FPR and ERR on a labelled pair set.

    Pairs with label >= 0.5 are treated as true matches. A pair is classified
    as matching when its squared embedding distance is at most ``margin / 2``
    (plain distance with ``threshold_on_distance``). ``params=None`` scores the
    raw descriptors.
    """
    if len(pairs) == 0:
        raise EmptyTestSet("no pairs to evaluate")
    if params is None:
        ef, eg = np.asarray(pairs.rows_f), np.asarray(pairs.rows_g)
    else:
        ef, eg = forward(params, pairs.rows_f), forward(params, pairs.rows_g)
    d2 = np.sum((ef - eg) ** 2, axis=1)
    score = np.sqrt(d2) if threshold_on_distance else d2
    within = score <= 0.5 * margin
    match = pairs.is_match
    lss = float(np.mean(contrastive_loss(ef, eg, pairs.labels, margin)))
    tnr = float(np.mean(~within[match])) if match.any() else 0.0
    fpr = float(np.mean(within[~match])) if (~match).any() else 0.0
    return {"LSS": lss, "TNR": tnr, "FPR": fpr, "ERR": tnr + fpr}


def export_match_obj(source_mesh: TriMesh, target_mesh: TriMesh, pairs, path, gap: float = 0.2):
    """Write both meshes side by side plus one line element per matched pair."""
    src_v = source_mesh.vertices
    tgt_v = target_mesh.vertices.copy()
    width = src_v[:, 0].max() - src_v[:, 0].min()
    tgt_v[:, 0] += src_v[:, 0].max() - tgt_v[:, 0].min() + gap * width
    off = len(src_v)
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in np.vstack([src_v, tgt_v]).tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in source_mesh.faces.tolist()]
    lines += [f"f {a + off + 1} {b + off + 1} {c + off + 1}" for a, b, c in target_mesh.faces.tolist()]
    lines += [f"l {int(s) + 1} {int(t) + off + 1}" for s, t, *_ in pairs]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
