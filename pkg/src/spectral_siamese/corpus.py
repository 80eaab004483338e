"""Registered mesh corpora, descriptor caches and training pair sampling.

Models in a corpus share one topology, so equal vertex indices are the
ground-truth correspondence.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .descriptors import DescriptorField, compute_descriptor, load_descriptor, required_modes, \
    save_descriptor
from .errors import DescriptorMissing, EmptyCorpus, FormatError, ManifestParseError, MissingFile, \
    VertexCountMismatch
from .laplace import mesh_spectrum
from .mesh import TriMesh, icosphere, load_mesh, save_mesh


@dataclass(eq=False)
class Model:
    mesh_id: str
    subject: str
    pose: str
    mesh: TriMesh
    descriptors: dict = field(default_factory=dict)
    path: Path | None = None


@dataclass(eq=False)
class Corpus:
    models: list
    vertex_count: int
    rigid_mask: np.ndarray | None = None

    def __post_init__(self):
        seen = set()
        for m in self.models:
            if m.mesh.n_vertices != self.vertex_count:
                raise VertexCountMismatch(
                    f"{m.mesh_id}: {m.mesh.n_vertices} vertices, corpus has {self.vertex_count}")
            key = (m.subject, m.pose)
            if key in seen:
                raise ManifestParseError(f"duplicate subject/pose {key}")
            seen.add(key)
        for kind in {k for m in self.models for k in m.descriptors}:
            dims = {m.descriptors[kind].dim for m in self.models if kind in m.descriptors}
            if len(dims) > 1:
                raise VertexCountMismatch(f"{kind} descriptors disagree on dimension: {sorted(dims)}")
        if self.rigid_mask is not None:
            self.rigid_mask = np.asarray(self.rigid_mask, dtype=bool)
            if self.rigid_mask.shape != (self.vertex_count,):
                raise VertexCountMismatch("rigid mask length differs from vertex count")

    def __len__(self):
        return len(self.models)

    @property
    def subjects(self) -> list:
        return sorted({m.subject for m in self.models})

    def subset(self, subjects) -> "Corpus":
        subjects = set(subjects)
        return Corpus([m for m in self.models if m.subject in subjects], self.vertex_count,
                      self.rigid_mask)

    def find(self, subject, pose) -> Model:
        for m in self.models:
            if m.subject == subject and m.pose == pose:
                return m
        raise KeyError((subject, pose))

    def models_with(self, kind: str) -> list:
        return [m for m in self.models if kind in m.descriptors]

    def require(self, kind: str) -> None:
        if len(self.models) < 2:
            raise EmptyCorpus(f"need at least two models, corpus has {len(self.models)}")
        have = self.models_with(kind)
        if len(have) < len(self.models):
            missing = [m.mesh_id for m in self.models if kind not in m.descriptors]
            raise DescriptorMissing(f"{kind} descriptors missing for {missing[:5]}")

    def descriptor_dim(self, kind: str) -> int:
        self.require(kind)
        return self.models[0].descriptors[kind].dim

    def stacked(self, kind: str) -> np.ndarray:
        """All vertices of all models, one row each."""
        self.require(kind)
        return np.vstack([m.descriptors[kind].values for m in self.models])


@dataclass(frozen=True, eq=False)
class PairBatch:
    """Descriptor pairs with labels; matching pairs first, then non-matching."""

    rows_f: np.ndarray
    rows_g: np.ndarray
    labels: np.ndarray
    models: tuple = ()
    vertices_f: np.ndarray | None = None
    vertices_g: np.ndarray | None = None

    def __len__(self):
        return len(self.labels)

    @property
    def is_match(self) -> np.ndarray:
        return self.labels >= 0.5


def sample_batch(corpus: Corpus, kind: str, size: int = 512, rng=None, soft_labels: bool = True,
                 soft_label_max: float = 0.2) -> PairBatch:
    """Draw two distinct models and ``size`` vertex pairs between them.

    The first half are matching pairs (same vertex index, label 1); the second
    half pair independently drawn distinct indices with labels uniform in
    ``[0, soft_label_max]`` (or 0 when ``soft_labels`` is false). Draws are
    with replacement.
    """
    if size < 2 or size % 2:
        raise ValueError("batch size must be even and positive")
    corpus.require(kind)
    rng = np.random.default_rng(rng)
    n = corpus.vertex_count
    a, b = rng.choice(len(corpus.models), size=2, replace=False)
    half = size // 2
    same = rng.integers(n, size=half)
    vi = rng.integers(n, size=half)
    vj = rng.integers(n - 1, size=half)
    vj = vj + (vj >= vi)
    if soft_labels:
        soft = rng.uniform(0.0, soft_label_max, size=half)
    else:
        soft = np.zeros(half)
    va = np.concatenate([same, vi])
    vb = np.concatenate([same, vj])
    fa = corpus.models[a].descriptors[kind].values
    fb = corpus.models[b].descriptors[kind].values
    labels = np.concatenate([np.ones(half), soft])
    return PairBatch(fa[va], fb[vb], labels, (corpus.models[a].mesh_id, corpus.models[b].mesh_id),
                     va, vb)


def pooled_pairs(batches) -> PairBatch:
    """Concatenate several batches into one labelled evaluation set."""
    batches = list(batches)
    return PairBatch(np.vstack([b.rows_f for b in batches]), np.vstack([b.rows_g for b in batches]),
                     np.concatenate([b.labels for b in batches]))


def labelled_pairs(corpus: Corpus, kind: str, total: int, seed=0, batch: int = 512) -> PairBatch:
    """Hard-labelled evaluation set of ``total`` pairs pooled over several model pairs."""
    sizes = [batch] * (total // batch) + ([total % batch] if total % batch else [])
    return pooled_pairs(sample_batch(corpus, kind, s, np.random.default_rng([seed, 3, i]),
                                     soft_labels=False) for i, s in enumerate(sizes))


# ---------------------------------------------------------------------------
# manifests and descriptor caches


def read_manifest(path) -> list:
    """Parse ``path subject pose`` records; ``#`` starts a comment."""
    records = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if len(tok) != 3:
            raise ManifestParseError(f"{path}:{lineno}: expected 'path subject pose', got {line!r}")
        records.append(tuple(tok))
    return records


def write_manifest(records, path) -> None:
    lines = ["# path subject pose"] + [" ".join(map(str, r)) for r in records]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mask(path, n: int) -> np.ndarray:
    idx = [int(t) for t in Path(path).read_text().split("#", 1)[0].split()]
    mask = np.zeros(n, dtype=bool)
    mask[idx] = True
    return mask


def mesh_hash(mesh: TriMesh) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(mesh.vertices, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(mesh.faces, dtype="<i8").tobytes())
    return h.hexdigest()


def cache_key(mesh: TriMesh, kind: str, settings: dict) -> str:
    """Content hash of the mesh and the descriptor settings."""
    blob = json.dumps({"kind": kind.upper(), **settings}, sort_keys=True)
    return hashlib.sha256((mesh_hash(mesh) + blob).encode()).hexdigest()


def cache_path(mesh_path, kind: str) -> Path:
    mesh_path = Path(mesh_path)
    return mesh_path.with_name(f"{mesh_path.stem}.{kind.lower()}.dsc")


def _load_cached(path, key):
    if not path.exists():
        return None
    try:
        desc = load_descriptor(path)
    except FormatError:
        return None
    return desc if desc.params.get("cache_key") == key else None


def descriptor_for(mesh: TriMesh, kind: str, n: int | None = None, k_modes: int = 300,
                   cache_file=None, spectrum=None, **kwargs) -> DescriptorField:
    """Compute a descriptor, reusing ``cache_file`` when its content hash matches.

    ``spectrum`` may supply precomputed eigenpairs; ``kwargs`` go to the WKS
    schedule and are part of the cache key.
    """
    settings = {"n": n, "k_modes": k_modes, **kwargs}
    key = cache_key(mesh, kind, settings)
    if cache_file is not None:
        cached = _load_cached(Path(cache_file), key)
        if cached is not None:
            return cached
    spec = spectrum if spectrum is not None else mesh_spectrum(mesh, required_modes(kind, n, k_modes))
    desc = compute_descriptor(spec, kind, n=n, k_modes=k_modes, **kwargs)
    desc = DescriptorField(desc.kind, desc.values, {**desc.params, "cache_key": key})
    if cache_file is not None:
        save_descriptor(desc, cache_file)
    return desc


def compute_corpus_descriptors(corpus: Corpus, kind: str, n: int | None = None,
                               k_modes: int = 300, cache: bool = True, **kwargs) -> None:
    """Attach ``kind`` descriptors to every model, using DSC1 caches next to the meshes."""
    kind = kind.upper()
    for m in corpus.models:
        cf = cache_path(m.path, kind) if (cache and m.path is not None) else None
        m.descriptors[kind] = descriptor_for(m.mesh, kind, n, k_modes, cf, **kwargs)


def build_corpus(root, manifest, rigid_mask=None) -> Corpus:
    """Load the meshes listed in ``manifest`` (paths relative to ``root``).

    DSC1 caches named ``<stem>.<kind>.dsc`` next to a mesh are attached when
    present.
    """
    root = Path(root)
    manifest = Path(manifest)
    if not manifest.is_absolute() and not manifest.exists():
        manifest = root / manifest
    if not manifest.exists():
        raise MissingFile(f"manifest {manifest} not found")
    models = []
    for rel, subject, pose in read_manifest(manifest):
        path = root / rel
        if not path.exists():
            raise MissingFile(f"mesh {path} listed in {manifest} not found")
        mesh = load_mesh(path)
        descs = {}
        for kind in ("GPS", "HKS", "WKS"):
            cf = cache_path(path, kind)
            if cf.exists():
                descs[kind] = load_descriptor(cf)
        models.append(Model(f"{subject}/{pose}", subject, pose, mesh, descs, path))
    if not models:
        raise EmptyCorpus(f"manifest {manifest} lists no meshes")
    counts = {m.mesh.n_vertices for m in models}
    if len(counts) > 1:
        raise VertexCountMismatch(f"meshes disagree on vertex count: {sorted(counts)}")
    n = counts.pop()
    mask = None
    if rigid_mask is not None:
        mask_path = Path(rigid_mask)
        if not mask_path.exists():
            mask_path = root / rigid_mask
        if not mask_path.exists():
            raise MissingFile(f"rigid mask {rigid_mask} not found")
        mask = read_mask(mask_path, n)
    return Corpus(models, n, mask)


# ---------------------------------------------------------------------------
# synthetic registered corpus

# limb directions (unit vectors after normalization), lengths and widths; the
# differing lengths keep the base shape free of mirror symmetries
_LIMBS = [
    ((0.0, 0.0, 1.0), 0.55, 0.35),     # head
    ((0.8, 0.1, -0.6), 0.95, 0.30),    # right leg
    ((-0.75, -0.1, -0.65), 0.85, 0.30),  # left leg
    ((0.95, -0.2, 0.25), 0.75, 0.25),  # right arm
    ((-0.9, 0.3, 0.3), 0.65, 0.25),    # left arm
]



def _bump_field(count: int = 24, seed: int = 20240531):
    # fixed surface relief: (direction, amplitude, angular width) triples
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((count, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    amps = rng.uniform(0.06, 0.18, size=count) * rng.choice([-1.0, 1.0], size=count)
    widths = rng.uniform(0.18, 0.4, size=count)
    return dirs, amps, widths


@dataclass(frozen=True)
class SubjectShape:
    """Non-uniform scaling of the base body from a 3-parameter shape code.

    ``code[0]`` trades height against width, ``code[1]`` lengthens or
    shortens the limbs, ``code[2]`` sets the amplitude of a girth wave along
    the body. Each entry lies in ``[-1, 1]``.
    """

    code: tuple
    log_range: float = 0.4

    @property
    def axis_scale(self) -> np.ndarray:
        c = self.code[0] * self.log_range
        return np.exp([-0.5 * c, -0.5 * c, c])

    @property
    def limb_scale(self) -> np.ndarray:
        return np.full(len(_LIMBS), np.exp(self.code[1] * self.log_range))

    @property
    def girth_amp(self) -> float:
        return 0.5 * self.code[2] * self.log_range


def subject_codes(subjects: int, strong_subjects: int, rng, strong_extent: float = 0.6) -> list:
    """Latin-hypercube codes for regular subjects, opposite corners for strong ones.

    Strong codes have magnitude ``strong_extent * U(0.8, 1)`` per axis with
    alternating sign, so they stay inside the span of the regular codes.
    """
    codes = []
    if subjects:
        grid = np.linspace(-1.0, 1.0, subjects) if subjects > 1 else np.zeros(1)
        cols = [rng.permutation(grid) for _ in range(3)]
        codes += [tuple(float(c[i]) for c in cols) for i in range(subjects)]
    for j in range(strong_subjects):
        sign = 1.0 if j % 2 == 0 else -1.0
        codes.append(tuple(sign * strong_extent * rng.uniform(0.8, 1.0, size=3)))
    return codes


def base_shape(subdivisions: int = 4, relief: int = 24):
    """Elongated sphere with limb-like protrusions and ``relief`` smaller bumps.

    Returns ``(mesh, limb_weights)``; ``limb_weights[:, i]`` in ``[0, 1]`` is
    how strongly each vertex belongs to limb ``i``.
    """
    sphere = icosphere(subdivisions)
    u = sphere.vertices
    radius = np.ones(len(u))
    weights = []
    for direction, length, width in _LIMBS:
        d = np.asarray(direction) / np.linalg.norm(direction)
        ang = np.arccos(np.clip(u @ d, -1.0, 1.0))
        w = np.exp(-(ang / width) ** 2)
        radius = radius + length * w
        weights.append(w)
    if relief:
        for d, amp, width in zip(*_bump_field(relief)):
            ang = np.arccos(np.clip(u @ d, -1.0, 1.0))
            radius = radius + amp * np.exp(-(ang / width) ** 2)
    v = u * radius[:, None] * np.array([0.55, 0.4, 0.9])
    return TriMesh(v, sphere.faces), np.stack(weights, axis=1)


def _rotation(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def deform(base: TriMesh, limb_weights, subject: SubjectShape, pose_angles) -> TriMesh:
    """Apply a subject's scaling field, then bend each limb by its pose angle."""
    v = base.vertices.copy()
    centroid = v.mean(axis=0)
    v = v - centroid
    # subject: limb length scaling along the limb direction, girth field, axis scales
    for i, (direction, _, _) in enumerate(_LIMBS):
        d = np.asarray(direction) / np.linalg.norm(direction)
        w = limb_weights[:, i]
        along = v @ d
        v = v + ((subject.limb_scale[i] - 1.0) * w * np.maximum(along, 0.0))[:, None] * d
    z = v[:, 2] / np.abs(v[:, 2]).max()
    girth = 1.0 + subject.girth_amp * np.sin(1.5 * np.pi * z + 0.3)
    v[:, :2] *= girth[:, None]
    v = v * np.asarray(subject.axis_scale)
    # pose: rigid-ish rotation of each limb about its root, blended by membership
    for i, (direction, _, _) in enumerate(_LIMBS):
        angle = pose_angles[i]
        if angle == 0:
            continue
        d = np.asarray(direction) / np.linalg.norm(direction)
        root = d * 0.35 * np.abs(v @ d).max()
        axis = np.cross(d, [0.3, 1.0, 0.2])
        w = np.clip(limb_weights[:, i] * 1.5, 0.0, 1.0) ** 2
        rotated = (v - root) @ _rotation(axis, angle).T + root
        v = (1 - w)[:, None] * v + w[:, None] * rotated
    return TriMesh(v + centroid, base.faces)


def synth_corpus(out_dir, subjects: int = 6, poses: int = 5, seed: int = 0,
                 strong_subjects: int = 0, subdivisions: int = 4, log_range: float = 0.4,
                 strong_extent: float = 0.6) -> list:
    """Write a registered synthetic corpus and its manifests.

    Each subject is a ``SubjectShape``; regular subjects get Latin-hypercube
    shape codes spanning ``[-1, 1]^3`` and the ``strong_subjects`` alternate
    between opposite corners of a sub-cube scaled by ``strong_extent``, so consecutive strong subjects are
    far from isometric to each other. Every subject
    appears in ``poses`` poses (limb bends) over one shared topology. Writes
    ``manifest.txt`` (everything) and, when strong subjects exist,
    ``train.txt`` / ``test.txt``. Returns the manifest records.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    base, limb_w = base_shape(subdivisions)
    pose_table = [np.zeros(len(_LIMBS))] + [rng.uniform(-0.6, 0.6, size=len(_LIMBS))
                                            for _ in range(poses - 1)]
    records, train, test = [], [], []
    codes = subject_codes(subjects, strong_subjects, rng, strong_extent)
    for s in range(subjects + strong_subjects):
        strong = s >= subjects
        shape = SubjectShape(codes[s], log_range)
        sid = f"s{s:02d}"
        for p in range(poses):
            mesh = deform(base, limb_w, shape, pose_table[p])
            name = f"{sid}_p{p:02d}.obj"
            save_mesh(mesh, out / name)
            rec = (name, sid, f"p{p:02d}")
            records.append(rec)
            (test if strong else train).append(rec)
    write_manifest(records, out / "manifest.txt")
    if strong_subjects:
        write_manifest(train, out / "train.txt")
        write_manifest(test, out / "test.txt")
    return records
