"""Shared-weight MLP branch, contrastive loss, backprop, Adam and training loop."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .descriptors import KIND_TAGS, KINDS
from .errors import DimensionMismatch, FormatError

EMBED_DIM = 15
DEFAULT_HIDDEN = {"HKS": (78, 32), "WKS": (78, 32), "GPS": (20, 18)}


@dataclass(frozen=True, eq=False)
class MlpParams:
    """Weights of one Siamese branch: ``d_in -> h1 -> h2 -> d_out``.

    ``weights[i]`` has shape ``(layer_dims[i + 1], layer_dims[i])``. Inputs are
    standardized as ``(x - mean) / scale`` before the first layer.
    """

    layer_dims: tuple
    weights: tuple
    biases: tuple
    mean: np.ndarray
    scale: np.ndarray
    kind: str = "HKS"

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        object.__setattr__(self, "weights", tuple(np.asarray(w, dtype=np.float64) for w in self.weights))
        object.__setattr__(self, "biases", tuple(np.asarray(b, dtype=np.float64) for b in self.biases))
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "scale", np.asarray(self.scale, dtype=np.float64))
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise DimensionMismatch("one weight matrix and bias per layer transition")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[i + 1], dims[i]) or b.shape != (dims[i + 1],):
                raise DimensionMismatch(f"layer {i}: weight {w.shape}, bias {b.shape} for dims {dims}")
        if len(dims) == 4 and dims[1] < dims[2]:
            raise ValueError(f"second hidden layer wider than the first: {dims}")
        if self.mean.shape != (dims[0],) or self.scale.shape != (dims[0],):
            raise DimensionMismatch("standardization vectors must match d_in")
        if self.kind not in KINDS:
            raise ValueError(f"unknown descriptor kind {self.kind!r}")

    @property
    def d_in(self) -> int:
        return self.layer_dims[0]

    @property
    def d_out(self) -> int:
        return self.layer_dims[-1]

    def with_standardization(self, mean, scale) -> "MlpParams":
        return replace(self, mean=mean, scale=scale)

    def tensors(self) -> list:
        """Weights and biases interleaved in layer order."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_tensors(self, tensors) -> "MlpParams":
        return replace(self, weights=tuple(tensors[0::2]), biases=tuple(tensors[1::2]))


@dataclass(frozen=True)
class TrainConfig:
    margin: float = 5.0
    batch_size: int = 512
    iterations: int = 10_000
    lr0: float = 0.015
    lr_decay: float = 0.9999
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    soft_label_max: float = 0.2
    hidden: tuple | None = None
    standardize: bool = True
    eval_every: int = 250
    eval_pairs: int = 2048
    threshold_on_distance: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.batch_size < 2 or self.batch_size % 2:
            raise ValueError("batch size must be even and positive")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")

    def lr(self, step: int) -> float:
        return self.lr0 * self.lr_decay ** step

    @property
    def total_samples(self) -> int:
        return self.batch_size * self.iterations


@dataclass
class TrainHistory:
    loss: list = field(default_factory=list)
    eval_iterations: list = field(default_factory=list)
    metrics: list = field(default_factory=list)

    def write_csv(self, path) -> None:
        evals = dict(zip(self.eval_iterations, self.metrics))
        with open(path, "w") as fh:
            fh.write("iteration,loss,LSS,TNR,FPR,ERR\n")
            for it in range(max(len(self.loss), max(self.eval_iterations, default=-1) + 1)):
                loss = repr(self.loss[it]) if it < len(self.loss) else ""
                m = evals.get(it)
                extra = ",".join(repr(m[k]) for k in ("LSS", "TNR", "FPR", "ERR")) if m else ",,,"
                fh.write(f"{it},{loss},{extra}\n")


def init_params(d_in: int, h1: int, h2: int, d_out: int = EMBED_DIM, seed=0,
                kind: str = "HKS") -> MlpParams:
    """He-normal weights (variance ``2 / fan_in``), zero biases."""
    dims = (d_in, h1, h2, d_out)
    if min(dims) < 1:
        raise ValueError(f"layer sizes must be positive, got {dims}")
    rng = np.random.default_rng(seed)
    weights = [rng.normal(0.0, np.sqrt(2.0 / a), size=(b, a)) for a, b in zip(dims[:-1], dims[1:])]
    biases = [np.zeros(b) for b in dims[1:]]
    return MlpParams(dims, weights, biases, np.zeros(d_in), np.ones(d_in), kind)


def _check_input(params, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.d_in:
        raise DimensionMismatch(f"input has {x.shape[-1]} features, network expects {params.d_in}")
    return x


def _forward_cache(params: MlpParams, x: np.ndarray):
    """Batched forward pass; returns output and the per-layer activations."""
    h = (x - params.mean) / params.scale
    acts, pre = [h], []
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        # einsum rather than BLAS so each row's result does not depend on batch size
        z = np.einsum("ij,kj->ik", h, w) + b
        pre.append(z)
        h = z if i == last else np.maximum(z, 0.0)
        acts.append(h)
    return h, acts, pre


def forward(params: MlpParams, x) -> np.ndarray:
    """Embed one descriptor (1-D) or a batch of descriptors (rows)."""
    x = _check_input(params, x)
    single = x.ndim == 1
    out, _, _ = _forward_cache(params, np.atleast_2d(x))
    return out[0] if single else out


def contrastive_loss(e_f, e_g, y, margin: float = 5.0):
    """``y d + (1 - y) max(0, C - d)`` with ``d`` the squared embedding distance.

    Broadcasts over leading axes; returns per-pair values.
    """
    d2 = np.sum((np.asarray(e_f, dtype=np.float64) - np.asarray(e_g, dtype=np.float64)) ** 2, axis=-1)
    y = np.asarray(y, dtype=np.float64)
    return y * d2 + (1.0 - y) * np.maximum(0.0, margin - d2)


def batch_loss(params: MlpParams, rows_f, rows_g, labels, margin: float = 5.0) -> float:
    ef = forward(params, rows_f)
    eg = forward(params, rows_g)
    return float(np.mean(contrastive_loss(ef, eg, labels, margin)))


def _backward(params, acts, pre, grad_out, grads):
    g = grad_out
    for i in range(len(params.weights) - 1, -1, -1):
        if i != len(params.weights) - 1:
            g = g * (pre[i] > 0)
        grads[2 * i] += g.T @ acts[i]
        grads[2 * i + 1] += g.sum(axis=0)
        if i:
            g = g @ params.weights[i]


def batch_gradients(params: MlpParams, rows_f, rows_g, labels, margin: float = 5.0):
    """Mean batch loss and its exact gradient w.r.t. ``params.tensors()``.

    Both branches run with the same parameter store; their contributions are
    summed. At the hinge kink (``d == C``) the subgradient is taken as zero.
    """
    rows_f = _check_input(params, rows_f)
    rows_g = _check_input(params, rows_g)
    y = np.asarray(labels, dtype=np.float64)
    n = len(y)
    ef, acts_f, pre_f = _forward_cache(params, rows_f)
    eg, acts_g, pre_g = _forward_cache(params, rows_g)
    diff = ef - eg
    d2 = np.sum(diff ** 2, axis=1)
    loss = float(np.mean(y * d2 + (1.0 - y) * np.maximum(0.0, margin - d2)))
    dl_dd2 = (y - (1.0 - y) * (margin - d2 > 0)) / n
    g_ef = 2.0 * dl_dd2[:, None] * diff
    grads = [np.zeros_like(t) for t in params.tensors()]
    _backward(params, acts_f, pre_f, g_ef, grads)
    _backward(params, acts_g, pre_g, -g_ef, grads)
    return loss, grads


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0

    @classmethod
    def zeros_like(cls, params: MlpParams) -> "AdamState":
        return cls([np.zeros_like(t) for t in params.tensors()],
                   [np.zeros_like(t) for t in params.tensors()])


def adam_step(state: AdamState, params: MlpParams, grads, lr: float, beta1=0.9, beta2=0.999,
              eps=1e-8):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``."""
    t = state.step + 1
    new_m, new_v, new_t = [], [], []
    for p, g, m, v in zip(params.tensors(), grads, state.m, state.v):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        new_t.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m)
        new_v.append(v)
    return params.with_tensors(new_t), AdamState(new_m, new_v, t)


def standardization_stats(values) -> tuple:
    """Per-dimension mean and standard deviation (constant columns get scale 1)."""
    values = np.asarray(values, dtype=np.float64)
    mean = values.mean(axis=0)
    scale = values.std(axis=0)
    scale[scale <= 1e-300] = 1.0
    return mean, scale


def train(corpus, kind: str, config: TrainConfig = TrainConfig(), validation=None,
          params: MlpParams | None = None):
    """Fit a Siamese branch on batches drawn from ``corpus``.

    ``validation`` is an optional hard-labelled ``PairBatch`` scored every
    ``config.eval_every`` iterations and after the last one. When omitted a
    fixed batch of ``config.eval_pairs`` pairs is drawn from ``corpus`` with
    its own random stream.

    Returns ``(params, history)``; the run is a pure function of the corpus
    and ``config.seed``.
    """
    from .corpus import sample_batch
    from .matching import classification_metrics

    kind = kind.upper()
    corpus.require(kind)
    d_in = corpus.descriptor_dim(kind)
    if params is None:
        h1, h2 = config.hidden or DEFAULT_HIDDEN[kind]
        params = init_params(d_in, h1, h2, EMBED_DIM, seed=config.seed, kind=kind)
        if config.standardize:
            params = params.with_standardization(*standardization_stats(corpus.stacked(kind)))
    rng = np.random.default_rng([config.seed, 1])
    if validation is None and config.eval_every:
        validation = sample_batch(corpus, kind, config.eval_pairs,
                                  np.random.default_rng([config.seed, 2]), soft_labels=False)

    history = TrainHistory()

    def evaluate(it):
        m = classification_metrics(params, validation, config.margin,
                                   threshold_on_distance=config.threshold_on_distance)
        history.eval_iterations.append(it)
        history.metrics.append(m)

    state = AdamState.zeros_like(params)
    for it in range(config.iterations):
        if validation is not None and config.eval_every and it % config.eval_every == 0:
            evaluate(it)
        batch = sample_batch(corpus, kind, config.batch_size, rng,
                             soft_label_max=config.soft_label_max)
        loss, grads = batch_gradients(params, batch.rows_f, batch.rows_g, batch.labels, config.margin)
        params, state = adam_step(state, params, grads, config.lr(it), config.beta1,
                                  config.beta2, config.eps)
        history.loss.append(loss)
    if validation is not None and config.eval_every:
        evaluate(config.iterations)
    return params, history


# ---------------------------------------------------------------------------
# SMN1 model file: magic, version (u8), kind tag (u8), number of layer dims (u64)
# and the dims (u64 each), standardization mean[d_in] and scale[d_in], then for
# each layer the weight matrix (row-major, out x in) followed by its bias; all
# floats are float64 LE

_SMN_MAGIC = b"SMN1"
_SMN_VERSION = 1


def save_model(params: MlpParams, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_SMN_MAGIC)
        fh.write(struct.pack("<BB", _SMN_VERSION, KIND_TAGS[params.kind]))
        fh.write(struct.pack("<Q", len(params.layer_dims)))
        fh.write(struct.pack(f"<{len(params.layer_dims)}Q", *params.layer_dims))
        for arr in [params.mean, params.scale, *params.tensors()]:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_model(path) -> MlpParams:
    data = Path(path).read_bytes()
    if data[:4] != _SMN_MAGIC:
        raise FormatError(f"{path}: not an SMN1 model file")
    version, tag = struct.unpack_from("<BB", data, 4)
    if version != _SMN_VERSION:
        raise FormatError(f"{path}: unsupported model version {version}")
    (n_dims,) = struct.unpack_from("<Q", data, 6)
    dims = struct.unpack_from(f"<{n_dims}Q", data, 14)
    off = 14 + 8 * n_dims

    def take(shape):
        nonlocal off
        count = int(np.prod(shape))
        if off + 8 * count > len(data):
            raise FormatError(f"{path}: truncated model payload")
        arr = np.frombuffer(data, "<f8", count, off).reshape(shape).astype(np.float64)
        off += 8 * count
        return arr

    mean, scale = take((dims[0],)), take((dims[0],))
    weights, biases = [], []
    for a, b in zip(dims[:-1], dims[1:]):
        weights.append(take((b, a)))
        biases.append(take((b,)))
    if off != len(data):
        raise FormatError(f"{path}: trailing bytes after model payload")
    return MlpParams(dims, weights, biases, mean, scale, KINDS[tag])
