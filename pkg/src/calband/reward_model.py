"""Feature encoding and a numpy multilayer perceptron for engagement prediction.

The network maps an encoded (context, action) row to the probability that
the user engages with the slate built for that action::

    [dense | embeddings(categoricals) | action] -> 256 -> 64 -> 1
             ReLU + dropout on each hidden layer, sigmoid output

Training minimizes mean binary cross-entropy with hand-written
backpropagation; embeddings are learned jointly.

Encoded context layout (``FeatureSpec.encode_context``)::

    [aggregates (W*C)] [extra numeric] [sin/cos hour, sin/cos day] [category indices]

Category indices are stored as floats and looked up at forward time.
Index 0 of every embedding table is reserved for unseen values.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .domain import CalbandError, ContentDistribution, InvalidRecord, LoggedTriplet, UserContext

CHECKPOINT_MAGIC = b"CALBAND-MLP\n"
CHECKPOINT_VERSION = 1
_PROB_EPS = 1e-15


class OutOfRange(CalbandError, ValueError):
    pass


class ShapeMismatch(CalbandError, ValueError):
    pass


class DegenerateDataset(CalbandError, ValueError):
    pass


class NonFiniteLoss(CalbandError, FloatingPointError):
    pass


class CheckpointError(CalbandError, ValueError):
    pass


def encode_cyclic(value: int, period: int) -> tuple[float, float]:
    """Map ``value`` in ``[0, period)`` onto the unit circle as (sin, cos)."""
    if not 0 <= value < period:
        raise OutOfRange(f"{value} outside [0, {period})")
    angle = 2.0 * math.pi * value / period
    return math.sin(angle), math.cos(angle)


# context attribute read for each known categorical feature name
_CATEGORY_SOURCES = {
    "country": lambda c: c.country,
    "device": lambda c: c.device,
    "cohort": lambda c: str(c.cohort_id),
}


@dataclass(frozen=True)
class FeatureSpec:
    """Everything needed to turn a context and action into a model row.

    ``categorical`` maps feature name to its known vocabulary; the name
    must be one of ``country``, ``device`` or ``cohort``. ``extra_numeric``
    names raw numeric columns that only arrive pre-encoded (no context
    attribute backs them).
    """

    action_grid: tuple[tuple[float, ...], ...]
    windows: tuple[str, ...] = ("7d", "30d", "90d")
    n_content: int = 2
    categorical: tuple[tuple[str, tuple[str, ...]], ...] = ()
    temporal: bool = True
    extra_numeric: tuple[str, ...] = ()
    embedding_dim: int = 4

    def __post_init__(self):
        grid = tuple(tuple(float(v) for v in row) for row in self.action_grid)
        object.__setattr__(self, "action_grid", grid)
        object.__setattr__(self, "windows", tuple(self.windows))
        object.__setattr__(self, "extra_numeric", tuple(self.extra_numeric))
        object.__setattr__(self, "categorical",
                           tuple((str(n), tuple(str(v) for v in vocab))
                                 for n, vocab in self.categorical))
        if not grid or any(len(row) != self.n_content for row in grid):
            raise InvalidRecord("action grid rows must have n_content entries")
        for name, _ in self.categorical:
            if name not in _CATEGORY_SOURCES:
                raise InvalidRecord(f"unknown categorical feature {name!r}")
        if self.embedding_dim < 1:
            raise InvalidRecord("embedding_dim must be >= 1")

    @property
    def n_dense(self) -> int:
        return len(self.windows) * self.n_content + len(self.extra_numeric) + 4 * self.temporal

    @property
    def n_categorical(self) -> int:
        return len(self.categorical)

    @property
    def context_dim(self) -> int:
        """Length of an encoded context (what a logged triplet stores)."""
        return self.n_dense + self.n_categorical

    @property
    def encoded_dim(self) -> int:
        """Length of an encoded (context, action) row."""
        return self.context_dim + self.n_content

    @property
    def input_dim(self) -> int:
        """Width of the first dense layer's input after embedding lookup."""
        return self.n_dense + self.n_categorical * self.embedding_dim + self.n_content

    @property
    def cardinalities(self) -> list[int]:
        """Embedding table sizes, including the reserved unseen-value row."""
        return [len(vocab) + 1 for _, vocab in self.categorical]

    @property
    def action_matrix(self) -> np.ndarray:
        return np.array(self.action_grid, dtype=np.float64)

    def category_index(self, feature: int, value: str) -> int:
        vocab = self.categorical[feature][1]
        try:
            return vocab.index(value) + 1
        except ValueError:
            return 0

    def encode_context(self, ctx: UserContext) -> np.ndarray:
        if self.extra_numeric:
            raise InvalidRecord("spec has pre-encoded numeric columns; cannot encode a context")
        out = np.empty(self.context_dim)
        k = 0
        for w in self.windows:
            v = ctx.consumption_aggregates[w]
            if v.shape != (self.n_content,):
                raise ShapeMismatch(f"aggregate {w} has shape {v.shape}")
            out[k:k + self.n_content] = v
            k += self.n_content
        if self.temporal:
            out[k:k + 2] = encode_cyclic(ctx.hour_of_day, 24)
            out[k + 2:k + 4] = encode_cyclic(ctx.day_of_week, 7)
            k += 4
        for j, (name, _) in enumerate(self.categorical):
            out[k + j] = self.category_index(j, _CATEGORY_SOURCES[name](ctx))
        return out

    def encode(self, ctx: UserContext, action: ContentDistribution) -> np.ndarray:
        if action.size != self.n_content:
            raise ShapeMismatch(f"action has {action.size} types, spec has {self.n_content}")
        return np.concatenate([self.encode_context(ctx), action.mass])

    def to_dict(self) -> dict:
        return {"action_grid": [list(r) for r in self.action_grid],
                "windows": list(self.windows), "n_content": self.n_content,
                "categorical": [[n, list(v)] for n, v in self.categorical],
                "temporal": self.temporal, "extra_numeric": list(self.extra_numeric),
                "embedding_dim": self.embedding_dim}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSpec":
        return cls(action_grid=tuple(tuple(r) for r in d["action_grid"]),
                   windows=tuple(d["windows"]), n_content=int(d["n_content"]),
                   categorical=tuple((n, tuple(v)) for n, v in d["categorical"]),
                   temporal=bool(d["temporal"]), extra_numeric=tuple(d["extra_numeric"]),
                   embedding_dim=int(d["embedding_dim"]))


def encode(ctx: UserContext, action: ContentDistribution, spec: FeatureSpec) -> np.ndarray:
    return spec.encode(ctx, action)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 256
    epochs: int = 20
    seed: int = 0
    optimizer: str = "adam"
    validation_fraction: float = 0.1
    hidden_sizes: tuple[int, ...] = (256, 64)
    dropout_rate: float = 0.1

    def __post_init__(self):
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        if not self.learning_rate > 0:
            raise InvalidRecord("learning_rate must be positive")
        if self.batch_size < 1:
            raise InvalidRecord("batch_size must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise InvalidRecord(f"unknown optimizer {self.optimizer!r}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise InvalidRecord("validation_fraction must be in [0, 1)")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidRecord("dropout_rate must be in [0, 1)")


class RewardModel:
    """MLP parameters plus the feature spec they were trained against.

    ``weights[l]`` has shape ``(fan_in, fan_out)``; ``embeddings[j]`` is the
    table for the j-th categorical feature.
    """

    def __init__(self, spec: FeatureSpec, weights: list, biases: list, embeddings: list,
                 dropout_rate: float = 0.1, trained: bool = False):
        self.spec = spec
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.embeddings = [np.asarray(e, dtype=np.float64) for e in embeddings]
        self.dropout_rate = float(dropout_rate)
        self.trained = trained
        self._check_shapes()

    @classmethod
    def initialize(cls, spec: FeatureSpec, hidden_sizes: Sequence[int] = (256, 64),
                   dropout_rate: float = 0.1, seed: int = 0) -> "RewardModel":
        """He-uniform weights, zero biases, small uniform embeddings."""
        rng = np.random.default_rng(seed)
        sizes = [spec.input_dim, *hidden_sizes, 1]
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = math.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        embeddings = [rng.uniform(-0.05, 0.05, size=(card, spec.embedding_dim))
                      for card in spec.cardinalities]
        return cls(spec, weights, biases, embeddings, dropout_rate)

    def _check_shapes(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeMismatch("need one bias per weight matrix")
        if self.weights[0].shape[0] != self.spec.input_dim:
            raise ShapeMismatch(
                f"first layer expects {self.weights[0].shape[0]} inputs, "
                f"spec gives {self.spec.input_dim}")
        for w, b in zip(self.weights, self.biases):
            if b.shape != (w.shape[1],):
                raise ShapeMismatch(f"bias {b.shape} does not match weight {w.shape}")
        for w_prev, w in zip(self.weights[:-1], self.weights[1:]):
            if w_prev.shape[1] != w.shape[0]:
                raise ShapeMismatch(f"layers {w_prev.shape} and {w.shape} do not chain")
        if self.weights[-1].shape[1] != 1:
            raise ShapeMismatch("output layer must have one unit")
        cards = self.spec.cardinalities
        if len(self.embeddings) != len(cards) or any(
                e.shape != (c, self.spec.embedding_dim) for e, c in zip(self.embeddings, cards)):
            raise ShapeMismatch("embedding tables do not match the feature spec")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def parameters(self) -> list[np.ndarray]:
        """Flat parameter list in a fixed order: W, b per layer, then embeddings."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out + self.embeddings

    def copy(self) -> "RewardModel":
        return RewardModel(self.spec, [w.copy() for w in self.weights],
                           [b.copy() for b in self.biases],
                           [e.copy() for e in self.embeddings], self.dropout_rate, self.trained)

    def freeze(self) -> "RewardModel":
        for p in self.parameters():
            p.setflags(write=False)
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Eval-mode engagement probabilities for encoded rows."""
        return forward(self, X, "eval")

    def score_actions(self, ctx_features: np.ndarray) -> np.ndarray:
        """Predicted engagement for every action of the grid in one context."""
        return self.score_actions_batch(np.asarray(ctx_features)[None, :])[0]

    def score_actions_batch(self, ctx_features: np.ndarray) -> np.ndarray:
        F = np.asarray(ctx_features, dtype=np.float64)
        A = self.spec.action_matrix
        k, n_a = F.shape[0], A.shape[0]
        X = np.hstack([np.repeat(F, n_a, axis=0), np.tile(A, (k, 1))])
        return self.predict(X).reshape(k, n_a)


def _split_input(model: RewardModel, X: np.ndarray):
    spec = model.spec
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != spec.encoded_dim:
        raise ShapeMismatch(f"rows have {X.shape[1]} columns, spec expects {spec.encoded_dim}")
    nd, nc = spec.n_dense, spec.n_categorical
    cats = X[:, nd:nd + nc].astype(np.int64)
    for j, card in enumerate(spec.cardinalities):
        col = cats[:, j]
        col[(col < 0) | (col >= card)] = 0
    parts = [X[:, :nd]]
    parts += [model.embeddings[j][cats[:, j]] for j in range(nc)]
    parts.append(X[:, nd + nc:])
    return np.hstack(parts), cats


def _forward_cache(model: RewardModel, X: np.ndarray, rng: Optional[np.random.Generator]):
    """Forward pass keeping what backprop needs. ``rng`` None means eval mode."""
    h, cats = _split_input(model, X)
    inputs, masks = [h], []
    p_drop = model.dropout_rate
    n_layers = len(model.weights)
    for layer in range(n_layers - 1):
        z = h @ model.weights[layer] + model.biases[layer]
        active = z > 0
        h = np.where(active, z, 0.0)
        if rng is not None and p_drop > 0:
            keep = (rng.random(h.shape) >= p_drop) / (1.0 - p_drop)
            h = h * keep
        else:
            keep = None
        masks.append((active, keep))
        inputs.append(h)
    logits = (h @ model.weights[-1] + model.biases[-1])[:, 0]
    return logits, inputs, masks, cats


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def forward(model: RewardModel, X: np.ndarray, mode: str = "eval",
            dropout_seed: Optional[int] = None) -> np.ndarray:
    """Engagement probabilities in (0, 1) for encoded rows.

    ``mode="train"`` samples inverted-dropout masks from ``dropout_seed``;
    ``mode="eval"`` applies no dropout, which matches the train-time
    expectation because kept activations are rescaled by ``1/(1-p)``.
    """
    if mode not in ("train", "eval"):
        raise InvalidRecord(f"mode must be 'train' or 'eval', got {mode!r}")
    rng = np.random.default_rng(dropout_seed) if mode == "train" else None
    logits = _forward_cache(model, X, rng)[0]
    return np.clip(_sigmoid(logits), _PROB_EPS, 1.0 - _PROB_EPS)


def bce_with_logits(logits: np.ndarray, y: np.ndarray) -> float:
    """Mean binary cross-entropy computed stably from logits."""
    return float(np.mean(np.logaddexp(0.0, logits) - y * logits))


def loss_and_grads(model: RewardModel, X: np.ndarray, y: np.ndarray,
                   rng: Optional[np.random.Generator] = None):
    """Mean BCE and its gradient for every entry of ``model.parameters()``."""
    logits, inputs, masks, cats = _forward_cache(model, X, rng)
    y = np.asarray(y, dtype=np.float64)
    n = logits.shape[0]
    loss = bce_with_logits(logits, y)

    delta = ((_sigmoid(logits) - y) / n)[:, None]
    n_layers = len(model.weights)
    gW = [None] * n_layers
    gb = [None] * n_layers
    for layer in range(n_layers - 1, -1, -1):
        gW[layer] = inputs[layer].T @ delta
        gb[layer] = delta.sum(axis=0)
        delta = delta @ model.weights[layer].T
        if layer > 0:
            active, keep = masks[layer - 1]
            if keep is not None:
                delta = delta * keep
            delta = delta * active

    spec = model.spec
    g_emb = []
    k = spec.n_dense
    for j in range(spec.n_categorical):
        g = np.zeros_like(model.embeddings[j])
        np.add.at(g, cats[:, j], delta[:, k:k + spec.embedding_dim])
        g_emb.append(g)
        k += spec.embedding_dim

    grads = []
    for layer in range(n_layers):
        grads += [gW[layer], gb[layer]]
    return loss, grads + g_emb


def _relu_pattern(model: RewardModel, X: np.ndarray) -> list[np.ndarray]:
    return [m[0] for m in _forward_cache(model, X, None)[2]]


def gradient_check(model: RewardModel, X: np.ndarray, y: np.ndarray,
                   n_coords: int = 200, step: float = 1e-5, seed: int = 0,
                   grad_fn: Optional[Callable] = None) -> float:
    """Largest relative error between analytic and central-difference gradients.

    Dropout is disabled. Up to ``n_coords`` parameter coordinates are
    sampled (all of them if the network is smaller). The relative error is
    ``|a - n| / max(|a|, |n|, 1e-6)``; the floor keeps float noise on
    near-zero gradients from reading as failures. Coordinates whose
    perturbation flips a ReLU on or off are skipped, since the loss is not
    differentiable across the kink. ``grad_fn`` replaces the analytic
    gradient (used to test the checker itself).
    """
    X = np.asarray(X, dtype=np.float64)
    probe = model.copy()
    probe.dropout_rate = 0.0
    grad_fn = grad_fn or loss_and_grads
    _, analytic = grad_fn(probe, X, y)
    params = probe.parameters()
    sizes = [p.size for p in params]
    total = sum(sizes)
    rng = np.random.default_rng(seed)
    flat_ids = np.arange(total) if total <= n_coords else np.sort(
        rng.choice(total, size=n_coords, replace=False))
    offsets = np.cumsum([0] + sizes)
    base_pattern = _relu_pattern(probe, X)

    def loss_at() -> float:
        return bce_with_logits(_forward_cache(probe, X, None)[0], np.asarray(y, float))

    def same_pattern() -> bool:
        return all(np.array_equal(a, b) for a, b in zip(base_pattern, _relu_pattern(probe, X)))

    worst = 0.0
    for fid in flat_ids:
        pi = int(np.searchsorted(offsets, fid, side="right") - 1)
        idx = np.unravel_index(int(fid - offsets[pi]), params[pi].shape)
        p = params[pi]
        orig = p[idx]
        p[idx] = orig + step
        up, up_ok = loss_at(), same_pattern()
        p[idx] = orig - step
        down, down_ok = loss_at(), same_pattern()
        p[idx] = orig
        if not (up_ok and down_ok):
            continue
        numeric = (up - down) / (2.0 * step)
        a = float(analytic[pi][idx])
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
        worst = max(worst, err)
    return worst


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    n_train: int = 0
    n_val: int = 0
    train_base_rate: float = float("nan")
    val_base_rate_bce: float = float("nan")

    def to_dict(self) -> dict:
        return asdict(self)


def base_rate_bce(y: np.ndarray) -> float:
    """BCE of predicting the sample's own mean for every row (its entropy)."""
    p = float(np.mean(y))
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return -(p * math.log(p) + (1 - p) * math.log(1 - p))


class _Adam:
    def __init__(self, params, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class _Sgd:
    def __init__(self, params, lr):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


def triplets_to_arrays(dataset: Sequence[LoggedTriplet], spec: FeatureSpec):
    """Model rows (context features + logged action) and rewards."""
    if not dataset:
        raise DegenerateDataset("dataset is empty")
    F = np.stack([t.features for t in dataset])
    if F.shape[1] != spec.context_dim:
        raise ShapeMismatch(f"triplets carry {F.shape[1]} features, spec expects "
                            f"{spec.context_dim}")
    a = np.array([t.action_index for t in dataset], dtype=np.int64)
    A = spec.action_matrix
    if a.min() < 0 or a.max() >= A.shape[0]:
        raise ShapeMismatch("triplet action index outside the action grid")
    y = np.array([t.reward for t in dataset], dtype=np.float64)
    return np.hstack([F, A[a]]), y


def train(dataset: Sequence[LoggedTriplet], spec: FeatureSpec,
          cfg: Optional[TrainConfig] = None) -> tuple[RewardModel, TrainReport]:
    """Fit the reward model on logged triplets by mini-batch gradient descent.

    A seeded random ``validation_fraction`` of the rows is held out. Losses
    reported per epoch are eval-mode BCE over the full train and
    validation parts after that epoch's updates.
    """
    cfg = cfg or TrainConfig()
    X, y = triplets_to_arrays(dataset, spec)
    return train_arrays(X, y, spec, cfg)


def train_arrays(X: np.ndarray, y: np.ndarray, spec: FeatureSpec,
                 cfg: TrainConfig) -> tuple[RewardModel, TrainReport]:
    if y.size == 0:
        raise DegenerateDataset("dataset is empty")
    if np.all(y == y[0]):
        raise DegenerateDataset(f"all rewards equal {int(y[0])}; need both classes")
    rng = np.random.default_rng(cfg.seed)
    model = RewardModel.initialize(spec, cfg.hidden_sizes, cfg.dropout_rate,
                                   seed=int(rng.integers(2**63)))
    perm = rng.permutation(y.size)
    n_val = int(round(cfg.validation_fraction * y.size))
    val_idx, tr_idx = np.sort(perm[:n_val]), np.sort(perm[n_val:])
    Xt, yt, Xv, yv = X[tr_idx], y[tr_idx], X[val_idx], y[val_idx]
    report = TrainReport(n_train=int(yt.size), n_val=int(yv.size),
                         train_base_rate=float(yt.mean()),
                         val_base_rate_bce=base_rate_bce(yv) if yv.size else float("nan"))

    params = model.parameters()
    opt = _Adam(params, cfg.learning_rate) if cfg.optimizer == "adam" else \
        _Sgd(params, cfg.learning_rate)
    drop_rng = np.random.default_rng(rng.integers(2**63))
    for _ in range(cfg.epochs):
        order = rng.permutation(yt.size)
        for start in range(0, yt.size, cfg.batch_size):
            b = order[start:start + cfg.batch_size]
            loss, grads = loss_and_grads(model, Xt[b], yt[b], drop_rng)
            if not math.isfinite(loss):
                raise NonFiniteLoss(f"non-finite batch loss {loss}")
            opt.step(params, grads)
        tl = bce_with_logits(_forward_cache(model, Xt, None)[0], yt)
        vl = bce_with_logits(_forward_cache(model, Xv, None)[0], yv) if yv.size else float("nan")
        if not math.isfinite(tl):
            raise NonFiniteLoss(f"non-finite training loss {tl}")
        report.train_loss.append(tl)
        report.val_loss.append(vl)
    model.trained = True
    return model.freeze(), report


# -- checkpoint ------------------------------------------------------------

def save_checkpoint(model: RewardModel, path) -> None:
    """Write the model as header + JSON metadata + little-endian float64 blobs."""
    meta = {"format_version": CHECKPOINT_VERSION, "spec": model.spec.to_dict(),
            "layer_sizes": model.layer_sizes, "dropout_rate": model.dropout_rate,
            "trained": model.trained,
            "shapes": [list(p.shape) for p in model.parameters()]}
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for p in model.parameters():
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_checkpoint(path) -> RewardModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: not a model checkpoint")
    off = len(CHECKPOINT_MAGIC)
    version, n_meta = struct.unpack_from("<II", data, off)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    off += 8
    try:
        meta = json.loads(data[off:off + n_meta].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header ({exc})") from None
    off += n_meta
    arrays = []
    for shape in meta["shapes"]:
        count = int(np.prod(shape)) if shape else 1
        if off + 8 * count > len(data):
            raise CheckpointError(f"{path}: truncated parameter data")
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape)
        arrays.append(arr.astype(np.float64))
        off += 8 * count
    if off != len(data):
        raise CheckpointError(f"{path}: {len(data) - off} trailing bytes")
    spec = FeatureSpec.from_dict(meta["spec"])
    n_layers = len(meta["layer_sizes"]) - 1
    weights = arrays[0:2 * n_layers:2]
    biases = arrays[1:2 * n_layers:2]
    model = RewardModel(spec, weights, biases, arrays[2 * n_layers:],
                        meta["dropout_rate"], meta["trained"])
    return model.freeze()
