"""Weighted softmax regression: loss/gradient kernels, SGD training with a
replayable trace, F1 metrics, and early-stop selection.

Parameters are a C x (d+1) weight matrix (bias column included); the flattened
row-major vector of length m = C*(d+1) is the parameter space used by all
Hessian and influence computations. Per-sample gradients exclude the L2 term;
the regularizer enters once in the objective and as +lambda*w in each SGD step.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .dataio import MAGIC, Dataset
from .errors import ArgumentError, DivergenceError, FormatError
from .rng import derive_seed

TRACE_VERSION = 1


@dataclass
class ModelParams:
    W: np.ndarray  # C x (d+1)
    lam: float

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        if not np.all(np.isfinite(self.W)):
            raise ArgumentError("non-finite weights")
        if self.lam <= 0:
            raise ArgumentError("lambda must be > 0 (strong convexity)")

    @property
    def num_classes(self) -> int:
        return self.W.shape[0]

    @property
    def dim(self) -> int:
        """Flattened parameter dimension m."""
        return self.W.size

    def flat(self) -> np.ndarray:
        return self.W.reshape(-1)

    @staticmethod
    def from_flat(w: np.ndarray, num_classes: int, lam: float) -> "ModelParams":
        return ModelParams(np.asarray(w).reshape(num_classes, -1).copy(), lam)


@dataclass
class TrainConfig:
    learning_rate: float
    lam: float
    epochs: int
    batch_size: int
    gamma: float
    seed: int

    def __post_init__(self):
        if self.learning_rate <= 0 or self.lam <= 0:
            raise ArgumentError("learning_rate and lam must be > 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ArgumentError("epochs and batch_size must be >= 1")
        if not (0 <= self.gamma <= 1):
            raise ArgumentError("gamma must be in [0, 1]")


@dataclass
class TrainingTrace:
    """Per-iteration provenance of one SGD run.

    ``params[t]`` is the flattened weight vector before iteration t;
    ``batch_grads[t]`` the weighted mini-batch gradient consumed at t
    (regularizer excluded). Batch membership is stored compactly as per-epoch
    shuffle seeds and re-expanded on demand.
    """

    params: list[np.ndarray]
    batch_grads: list[np.ndarray]
    exact_flags: list[bool]
    epoch_seeds: list[int]
    epoch_boundaries: list[int]
    batch_size: int
    train_ids: list[int]
    num_classes: int

    @property
    def num_iterations(self) -> int:
        return len(self.batch_grads)

    @property
    def batches_per_epoch(self) -> int:
        return math.ceil(len(self.train_ids) / self.batch_size)

    def epoch_permutation(self, epoch: int) -> np.ndarray:
        rng = np.random.default_rng(self.epoch_seeds[epoch])
        return rng.permutation(len(self.train_ids))

    def batch_positions(self, t: int) -> np.ndarray:
        """Positions into train_ids of the mini-batch at iteration t."""
        bpe = self.batches_per_epoch
        epoch, offset = divmod(t, bpe)
        perm = self.epoch_permutation(epoch)
        return perm[offset * self.batch_size:(offset + 1) * self.batch_size]

    def batch_ids(self, t: int) -> np.ndarray:
        ids = np.asarray(self.train_ids)
        return ids[self.batch_positions(t)]


@dataclass
class MetricReport:
    f1: float
    precision: float
    recall: float
    per_round_history: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# kernels


def softmax_matrix(scores: np.ndarray) -> np.ndarray:
    s = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax_matrix(scores: np.ndarray) -> np.ndarray:
    s = scores - scores.max(axis=1, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=1, keepdims=True))


def predict_proba(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Class probabilities for one augmented feature vector."""
    return softmax_matrix((params.W @ x)[None, :])[0]


def predict_proba_matrix(params: ModelParams, X: np.ndarray) -> np.ndarray:
    return softmax_matrix(X @ params.W.T)


def loss_sample(params: ModelParams, x: np.ndarray, label_vector: np.ndarray) -> float:
    logp = log_softmax_matrix((params.W @ x)[None, :])[0]
    return float(-np.dot(label_vector, logp))


def grad_sample(params: ModelParams, x: np.ndarray, label_vector: np.ndarray) -> np.ndarray:
    """Per-sample cross-entropy gradient, flattened; excludes the L2 term."""
    p = predict_proba(params, x)
    return np.outer(p - label_vector, x).reshape(-1)


def weighted_batch_gradient(W: np.ndarray, X: np.ndarray, Y: np.ndarray,
                            weights: np.ndarray) -> np.ndarray:
    """(1/|B|) sum_i w_i * (p_i - y_i) (x) x_i as a C x (d+1) matrix.

    Shared by training and incremental replay so both take the identical
    floating-point path.
    """
    P = softmax_matrix(X @ W.T)
    R = (P - Y) * weights[:, None]
    return (R.T @ X) / X.shape[0]


def sgd_step(W: np.ndarray, G: np.ndarray, learning_rate: float, lam: float) -> np.ndarray:
    return W - learning_rate * (G + lam * W)


def objective(params: ModelParams, dataset: Dataset, gamma: float) -> float:
    """Weighted mean training loss plus (lam/2)*||W||_F^2."""
    ids = dataset.train_ids
    if not ids:
        raise ArgumentError("train split is empty")
    X = dataset.features_aug[ids]
    Y = dataset.label_matrix(ids)
    wts = dataset.weights(ids, gamma)
    logp = log_softmax_matrix(X @ params.W.T)
    per_sample = -(Y * logp).sum(axis=1)
    reg = 0.5 * params.lam * float(np.sum(params.W * params.W))
    return float(np.dot(wts, per_sample) / len(ids)) + reg


def mean_validation_gradient(params: ModelParams, dataset: Dataset) -> np.ndarray:
    """Unweighted mean gradient over the validation split (no regularizer)."""
    ids = dataset.validation_ids
    if not ids:
        raise ArgumentError("validation split is empty")
    X = dataset.features_aug[ids]
    Y = dataset.label_matrix(ids)
    P = softmax_matrix(X @ params.W.T)
    return (((P - Y).T @ X) / len(ids)).reshape(-1)


def validation_loss(params: ModelParams, dataset: Dataset) -> float:
    ids = dataset.validation_ids
    X = dataset.features_aug[ids]
    Y = dataset.label_matrix(ids)
    logp = log_softmax_matrix(X @ params.W.T)
    return float(-(Y * logp).sum(axis=1).mean())


# ---------------------------------------------------------------------------
# training


def train_sgd(dataset: Dataset, config: TrainConfig) -> tuple[ModelParams, TrainingTrace]:
    """Mini-batch SGD on the down-weighted objective, caching full provenance.

    Deterministic given the seed: per-epoch shuffles use sub-seeds derived from
    (seed, epoch), and the trace can replay the exact batch id sequence.
    """
    ids = dataset.train_ids
    if not ids:
        raise ArgumentError("train split is empty")
    X = dataset.features_aug[ids]
    Y = dataset.label_matrix(ids)
    wts = dataset.weights(ids, config.gamma)
    n = len(ids)
    d1 = X.shape[1]
    C = dataset.num_classes
    bpe = math.ceil(n / config.batch_size)

    W = np.zeros((C, d1))
    params = [W.reshape(-1).copy()]
    grads: list[np.ndarray] = []
    epoch_seeds: list[int] = []
    boundaries: list[int] = []
    t = 0
    for epoch in range(config.epochs):
        es = derive_seed(config.seed, "epoch", epoch)
        epoch_seeds.append(es)
        perm = np.random.default_rng(es).permutation(n)
        for b in range(bpe):
            pos = perm[b * config.batch_size:(b + 1) * config.batch_size]
            G = weighted_batch_gradient(W, X[pos], Y[pos], wts[pos])
            if not np.all(np.isfinite(G)):
                raise DivergenceError("non-finite gradient", iteration=t)
            grads.append(G.reshape(-1).copy())
            W = sgd_step(W, G, config.learning_rate, config.lam)
            if not np.all(np.isfinite(W)):
                raise DivergenceError("non-finite parameters", iteration=t)
            params.append(W.reshape(-1).copy())
            t += 1
        boundaries.append(t)

    trace = TrainingTrace(
        params=params,
        batch_grads=grads,
        exact_flags=[True] * len(grads),
        epoch_seeds=epoch_seeds,
        epoch_boundaries=boundaries,
        batch_size=config.batch_size,
        train_ids=list(ids),
        num_classes=C,
    )
    return ModelParams(W.copy(), config.lam), trace


def f1_score(params: ModelParams, dataset: Dataset, split: str) -> MetricReport:
    """F1 on a deterministic split: binary on external class 1 when C == 2,
    macro otherwise."""
    ids = dataset.split.get(split, [])
    if not ids:
        raise ArgumentError(f"split {split!r} is empty")
    if any(dataset.labels[i].is_uncleaned for i in ids):
        raise ArgumentError(f"split {split!r} has non-deterministic labels")
    X = dataset.features_aug[ids]
    truth = np.array([dataset.labels[i].class_index for i in ids])
    pred = np.argmax(X @ params.W.T, axis=1)
    C = dataset.num_classes

    def prf(positive: int):
        tp = int(np.sum((pred == positive) & (truth == positive)))
        fp = int(np.sum((pred == positive) & (truth != positive)))
        fn = int(np.sum((pred != positive) & (truth == positive)))
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        return p, r, f

    if C == 2:
        p, r, f = prf(0)  # external class 1
        return MetricReport(f, p, r)
    per = [prf(c) for c in range(C)]
    return MetricReport(
        float(np.mean([f for _, _, f in per])),
        float(np.mean([p for p, _, _ in per])),
        float(np.mean([r for _, r, _ in per])),
    )


def select_early_stop(trace: TrainingTrace, dataset: Dataset, lam: float) -> ModelParams:
    """Best epoch-boundary parameters by validation F1, earliest epoch on ties."""
    if not trace.epoch_boundaries:
        raise ArgumentError("empty trace")
    best = None
    for epoch, boundary in enumerate(trace.epoch_boundaries):
        cand = ModelParams.from_flat(trace.params[boundary], trace.num_classes, lam)
        f1 = f1_score(cand, dataset, "validation").f1
        if best is None or f1 > best[0] + 1e-15:
            best = (f1, epoch, cand)
    return best[2]


# ---------------------------------------------------------------------------
# trace persistence


def save_trace(path, trace: TrainingTrace):
    m = trace.params[0].size
    T = trace.num_iterations
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", TRACE_VERSION))
        f.write(struct.pack(
            "<IIIIII", trace.num_classes, m, trace.batch_size, T,
            len(trace.train_ids), len(trace.epoch_seeds),
        ))
        f.write(np.asarray(trace.train_ids, dtype="<u4").tobytes())
        f.write(np.asarray(trace.epoch_seeds, dtype="<u8").tobytes())
        f.write(np.asarray(trace.epoch_boundaries, dtype="<u4").tobytes())
        f.write(np.asarray(trace.exact_flags, dtype="u1").tobytes())
        f.write(np.ascontiguousarray(np.stack(trace.params), dtype="<f8").tobytes())
        if T:
            f.write(np.ascontiguousarray(np.stack(trace.batch_grads), dtype="<f8").tobytes())


def load_trace(path) -> TrainingTrace:
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise FormatError(f"{path}: bad magic bytes")
        (version,) = struct.unpack("<I", f.read(4))
        if version != TRACE_VERSION:
            raise FormatError(f"{path}: unsupported trace version {version}")
        C, m, batch_size, T, n_train, n_epochs = struct.unpack("<IIIIII", f.read(24))
        train_ids = np.frombuffer(f.read(4 * n_train), dtype="<u4").astype(int).tolist()
        epoch_seeds = np.frombuffer(f.read(8 * n_epochs), dtype="<u8").astype(object)
        epoch_seeds = [int(s) for s in epoch_seeds]
        boundaries = np.frombuffer(f.read(4 * n_epochs), dtype="<u4").astype(int).tolist()
        flags = np.frombuffer(f.read(T), dtype="u1").astype(bool).tolist()
        params_raw = np.frombuffer(f.read(8 * (T + 1) * m), dtype="<f8").reshape(T + 1, m)
        grads_raw = np.frombuffer(f.read(8 * T * m), dtype="<f8").reshape(T, m) if T else np.zeros((0, m))
    return TrainingTrace(
        params=[row.copy() for row in params_raw],
        batch_grads=[row.copy() for row in grads_raw],
        exact_flags=flags,
        epoch_seeds=epoch_seeds,
        epoch_boundaries=boundaries,
        batch_size=batch_size,
        train_ids=train_ids,
        num_classes=C,
    )
