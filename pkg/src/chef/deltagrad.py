"""Incremental model update after a round of label cleaning.

Instead of retraining, the previous round's SGD trace is replayed over the
identical batch sequence: full-batch gradients are evaluated exactly during a
burn-in prefix and periodically afterwards, and approximated in between by a
quasi-Hessian correction of the cached gradient. Label edits enter through a
per-batch correction that touches only the edited samples, so each replay
iteration costs O(|batch intersect cleaned|) sample gradients outside the
exact evaluations.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .dataio import Dataset
from .errors import ArgumentError, DivergenceError, HistoryError
from .model import (
    ModelParams,
    TrainConfig,
    TrainingTrace,
    select_early_stop,
    sgd_step,
    softmax_matrix,
    weighted_batch_gradient,
)

CURVATURE_REJECT_FACTOR = 1e-12


@dataclass
class DeltaGradConfig:
    m0: int = 2  # history size
    j0: int = 10  # burn-in iterations
    t0: int = 20  # exact-evaluation period

    def __post_init__(self):
        if self.m0 < 1 or self.j0 < 1 or self.t0 < 1:
            raise ArgumentError("m0, j0, t0 must all be >= 1")

    def is_exact(self, t: int) -> bool:
        return t <= self.j0 or (t - self.j0) % self.t0 == 0


class LbfgsHistory:
    """Bounded store of (dw, dg) displacement pairs, paired by insertion.

    Pairs with non-positive curvature are rejected to keep the implied
    quasi-Hessian positive definite.
    """

    def __init__(self, m0: int):
        self.dw: deque[np.ndarray] = deque(maxlen=m0)
        self.dg: deque[np.ndarray] = deque(maxlen=m0)
        self.pushes = 0
        self.rejections = 0

    def __len__(self) -> int:
        return len(self.dw)

    def push(self, dw: np.ndarray, dg: np.ndarray) -> bool:
        self.pushes += 1
        curvature = float(np.dot(dw, dg))
        if curvature <= CURVATURE_REJECT_FACTOR * np.linalg.norm(dw) * np.linalg.norm(dg):
            self.rejections += 1
            return False
        self.dw.append(dw.copy())
        self.dg.append(dg.copy())
        return True


def lbfgs_product(history: LbfgsHistory, v: np.ndarray) -> np.ndarray:
    """B v for the BFGS Hessian approximation built from the stored pairs.

    Seeded with sigma*I, sigma = (dg_last . dw_last) / (dw_last . dw_last),
    then updated once per pair: B <- B - (B s s^T B)/(s^T B s) + (y y^T)/(y^T s).
    Linear in v; O(m0^2 * m).
    """
    if len(history) == 0:
        raise HistoryError("quasi-Newton history is empty")
    v = np.asarray(v, dtype=np.float64)
    s_list = list(history.dw)
    y_list = list(history.dg)
    s_last, y_last = s_list[-1], y_list[-1]
    sigma = float(np.dot(y_last, s_last) / np.dot(s_last, s_last))

    def apply(accepted, x):
        out = sigma * x
        for b, c, y_j, yv in accepted:
            out = out - b * (np.dot(b, x) / c) + y_j * (np.dot(y_j, x) / yv)
        return out

    accepted: list[tuple[np.ndarray, float, np.ndarray, float]] = []
    for s_j, y_j in zip(s_list, y_list):
        b = apply(accepted, s_j)
        c = float(np.dot(s_j, b))
        if c <= 0:
            continue  # defensive: numerically lost definiteness
        accepted.append((b, c, y_j, float(np.dot(y_j, s_j))))
    return apply(accepted, v)


@dataclass
class CleanedSample:
    """Old and new (label vector, weight) of one cleaned sample."""

    old_label: np.ndarray
    old_weight: float
    new_label: np.ndarray
    new_weight: float = 1.0


def _sample_grad(W: np.ndarray, x: np.ndarray, label: np.ndarray) -> np.ndarray:
    p = softmax_matrix((W @ x)[None, :])[0]
    return np.outer(p - label, x).reshape(-1)


def _batch_correction(W: np.ndarray, dataset: Dataset, hits, cleaned, batch_len: int):
    corr = np.zeros(W.size)
    for i in hits:
        cs = cleaned[i]
        x = dataset.features_aug[i]
        corr += cs.new_weight * _sample_grad(W, x, cs.new_label)
        corr -= cs.old_weight * _sample_grad(W, x, cs.old_label)
    return corr / batch_len


def updated_batch_gradient(params: ModelParams, cached_grad: np.ndarray, batch_ids,
                           cleaned: dict[int, CleanedSample], dataset: Dataset) -> np.ndarray:
    """Batch gradient after label edits, touching only edited samples.

    cached_grad must be the weighted batch gradient under the pre-edit labels
    at the same parameters; untouched batches come back unchanged.
    """
    hits = [i for i in batch_ids if i in cleaned]
    if not hits:
        return cached_grad
    corr = _batch_correction(params.W, dataset, hits, cleaned, len(batch_ids))
    return cached_grad + corr


@dataclass
class UpdateCounters:
    exact_batch_evals: int = 0
    sample_grad_evals: int = 0
    lbfgs_products: int = 0


@dataclass
class DeltaGradResult:
    params: ModelParams  # early-stop selected
    trace: TrainingTrace
    counters: UpdateCounters
    warnings: list[str] = field(default_factory=list)


def deltagrad_update(dataset: Dataset, prev_trace: TrainingTrace,
                     cleaned: dict[int, CleanedSample], config: DeltaGradConfig,
                     train_config: TrainConfig) -> DeltaGradResult:
    """Replay ``prev_trace`` against the post-cleaning dataset.

    Iterates the same batch id sequence; exact iterations recompute the batch
    gradient in full (shared code path with training, so t0=1 reproduces a
    retrain bit-exactly), other iterations approximate the old-label gradient
    as B(w' - w) + cached and add the per-edit correction. Emits a full trace
    for the next round with approximated entries flagged.
    """
    ids = prev_trace.train_ids
    X = dataset.features_aug[ids]
    Y = dataset.label_matrix(ids)
    wts = dataset.weights(ids, train_config.gamma)
    C = prev_trace.num_classes
    d1 = X.shape[1]
    lr, lam = train_config.learning_rate, train_config.lam
    T = prev_trace.num_iterations

    history = LbfgsHistory(config.m0)
    counters = UpdateCounters()
    warnings: list[str] = []
    W = prev_trace.params[0].reshape(C, d1).copy()
    new_params = [W.reshape(-1).copy()]
    new_grads: list[np.ndarray] = []
    new_flags: list[bool] = []
    empty_history_seen = False

    for t in range(T):
        pos = prev_trace.batch_positions(t)
        batch_ids = [ids[p] for p in pos]
        cached = prev_trace.batch_grads[t]
        w_prev = prev_trace.params[t]
        hits = [i for i in batch_ids if i in cleaned]
        exact = config.is_exact(t)

        if exact:
            G_new = weighted_batch_gradient(W, X[pos], Y[pos], wts[pos]).reshape(-1)
            counters.exact_batch_evals += 1
            if hits:
                corr = _batch_correction(W, dataset, hits, cleaned, len(batch_ids))
                counters.sample_grad_evals += 2 * len(hits)
                g_old = G_new - corr
            else:
                g_old = G_new
            history.push(W.reshape(-1) - w_prev, g_old - cached)
        else:
            dw = W.reshape(-1) - w_prev
            if not np.any(dw):
                g_old = cached
            elif len(history) == 0:
                # all curvature pairs were rejected; fall back to the cached
                # gradient (zero quasi-Hessian drift term)
                if not empty_history_seen:
                    warnings.append("empty quasi-Newton history; drift term skipped")
                    empty_history_seen = True
                g_old = cached
            else:
                g_old = lbfgs_product(history, dw) + cached
                counters.lbfgs_products += 1
            if hits:
                corr = _batch_correction(W, dataset, hits, cleaned, len(batch_ids))
                counters.sample_grad_evals += 2 * len(hits)
                G_new = g_old + corr
            else:
                G_new = g_old

        if not np.all(np.isfinite(G_new)):
            raise DivergenceError("non-finite replay gradient", iteration=t)
        new_grads.append(np.array(G_new, dtype=np.float64, copy=True))
        W = sgd_step(W, G_new.reshape(C, d1), lr, lam)
        if not np.all(np.isfinite(W)):
            raise DivergenceError("non-finite replay parameters", iteration=t)
        new_params.append(W.reshape(-1).copy())
        new_flags.append(exact)

    if history.pushes and history.rejections > 0.5 * history.pushes:
        warnings.append(
            f"ConditioningWarning: {history.rejections}/{history.pushes} "
            "curvature pairs rejected"
        )

    trace = TrainingTrace(
        params=new_params,
        batch_grads=new_grads,
        exact_flags=new_flags,
        epoch_seeds=list(prev_trace.epoch_seeds),
        epoch_boundaries=list(prev_trace.epoch_boundaries),
        batch_size=prev_trace.batch_size,
        train_ids=list(ids),
        num_classes=C,
    )
    selected = select_early_stop(trace, dataset, lam)
    return DeltaGradResult(selected, trace, counters, warnings)
