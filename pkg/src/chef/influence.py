"""Influence scoring of uncleaned samples with suggested cleaned labels,
plus baseline scorers and deterministic top-b selection.

The score for (sample, class c) estimates N * (validation loss after cleaning
the sample to class c and raising its weight to 1, minus the current
validation loss); more negative means more helpful to clean.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .dataio import Dataset
from .errors import ArgumentError
from .model import ModelParams, mean_validation_gradient, predict_proba
from .numerics import SolverConfig, cg_solve, objective_hessian_operator


@dataclass
class ValGradProduct:
    """v = -H^{-1}(w) * mean validation gradient, with CG diagnostics."""

    v: np.ndarray
    at_params: np.ndarray  # flattened w the product was computed at
    residual: float
    converged: bool


@dataclass
class InfluenceTable:
    entries: dict[int, np.ndarray]  # sample id -> length-C scores
    best: dict[int, tuple[int, float]]  # sample id -> (argmin class, min score)
    grad_eval_count: int = 0
    warning: str | None = None


@dataclass
class SelectionItem:
    sample_id: int
    suggested_class: int
    score: float


@dataclass
class Selection:
    items: list[SelectionItem] = field(default_factory=list)
    truncated: bool = False  # fewer candidates than requested

    @property
    def ids(self) -> list[int]:
        return [it.sample_id for it in self.items]

    def __len__(self) -> int:
        return len(self.items)


def classwise_grad(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """m x C matrix whose column j is -grad_w log p^(j)(w, x)."""
    p = predict_proba(params, x)
    C, d1 = params.W.shape
    base = np.outer(p, x).reshape(-1)
    K = np.tile(base[:, None], (1, C))
    for j in range(C):
        K[j * d1:(j + 1) * d1, j] -= x
    return K


def val_grad_product(params: ModelParams, dataset: Dataset,
                     solver_config: SolverConfig, gamma: float) -> ValGradProduct:
    """CG solve for v = -H^{-1} grad_w F(w, Z_val) on the objective Hessian."""
    g = mean_validation_gradient(params, dataset)
    op = objective_hessian_operator(params, dataset, gamma)
    res = cg_solve(op, g, solver_config)
    return ValGradProduct(-res.x, params.flat().copy(), res.residual, res.converged)


def _classwise_contraction(v: np.ndarray, params: ModelParams, x: np.ndarray) -> np.ndarray:
    """q with q[j] = v^T (-grad_w log p^(j)); shares one probability pass."""
    p = predict_proba(params, x)
    V = v.reshape(params.W.shape)
    u = V @ x
    return np.full(params.num_classes, float(np.dot(p, u))) - u


def infl_score(v: ValGradProduct, params: ModelParams, dataset: Dataset,
               sample_id: int, c: int, gamma: float) -> float:
    """Influence of cleaning ``sample_id`` to class ``c`` (0-based).

    Computed as v^T [K delta_y + (1-gamma) g] with delta_y = onehot(c) - y and
    g the sample gradient at the current probabilistic label.
    """
    lab = dataset.labels[sample_id]
    if not lab.is_uncleaned:
        raise ArgumentError(f"sample {sample_id} is not uncleaned")
    if not (0 <= c < dataset.num_classes):
        raise ArgumentError(f"class {c} out of range")
    x = dataset.features_aug[sample_id]
    q = _classwise_contraction(v.v, params, x)
    y = lab.probs
    delta = -y.copy()
    delta[c] += 1.0
    return float(np.dot(q, delta) + (1.0 - gamma) * np.dot(q, y))


def score_all(v: ValGradProduct, params: ModelParams, dataset: Dataset,
              gamma: float, candidate_ids=None) -> InfluenceTable:
    """Score every candidate (default: all uncleaned) for all C classes.

    One class-wise gradient evaluation per candidate; its C columns are shared
    across that sample's scores, so grad_eval_count grows by one per sample.
    """
    if candidate_ids is None:
        candidates = dataset.uncleaned_ids()
    else:
        candidates = sorted(candidate_ids)
    entries: dict[int, np.ndarray] = {}
    best: dict[int, tuple[int, float]] = {}
    C = dataset.num_classes
    for i in candidates:
        lab = dataset.labels[i]
        if not lab.is_uncleaned:
            raise ArgumentError(f"candidate {i} is not uncleaned")
        q = _classwise_contraction(v.v, params, dataset.features_aug[i])
        y = lab.probs
        up = (1.0 - gamma) * np.dot(q, y)
        scores = np.empty(C)
        for c in range(C):
            delta = -y.copy()
            delta[c] += 1.0
            scores[c] = np.dot(q, delta) + up
        entries[i] = scores
        c_star = int(np.argmin(scores))
        best[i] = (c_star, float(scores[c_star]))
    warning = None if v.converged else (
        f"influence products used an unconverged CG solve (residual {v.residual:.2e})"
    )
    return InfluenceTable(entries, best, grad_eval_count=len(candidates), warning=warning)


def select_top_b(table: InfluenceTable, b: int) -> Selection:
    """The b samples with smallest per-sample best score; ties break on
    (score, sample id, class index)."""
    if b < 1:
        raise ArgumentError("b must be >= 1")
    ranked = sorted(
        ((score, i, c) for i, (c, score) in table.best.items())
    )
    items = [SelectionItem(i, c, score) for score, i, c in ranked[:b]]
    return Selection(items, truncated=len(table.best) < b)


# ---------------------------------------------------------------------------
# baselines


BASELINE_KINDS = ("infl_d", "infl_y", "active_least_conf", "active_entropy")

# True when a small value means high cleaning priority.
BASELINE_ASCENDING = {
    "infl_d": True,
    "infl_y": True,
    "active_least_conf": False,
    "active_entropy": False,
}


def baseline_scores(kind: str, params: ModelParams, dataset: Dataset,
                    v: ValGradProduct | None = None, candidate_ids=None) -> dict[int, float]:
    """Per-sample priority scores for the comparison selectors.

    infl_d is the deletion influence v^T grad; infl_y contracts the label-wise
    gradient matrix with each one-hot direction and keeps the per-sample
    minimum; the active variants use least confidence and entropy.
    """
    if kind not in BASELINE_KINDS:
        raise ArgumentError(f"unknown baseline {kind!r}")
    if kind in ("infl_d", "infl_y") and v is None:
        raise ArgumentError(f"{kind} requires the validation-gradient product")
    candidates = sorted(candidate_ids) if candidate_ids is not None else dataset.uncleaned_ids()
    out: dict[int, float] = {}
    for i in candidates:
        x = dataset.features_aug[i]
        if kind == "infl_d":
            q = _classwise_contraction(v.v, params, x)
            out[i] = float(np.dot(q, dataset.labels[i].probs))
        elif kind == "infl_y":
            q = _classwise_contraction(v.v, params, x)
            out[i] = float(np.min(q))
        else:
            p = predict_proba(params, x)
            if kind == "active_least_conf":
                out[i] = float(1.0 - np.max(p))
            else:
                with np.errstate(divide="ignore", invalid="ignore"):
                    terms = np.where(p > 0, p * np.log(p), 0.0)
                out[i] = float(-terms.sum())
    return out


def select_top_b_baseline(scores: dict[int, float], kind: str, b: int) -> Selection:
    """Rank baseline scores in the kind's priority direction; no suggestions
    for selectors that cannot produce them (suggested_class = -1)."""
    if b < 1:
        raise ArgumentError("b must be >= 1")
    ascending = BASELINE_ASCENDING[kind]
    ranked = sorted(
        ((s if ascending else -s, i) for i, s in scores.items())
    )
    items = [SelectionItem(i, -1, scores[i]) for _, i in ranked[:b]]
    return Selection(items, truncated=len(scores) < b)


def export_influence_csv(table: InfluenceTable, path):
    """CSV export: sample_id, class (1-based), score, is_best."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["sample_id", "class", "score", "is_best"])
        for i in sorted(table.entries):
            c_star, _ = table.best[i]
            for c, score in enumerate(table.entries[i]):
                writer.writerow([i, c + 1, f"{score:.17g}",
                                 "true" if c == c_star else "false"])
