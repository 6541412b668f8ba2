"""Hessian-vector products, power-method spectral norms, conjugate-gradient
solves, and small dense oracles.

All Hessians are over the flattened parameter space (m = C*(d+1)). For softmax
cross-entropy the per-sample Hessian is (diag(p) - p p^T) (x) x x^T, with no
dependence on the label, and -grad^2 log p^(j) is the same matrix for every j;
operators are built analytically from that closed form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import Dataset
from .errors import ArgumentError, NumericalError
from .model import ModelParams, predict_proba, softmax_matrix
from .rng import stream

DENSE_GUARD = 4096


@dataclass
class SolverConfig:
    cg_tol: float = 1e-8
    cg_max_iter: int = 200
    cg_damping: float = 0.0
    power_tol: float = 1e-7
    power_max_iter: int = 1000
    power_seed: int = 0

    def __post_init__(self):
        if self.cg_tol <= 0 or self.power_tol <= 0:
            raise ArgumentError("tolerances must be > 0")
        if self.cg_damping < 0:
            raise ArgumentError("cg_damping must be >= 0")


class HvpOperator:
    """Abstract symmetric linear map v -> H v with a source tag."""

    def __init__(self, dim: int, apply_fn, source: str):
        self.dim = dim
        self._apply = apply_fn
        self.source = source

    def __call__(self, v: np.ndarray) -> np.ndarray:
        return self._apply(np.asarray(v, dtype=np.float64))


def _single_sample_apply(p: np.ndarray, x: np.ndarray):
    C, d1 = p.size, x.size

    def apply(v):
        V = v.reshape(C, d1)
        u = V @ x
        s = p * u - p * np.dot(p, u)
        return np.outer(s, x).reshape(-1)

    return apply


def sample_hessian_operator(params: ModelParams, x: np.ndarray) -> HvpOperator:
    """Per-sample loss Hessian H(w, z); label-free for softmax cross-entropy."""
    p = predict_proba(params, x)
    return HvpOperator(params.dim, _single_sample_apply(p, x), "sample")


def classlog_hessian_operator(params: ModelParams, x: np.ndarray, j: int) -> HvpOperator:
    """-grad^2 log p^(j)(w, x); same closed form for every class j."""
    if not (0 <= j < params.num_classes):
        raise ArgumentError(f"class {j} out of range")
    p = predict_proba(params, x)
    return HvpOperator(params.dim, _single_sample_apply(p, x), f"classlog[{j}]")


def objective_hessian_operator(params: ModelParams, dataset: Dataset, gamma: float) -> HvpOperator:
    """Hessian of the full objective: weighted mean sample Hessian + lambda*I."""
    ids = dataset.train_ids
    X = dataset.features_aug[ids]
    wts = dataset.weights(ids, gamma)
    P = softmax_matrix(X @ params.W.T)
    n = len(ids)
    C, d1 = params.W.shape
    lam = params.lam

    def apply(v):
        V = v.reshape(C, d1)
        U = X @ V.T  # row i = V x_i
        S = P * U - P * (P * U).sum(axis=1, keepdims=True)
        M = ((wts[:, None] * S).T @ X) / n + lam * V
        return M.reshape(-1)

    return HvpOperator(params.dim, apply, "objective")


def hvp(operator: HvpOperator, v: np.ndarray) -> np.ndarray:
    return operator(v)


# ---------------------------------------------------------------------------
# power method


def hessian_norm_power(operator: HvpOperator, config: SolverConfig,
                       rayleigh_history: list | None = None) -> float:
    """Largest eigenvalue of a symmetric PSD operator by power iteration.

    Convergence is declared on the sign-aligned iterate vector, not the
    eigenvalue; the returned value is the final Rayleigh quotient. A zero
    image at two random restarts reports 0 (operator vanishes on the probed
    space).
    """
    rng = stream(config.power_seed, "power", operator.source)
    restarts = 0
    g = rng.normal(size=operator.dim)
    g /= np.linalg.norm(g)
    for _ in range(config.power_max_iter):
        h = operator(g)
        nh = np.linalg.norm(h)
        if nh == 0.0:
            restarts += 1
            if restarts >= 2:
                return 0.0
            g = rng.normal(size=operator.dim)
            g /= np.linalg.norm(g)
            continue
        if rayleigh_history is not None:
            rayleigh_history.append(float(np.dot(g, h)))
        g_new = h / nh
        if np.dot(g_new, g) < 0:
            g_new = -g_new
        if np.linalg.norm(g_new - g) < config.power_tol:
            g = g_new
            break
        g = g_new
    return float(np.dot(g, operator(g)))


# ---------------------------------------------------------------------------
# conjugate gradient


@dataclass
class CgResult:
    x: np.ndarray
    residual: float  # ||Hx - g|| / ||g||
    iterations: int
    converged: bool


def cg_solve(operator: HvpOperator, g: np.ndarray, config: SolverConfig) -> CgResult:
    """Solve (H + damping*I) x = g by conjugate gradients from a zero start."""
    g = np.asarray(g, dtype=np.float64)
    gnorm = np.linalg.norm(g)
    if gnorm == 0.0:
        return CgResult(np.zeros_like(g), 0.0, 0, True)

    def A(v):
        out = operator(v)
        if config.cg_damping:
            out = out + config.cg_damping * v
        return out

    x = np.zeros_like(g)
    r = g.copy()  # residual g - A x with x = 0
    p = r.copy()
    rs = float(np.dot(r, r))
    iterations = 0
    for _ in range(config.cg_max_iter):
        if np.sqrt(rs) / gnorm <= config.cg_tol:
            break
        Ap = A(p)
        denom = float(np.dot(p, Ap))
        if denom <= 0 or not np.isfinite(denom):
            raise NumericalError("CG encountered a non-SPD or non-finite curvature")
        alpha = rs / denom
        x = x + alpha * p
        r = r - alpha * Ap
        if not np.all(np.isfinite(x)):
            raise NumericalError("non-finite CG iterate")
        rs_new = float(np.dot(r, r))
        p = r + (rs_new / rs) * p
        rs = rs_new
        iterations += 1
    residual = float(np.linalg.norm(A(x) - g) / gnorm)
    return CgResult(x, residual, iterations, residual <= config.cg_tol)


# ---------------------------------------------------------------------------
# dense oracles (test-scale only)


def _guard(m: int):
    if m > DENSE_GUARD:
        raise ArgumentError(f"dense assembly refused for m={m} > {DENSE_GUARD}")


def dense_sample_hessian(params: ModelParams, x: np.ndarray) -> np.ndarray:
    _guard(params.dim)
    p = predict_proba(params, x)
    A = np.diag(p) - np.outer(p, p)
    return np.kron(A, np.outer(x, x))


def dense_objective_hessian(params: ModelParams, dataset: Dataset, gamma: float) -> np.ndarray:
    _guard(params.dim)
    ids = dataset.train_ids
    H = np.zeros((params.dim, params.dim))
    wts = dataset.weights(ids, gamma)
    for w, i in zip(wts, ids):
        H += w * dense_sample_hessian(params, dataset.features_aug[i])
    H /= len(ids)
    return H + params.lam * np.eye(params.dim)


def fd_hvp(grad_fn, w: np.ndarray, v: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central finite-difference Hessian-vector product; test oracle only."""
    return (grad_fn(w + step * v) - grad_fn(w - step * v)) / (2 * step)
