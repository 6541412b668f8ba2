"""Incremental pruning of uninfluential samples across cleaning rounds.

At the initialization model w0 we cache, per uncleaned sample, its Hessian
spectral norm, the C per-class log-probability Hessian norms, the class-wise
gradient matrix, and the sample gradient. Later rounds bound each influence
score by a center I0 (cached gradients contracted with the current validation
product) plus a drift term driven by e1 = v.(wk - w0) and e2 = |v||wk - w0|,
and skip full scoring for samples whose interval cannot reach the top-b.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .dataio import MAGIC, Dataset
from .errors import ArgumentError, CacheMissError, FormatError
from .influence import ValGradProduct
from .model import ModelParams, grad_sample, predict_proba
from .influence import classwise_grad
from .numerics import SolverConfig, classlog_hessian_operator, hessian_norm_power, sample_hessian_operator

PROVENANCE_VERSION = 1


@dataclass
class SampleProvenance:
    sample_hessian_norm: float
    classlog_hessian_norms: np.ndarray  # length C
    classwise_grad0: np.ndarray  # m x C
    sample_grad0: np.ndarray  # m
    label_probs: np.ndarray  # the (frozen) probabilistic label
    probs0: np.ndarray  # model output at w0, reused for bit-stable contractions


@dataclass
class ProvenanceCache:
    records: dict[int, SampleProvenance]
    w0: np.ndarray  # flattened initialization parameters
    num_classes: int

    def evict(self, ids):
        for i in ids:
            self.records.pop(i, None)

    def __contains__(self, sample_id) -> bool:
        return sample_id in self.records


@dataclass
class BoundRecord:
    sample_id: int
    class_index: int
    i0: float
    lower: float
    upper: float
    offset: float
    radius: float


def build_provenance(params0: ModelParams, dataset: Dataset,
                     solver_config: SolverConfig) -> ProvenanceCache:
    """Pre-compute norms and gradients at w0 for every uncleaned sample.

    Norms come from the power method on the analytic Hessian-vector operators;
    deterministic given solver_config.power_seed.
    """
    records: dict[int, SampleProvenance] = {}
    C = dataset.num_classes
    for i in dataset.uncleaned_ids():
        x = dataset.features_aug[i]
        lab = dataset.labels[i]
        sample_norm = hessian_norm_power(sample_hessian_operator(params0, x), solver_config)
        classlog = np.array([
            hessian_norm_power(classlog_hessian_operator(params0, x, j), solver_config)
            for j in range(C)
        ])
        records[i] = SampleProvenance(
            sample_hessian_norm=sample_norm,
            classlog_hessian_norms=classlog,
            classwise_grad0=classwise_grad(params0, x),
            sample_grad0=grad_sample(params0, x, lab.probs),
            label_probs=lab.probs.copy(),
            probs0=predict_proba(params0, x),
        )
    return ProvenanceCache(records, params0.flat().copy(), C)


def _center_contraction(cache: ProvenanceCache, v: np.ndarray, x: np.ndarray,
                        rec: SampleProvenance, W_shape) -> np.ndarray:
    # same arithmetic as the live influence contraction, with w0 probabilities
    V = v.reshape(W_shape)
    u = V @ x
    return np.full(cache.num_classes, float(np.dot(rec.probs0, u))) - u


def _drift_terms(cache: ProvenanceCache, v: ValGradProduct, params_k: ModelParams):
    dw = params_k.flat() - cache.w0
    e1 = float(np.dot(v.v, dw))
    e2 = float(np.linalg.norm(v.v) * np.linalg.norm(dw))
    return e1, e2


def bound_record(cache: ProvenanceCache, v: ValGradProduct, params_k: ModelParams,
                 dataset: Dataset, sample_id: int, c: int, gamma: float) -> BoundRecord:
    """Interval around the round-k influence of (sample, class c) using only
    cached w0 quantities and the current v, wk."""
    if sample_id not in cache.records:
        raise CacheMissError(f"sample {sample_id} not in provenance cache")
    rec = cache.records[sample_id]
    e1, e2 = _drift_terms(cache, v, params_k)
    return _bound_from_parts(cache, v, params_k, dataset, sample_id, c, gamma, rec, e1, e2)


def _bound_from_parts(cache, v, params_k, dataset, sample_id, c, gamma, rec,
                      e1, e2) -> BoundRecord:
    # Both drift terms carry a 1/2: the symmetrized rank-2 eigen-decomposition
    # of v dw^T + dw v^T contributes (e1 +- e2)/2 to every contraction, for
    # the per-class Hessian terms exactly as for the sample-Hessian term.
    x = dataset.features_aug[sample_id]
    q0 = _center_contraction(cache, v.v, x, rec, params_k.W.shape)
    y = rec.label_probs
    delta = -y.copy()
    delta[c] += 1.0
    i0 = float(np.dot(q0, delta) + (1.0 - gamma) * np.dot(q0, y))
    hn = rec.classlog_hessian_norms
    mu = rec.sample_hessian_norm
    offset = 0.5 * e1 * ((1.0 - gamma) * mu + float(np.dot(delta, hn)))
    radius = 0.5 * e2 * ((1.0 - gamma) * mu + float(np.dot(np.abs(delta), hn)))
    return BoundRecord(sample_id, c, i0, i0 + offset - radius, i0 + offset + radius,
                       offset, radius)


def prune(cache: ProvenanceCache, v: ValGradProduct, params_k: ModelParams,
          dataset: Dataset, gamma: float, b: int) -> list[int]:
    """Candidate ids that can still reach the top-b selection.

    Samples producing the b smallest centers I0 over all (sample, class) pairs
    are kept; L is the largest upper bound among those b entries, and any other
    sample whose lower bound drops below L for some class is kept too. Only
    cached-matrix algebra: no per-sample gradient evaluations.
    """
    if b < 1:
        raise ArgumentError("b must be >= 1")
    e1, e2 = _drift_terms(cache, v, params_k)
    bounds: list[BoundRecord] = []
    for i in sorted(cache.records):
        rec = cache.records[i]
        for c in range(cache.num_classes):
            bounds.append(_bound_from_parts(cache, v, params_k, dataset, i, c,
                                            gamma, rec, e1, e2))
    ranked = sorted(bounds, key=lambda r: (r.i0, r.sample_id, r.class_index))
    top = ranked[:b]
    keep = {r.sample_id for r in top}
    if top:
        limit = max(r.upper for r in top)
        for r in ranked[b:]:
            if r.sample_id not in keep and r.lower < limit:
                keep.add(r.sample_id)
    return sorted(keep)


# ---------------------------------------------------------------------------
# persistence sidecar


def provenance_key(dataset: Dataset, params0: ModelParams) -> bytes:
    """32-byte key over the dataset content and the initialization model."""
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(dataset.features, dtype="<f8").tobytes())
    for lab in dataset.labels:
        h.update(lab.kind.encode())
        if lab.probs is not None:
            h.update(np.ascontiguousarray(lab.probs, dtype="<f8").tobytes())
        else:
            h.update(struct.pack("<i", lab.class_index))
    h.update(np.ascontiguousarray(params0.W, dtype="<f8").tobytes())
    return h.digest()


def save_provenance(path, cache: ProvenanceCache, key: bytes):
    ids = sorted(cache.records)
    C = cache.num_classes
    m = cache.w0.size
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", PROVENANCE_VERSION))
        f.write(key)
        f.write(struct.pack("<III", len(ids), C, m))
        f.write(np.ascontiguousarray(cache.w0, dtype="<f8").tobytes())
        for i in ids:
            rec = cache.records[i]
            f.write(struct.pack("<Id", i, rec.sample_hessian_norm))
            f.write(np.ascontiguousarray(rec.classlog_hessian_norms, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(rec.label_probs, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(rec.probs0, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(rec.sample_grad0, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(rec.classwise_grad0, dtype="<f8").tobytes())


def load_provenance(path) -> tuple[bytes, ProvenanceCache]:
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise FormatError(f"{path}: bad magic bytes")
        (version,) = struct.unpack("<I", f.read(4))
        if version != PROVENANCE_VERSION:
            raise FormatError(f"{path}: unsupported provenance version {version}")
        key = f.read(32)
        n, C, m = struct.unpack("<III", f.read(12))
        w0 = np.frombuffer(f.read(8 * m), dtype="<f8").copy()
        records: dict[int, SampleProvenance] = {}
        for _ in range(n):
            i, norm = struct.unpack("<Id", f.read(12))
            classlog = np.frombuffer(f.read(8 * C), dtype="<f8").copy()
            label = np.frombuffer(f.read(8 * C), dtype="<f8").copy()
            probs0 = np.frombuffer(f.read(8 * C), dtype="<f8").copy()
            grad0 = np.frombuffer(f.read(8 * m), dtype="<f8").copy()
            K0 = np.frombuffer(f.read(8 * m * C), dtype="<f8").reshape(m, C).copy()
            records[i] = SampleProvenance(norm, classlog, K0, grad0, label, probs0)
    return key, ProvenanceCache(records, w0, C)
