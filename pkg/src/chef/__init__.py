"""Iterative cleaning of probabilistic training labels.

Influence-guided sample selection with suggested cleaned labels, bound-based
candidate pruning across rounds, and incremental model updates that replay
the cached training trace instead of retraining.
"""

__version__ = "0.1.0"

from .dataio import (
    AnnotatorPool,
    Dataset,
    LabelState,
    load_dataset,
    make_blobs_dataset,
    simulate_annotators,
    synth_probabilistic_labels,
    write_dataset,
)
from .deltagrad import CleanedSample, DeltaGradConfig, deltagrad_update
from .increm import build_provenance, bound_record, prune
from .influence import (
    InfluenceTable,
    Selection,
    baseline_scores,
    infl_score,
    score_all,
    select_top_b,
    val_grad_product,
)
from .model import (
    ModelParams,
    TrainConfig,
    TrainingTrace,
    f1_score,
    predict_proba,
    select_early_stop,
    train_sgd,
)
from .numerics import SolverConfig, cg_solve, hessian_norm_power
from .pipeline import (
    AnnotatorSetup,
    PipelineConfig,
    PipelineSession,
    aggregate_majority,
    resolve_labels,
    run_pipeline,
)

__all__ = [
    "AnnotatorPool", "AnnotatorSetup", "CleanedSample", "Dataset",
    "DeltaGradConfig", "InfluenceTable", "LabelState", "ModelParams",
    "PipelineConfig", "PipelineSession", "Selection", "SolverConfig",
    "TrainConfig", "TrainingTrace", "aggregate_majority", "baseline_scores",
    "bound_record", "build_provenance", "cg_solve", "deltagrad_update",
    "f1_score", "hessian_norm_power", "infl_score", "load_dataset",
    "make_blobs_dataset", "predict_proba", "prune", "resolve_labels",
    "run_pipeline", "score_all", "select_early_stop", "select_top_b",
    "simulate_annotators", "synth_probabilistic_labels", "train_sgd",
    "val_grad_product", "write_dataset",
]
