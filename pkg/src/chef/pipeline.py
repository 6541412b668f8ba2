"""Round loop: select influential uncleaned samples, resolve cleaned labels,
apply them, refresh the model (retrain or incremental replay), repeat until
the cleaning budget is spent or a target validation F1 is reached.

A session owns its dataset copy; all mutation (label cleaning) happens inside
it. Efficiency evidence is counter-based (gradient evaluations per phase);
wall-clock times are reported informationally under "ms".
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataio import AnnotatorPool, Dataset, simulate_annotators
from .deltagrad import CleanedSample, DeltaGradConfig, deltagrad_update
from .errors import ArgumentError, ConfigError, IncompleteAnnotationError
from .increm import ProvenanceCache, build_provenance, prune
from .influence import (
    Selection,
    baseline_scores,
    score_all,
    select_top_b,
    select_top_b_baseline,
    val_grad_product,
)
from .model import (
    ModelParams,
    TrainConfig,
    TrainingTrace,
    f1_score,
    select_early_stop,
    train_sgd,
)
from .numerics import SolverConfig
from .rng import derive_seed

STRATEGIES = ("one", "two", "three")
UPDATERS = ("retrain", "deltagrad")
SELECTORS = ("infl", "infl_d", "infl_y", "active_one", "active_two")

# annotator labels required per sample, beyond the selector's suggestion
ANNOTATORS_NEEDED = {"one": 3, "two": 0, "three": 2}

_BASELINE_KIND = {
    "infl_d": "infl_d",
    "infl_y": "infl_y",
    "active_one": "active_least_conf",
    "active_two": "active_entropy",
}


@dataclass
class AnnotatorSetup:
    kind: str = "simulated"  # "simulated" | "service"
    k: int = 3
    error_rate: float = 0.05


@dataclass
class PipelineConfig:
    budget: int
    batch: int
    strategy: str = "two"
    updater: str = "retrain"
    selector: str = "infl"
    use_increm: bool = False
    gamma: float = 0.8
    train: TrainConfig = None
    delta: DeltaGradConfig = field(default_factory=DeltaGradConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    annotators: AnnotatorSetup = field(default_factory=AnnotatorSetup)
    early_stop_f1: float | None = None
    tie_consumes_budget: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.budget < 1 or self.batch < 1 or self.batch > self.budget:
            raise ConfigError("need 1 <= batch <= budget")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.updater not in UPDATERS:
            raise ConfigError(f"unknown updater {self.updater!r}")
        if self.selector not in SELECTORS:
            raise ConfigError(f"unknown selector {self.selector!r}")
        if self.train is None:
            raise ConfigError("train config is required")
        if self.selector != "infl":
            if self.use_increm:
                raise ConfigError("use_increm requires selector='infl'")
            if self.strategy in ("two", "three"):
                raise ConfigError(
                    f"strategy {self.strategy!r} needs suggested labels; "
                    f"selector {self.selector!r} cannot provide them"
                )
        needed = ANNOTATORS_NEEDED[self.strategy]
        if self.annotators.kind == "simulated" and self.annotators.k < needed:
            raise ConfigError(
                f"strategy {self.strategy!r} needs {needed} annotators, "
                f"config provides {self.annotators.k}"
            )
        if self.train.gamma != self.gamma:
            raise ConfigError("train.gamma must equal pipeline gamma")


def aggregate_majority(labels) -> int | None:
    """Strict-majority class of a non-empty label list; None means a tie."""
    if not labels:
        raise ArgumentError("empty label list")
    counts: dict[int, int] = {}
    for c in labels:
        counts[c] = counts.get(c, 0) + 1
    top = max(counts.items(), key=lambda kv: kv[1])
    if top[1] * 2 > len(labels):
        return top[0]
    return None


def resolve_labels(strategy: str, selection: Selection,
                   annotator_labels: dict[int, list[int]]) -> dict[int, int | None]:
    """Cleaned label per selected id (None = tie, label left unchanged).

    one: majority of 3 annotators; two: the suggested class; three: majority
    of {suggestion, 2 annotators}.
    """
    needed = ANNOTATORS_NEEDED[strategy]
    missing = [it.sample_id for it in selection.items
               if needed and len(annotator_labels.get(it.sample_id, [])) < needed]
    if missing:
        raise IncompleteAnnotationError(missing)
    out: dict[int, int | None] = {}
    for it in selection.items:
        if strategy == "two":
            out[it.sample_id] = it.suggested_class
        elif strategy == "one":
            out[it.sample_id] = aggregate_majority(annotator_labels[it.sample_id][:3])
        else:
            votes = [it.suggested_class] + annotator_labels[it.sample_id][:2]
            out[it.sample_id] = aggregate_majority(votes)
    return out


class PipelineSession:
    """One exclusive cleaning session over a private dataset copy."""

    def __init__(self, dataset: Dataset, config: PipelineConfig,
                 pool: AnnotatorPool | None = None, table_sink=None):
        self.config = config
        self.dataset = dataset.copy()
        self.pool = pool
        self.table_sink = table_sink  # callable(round_index, InfluenceTable)
        if pool is None and config.annotators.kind == "simulated" and \
                ANNOTATORS_NEEDED[config.strategy] > 0:
            self.pool = simulate_annotators(
                self.dataset, config.annotators.k, config.annotators.error_rate,
                derive_seed(config.seed, "annotators"),
            )
        self.k = 0
        self.spent = 0
        self.model: ModelParams | None = None
        self.trace: TrainingTrace | None = None
        self.provenance: ProvenanceCache | None = None
        self.pending: Selection | None = None
        self.metrics: list[dict] = []
        self.rounds: list[dict] = []
        self.initialized = False
        self._stopped = False

    # -- lifecycle ---------------------------------------------------------

    def initialize(self):
        """Initialization step: train w0, cache provenance, pick round-0 samples."""
        t0 = time.perf_counter()
        self.model, self.trace = train_sgd(self.dataset, self.config.train)
        self.model = select_early_stop(self.trace, self.dataset, self.config.train.lam)
        train_ms = 1e3 * (time.perf_counter() - t0)
        t0 = time.perf_counter()
        if self.config.use_increm:
            self.provenance = build_provenance(self.model, self.dataset, self.config.solver)
        prov_ms = 1e3 * (time.perf_counter() - t0)
        self._record_metrics()
        if self._target_met():
            self._stopped = True
            self.pending = Selection()
        else:
            self.pending = self._compute_selection()
        self.initialized = True
        self.init_ms = {"train": train_ms, "provenance": prov_ms}
        return self

    @property
    def budget_remaining(self) -> int:
        return self.config.budget - self.spent

    @property
    def done(self) -> bool:
        return self.initialized and (
            self._stopped or self.budget_remaining <= 0 or len(self.pending) == 0
        )

    def _target_met(self) -> bool:
        target = self.config.early_stop_f1
        return target is not None and self.metrics[-1]["f1_val"] >= target

    def _record_metrics(self):
        self.metrics.append({
            "f1_val": f1_score(self.model, self.dataset, "validation").f1,
            "f1_test": f1_score(self.model, self.dataset, "test").f1,
        })

    # -- selection ----------------------------------------------------------

    def _compute_selection(self) -> Selection:
        b = min(self.config.batch, self.budget_remaining)
        uncleaned = self.dataset.uncleaned_ids()
        self._last_candidates = []
        self._last_grad_evals = 0
        self._last_pruned = False
        if b < 1 or not uncleaned:
            return Selection()
        cfg = self.config
        v = val_grad_product(self.model, self.dataset, cfg.solver, cfg.gamma)
        if cfg.selector == "infl":
            candidate_ids = None
            if cfg.use_increm and self.k >= 1:
                candidate_ids = prune(self.provenance, v, self.model, self.dataset,
                                      cfg.gamma, b)
                self._last_pruned = True
            table = score_all(v, self.model, self.dataset, cfg.gamma, candidate_ids)
            self._last_candidates = sorted(table.entries)
            self._last_grad_evals = table.grad_eval_count
            if self.table_sink is not None:
                self.table_sink(self.k, table)
            return select_top_b(table, b)
        kind = _BASELINE_KIND[cfg.selector]
        need_v = kind in ("infl_d", "infl_y")
        scores = baseline_scores(kind, self.model, self.dataset,
                                 v if need_v else None)
        self._last_candidates = sorted(scores)
        self._last_grad_evals = len(scores) if need_v else 0
        return select_top_b_baseline(scores, kind, b)

    def _simulated_labels(self, selection: Selection) -> dict[int, list[int]]:
        needed = ANNOTATORS_NEEDED[self.config.strategy]
        if needed == 0 or self.pool is None:
            return {}
        return {it.sample_id: self.pool.labels_for(it.sample_id)[:needed]
                for it in selection.items}

    # -- round advance ------------------------------------------------------

    def advance(self, annotator_labels: dict[int, list[int]] | None = None,
                overrides: dict[int, int] | None = None) -> dict:
        """Run one round against the pending selection and move to the next.

        ``annotator_labels`` (id -> list of 0-based classes) overrides the
        simulated pool; required for strategies one/three in service mode.
        ``overrides`` are explicit per-sample human labels that replace the
        strategy resolution (service mode lets annotators overrule
        suggestions and break ties).
        """
        if not self.initialized:
            raise ArgumentError("session not initialized")
        if self.done:
            raise ArgumentError("session is finished")
        cfg = self.config
        selection = self.pending
        if annotator_labels is None:
            annotator_labels = self._simulated_labels(selection)

        t_annotate = time.perf_counter()
        resolved = resolve_labels(cfg.strategy, selection, annotator_labels)
        if overrides:
            resolved.update({i: c for i, c in overrides.items() if i in resolved})
        applied = {i: c for i, c in resolved.items() if c is not None}
        ties = sorted(i for i, c in resolved.items() if c is None)
        annotate_ms = 1e3 * (time.perf_counter() - t_annotate)

        cleaned: dict[int, CleanedSample] = {}
        for i, c in applied.items():
            lab = self.dataset.labels[i]
            new_label = np.zeros(self.dataset.num_classes)
            new_label[c] = 1.0
            cleaned[i] = CleanedSample(lab.probs.copy(), cfg.gamma, new_label)
            self.dataset.clean_label(i, c)

        if cfg.tie_consumes_budget:
            self.spent += len(selection.items)
        else:
            self.spent += len(applied)

        t_update = time.perf_counter()
        grad_evals = {
            "influence": self._last_grad_evals,
            "update_exact_batch": 0,
            "update_sample": 0,
        }
        if applied:
            if cfg.updater == "retrain":
                self.model, self.trace = train_sgd(self.dataset, cfg.train)
                self.model = select_early_stop(self.trace, self.dataset, cfg.train.lam)
                grad_evals["update_exact_batch"] = self.trace.num_iterations
            else:
                result = deltagrad_update(self.dataset, self.trace, cleaned,
                                          cfg.delta, cfg.train)
                self.model, self.trace = result.params, result.trace
                grad_evals["update_exact_batch"] = result.counters.exact_batch_evals
                grad_evals["update_sample"] = result.counters.sample_grad_evals
        update_ms = 1e3 * (time.perf_counter() - t_update)

        if self.provenance is not None:
            self.provenance.evict(applied)

        self._record_metrics()
        report = {
            "k": self.k,
            "selected": [
                {"id": it.sample_id, "class": it.suggested_class + 1,
                 "score": it.score}
                for it in selection.items
            ],
            "applied": [{"id": i, "class": applied[i] + 1} for i in sorted(applied)],
            "ties": ties,
            "candidate_count": len(self._last_candidates),
            "pruned": self._last_pruned,
            "f1_val": self.metrics[-1]["f1_val"],
            "f1_test": self.metrics[-1]["f1_test"],
            "grad_evals": grad_evals,
            "ms": {"annotate": annotate_ms, "update": update_ms},
        }
        self.k += 1
        if self._target_met():
            self._stopped = True
        t_select = time.perf_counter()
        if not self._stopped and self.budget_remaining > 0:
            self.pending = self._compute_selection()
        else:
            self.pending = Selection()
        report["ms"]["select_next"] = 1e3 * (time.perf_counter() - t_select)
        self.rounds.append(report)
        return report

    # -- full run -----------------------------------------------------------

    def report(self) -> dict:
        cfg = self.config
        echo = {
            "budget": cfg.budget, "batch": cfg.batch, "strategy": cfg.strategy,
            "updater": cfg.updater, "selector": cfg.selector,
            "use_increm": cfg.use_increm, "gamma": cfg.gamma,
            "early_stop_f1": cfg.early_stop_f1,
            "tie_consumes_budget": cfg.tie_consumes_budget,
            "train": asdict(cfg.train), "delta": asdict(cfg.delta),
            "solver": asdict(cfg.solver), "annotators": asdict(cfg.annotators),
        }
        return {
            "seed": cfg.seed,
            "config_echo": echo,
            "initial": dict(self.metrics[0]),
            "rounds": self.rounds,
            "total_cleaned": sum(len(r["applied"]) for r in self.rounds),
            "budget_spent": self.spent,
        }


def run_pipeline(config: PipelineConfig, dataset: Dataset,
                 pool: AnnotatorPool | None = None) -> dict:
    """Initialize and run rounds to completion; returns the report dict."""
    session = PipelineSession(dataset, config, pool=pool)
    session.initialize()
    while not session.done:
        session.advance()
    return session.report()
