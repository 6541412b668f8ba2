"""HTTP API exposing one live cleaning session to human annotators.

One exclusive session per process; all mutation funnels through the advance
lock, GETs serve a cached snapshot that is rebuilt after every state change.
Annotator identity comes from the X-Annotator header (local tool, no auth);
strategies one/three need 3 and 2 distinct identities per sample. Explicit
submissions overrule suggestions when the round advances.
"""

from __future__ import annotations

import threading
from pathlib import Path

from fastapi import FastAPI, Header, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, PlainTextResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .dataio import Dataset
from .errors import IncompleteAnnotationError
from .pipeline import ANNOTATORS_NEEDED, PipelineConfig, PipelineSession


class AdvanceRequest(BaseModel):
    round: int | None = None


class ServiceState:
    def __init__(self, dataset: Dataset, config: PipelineConfig):
        self.session = PipelineSession(dataset, config)
        self.config = config
        self.dataset = self.session.dataset
        self.advance_lock = threading.Lock()
        self.store_lock = threading.Lock()
        # labels[sample_id][annotator] = 0-based class
        self.labels: dict[int, dict[str, int]] = {}
        self.previously_pending: set[int] = set()
        self.status = "initializing"
        self.snapshot_cache: dict | None = None
        self.init_error: str | None = None

    # -- lifecycle -----------------------------------------------------------

    def initialize(self):
        try:
            self.session.initialize()
        except Exception as exc:  # surfaced via 503 detail
            self.init_error = f"{type(exc).__name__}: {exc}"
            self.status = "failed"
            raise
        self.status = "done" if self.session.done else "ready"
        self.rebuild_snapshot()

    def start_background(self):
        thread = threading.Thread(target=self._init_guarded, daemon=True)
        thread.start()
        return thread

    def _init_guarded(self):
        try:
            self.initialize()
        except Exception:
            pass

    # -- views ----------------------------------------------------------------

    def rebuild_snapshot(self):
        session = self.session
        pending = []
        for it in session.pending.items:
            lab = self.dataset.labels[it.sample_id]
            pending.append({
                "sample_id": it.sample_id,
                "suggested_class": it.suggested_class + 1,
                "score": it.score,
                "current_label": [float(p) for p in lab.probs]
                                 if lab.is_uncleaned else None,
                "feature_preview": [float(x) for x in
                                    self.dataset.features[it.sample_id][:8]],
            })
        self.snapshot_cache = {
            "round": session.k,
            "budget_remaining": session.budget_remaining,
            "strategy": self.config.strategy,
            "num_classes": self.dataset.num_classes,
            "pending": pending,
            "f1_history": [dict(m) for m in session.metrics],
        }

    def snapshot(self) -> dict:
        out = dict(self.snapshot_cache)
        out["status"] = "done" if (self.status != "initializing"
                                   and self.session.done) else self.status
        return out

    def pending_ids(self) -> set[int]:
        return {it.sample_id for it in self.session.pending.items}

    # -- annotation -----------------------------------------------------------

    def submit(self, annotator: str, sample_id: int, class_index0: int):
        with self.store_lock:
            self.labels.setdefault(sample_id, {})[annotator] = class_index0

    def labels_for_advance(self):
        """(annotator_labels, overrides) for the current pending set."""
        needed = ANNOTATORS_NEEDED[self.config.strategy]
        annotator_labels: dict[int, list[int]] = {}
        overrides: dict[int, int] = {}
        with self.store_lock:
            for it in self.session.pending.items:
                per_sample = self.labels.get(it.sample_id, {})
                votes = [per_sample[name] for name in sorted(per_sample)]
                if needed:
                    annotator_labels[it.sample_id] = votes[:needed]
                elif votes:
                    # strategy two: an explicit submission overrules the
                    # suggestion (last distinct annotators vote; single
                    # annotator in practice)
                    counts: dict[int, int] = {}
                    for c in votes:
                        counts[c] = counts.get(c, 0) + 1
                    top = max(counts.items(), key=lambda kv: kv[1])
                    if top[1] * 2 > len(votes):
                        overrides[it.sample_id] = top[0]
        return annotator_labels, overrides


def create_app(dataset: Dataset, config: PipelineConfig, ui_dir=None,
               start: bool = True) -> FastAPI:
    app = FastAPI(title="label-cleaning annotation service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
        allow_headers=["*"],
    )
    state = ServiceState(dataset, config)
    app.state.service = state
    if start:
        state.start_background()

    def not_ready():
        detail = state.init_error or "session is initializing"
        return JSONResponse({"detail": detail}, status_code=503)

    @app.get("/api/health", response_class=PlainTextResponse)
    def health():
        return "ok"

    @app.get("/api/session")
    def session_view():
        if state.snapshot_cache is None:
            return not_ready()
        return state.snapshot()

    @app.get("/api/queue")
    def queue_view():
        if state.snapshot_cache is None:
            return not_ready()
        with state.store_lock:
            return {
                "round": state.session.k,
                "submissions": [
                    {"sample_id": i, "annotator": name, "class": c + 1}
                    for i in sorted(state.labels)
                    for name, c in sorted(state.labels[i].items())
                    if i in state.pending_ids()
                ],
            }

    @app.get("/api/metrics")
    def metrics_view():
        if state.snapshot_cache is None:
            return not_ready()
        history = state.session.metrics
        return {
            "f1_val": [m["f1_val"] for m in history],
            "f1_test": [m["f1_test"] for m in history],
        }

    @app.post("/api/labels", status_code=204)
    async def submit_label(request: Request,
                           x_annotator: str = Header(default="anonymous")):
        if state.snapshot_cache is None:
            return not_ready()
        body = await request.json()
        if not isinstance(body, dict) or "sample_id" not in body or "class" not in body:
            return JSONResponse({"detail": "body needs sample_id and class"},
                                status_code=422)
        try:
            sample_id = int(body["sample_id"])
            class_ext = int(body["class"])
        except (TypeError, ValueError):
            return JSONResponse({"detail": "sample_id and class must be integers"},
                                status_code=422)
        if not (1 <= class_ext <= dataset.num_classes):
            return JSONResponse(
                {"detail": f"class must be in 1..{dataset.num_classes}"},
                status_code=422)
        if sample_id not in state.pending_ids():
            if sample_id in state.previously_pending:
                return JSONResponse({"detail": "round already advanced"},
                                    status_code=409)
            return JSONResponse({"detail": f"sample {sample_id} is not pending"},
                                status_code=404)
        state.submit(x_annotator, sample_id, class_ext - 1)
        return Response(status_code=204)

    @app.post("/api/round/advance")
    def advance(body: AdvanceRequest | None = None):
        if state.snapshot_cache is None:
            return not_ready()
        if state.session.done:
            return JSONResponse({"detail": "session finished"}, status_code=409)
        if body is not None and body.round is not None and body.round != state.session.k:
            return JSONResponse(
                {"detail": f"round {body.round} already advanced"}, status_code=409)
        if not state.advance_lock.acquire(blocking=False):
            return JSONResponse({"detail": "another advance is in flight"},
                                status_code=409)
        try:
            state.status = "updating"
            annotator_labels, overrides = state.labels_for_advance()
            pending_now = state.pending_ids()
            try:
                report = state.session.advance(annotator_labels, overrides=overrides)
            except IncompleteAnnotationError as exc:
                return JSONResponse({"detail": "annotations incomplete",
                                     "missing": exc.missing_ids}, status_code=412)
            state.previously_pending |= pending_now
            with state.store_lock:
                for i in pending_now:
                    state.labels.pop(i, None)
            state.rebuild_snapshot()
            return report
        finally:
            state.status = "done" if state.session.done else "ready"
            state.advance_lock.release()

    if ui_dir and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
