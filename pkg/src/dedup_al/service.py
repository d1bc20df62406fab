"""HTTP labeling-queue service: runs the learning loop behind a JSON API.

One process hosts many runs. Each run executes in its own worker thread and
is the only writer of its state; HTTP handlers either read a locked snapshot
or hand label submissions to the worker through a queue bridge. A run is
addressed by an id derived from its config digest, so re-posting the same
config after a crash resumes the same run directory instead of forking a
second history.
"""
from __future__ import annotations

import logging
import os
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from .active import (
    ActiveRun,
    GroundTruthOracle,
    LabelError,
    LabelRequest,
    RoundSuspended,
    strategy_from_config,
)
from .config import ConfigError, RunConfig, config_from_dict, validate_config
from .corpus import Corpus
from .encoder import predict_batch
from .evaluation import RoundReport

__all__ = [
    "LabelSubmission",
    "RunHandle",
    "RunRegistry",
    "ServiceError",
    "create_app",
    "export_clusters",
    "serve",
]

log = logging.getLogger(__name__)

_STATUSES = ("idle", "training", "scoring", "awaiting_labels", "done")


class ServiceError(Exception):
    """API-level failure with an HTTP status code."""

    def __init__(self, status_code: int, message: str):
        super().__init__(message)
        self.status_code = status_code
        self.message = message


@dataclass(frozen=True)
class LabelSubmission:
    """One annotator judgment on a pending pair."""

    pair_id: str
    y: int
    annotator: str = "anonymous"
    submitted_at: str = ""

    def __post_init__(self):
        if self.y not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.y!r}")


@dataclass
class RunHandle:
    """Mutable, lock-guarded view of one run's public state."""

    run_id: str
    status: str = "idle"
    round_index: int = 0
    rounds_total: int = 0
    config_digest: str = ""
    labeled_count: int = 0
    error: str | None = None

    def snapshot(self, pending_count: int) -> dict:
        return {
            "run_id": self.run_id,
            "status": self.status,
            "round_index": self.round_index,
            "rounds_total": self.rounds_total,
            "pending_count": pending_count,
            "config_digest": self.config_digest,
            "labeled_count": self.labeled_count,
            "error": self.error,
        }


class _QueueOracle:
    """Oracle that parks the worker thread until the queue is labeled.

    The worker publishes the pending requests and waits on a condition
    variable; HTTP handlers submit labels through ``offer`` which forwards
    each one to the loop's durable ``submit`` callback. ``offer`` runs in
    the handler thread while the worker is parked, so there is still only
    one writer at a time.
    """

    def __init__(self, timeout_s: float | None):
        self.timeout_s = timeout_s
        self._cond = threading.Condition()
        self._requests: dict[str, LabelRequest] = {}
        self._submit = None
        self._stopped = False

    def label(self, requests, submit) -> None:
        with self._cond:
            self._requests = {r.pair_id: r for r in requests}
            self._submit = submit
            deadline = None if self.timeout_s is None else time.monotonic() + self.timeout_s
            while self._requests and not self._stopped:
                wait = None if deadline is None else max(0.0, deadline - time.monotonic())
                if not self._cond.wait(timeout=wait) and deadline is not None:
                    break
            self._submit = None
            self._requests = {}

    def pending(self) -> list[LabelRequest]:
        with self._cond:
            return list(self._requests.values())

    def offer(self, submissions: list[LabelSubmission]) -> tuple[list[dict], int]:
        """Apply submissions one at a time; returns per-item results and remaining."""
        results = []
        with self._cond:
            if self._submit is None:
                raise ServiceError(409, "run is not awaiting labels")
            for sub in submissions:
                if sub.pair_id not in self._requests:
                    results.append({"pair_id": sub.pair_id, "accepted": False,
                                    "reason": "not pending"})
                    continue
                try:
                    self._submit([(sub.pair_id, sub.y)])
                except LabelError as exc:
                    results.append({"pair_id": sub.pair_id, "accepted": False,
                                    "reason": str(exc)})
                    continue
                del self._requests[sub.pair_id]
                results.append({"pair_id": sub.pair_id, "accepted": True, "reason": None})
            remaining = len(self._requests)
            self._cond.notify_all()
        return results, remaining

    def stop(self) -> None:
        with self._cond:
            self._stopped = True
            self._cond.notify_all()


class _Run:
    """One run: worker thread, oracle bridge, and the public handle."""

    def __init__(self, run_id: str, config: RunConfig, run_dir: Path):
        self.run_id = run_id
        self.config = config
        self.run_dir = run_dir
        self.handle = RunHandle(run_id=run_id, rounds_total=config.rounds,
                                config_digest=config.digest())
        self.lock = threading.Lock()
        self.oracle = _QueueOracle(config.oracle_timeout_s)
        self.reports: list[RoundReport] = []
        self._thread: threading.Thread | None = None
        self._active: ActiveRun | None = None

    # -- worker side ---------------------------------------------------

    def start(self) -> None:
        # Blocking and preprocessing begin immediately, so the run is
        # "training" from the creator's point of view.
        with self.lock:
            self.handle.status = "training"
        self._thread = threading.Thread(target=self._work, name=f"run-{self.run_id}",
                                        daemon=True)
        self._thread.start()

    def _on_status(self, status: str, round_index: int) -> None:
        # Runs in the worker thread, so reading the pool here is race-free.
        with self.lock:
            self.handle.status = status
            self.handle.round_index = round_index
            run = self._active
            if run is not None and run.pool is not None:
                self.handle.labeled_count = len(run.pool.labeled)
                self.reports = list(run.reports)

    def _work(self) -> None:
        try:
            corpus = _build_corpus(self.config)
            oracle = (GroundTruthOracle(corpus) if self.config.oracle == "ground_truth"
                      else self.oracle)
            resumable = (self.run_dir / "events.jsonl").exists()
            kwargs = dict(oracle=oracle, run_dir=self.run_dir, on_status=self._on_status)
            if resumable:
                run = ActiveRun.resume(corpus, self.config, **kwargs)
            else:
                run = ActiveRun.start(corpus, self.config, **kwargs)
            self._active = run
            try:
                run.execute()
                with self.lock:
                    self.handle.status = "done"
                    self.reports = list(run.reports)
            finally:
                run.close()
        except RoundSuspended as exc:
            with self.lock:
                self.handle.status = "idle"
                self.handle.error = (f"suspended in round {exc.round_index}: "
                                     f"{exc.remaining} labels outstanding")
        except Exception as exc:  # worker must never die silently
            log.exception("run %s failed", self.run_id)
            with self.lock:
                self.handle.status = "idle"
                self.handle.error = f"{type(exc).__name__}: {exc}"

    # -- handler side ----------------------------------------------------

    def status_payload(self) -> dict:
        pending_count = len(self.oracle.pending())
        with self.lock:
            payload = self.handle.snapshot(pending_count)
            payload["latest_report"] = self.reports[-1].to_dict() if self.reports else None
        return payload

    def queue_payload(self) -> list[dict]:
        with self.lock:
            if self.handle.status != "awaiting_labels":
                raise ServiceError(409, f"run is {self.handle.status}, not awaiting_labels")
        return [r.to_dict() for r in self.oracle.pending()]

    def submit(self, submissions: list[LabelSubmission]) -> dict:
        with self.lock:
            if self.handle.status != "awaiting_labels":
                raise ServiceError(409, f"run is {self.handle.status}, not awaiting_labels")
        results, remaining = self.oracle.offer(submissions)
        return {"results": results, "remaining": remaining}

    def reports_payload(self) -> list[dict]:
        with self.lock:
            return [r.to_dict() for r in self.reports]

    def export_payload(self) -> dict:
        with self.lock:
            if self.handle.status != "done":
                raise ServiceError(409, "export requires a finished run")
        assert self._active is not None
        return export_clusters(self._active, threshold=self.config.threshold)


def _build_corpus(config: RunConfig) -> Corpus:
    if config.corpus is None:
        raise ConfigError("config must define a corpus source", "$.corpus")
    return config.corpus.build()


def _union_find_clusters(record_ids: list[str], positive_pairs: list[tuple[str, str]]) -> dict[str, str]:
    """Transitive closure of positive pairs; cluster named by smallest member."""
    parent = {rid: rid for rid in record_ids}

    def find(x: str) -> str:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in positive_pairs:
        ra, rb = find(a), find(b)
        if ra != rb:
            ra, rb = (ra, rb) if ra < rb else (rb, ra)
            parent[rb] = ra
    roots: dict[str, str] = {}
    for rid in record_ids:
        root = find(rid)
        best = roots.get(root)
        if best is None or rid < best:
            roots[root] = rid
    return {rid: roots[find(rid)] for rid in record_ids}


def export_clusters(run: ActiveRun, threshold: float = 0.5) -> dict:
    """Deduplicated dataset: every candidate pair scored with the final model,
    plus clusters from the transitive closure of positive predictions."""
    params = run.params
    if params is None:
        raise ServiceError(409, "run has no trained model yet")
    pair_ids = sorted(run.all_pair_ids)
    seqs = [run.pipeline.encode(pid) for pid in pair_ids]
    preds = predict_batch(params, seqs)
    scored = []
    for pid, pred in zip(pair_ids, preds):
        left_id, right_id = pid.split("|", 1)
        scored.append({"pair_id": pid, "left_id": left_id, "right_id": right_id,
                       "p": float(pred.p), "duplicate": bool(pred.p >= threshold)})
    record_ids = [rec.id for rec in run.corpus.records]
    positive = [(row["left_id"], row["right_id"]) for row in scored if row["duplicate"]]
    assignment = _union_find_clusters(record_ids, positive)
    return {
        "threshold": threshold,
        "pairs": scored,
        "clusters": assignment,
    }


class RunRegistry:
    """All runs hosted by this process, keyed by run id."""

    def __init__(self, data_dir: Path):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self._runs: dict[str, _Run] = {}
        self._lock = threading.Lock()

    def start_run(self, document: dict) -> _Run:
        try:
            validate_config(document)
            config = config_from_dict(document)
        except ConfigError as exc:
            raise ServiceError(400, f"invalid config at {exc.path}: {exc.reason}") from exc
        run_id = f"run-{config.digest()}"
        with self._lock:
            existing = self._runs.get(run_id)
            if existing is not None:
                return existing
            run = _Run(run_id, config, self.data_dir / run_id)
            self._runs[run_id] = run
        run.start()
        return run

    def get(self, run_id: str) -> _Run:
        with self._lock:
            run = self._runs.get(run_id)
        if run is None:
            raise ServiceError(404, f"unknown run {run_id!r}")
        return run

    def shutdown(self) -> None:
        with self._lock:
            runs = list(self._runs.values())
        for run in runs:
            run.oracle.stop()


def create_app(data_dir: str | Path | None = None):
    """FastAPI application; data_dir falls back to DEDUP_AL_DATA_DIR or ./runs."""
    from fastapi import FastAPI, Request
    from fastapi.middleware.cors import CORSMiddleware
    from fastapi.responses import JSONResponse

    if data_dir is None:
        data_dir = os.environ.get("DEDUP_AL_DATA_DIR", "runs")
    registry = RunRegistry(Path(data_dir))
    app = FastAPI(title="dedup-al")
    app.state.registry = registry
    # The labeling console is served as static files from whatever origin is
    # handy; the API carries no credentials, so a blanket allow is safe here.
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])

    @app.exception_handler(ServiceError)
    async def _service_error(request: Request, exc: ServiceError):
        return JSONResponse(status_code=exc.status_code, content={"error": exc.message})

    @app.post("/runs", status_code=201)
    def post_runs(document: dict):
        run = registry.start_run(document)
        return run.status_payload()

    @app.get("/runs/{run_id}")
    def get_run(run_id: str):
        return registry.get(run_id).status_payload()

    @app.get("/runs/{run_id}/queue")
    def get_queue(run_id: str):
        return registry.get(run_id).queue_payload()

    @app.post("/runs/{run_id}/labels")
    def post_labels(run_id: str, body: dict):
        raw = body.get("labels")
        if not isinstance(raw, list) or not raw:
            raise ServiceError(400, "body must carry a non-empty 'labels' list")
        submissions = []
        for i, item in enumerate(raw):
            try:
                submissions.append(
                    LabelSubmission(
                        pair_id=str(item["pair_id"]),
                        y=item["y"],
                        annotator=str(item.get("annotator", "anonymous")),
                        submitted_at=item.get("submitted_at")
                        or datetime.now(timezone.utc).isoformat(),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ServiceError(400, f"labels[{i}]: {exc}") from exc
        return registry.get(run_id).submit(submissions)

    @app.get("/runs/{run_id}/reports")
    def get_reports(run_id: str):
        return registry.get(run_id).reports_payload()

    @app.get("/runs/{run_id}/export")
    def get_export(run_id: str):
        return registry.get(run_id).export_payload()

    return app


def serve(host: str = "127.0.0.1", port: int | None = None,
          data_dir: str | Path | None = None) -> None:
    """Run the HTTP service until interrupted."""
    import uvicorn

    if port is None:
        port = int(os.environ.get("DEDUP_AL_PORT", "8321"))
    uvicorn.run(create_app(data_dir), host=host, port=port, log_level="info")
