"""HTTP/JSON service for the operator dashboard.

Versioned under /api/v1.  Every JSON endpoint answers with the envelope
{ok, data, error} except the report endpoints, which pass through the
on-disk canonical JSON byte-for-byte.  Mutations are funneled through a
single lock so the ingest owner sees a total order of state changes.

No authentication: the service is designed to sit inside an enclave whose
access control is enforced by the surrounding infrastructure.
"""

from __future__ import annotations

import json
import threading
from pathlib import Path

from fastapi import FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles

from .clinic import StagingArea
from .ingest import (
    BatchState,
    IllegalTransition,
    IngestManager,
    UnknownBatchError,
)
from .profiler import CORPUS_REPORT_FILENAME, profile_corpus, write_canonical_json

DISTRIBUTION_DIMS = ("modality", "manufacturer", "view_position")


def _ok(data) -> dict:
    return {"ok": True, "data": data, "error": None}


def _err(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(
        status_code=status,
        content={"ok": False, "data": None, "error": {"code": code, "message": message}},
    )


class Operator:
    """Bridges operator decisions between the ingest side and the simulator.

    Confirming receipt propagates to the staging area, which then deletes
    the staged copy: the research side's acknowledgment is what licenses
    clinical-side cleanup.
    """

    def __init__(self, manager: IngestManager, staging: StagingArea | None = None):
        self.manager = manager
        self.staging = staging
        self._mutation_lock = threading.Lock()

    def confirm(self, batch_id: str) -> dict:
        with self._mutation_lock:
            event = self.manager.confirm_receipt(batch_id)
            staging_deleted = False
            if self.staging is not None and batch_id in self.staging.batch_ids():
                self.staging.mark_confirmed(batch_id)
                self.staging.delete_on_confirmation(batch_id)
                staging_deleted = True
            return {
                "record": self.manager.record(batch_id).to_dict(),
                "confirmed_at": event.confirmed_at,
                "staging_deleted": staging_deleted,
            }

    def reject(self, batch_id: str, reason: str) -> dict:
        with self._mutation_lock:
            return self.manager.reject_batch(batch_id, reason).to_dict()

    def request_retransfer(self, batch_id: str) -> dict:
        with self._mutation_lock:
            return self.manager.request_retransfer(batch_id).to_dict()


def create_app(
    landing,
    staging=None,
    clinical=None,
    policy=None,
    rules=None,
    ui_dir=None,
) -> FastAPI:
    manager = IngestManager(landing, clinical_path=clinical, policy=policy, rules=rules)
    staging_area = StagingArea(staging) if staging else None
    operator = Operator(manager, staging_area)

    app = FastAPI(title="radingest operator API", version="1")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    app.state.manager = manager
    app.state.operator = operator

    def batch_summary(batch_id: str) -> dict:
        record = manager.record(batch_id).to_dict()
        quality_path = manager.quality_report_path(batch_id)
        record["bytes_total"] = None
        if quality_path.exists():
            record["bytes_total"] = json.loads(quality_path.read_text())["bytes_total"]
        return record

    @app.get("/api/v1/batches")
    def list_batches():
        return _ok([batch_summary(b) for b in manager.batch_ids()])

    @app.get("/api/v1/batches/{batch_id}")
    def batch_detail(batch_id: str):
        try:
            record = manager.record(batch_id)
        except UnknownBatchError as exc:
            return _err(404, "BATCH_NOT_FOUND", str(exc))
        detail = {"record": record.to_dict()}
        reports_dir = manager.reports_dir(batch_id)
        for name, key in (
            ("reconciliation.json", "reconciliation"),
            (f"{batch_id}.quality.json", "quality"),
            ("links.json", "links"),
            ("duplicates.json", "duplicates"),
        ):
            path = reports_dir / name
            detail[key] = json.loads(path.read_text(encoding="utf-8")) if path.exists() else None
        return _ok(detail)

    @app.get("/api/v1/batches/{batch_id}/reports/quality")
    def quality_report(batch_id: str):
        path = manager.quality_report_path(batch_id)
        if not path.exists():
            return _err(404, "REPORT_NOT_FOUND", f"no quality report for {batch_id}")
        return Response(content=path.read_bytes(), media_type="application/json")

    @app.post("/api/v1/batches/{batch_id}/confirm")
    def confirm(batch_id: str):
        try:
            return _ok(operator.confirm(batch_id))
        except UnknownBatchError as exc:
            return _err(404, "BATCH_NOT_FOUND", str(exc))
        except IllegalTransition as exc:
            return _err(409, "ILLEGAL_TRANSITION", str(exc))

    @app.post("/api/v1/batches/{batch_id}/reject")
    async def reject(batch_id: str, request: Request):
        try:
            body = await request.json()
        except Exception:
            return _err(400, "MALFORMED_BODY", "expected JSON body with a 'reason' field")
        reason = body.get("reason") if isinstance(body, dict) else None
        if not reason or not isinstance(reason, str):
            return _err(400, "MALFORMED_BODY", "expected JSON body with a 'reason' field")
        try:
            return _ok(operator.reject(batch_id, reason))
        except UnknownBatchError as exc:
            return _err(404, "BATCH_NOT_FOUND", str(exc))
        except IllegalTransition as exc:
            return _err(409, "ILLEGAL_TRANSITION", str(exc))

    @app.post("/api/v1/batches/{batch_id}/request-retransfer")
    def request_retransfer(batch_id: str):
        try:
            return _ok(operator.request_retransfer(batch_id))
        except UnknownBatchError as exc:
            return _err(404, "BATCH_NOT_FOUND", str(exc))
        except IllegalTransition as exc:
            return _err(409, "ILLEGAL_TRANSITION", str(exc))

    def corpus_report_path() -> Path:
        stats = profile_corpus(manager.catalog, [r.to_dict() for r in manager.list_records()])
        return write_canonical_json(
            manager.landing / "_reports" / CORPUS_REPORT_FILENAME, stats
        )

    @app.get("/api/v1/corpus/stats")
    def corpus_stats():
        # Serve the canonical report file verbatim.
        path = corpus_report_path()
        return Response(content=path.read_bytes(), media_type="application/json")

    @app.get("/api/v1/corpus/distribution")
    def corpus_distribution(dim: str = ""):
        if dim not in DISTRIBUTION_DIMS:
            return _err(
                400, "UNKNOWN_DIMENSION",
                f"dim must be one of: {', '.join(DISTRIBUTION_DIMS)}",
            )
        stats = profile_corpus(manager.catalog, [r.to_dict() for r in manager.list_records()])
        return _ok({"dim": dim, "counts": stats["dimensions"][dim]})

    if ui_dir and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="dashboard")

    return app
