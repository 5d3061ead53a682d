"""HTTP service: run creation, live event streaming, results and metrics.

The service wraps the same orchestrator the CLI drives. Event streaming is
line-delimited JSON over a long-lived response; every subscriber sees the
identical prefix, so reconnecting clients can safely re-fold from scratch.
"""

from __future__ import annotations

import json
import tempfile
from typing import Optional

from fastapi import FastAPI, File, Form, Header, HTTPException, UploadFile
from fastapi.responses import JSONResponse, PlainTextResponse, StreamingResponse
from pydantic import BaseModel

from . import __version__
from .errors import SchemaError
from .pipeline import RunConfig
from .runstore import DEFAULT_MAX_UPLOAD_BYTES, RunManager, RunState
from .schema import parse_schema_annotation


class RunHandleResponse(BaseModel):
    run_id: str
    state: str
    created_at: float
    config: dict
    error: Optional[str] = None


class RunListResponse(BaseModel):
    runs: list[RunHandleResponse]


class DeleteResponse(BaseModel):
    run_id: str
    deleted: bool


def _parse_config(config_text: str, api_key: str | None) -> RunConfig:
    try:
        doc = json.loads(config_text)
    except json.JSONDecodeError as exc:
        raise HTTPException(422, detail=f"config is not valid JSON: {exc}")
    if not isinstance(doc, dict):
        raise HTTPException(422, detail="config must be a JSON object")
    try:
        config = RunConfig.from_dict(doc)
        parse_schema_annotation(config.schema_annotation)
    except (ValueError, SchemaError) as exc:
        raise HTTPException(422, detail=str(exc))
    if api_key:
        # Per-run credential: kept in memory only, never echoed or persisted.
        config.provider = {**config.provider, "api_key": api_key}
    return config


def create_app(
    data_dir=None,
    max_upload_bytes: int = DEFAULT_MAX_UPLOAD_BYTES,
    ui_dir=None,
) -> FastAPI:
    app = FastAPI(title="factline", version=__version__)
    if data_dir is None:
        data_dir = tempfile.mkdtemp(prefix="factline-runs-")
    manager = RunManager(data_dir, max_upload_bytes=max_upload_bytes)
    app.state.manager = manager

    def _require_run(run_id: str):
        record = manager.get(run_id)
        if record is None:
            raise HTTPException(404, detail=f"run {run_id!r} not found")
        return record

    def _require_done(run_id: str):
        record = _require_run(run_id)
        if record.state != RunState.DONE:
            raise HTTPException(
                409, detail=f"run {run_id!r} is {record.state.value}, not DONE"
            )
        return record

    @app.post("/runs", response_model=RunHandleResponse, status_code=201)
    async def create_run(
        file: UploadFile = File(...),
        config: str = Form(...),
        x_provider_key: Optional[str] = Header(default=None),
    ):
        body = await file.read()
        if len(body) > manager.max_upload_bytes:
            raise HTTPException(
                413, detail=f"upload exceeds {manager.max_upload_bytes} bytes"
            )
        run_config = _parse_config(config, x_provider_key)
        record = manager.create_run(body, run_config)
        return record.handle()

    @app.get("/runs", response_model=RunListResponse)
    async def list_runs():
        return {"runs": [record.handle() for record in manager.list()]}

    @app.get("/runs/{run_id}", response_model=RunHandleResponse)
    async def get_run(run_id: str):
        return _require_run(run_id).handle()

    @app.delete("/runs/{run_id}", response_model=DeleteResponse)
    async def delete_run(run_id: str):
        _require_run(run_id)
        deleted = await manager.delete(run_id)
        return {"run_id": run_id, "deleted": deleted}

    @app.get("/runs/{run_id}/events")
    async def stream_events(run_id: str):
        record = _require_run(run_id)

        async def generate():
            async for event in manager.stream_events(record):
                yield json.dumps(event) + "\n"

        return StreamingResponse(generate(), media_type="application/x-ndjson")

    @app.get("/runs/{run_id}/result")
    async def get_result(run_id: str):
        record = _require_done(run_id)
        csv_text = (record.directory / "output.csv").read_text(encoding="utf-8")
        return PlainTextResponse(
            csv_text,
            media_type="text/csv",
            headers={"Content-Disposition": f'attachment; filename="{run_id}.csv"'},
        )

    @app.get("/runs/{run_id}/metrics")
    async def get_metrics(run_id: str):
        record = _require_done(run_id)
        return JSONResponse(record.report)

    if ui_dir is not None:
        # Same-origin hosting of the browser UI; API routes take precedence.
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
