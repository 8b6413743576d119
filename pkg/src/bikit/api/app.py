"""FastAPI application exposing the hub under ``/v1``."""

from __future__ import annotations

import html
import json
import os
from pathlib import Path

from fastapi import FastAPI, File, Form, Request, UploadFile
from fastapi.exceptions import RequestValidationError
from fastapi.responses import HTMLResponse, JSONResponse, Response, StreamingResponse

from bikit import __version__
from bikit.api.schemas import (
    DatasetOut,
    ErrorOut,
    LeaderboardOut,
    ModelOut,
    SubmissionOut,
    SubmissionRequest,
)
from bikit.errors import BikitError, IntegrityError, NotFound
from bikit.hub import Hub, LeaderboardView, Submission, SubmissionMeta, open_hub

DEFAULT_MAX_PAYLOAD = 256 * 1024 * 1024
ENV_DATA = "BIKIT_DATA"
ENV_PORT = "BIKIT_PORT"
ENV_MAX_PAYLOAD = "BIKIT_MAX_PAYLOAD"

ERROR_RESPONSES = {s: {"model": ErrorOut} for s in (404, 413, 422, 500)}


def _error(status: int, code: str, message: str, details: list | None = None) -> JSONResponse:
    return JSONResponse({"error": {"code": code, "message": message, "details": list(details or [])}},
                        status_code=status)


def status_for(exc: BikitError) -> int:
    if isinstance(exc, NotFound):
        return 404
    if isinstance(exc, IntegrityError):
        return 500
    return 422


class PayloadLimit:
    """ASGI middleware rejecting request bodies larger than ``limit`` bytes with 413."""

    def __init__(self, app, limit: int):
        self.app = app
        self.limit = limit

    async def __call__(self, scope, receive, send):
        if scope["type"] != "http":
            return await self.app(scope, receive, send)
        for key, value in scope.get("headers", ()):
            if key == b"content-length" and value.isdigit() and int(value) > self.limit:
                return await self._reject(scope, receive, send)
        seen = 0
        limit = self.limit

        async def counting_receive():
            nonlocal seen
            msg = await receive()
            if msg["type"] == "http.request":
                seen += len(msg.get("body", b""))
                if seen > limit:
                    raise _TooLarge()
            return msg

        try:
            await self.app(scope, counting_receive, send)
        except _TooLarge:
            await self._reject(scope, receive, send)

    async def _reject(self, scope, receive, send):
        resp = _error(413, "payload-too-large", f"request body exceeds {self.limit} bytes")
        await resp(scope, receive, send)


class _TooLarge(Exception):
    pass


def _submission_out(sub: Submission, created: bool) -> dict:
    return {**sub.to_dict(), "created": created}


def _leaderboard_out(view: LeaderboardView) -> dict:
    return {
        "dataset": view.dataset,
        "classes": view.classes,
        "rows": [
            {k: getattr(r, k) for k in ("rank", "submission_id", "model_name", "architecture", "strategy",
                                         "submitter", "emr", "recall_per_class", "timestamp")}
            for r in view.rows
        ],
    }


def _pct(v) -> str:
    return "n/a" if v is None else f"{100 * v:.2f}"


def render_leaderboard_html(view: LeaderboardView) -> str:
    e = html.escape
    head = "".join(f"<th>{e(h)}</th>" for h in ["Rank", "Model", "Strategy", "EMR"] + view.classes + ["Submitted"])
    body = []
    for r in view.rows:
        cells = [str(r.rank), e(r.model_name), e(r.strategy), _pct(r.emr)]
        cells += [_pct(r.recall_per_class.get(c)) for c in view.classes]
        cells.append(e(r.timestamp))
        body.append("<tr>" + "".join(f"<td>{c}</td>" for c in cells) + "</tr>")
    return (
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">"
        f"<title>Leaderboard: {e(view.dataset)}</title></head><body>"
        f"<h1>{e(view.dataset)}</h1><p>Ranked by exact match ratio; recall by class in percent.</p>"
        f"<table border=\"1\"><thead><tr>{head}</tr></thead><tbody>{''.join(body)}</tbody></table>"
        "</body></html>\n"
    )


def create_app(hub: Hub | None = None, data_root: str | Path | None = None,
               max_payload: int | None = None) -> FastAPI:
    """Build the app. Arguments override ``BIKIT_DATA`` and ``BIKIT_MAX_PAYLOAD``."""
    if hub is None:
        data_root = data_root or os.environ.get(ENV_DATA)
        if not data_root:
            raise BikitError("no data directory given (use --data or BIKIT_DATA)", code="no-data-root")
        hub = open_hub(data_root)
    if max_payload is None:
        max_payload = int(os.environ.get(ENV_MAX_PAYLOAD, DEFAULT_MAX_PAYLOAD))

    app = FastAPI(title="bikit hub", version=__version__, responses=ERROR_RESPONSES)
    app.state.hub = hub
    app.add_middleware(PayloadLimit, limit=max_payload)

    @app.exception_handler(BikitError)
    async def _domain_error(request: Request, exc: BikitError):
        return _error(status_for(exc), exc.code, str(exc), exc.details)

    @app.exception_handler(RequestValidationError)
    async def _request_error(request: Request, exc: RequestValidationError):
        details = [json.loads(json.dumps(err, default=str)) for err in exc.errors()]
        return _error(422, "invalid-request", "request body or parameters are invalid", details)

    @app.get("/v1/datasets", response_model=list[DatasetOut])
    def list_datasets():
        return [hub.dataset_info(n) for n in hub.datasets]

    @app.post("/v1/datasets/{name}/submissions", response_model=SubmissionOut, status_code=201)
    def create_submission(name: str, body: SubmissionRequest, response: Response):
        meta = SubmissionMeta(**body.metadata.model_dump())
        sub, created = hub.submit(name, body.predictions, meta)
        if not created:
            response.status_code = 200
        return _submission_out(sub, created)

    @app.get("/v1/datasets/{name}/leaderboard", response_model=LeaderboardOut,
             responses={200: {"content": {"text/html": {}}}})
    def get_leaderboard(name: str, format: str = "json"):
        view = hub.leaderboard(name)
        if format == "html":
            return HTMLResponse(render_leaderboard_html(view))
        if format != "json":
            raise BikitError(f"unknown format {format!r}; use json or html", code="bad-format")
        return _leaderboard_out(view)

    @app.get("/v1/submissions/{submission_id}", response_model=SubmissionOut)
    def get_submission(submission_id: str):
        return _submission_out(hub.get_submission(submission_id), False)

    @app.post("/v1/models", response_model=ModelOut, status_code=201)
    def upload_model(file: UploadFile = File(...), architecture: str = Form(...), name: str = Form(""),
                     submission_id: str = Form("")):
        entry = hub.register_model(file.file.read(), architecture, name, submission_id or None)
        return entry.to_dict()

    @app.get("/v1/models/{model_id}", response_model=ModelOut)
    def get_model(model_id: str):
        return hub.get_model(model_id).to_dict()

    @app.get("/v1/models/{model_id}/blob")
    def get_model_blob(model_id: str):
        entry = hub.get_model(model_id)
        chunks = hub.blobs.iter_verified(entry.weights_sha256)
        first = next(chunks, b"")  # verification runs here, before any header is sent

        def stream():
            yield first
            yield from chunks

        return StreamingResponse(stream(), media_type="application/octet-stream",
                                 headers={"X-Content-SHA256": entry.weights_sha256,
                                          "Content-Length": str(entry.byte_size)})

    return app


def app_from_env() -> FastAPI:
    """Factory for ``uvicorn --factory bikit.api.app:app_from_env``."""
    return create_app()
