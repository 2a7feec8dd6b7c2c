"""FastAPI application exposing the pipeline over HTTP.

Run with: uvicorn voxstyle.service.app:app  (or `voxstyle serve`).
Inputs and outputs reference server-local paths; responses echo the
effective configuration so runs are reproducible from the report alone.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from ..errors import VoxstyleError
from . import handlers, models

app = FastAPI(
    title="voxstyle",
    description="Reference-guided voxel radiance field stylization service",
    version="0.1.0",
)


def _run(fn, req):
    try:
        return fn(req)
    except VoxstyleError as exc:
        status = {"input_error": 422, "format_error": 422}.get(exc.category, 500)
        raise HTTPException(status_code=status, detail={"error": exc.category, "message": str(exc)})
    except FileNotFoundError as exc:
        raise HTTPException(status_code=422, detail={"error": "input_error", "message": str(exc)})


@app.get("/health", response_model=models.HealthResponse)
def health() -> models.HealthResponse:
    return models.HealthResponse(status="ok", name="voxstyle", version="0.1.0")


@app.post("/gen-toy", response_model=models.GenToyResponse)
def gen_toy(req: models.GenToyRequest) -> models.GenToyResponse:
    return _run(handlers.gen_toy, req)


@app.post("/fit", response_model=models.FitResponse)
def fit(req: models.FitRequest) -> models.FitResponse:
    return _run(handlers.fit, req)


@app.post("/render", response_model=models.RenderResponse)
def render(req: models.RenderRequest) -> models.RenderResponse:
    return _run(handlers.render, req)


@app.post("/register", response_model=models.RegisterResponse)
def register(req: models.RegisterRequest) -> models.RegisterResponse:
    return _run(handlers.register, req)


@app.post("/stylize", response_model=models.StylizeResponse)
def stylize(req: models.StylizeRequest) -> models.StylizeResponse:
    return _run(handlers.stylize_run, req)


@app.post("/eval", response_model=models.EvalResponse)
def evaluate(req: models.EvalRequest) -> models.EvalResponse:
    return _run(handlers.evaluate, req)
