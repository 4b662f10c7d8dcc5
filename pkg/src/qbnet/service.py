"""HTTP service wrapping the pipeline.

Endpoints mirror the CLI subcommands one-to-one and operate on server-local
paths, so a long-lived lab box can accept jobs from multiple clients.  All
request bodies are the strict schemas from qbnet.schemas; unknown keys are
rejected with a 422.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from . import __version__, pipeline, schemas
from .errors import QbnetError

app = FastAPI(title="qbnet", version=__version__,
              description="size vs weight-precision trade-off lab")


@app.exception_handler(QbnetError)
async def _qbnet_error(request: Request, exc: QbnetError) -> JSONResponse:
    return JSONResponse(status_code=400, content={"detail": str(exc)})


@app.exception_handler(ValueError)
async def _value_error(request: Request, exc: ValueError) -> JSONResponse:
    return JSONResponse(status_code=400, content={"detail": str(exc)})


@app.exception_handler(FileNotFoundError)
async def _not_found(request: Request, exc: FileNotFoundError) -> JSONResponse:
    return JSONResponse(status_code=404, content={"detail": str(exc)})


@app.get("/health", response_model=schemas.HealthResponse)
def health() -> schemas.HealthResponse:
    return schemas.HealthResponse(status="ok", version=__version__)


@app.post("/synth", response_model=schemas.SynthResponse)
def synth(req: schemas.SynthRequest) -> schemas.SynthResponse:
    return pipeline.run_synth(req)


@app.post("/train", response_model=schemas.TrainResponse)
def train(req: schemas.TrainRequest) -> schemas.TrainResponse:
    return pipeline.run_train(req)


@app.post("/quantize", response_model=schemas.QuantizeResponse)
def quantize(req: schemas.QuantizeRequest) -> schemas.QuantizeResponse:
    return pipeline.run_quantize(req)


@app.post("/eval", response_model=schemas.EvalResponse)
def evaluate(req: schemas.EvalRequest) -> schemas.EvalResponse:
    return pipeline.run_eval(req)


@app.post("/sweep", response_model=schemas.SweepResponse)
def sweep(req: schemas.SweepRequest) -> schemas.SweepResponse:
    return pipeline.run_sweep_job(req)


@app.post("/ecr", response_model=schemas.EcrResponse)
def ecr(req: schemas.EcrRequest) -> schemas.EcrResponse:
    return pipeline.run_ecr(req)
