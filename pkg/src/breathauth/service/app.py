"""FastAPI application exposing the pipeline.

Run with `breathauth serve` or `uvicorn breathauth.service.app:app`.
Package errors map to HTTP status codes the same way the CLI maps them to
exit codes: config 400, data 422, numerical 500.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..errors import BreathAuthError, ConfigError, DataError, NumericalError
from . import handlers
from .schemas import (
    EvalRequest,
    EvalResponse,
    HealthResponse,
    ReportRequest,
    ReportResponse,
    SynthRequest,
    SynthResponse,
    TrainRequest,
    TrainResponse,
)

_STATUS = {ConfigError: 400, DataError: 422, NumericalError: 500}


def create_app() -> FastAPI:
    app = FastAPI(title="breathauth", version=__version__,
                  description="Multimodal breath biometrics pipeline")

    @app.exception_handler(BreathAuthError)
    async def package_error(_: Request, exc: BreathAuthError):
        status = next((code for cls, code in _STATUS.items() if isinstance(exc, cls)), 500)
        return JSONResponse(status_code=status,
                            content={"error": type(exc).__name__, "detail": str(exc)})

    @app.get("/health", response_model=HealthResponse)
    def health():
        return handlers.handle_health()

    @app.post("/synth", response_model=SynthResponse)
    def synth(req: SynthRequest):
        return handlers.handle_synth(req)

    @app.post("/train", response_model=TrainResponse)
    def train(req: TrainRequest):
        return handlers.handle_train(req)

    @app.post("/eval", response_model=EvalResponse)
    def evaluate(req: EvalRequest):
        return handlers.handle_eval(req)

    @app.post("/report", response_model=ReportResponse)
    def report(req: ReportRequest):
        return handlers.handle_report(req)

    return app


app = create_app()
