"""FastAPI app exposing the task handlers.

Error mapping: config and input problems (the core's validation errors)
become 422 responses; runtime failures (ill-conditioned solves, fitting
dead ends, mission-level faults) become 500s with the message preserved.
The CLI maps those onto its own exit codes.
"""

from __future__ import annotations

from fastapi import FastAPI
from fastapi.responses import JSONResponse

from .. import __version__
from ..errors import BloomtrackError, ValidationError
from .handlers import (
    handle_fit,
    handle_gen_field,
    handle_simulate,
    handle_sweep,
    handle_validate,
)
from .schemas import (
    FitRequest,
    FitResponse,
    GenFieldRequest,
    GenFieldResponse,
    MissionRequest,
    MissionResponse,
    SweepRequest,
    SweepResponse,
    ValidateRequest,
    ValidateResponse,
)


def create_app() -> FastAPI:
    app = FastAPI(title="bloomtrack", version=__version__)

    @app.exception_handler(BloomtrackError)
    def _bloomtrack_error(request, exc):
        status = 422 if isinstance(exc, ValidationError) else 500
        return JSONResponse(status_code=status, content={"detail": str(exc)})

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/simulate", response_model=MissionResponse)
    def simulate(req: MissionRequest):
        return handle_simulate(req)

    @app.post("/sweep", response_model=SweepResponse)
    def sweep(req: SweepRequest):
        return handle_sweep(req)

    @app.post("/fit", response_model=FitResponse)
    def fit(req: FitRequest):
        return handle_fit(req)

    @app.post("/gen-field", response_model=GenFieldResponse)
    def gen_field(req: GenFieldRequest):
        return handle_gen_field(req)

    @app.post("/validate", response_model=ValidateResponse)
    def validate(req: ValidateRequest):
        return handle_validate(req)

    return app


app = create_app()
