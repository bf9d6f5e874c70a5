"""FastAPI application wiring the handlers to HTTP routes."""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from ..io_json import SchemaError
from . import handlers
from . import schemas as S


def create_app() -> FastAPI:
    app = FastAPI(
        title="bevlab",
        description=(
            "Numerical lab for Bezier-curve centerline detection on synthetic "
            "BEV grids: scene generation, decoder forward passes, Hungarian "
            "matching, metric evaluation, gradient checks and op-count benches."
        ),
        version="0.1.0",
    )

    @app.exception_handler(SchemaError)
    async def schema_error(_: Request, exc: SchemaError):
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.exception_handler(ValueError)
    async def value_error(_: Request, exc: ValueError):
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.post("/scenes/generate", response_model=S.SceneModel)
    def generate(req: S.GenerateRequest):
        return handlers.generate(req)

    @app.post("/decoder/forward", response_model=S.ForwardResponse)
    def forward(req: S.ForwardRequest):
        return handlers.forward(req)

    @app.post("/matching/run", response_model=S.MatchResponse)
    def match(req: S.MatchRequest):
        return handlers.match(req)

    @app.post("/metrics/evaluate", response_model=S.MetricReportModel)
    def evaluate(req: S.EvalRequest):
        return handlers.evaluate(req)

    @app.post("/gradcheck/run", response_model=S.GradcheckResponse)
    def gradcheck(req: S.GradcheckRequest):
        return handlers.gradcheck(req)

    @app.post("/bench/run", response_model=S.BenchResponse)
    def bench(req: S.BenchRequest):
        return handlers.bench(req)

    @app.post("/fit/run", response_model=S.FitResponse)
    def fit(req: S.FitRequest):
        return handlers.fit(req)

    return app


app = create_app()
