"""FastAPI application wrapping the core package."""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from ..errors import TokenBudgetError
from . import handlers, schemas


def create_app() -> FastAPI:
    app = FastAPI(
        title="tokenbudget",
        description="Budget-aware chain-of-thought decoding middleware and toolkit",
        version=handlers._package_version(),
    )

    @app.exception_handler(TokenBudgetError)
    async def _domain_error(_: Request, exc: TokenBudgetError) -> JSONResponse:
        return JSONResponse(
            status_code=422,
            content={"error": {"type": type(exc).__name__, "message": str(exc)}},
        )

    @app.get("/v1/health", response_model=schemas.HealthResponse)
    def health() -> schemas.HealthResponse:
        return handlers.health()

    @app.post("/v1/schedule/preview", response_model=schemas.SchedulePreviewResponse)
    def preview_schedule(req: schemas.SchedulePreviewRequest) -> schemas.SchedulePreviewResponse:
        return handlers.preview_schedule(req)

    @app.post("/v1/curriculum/preview", response_model=schemas.CurriculumPreviewResponse)
    def preview_curriculum(
        req: schemas.CurriculumPreviewRequest,
    ) -> schemas.CurriculumPreviewResponse:
        return handlers.preview_curriculum(req)

    @app.post("/v1/curate", response_model=schemas.CurateResponse)
    def curate(req: schemas.CurateRequest) -> schemas.CurateResponse:
        return handlers.curate(req)

    @app.post("/v1/generate", response_model=schemas.GenerateResponse)
    def generate(req: schemas.GenerateRequest) -> schemas.GenerateResponse:
        return handlers.generate(req)

    @app.post("/v1/reward/score", response_model=schemas.RewardScoreResponse)
    def score_rewards(req: schemas.RewardScoreRequest) -> schemas.RewardScoreResponse:
        return handlers.score_rewards(req)

    @app.post("/v1/eval", response_model=schemas.EvalResponse)
    def evaluate(req: schemas.EvalRequest) -> schemas.EvalResponse:
        return handlers.evaluate(req)

    @app.post("/v1/simulate", response_model=schemas.SimulateResponse)
    def simulate(req: schemas.SimulateRequest) -> schemas.SimulateResponse:
        return handlers.simulate(req)

    return app
