"""HTTP front end for a frozen target classifier.

POST /classify  {"counts": [int, ...]}
    200 {"label": 1|2, "score": float, "remaining": int}
    429 {"retry_after_seconds": int}    budget for the window is spent
    400 {"detail": str}                 malformed body or wrong dimension
GET /healthz -> 200 {"status": "ok"}
"""

from __future__ import annotations

import contextlib
import logging
import os
import socket
import threading
import time

import numpy as np
import uvicorn
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field, NonNegativeInt

from .errors import RateLimited, ValidationError
from .oracle import QueryBudget, TargetClassifier, classify

LIMIT_ENV = "APIATTACK_RATE_LIMIT"

log = logging.getLogger(__name__)


class ClassifyRequest(BaseModel):
    counts: list[NonNegativeInt] = Field(..., min_length=1)


class ClassifyReply(BaseModel):
    label: int
    score: float
    remaining: int


class RateLimitReply(BaseModel):
    retry_after_seconds: int


def create_app(target: TargetClassifier, budget: QueryBudget) -> FastAPI:
    app = FastAPI(title="classification oracle")
    app.state.target = target
    app.state.budget = budget

    @app.exception_handler(RequestValidationError)
    async def _malformed(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": "malformed request body"})

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/classify", response_model=ClassifyReply,
              responses={429: {"model": RateLimitReply}, 400: {}})
    def classify_endpoint(req: ClassifyRequest):
        try:
            resp = classify(app.state.target, app.state.budget, np.asarray(req.counts))
        except RateLimited as exc:
            return JSONResponse(status_code=429,
                                content={"retry_after_seconds": exc.retry_after_seconds},
                                headers={"Retry-After": str(exc.retry_after_seconds)})
        except ValidationError as exc:
            return JSONResponse(status_code=400, content={"detail": str(exc)})
        return ClassifyReply(label=resp.label, score=resp.score, remaining=resp.remaining_budget)

    return app


def resolve_limit(flag_value: int | None, default: int = 1000) -> int:
    """Flag beats the environment variable, which beats the default."""
    if flag_value is not None:
        return flag_value
    env = os.environ.get(LIMIT_ENV)
    if env is None or env == "":
        return default
    try:
        return int(env)
    except ValueError:
        raise ValidationError(f"{LIMIT_ENV} must be an integer, got {env!r}") from None


def serve(target: TargetClassifier, budget: QueryBudget, host: str = "127.0.0.1",
          port: int = 8000) -> None:
    """Blocking: run the service until interrupted."""
    uvicorn.run(create_app(target, budget), host=host, port=port, log_level="warning")


def free_port(host: str = "127.0.0.1") -> int:
    with socket.socket() as s:
        s.bind((host, 0))
        return s.getsockname()[1]


@contextlib.contextmanager
def running_service(target: TargetClassifier, budget: QueryBudget,
                    host: str = "127.0.0.1", port: int | None = None):
    """Serve in a background thread; yields the base URL."""
    port = port or free_port(host)
    config = uvicorn.Config(create_app(target, budget), host=host, port=port,
                            log_level="warning", lifespan="off")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 10
    while not server.started:
        if time.monotonic() > deadline or not thread.is_alive():
            raise RuntimeError("service did not start")
        time.sleep(0.01)
    try:
        yield f"http://{host}:{port}"
    finally:
        server.should_exit = True
        thread.join(timeout=10)
