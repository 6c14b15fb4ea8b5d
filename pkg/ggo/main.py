"""Read-only HTTP view over the architecture zoo and the grid results on disk."""

from __future__ import annotations

from typing import Any, Dict

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from logzero import logger

from . import __version__
from .core.config import get_settings
from .core.logging import configure_logging
from .routers import runs as runs_router


settings = get_settings()
configure_logging(settings.log_level)

app = FastAPI(
    title="GGO Severity Harness API",
    description="Architecture catalog, grid cell records and results tables for GGO severity runs.",
    version=__version__,
)

# GET only
app.add_middleware(
    CORSMiddleware,
    allow_origins=settings.cors_origins,
    allow_credentials=False,
    allow_methods=["GET"],
    allow_headers=["*"],
)


@app.get("/health")
def health() -> Dict[str, Any]:
    return {"status": "ok"}


app.include_router(runs_router.router, prefix=settings.api_prefix, tags=["results"])
logger.info("Serving results under %s from %s", settings.api_prefix, settings.results_root.resolve())
