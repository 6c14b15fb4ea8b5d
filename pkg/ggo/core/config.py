from __future__ import annotations

import os
from functools import lru_cache
from pathlib import Path

from pydantic import BaseModel


DEFAULT_CORS_ORIGINS = [
    "http://localhost:5173",
    "http://127.0.0.1:5173",
    "http://localhost:3000",
    "http://127.0.0.1:3000",
]


class Settings(BaseModel):
    api_prefix: str = "/api/v1"
    cors_origins: list[str] = list(DEFAULT_CORS_ORIGINS)
    results_root: Path = Path(".")
    device: str = "auto"
    deterministic: bool = True
    loader_workers: int = 0
    grid_workers: int = 1
    log_level: str = "INFO"

    @property
    def runs_dir(self) -> Path:
        return self.results_root / "runs"

    @property
    def summary_dir(self) -> Path:
        return self.results_root / "results"

    def resolve_device(self) -> str:
        if self.device != "auto":
            return self.device
        import torch

        return "cuda" if torch.cuda.is_available() else "cpu"

    @staticmethod
    def from_env() -> "Settings":
        # Simple env loader without extra deps
        def env_list(name: str, default: list[str]) -> list[str]:
            raw = os.getenv(name)
            if not raw:
                return default
            return [x.strip() for x in raw.split(",") if x.strip()]

        def env_bool(name: str, default: bool) -> bool:
            raw = os.getenv(name)
            if raw is None or not raw.strip():
                return default
            return raw.strip().lower() in {"1", "true", "yes", "on"}

        return Settings(
            api_prefix=os.getenv("API_PREFIX", "/api/v1"),
            cors_origins=env_list("CORS_ORIGINS", list(DEFAULT_CORS_ORIGINS)),
            results_root=Path(os.getenv("GGO_RESULTS_ROOT", ".")),
            device=os.getenv("GGO_DEVICE", "auto"),
            deterministic=env_bool("GGO_DETERMINISTIC", True),
            loader_workers=int(os.getenv("GGO_LOADER_WORKERS", "0")),
            grid_workers=int(os.getenv("GGO_GRID_WORKERS", "1")),
            log_level=os.getenv("GGO_LOG_LEVEL", "INFO"),
        )


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    return Settings.from_env()
