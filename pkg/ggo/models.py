from __future__ import annotations

from pydantic import BaseModel

from .schemas import (
    CellFailure,
    CellResult,
    EvalReport,
    GridResult,
    GridSpec,
    ModelSpec,
    PreprocessConfig,
    RunManifestRecord,
    SynthSpec,
    TrainConfig,
    TrainResult,
)


class ArchitectureInfo(BaseModel):
    key: str
    variant: str
    input_size: int
    head_path: str
    norm_mean: tuple[float, float, float]
    norm_std: tuple[float, float, float]


class RunSummary(BaseModel):
    run_id: str
    status: str
    arch: str
    extent: str
    settings: str
    f1_macro_val: float | None = None
    f1_macro_unseen: float | None = None
    auroc_val: float | None = None
    auroc_unseen: float | None = None
    reason: str | None = None


__all__ = [
    "ArchitectureInfo",
    "CellFailure",
    "CellResult",
    "EvalReport",
    "GridResult",
    "GridSpec",
    "ModelSpec",
    "PreprocessConfig",
    "RunManifestRecord",
    "RunSummary",
    "SynthSpec",
    "TrainConfig",
    "TrainResult",
]
