from __future__ import annotations

from datetime import datetime
from typing import Literal, Optional

from pydantic import BaseModel, Field, field_validator

from .model import ARCHITECTURES, Architecture, FineTuneExtent, InitMode, ModelSpec, normalize_extent
from .report import EvalReport
from .train import OptimizerKind, PreprocessConfig, TrainConfig, TrainResult, normalize_optimizer

CellStatus = Literal["completed", "failed"]


class GridSpec(BaseModel):
    archs: list[Architecture] = Field(..., min_length=1)
    extents: list[FineTuneExtent] = Field(..., min_length=1)
    batch_sizes: list[int] = Field(..., min_length=1)
    optim_lr_pairs: list[tuple[OptimizerKind, float]] = Field(..., min_length=1)
    seeds: list[int] = Field(default_factory=lambda: [0], min_length=1)
    init: InitMode = "pretrained"
    max_epochs: int = Field(500, ge=1)
    plateau_patience: int = Field(10, ge=1)
    plateau_min_delta: float = Field(1e-4, ge=0)
    internal_val_fraction: float = Field(0.2, gt=0, lt=1)
    preprocess: PreprocessConfig = Field(default_factory=PreprocessConfig)

    @field_validator("extents", mode="before")
    @classmethod
    def _alias_extents(cls, value: list[str]) -> list[str]:
        return [normalize_extent(v) for v in value]

    @field_validator("optim_lr_pairs", mode="before")
    @classmethod
    def _upper_pairs(cls, value: list) -> list:
        return [(normalize_optimizer(opt), lr) for opt, lr in value]

    @field_validator("batch_sizes")
    @classmethod
    def _positive_batches(cls, value: list[int]) -> list[int]:
        if any(bs < 1 for bs in value):
            raise ValueError("batch sizes must be >= 1")
        return value

    @field_validator("optim_lr_pairs")
    @classmethod
    def _positive_lr(cls, value: list[tuple[str, float]]) -> list[tuple[str, float]]:
        if any(lr <= 0 for _, lr in value):
            raise ValueError("learning rates must be > 0")
        return value

    @classmethod
    def full_grid(cls, **overrides) -> "GridSpec":
        base = dict(
            archs=list(ARCHITECTURES),
            extents=["last_layer_only", "all_layers"],
            batch_sizes=[16, 32, 64, 512],
            optim_lr_pairs=[("SGD", 0.001), ("ADAM", 0.001)],
            seeds=[0],
        )
        base.update(overrides)
        return cls(**base)


class CellResult(BaseModel):
    run_id: str
    fingerprint: str
    manifest_hash: str
    model_spec: ModelSpec
    train_config: TrainConfig
    train_result: TrainResult
    internal_val: EvalReport
    unseen_val: Optional[EvalReport] = None
    test_distribution: Optional[list[int]] = None
    status: CellStatus = "completed"
    executed: bool = True


class CellFailure(BaseModel):
    run_id: str
    fingerprint: str
    manifest_hash: str
    model_spec: ModelSpec
    train_config: TrainConfig
    reason: str
    status: CellStatus = "failed"
    executed: bool = True


class GridResult(BaseModel):
    cells: list[CellResult] = Field(default_factory=list)
    failures: list[CellFailure] = Field(default_factory=list)

    @property
    def executed_count(self) -> int:
        return sum(1 for c in self.cells if c.executed) + sum(1 for f in self.failures if f.executed)


class RunManifestRecord(BaseModel):
    run_id: str
    command: str
    fingerprint: str
    manifest_hash: Optional[str] = None
    code_version: str
    started_at: datetime
    finished_at: Optional[datetime] = None
    exit_code: Optional[int] = None


__all__ = [
    "CellFailure",
    "CellResult",
    "CellStatus",
    "GridResult",
    "GridSpec",
    "RunManifestRecord",
]
