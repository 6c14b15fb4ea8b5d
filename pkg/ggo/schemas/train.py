from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field, field_validator, model_validator

from .model import FineTuneExtent, normalize_extent

OptimizerKind = Literal["ADAM", "SGD"]
BATCH_SIZE_GRID = (16, 32, 64, 128, 512)
LR_GRID = (0.001, 0.01)


def normalize_optimizer(value: str) -> str:
    cleaned = str(value).strip().upper()
    if cleaned not in ("ADAM", "SGD"):
        raise ValueError(f"Unknown optimizer '{value}'")
    return cleaned


def format_lr(lr: float) -> str:
    return f"{lr:g}"


class PreprocessConfig(BaseModel):
    slice_fraction: float = Field(0.25, gt=0, lt=1)
    apply_mask: bool = True
    apply_crop: bool = True
    crop_fraction: float = Field(0.9, gt=0, le=1)
    mask_threshold: int = Field(100, ge=1, le=255)
    closing_radius: int = Field(2, ge=0, le=20)


class TrainConfig(BaseModel):
    batch_size: int = Field(16, ge=1)
    optimizer: OptimizerKind = "ADAM"
    lr: float = Field(0.001, gt=0)
    momentum: float = Field(0.9, ge=0, lt=1, description="SGD only")
    max_epochs: int = Field(500, ge=1)
    plateau_patience: int = Field(10, ge=1)
    plateau_min_delta: float = Field(1e-4, ge=0)
    extent: FineTuneExtent = "all_layers"
    seed: int = 0
    internal_val_fraction: float = Field(0.2, gt=0, lt=1)
    preprocess: PreprocessConfig = Field(default_factory=PreprocessConfig)

    @field_validator("optimizer", mode="before")
    @classmethod
    def _upper_optimizer(cls, value: str) -> str:
        return normalize_optimizer(value)

    @field_validator("extent", mode="before")
    @classmethod
    def _alias_extent(cls, value: str) -> str:
        return normalize_extent(value)

    def settings_string(self) -> str:
        """Table-style settings cell, e.g. 'BS16 SGD LR0.001'."""
        return f"BS{self.batch_size} {self.optimizer} LR{format_lr(self.lr)}"


class EpochRecord(BaseModel):
    epoch: int = Field(..., ge=1)
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float
    seconds: float = 0.0


class TrainResult(BaseModel):
    run_id: str
    best_epoch: int = Field(..., ge=1)
    best_val_accuracy: float = Field(..., ge=0, le=1)
    epoch_log: list[EpochRecord]
    checkpoint_path: str
    stopped_early: bool

    @model_validator(mode="after")
    def _check_best(self) -> "TrainResult":
        if not self.epoch_log:
            raise ValueError("epoch_log must not be empty")
        accuracies = [row.val_accuracy for row in self.epoch_log]
        best = max(accuracies)
        if self.best_val_accuracy != best:
            raise ValueError("best_val_accuracy must equal the maximum logged val_accuracy")
        if accuracies.index(best) + 1 != self.best_epoch:
            raise ValueError("best_epoch must be the earliest epoch attaining the best accuracy")
        return self


__all__ = [
    "BATCH_SIZE_GRID",
    "EpochRecord",
    "LR_GRID",
    "OptimizerKind",
    "PreprocessConfig",
    "TrainConfig",
    "TrainResult",
    "format_lr",
    "normalize_optimizer",
]
