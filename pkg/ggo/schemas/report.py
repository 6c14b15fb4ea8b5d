from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from .labels import NUM_CLASSES


class ClassScores(BaseModel):
    precision: float = Field(..., ge=0, le=1)
    recall: float = Field(..., ge=0, le=1)
    f1: float = Field(..., ge=0, le=1)


class EvalReport(BaseModel):
    run_id: str
    split: str
    per_class: list[ClassScores]
    f1_macro: float = Field(..., ge=0, le=100, description="Percentage")
    auroc_macro: Optional[float] = Field(None, ge=0, le=100, description="Percentage; None when undefined")
    accuracy: float = Field(..., ge=0, le=1)
    pred_class_distribution: list[int]
    confusion: list[list[int]]
    n_evaluated: int = Field(..., ge=1)
    masked: bool = True
    cropped: bool = True

    @field_validator("per_class", "pred_class_distribution")
    @classmethod
    def _check_width(cls, value: list) -> list:
        if len(value) != NUM_CLASSES:
            raise ValueError(f"Expected {NUM_CLASSES} entries, got {len(value)}")
        return value

    @model_validator(mode="after")
    def _check_totals(self) -> "EvalReport":
        if sum(self.pred_class_distribution) != self.n_evaluated:
            raise ValueError("pred_class_distribution must sum to n_evaluated")
        return self


__all__ = ["ClassScores", "EvalReport"]
