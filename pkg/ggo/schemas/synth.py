from __future__ import annotations

from pydantic import BaseModel, Field, field_validator, model_validator


class SynthSpec(BaseModel):
    n_scans_per_class: int = Field(8, ge=1)
    unseen_val_per_class: int = Field(2, ge=0)
    test_scans: int = Field(8, ge=0)
    slices_per_scan: tuple[int, int] = (12, 12)
    image_side: int = Field(128, ge=64)
    involvement_thresholds: tuple[float, float, float] = (0.26, 0.50, 0.75)
    noise_level: float = Field(0.0, ge=0, le=1)
    seed: int = 0
    jpeg_quality: int = Field(90, ge=1, le=95)
    boundary_margin: float = Field(0.03, ge=0, lt=0.1)

    @field_validator("involvement_thresholds")
    @classmethod
    def _check_thresholds(cls, value: tuple[float, float, float]) -> tuple[float, float, float]:
        if not all(0.0 < t < 1.0 for t in value):
            raise ValueError("involvement thresholds must lie in (0, 1)")
        if not (value[0] < value[1] < value[2]):
            raise ValueError("involvement thresholds must be strictly increasing")
        return value

    @model_validator(mode="after")
    def _check_slices(self) -> "SynthSpec":
        low, high = self.slices_per_scan
        if low < 1 or high < low:
            raise ValueError("slices_per_scan must be a range (min, max) with 1 <= min <= max")
        return self

    @classmethod
    def tiny(cls, **overrides) -> "SynthSpec":
        base = dict(n_scans_per_class=8, slices_per_scan=(12, 12), image_side=128)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def tiny_plus(cls, **overrides) -> "SynthSpec":
        base = dict(n_scans_per_class=16, slices_per_scan=(12, 12), image_side=128)
        base.update(overrides)
        return cls(**base)


__all__ = ["SynthSpec"]
