from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field, field_validator

from .labels import NUM_CLASSES

Architecture = Literal[
    "AlexNet",
    "VGG",
    "ResNet152",
    "WideResNet101",
    "DenseNet",
    "DenseNet201",
    "InceptionNet",
    "SqueezeNet",
    "VTB32",
]
ARCHITECTURES: tuple[str, ...] = (
    "AlexNet",
    "VGG",
    "ResNet152",
    "WideResNet101",
    "DenseNet",
    "DenseNet201",
    "InceptionNet",
    "SqueezeNet",
    "VTB32",
)
InitMode = Literal["pretrained", "scratch"]
FineTuneExtent = Literal["last_layer_only", "all_layers"]
EXTENTS: tuple[str, ...] = ("all_layers", "last_layer_only")

EXTENT_ALIASES = {
    "all": "all_layers",
    "all_layers": "all_layers",
    "last": "last_layer_only",
    "last_layer": "last_layer_only",
    "last_layer_only": "last_layer_only",
}


def normalize_extent(value: str) -> str:
    try:
        return EXTENT_ALIASES[value.strip().lower()]
    except KeyError as exc:
        raise ValueError(f"Unknown fine-tuning extent '{value}'") from exc


class ModelSpec(BaseModel):
    arch: Architecture
    v: int = Field(..., gt=0, description="Input side in pixels")
    norm_mean: tuple[float, float, float]
    norm_std: tuple[float, float, float]
    num_classes: int = NUM_CLASSES
    init: InitMode = "pretrained"

    @field_validator("num_classes")
    @classmethod
    def _check_num_classes(cls, value: int) -> int:
        if value != NUM_CLASSES:
            raise ValueError(f"num_classes must be {NUM_CLASSES}")
        return value

    @field_validator("norm_std")
    @classmethod
    def _check_std(cls, value: tuple[float, float, float]) -> tuple[float, float, float]:
        if any(s <= 0 for s in value):
            raise ValueError("norm_std entries must be positive")
        return value


__all__ = [
    "ARCHITECTURES",
    "Architecture",
    "EXTENTS",
    "FineTuneExtent",
    "InitMode",
    "ModelSpec",
    "normalize_extent",
]
