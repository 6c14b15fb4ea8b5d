from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional, Tuple

from torch import nn

IMAGENET_MEAN: Tuple[float, float, float] = (0.485, 0.456, 0.406)
IMAGENET_STD: Tuple[float, float, float] = (0.229, 0.224, 0.225)

BackboneBuilder = Callable[..., nn.Module]


@dataclass(frozen=True)
class ArchitectureDefinition:
    key: str
    variant: str
    builder: BackboneBuilder
    weights: Any
    input_size: int
    head_paths: Tuple[str, ...]
    norm_mean: Tuple[float, float, float] = IMAGENET_MEAN
    norm_std: Tuple[float, float, float] = IMAGENET_STD
    builder_kwargs: Dict[str, Any] = field(default_factory=dict)
    scratch_kwargs: Dict[str, Any] = field(default_factory=dict)
    # constructor flags torchvision forces when it loads the published weights
    pretrained_kwargs: Dict[str, Any] = field(default_factory=dict)
    notes: Optional[str] = None

    @property
    def head_path(self) -> str:
        """The module replaced by the K-way classifier; extra paths are auxiliary heads."""
        return self.head_paths[0]

    def build_backbone(self, pretrained: bool, download: bool = True) -> nn.Module:
        """With ``download=False`` a pretrained layout is rebuilt without fetching weights."""
        kwargs = dict(self.builder_kwargs)
        if pretrained and download:
            return self.builder(weights=self.weights, **kwargs)
        kwargs.update(self.scratch_kwargs)
        if pretrained:
            kwargs.update(self.pretrained_kwargs)
        return self.builder(weights=None, **kwargs)

    def catalog_entry(self) -> Dict[str, Any]:
        return {
            "key": self.key,
            "variant": self.variant,
            "input_size": self.input_size,
            "head_path": self.head_path,
            "norm_mean": self.norm_mean,
            "norm_std": self.norm_std,
        }


class ArchitectureRegistry:
    def __init__(self) -> None:
        self._definitions: Dict[str, ArchitectureDefinition] = {}

    def register(self, definition: ArchitectureDefinition) -> None:
        if definition.key in self._definitions:
            raise ValueError(f"Architecture '{definition.key}' is already registered")
        self._definitions[definition.key] = definition

    def get(self, key: str) -> ArchitectureDefinition:
        try:
            return self._definitions[key]
        except KeyError as exc:
            raise KeyError(f"Unknown architecture '{key}'") from exc

    def all(self) -> Dict[str, ArchitectureDefinition]:
        return dict(self._definitions)
