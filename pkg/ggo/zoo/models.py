"""Model construction, head replacement and fine-tuning freeze policies."""

from __future__ import annotations

import hashlib
from typing import Iterable, Optional, Tuple

import torch
from logzero import logger
from torch import nn

from ..core.errors import PretrainedWeightsUnavailable
from ..schemas.model import FineTuneExtent, InitMode, ModelSpec
from . import get_architecture_registry


class SeverityClassifier(nn.Module):
    """A torchvision backbone with its classifier replaced by a K-way head."""

    def __init__(self, backbone: nn.Module, spec: ModelSpec, head_path: str) -> None:
        super().__init__()
        self.backbone = backbone
        self.spec = spec
        self.head_path = head_path
        self.extent: FineTuneExtent = "all_layers"

    @property
    def head_prefix(self) -> str:
        return f"backbone.{self.head_path}."

    def is_head_parameter(self, name: str) -> bool:
        return name.startswith(self.head_prefix)

    def head_parameter_names(self) -> list[str]:
        return [name for name, _ in self.named_parameters() if self.is_head_parameter(name)]

    def train(self, mode: bool = True) -> "SeverityClassifier":
        """Under last_layer_only the backbone stays in eval mode so its BatchNorm statistics stay put."""
        super().train(mode)
        if mode and self.extent == "last_layer_only":
            self.backbone.eval()
            self.backbone.get_submodule(self.head_path).train()
        return self

    def forward(self, x: torch.Tensor):
        expected = (3, self.spec.v, self.spec.v)
        if x.dim() != 4 or tuple(x.shape[1:]) != expected:
            raise ValueError(
                f"{self.spec.arch} expects input of shape (N, {', '.join(map(str, expected))}), got {tuple(x.shape)}"
            )
        return self.backbone(x)


def canonical_input_size(arch: str) -> int:
    try:
        return get_architecture_registry().get(arch).input_size
    except KeyError as exc:
        raise ValueError(f"Unknown architecture '{arch}'") from exc


def default_model_spec(arch: str, init: InitMode = "pretrained") -> ModelSpec:
    try:
        definition = get_architecture_registry().get(arch)
    except KeyError as exc:
        raise ValueError(f"Unknown architecture '{arch}'") from exc
    return ModelSpec(
        arch=arch,
        v=definition.input_size,
        norm_mean=definition.norm_mean,
        norm_std=definition.norm_std,
        init=init,
    )


def _fresh_head(old: nn.Module, num_classes: int) -> nn.Module:
    if isinstance(old, nn.Linear):
        return nn.Linear(old.in_features, num_classes)
    if isinstance(old, nn.Conv2d):
        return nn.Conv2d(old.in_channels, num_classes, kernel_size=old.kernel_size, stride=old.stride)
    raise TypeError(f"Cannot replace classifier of type {type(old).__name__}")


def _replace_submodule(root: nn.Module, path: str, module: nn.Module) -> None:
    parent_path, _, name = path.rpartition(".")
    parent = root.get_submodule(parent_path) if parent_path else root
    setattr(parent, name, module)


def build_model(spec: ModelSpec, seed: Optional[int] = None, download: bool = True) -> SeverityClassifier:
    """``download=False`` keeps the layout of a pretrained build but leaves its weights to a checkpoint."""
    try:
        definition = get_architecture_registry().get(spec.arch)
    except KeyError as exc:
        raise ValueError(f"Unknown architecture '{spec.arch}'") from exc
    if spec.v != definition.input_size:
        raise ValueError(f"{spec.arch} requires v={definition.input_size}, got v={spec.v}")
    if seed is not None:
        torch.manual_seed(seed)

    pretrained = spec.init == "pretrained"
    try:
        backbone = definition.build_backbone(pretrained, download=download)
    except (OSError, RuntimeError, ValueError) as exc:
        if not (pretrained and download):
            raise
        raise PretrainedWeightsUnavailable(
            f"Could not load pretrained weights for {spec.arch} ({definition.variant}): {exc}. "
            "Re-run with --init scratch to train without downloaded weights."
        ) from exc

    for path in definition.head_paths:
        _replace_submodule(backbone, path, _fresh_head(backbone.get_submodule(path), spec.num_classes))
    if hasattr(backbone, "num_classes"):
        backbone.num_classes = spec.num_classes

    logger.debug("Built %s (%s, %s init)", spec.arch, definition.variant, spec.init)
    return SeverityClassifier(backbone, spec, definition.head_path)


def apply_freeze_policy(model: SeverityClassifier, extent: FineTuneExtent) -> SeverityClassifier:
    """last_layer_only trains the primary head alone; all_layers trains everything."""
    if extent not in ("last_layer_only", "all_layers"):
        raise ValueError(f"Unknown fine-tuning extent '{extent}'")
    for name, param in model.named_parameters():
        param.requires_grad = extent == "all_layers" or model.is_head_parameter(name)
    model.extent = extent
    model.train(model.training)
    return model


def count_parameters(model: nn.Module, trainable_only: bool = False) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad or not trainable_only)


def parameter_checksum(named_params: Iterable[Tuple[str, torch.Tensor]]) -> str:
    digest = hashlib.sha256()
    for name, tensor in sorted(named_params, key=lambda item: item[0]):
        digest.update(name.encode("utf-8"))
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


def backbone_checksum(model: SeverityClassifier) -> str:
    return parameter_checksum((n, p) for n, p in model.named_parameters() if not model.is_head_parameter(n))


def head_checksum(model: SeverityClassifier) -> str:
    return parameter_checksum((n, p) for n, p in model.named_parameters() if model.is_head_parameter(n))


def split_outputs(outputs) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
    """Separate main logits from Inception's auxiliary logits, if any."""
    if isinstance(outputs, torch.Tensor):
        return outputs, None
    logits, aux = outputs[0], outputs[1]
    return logits, aux


__all__ = [
    "SeverityClassifier",
    "apply_freeze_policy",
    "backbone_checksum",
    "build_model",
    "canonical_input_size",
    "count_parameters",
    "default_model_spec",
    "head_checksum",
    "parameter_checksum",
    "split_outputs",
]
