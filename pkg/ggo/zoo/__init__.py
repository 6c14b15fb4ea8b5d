from __future__ import annotations

from .base import ArchitectureRegistry
from .sources import build_architecture_definitions


_registry: ArchitectureRegistry | None = None


def get_architecture_registry() -> ArchitectureRegistry:
    global _registry
    if _registry is None:
        _registry = ArchitectureRegistry()
        for definition in build_architecture_definitions():
            _registry.register(definition)
    return _registry


__all__ = ["get_architecture_registry"]
