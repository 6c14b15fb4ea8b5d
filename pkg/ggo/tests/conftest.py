from __future__ import annotations

from pathlib import Path
from typing import NamedTuple

import pytest
from torch import nn

from ggo.schemas.grid import GridResult, GridSpec
from ggo.schemas.synth import SynthSpec
from ggo.services.datasets import GridData, load_grid_data
from ggo.services.gridrunner import expand_grid, run_grid, write_summary
from ggo.services.synthkit import SynthDataset, generate_dataset
from ggo.zoo import models as zoo_models
from ggo.zoo.base import ArchitectureDefinition, ArchitectureRegistry

STUB_INPUT_SIZE = 32
STUB_ARCHS = ("AlexNet", "ResNet152", "SqueezeNet")


class TinyBackbone(nn.Module):
    """Two linear stages over pooled pixels; small enough to train inside a unit test."""

    def __init__(self, num_classes: int = 1000, transform_input: bool = False) -> None:
        super().__init__()
        self.transform_input = transform_input
        self.features = nn.Sequential(nn.AdaptiveAvgPool2d(8), nn.Flatten(), nn.Linear(3 * 8 * 8, 16))
        self.fc = nn.Linear(16, num_classes)

    def forward(self, x):
        if self.transform_input:
            x = x * 0.5 + 0.25
        return self.fc(self.features(x))


def tiny_builder(weights=None, **kwargs) -> nn.Module:
    if weights is not None:
        raise RuntimeError("no network access in tests")
    return TinyBackbone(**kwargs)


def build_stub_registry() -> ArchitectureRegistry:
    registry = ArchitectureRegistry()
    for key in STUB_ARCHS:
        registry.register(
            ArchitectureDefinition(
                key=key,
                variant="tiny",
                builder=tiny_builder,
                weights="stub-weights",
                input_size=STUB_INPUT_SIZE,
                head_paths=("fc",),
                pretrained_kwargs={"transform_input": True},
            )
        )
    return registry


@pytest.fixture(scope="session")
def stub_registry() -> ArchitectureRegistry:
    return build_stub_registry()


@pytest.fixture
def stub_zoo(monkeypatch, stub_registry) -> ArchitectureRegistry:
    monkeypatch.setattr(zoo_models, "get_architecture_registry", lambda: stub_registry)
    return stub_registry


@pytest.fixture(scope="session")
def tiny_spec() -> SynthSpec:
    return SynthSpec(
        n_scans_per_class=4,
        unseen_val_per_class=1,
        test_scans=4,
        slices_per_scan=(5, 7),
        image_side=64,
        seed=7,
    )


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory, tiny_spec) -> SynthDataset:
    return generate_dataset(tiny_spec, tmp_path_factory.mktemp("synth"))


@pytest.fixture(scope="session")
def tiny_root(tiny_dataset) -> Path:
    return tiny_dataset.root


class GridRun(NamedTuple):
    results_root: Path
    cells: list
    data: GridData
    result: GridResult


@pytest.fixture(scope="session")
def grid_run(tmp_path_factory, tiny_root, stub_registry) -> GridRun:
    """Two stub architectures, each with a sane ADAM cell and a divergent SGD lr=1e6 cell."""
    spec = GridSpec(
        archs=["AlexNet", "SqueezeNet"],
        extents=["all_layers"],
        batch_sizes=[2],
        optim_lr_pairs=[("ADAM", 0.001), ("SGD", 1e6)],
        init="scratch",
        max_epochs=3,
        plateau_patience=2,
    )
    results_root = tmp_path_factory.mktemp("results")
    with pytest.MonkeyPatch.context() as mp:
        mp.setattr(zoo_models, "get_architecture_registry", lambda: stub_registry)
        cells = expand_grid(spec)
        data = load_grid_data(tiny_root)
        result = run_grid(cells, data, results_root)
        write_summary(result, results_root)
    return GridRun(results_root, cells, data, result)
