from __future__ import annotations

import pytest
import torch

from ggo.core.errors import PretrainedWeightsUnavailable
from ggo.schemas.model import ARCHITECTURES
from ggo.services.trainer import cross_entropy_objective, make_optimizer
from ggo.schemas.train import TrainConfig
from ggo.zoo import get_architecture_registry
from ggo.zoo.base import ArchitectureDefinition, ArchitectureRegistry
from ggo.zoo.models import (
    apply_freeze_policy,
    backbone_checksum,
    build_model,
    canonical_input_size,
    count_parameters,
    default_model_spec,
    head_checksum,
    parameter_checksum,
    split_outputs,
)


def test_registry_lists_every_architecture():
    registry = get_architecture_registry()
    assert set(registry.all()) == set(ARCHITECTURES)
    with pytest.raises(KeyError):
        registry.get("LeNet")


def test_registry_rejects_duplicate_keys():
    registry = ArchitectureRegistry()
    definition = get_architecture_registry().get("AlexNet")
    registry.register(definition)
    with pytest.raises(ValueError):
        registry.register(definition)


@pytest.mark.parametrize("arch, size", [("AlexNet", 224), ("InceptionNet", 299), ("VTB32", 224), ("ResNet152", 224)])
def test_canonical_input_sizes(arch, size):
    assert canonical_input_size(arch) == size
    assert default_model_spec(arch).v == size


def test_unknown_architecture_is_rejected():
    with pytest.raises(ValueError):
        canonical_input_size("LeNet")


def test_input_size_must_match_architecture():
    spec = default_model_spec("AlexNet", "scratch").model_copy(update={"v": 128})
    with pytest.raises(ValueError, match="v=224"):
        build_model(spec)


def test_resnet152_last_layer_only_trains_head_alone():
    model = apply_freeze_policy(build_model(default_model_spec("ResNet152", "scratch"), seed=0), "last_layer_only")
    assert count_parameters(model, trainable_only=True) == 2048 * 4 + 4
    assert model.head_parameter_names() == ["backbone.fc.weight", "backbone.fc.bias"]

    before, after = _one_step(model, "last_layer_only")
    assert before == after
    model.train()
    assert not model.backbone.bn1.training and model.backbone.fc.training

    apply_freeze_policy(model, "all_layers")
    assert count_parameters(model, trainable_only=True) == count_parameters(model)
    assert model.train().backbone.bn1.training


def test_missing_pretrained_weights_raise_a_clear_error(stub_zoo):
    with pytest.raises(PretrainedWeightsUnavailable, match="--init scratch"):
        build_model(default_model_spec("SqueezeNet", "pretrained"))


def test_stub_head_is_replaced_with_four_outputs(stub_zoo):
    model = build_model(default_model_spec("SqueezeNet", "scratch"), seed=0)
    logits = model(torch.zeros(2, 3, 32, 32))
    assert logits.shape == (2, 4)
    with pytest.raises(ValueError, match="expects input of shape"):
        model(torch.zeros(2, 3, 24, 24))


def test_seeded_builds_are_identical(stub_zoo):
    spec = default_model_spec("SqueezeNet", "scratch")
    assert head_checksum(build_model(spec, seed=3)) == head_checksum(build_model(spec, seed=3))
    assert head_checksum(build_model(spec, seed=3)) != head_checksum(build_model(spec, seed=4))


def _buffers(model) -> str:
    return parameter_checksum(model.backbone.named_buffers())


def _one_step(model, extent: str) -> tuple[str, str]:
    apply_freeze_policy(model, extent)
    v = model.spec.v
    torch.manual_seed(0)
    inputs = torch.randn(2, 3, v, v)
    labels = torch.tensor([0, 3])
    before = backbone_checksum(model) + _buffers(model)
    model.train()
    optimizer = make_optimizer(
        TrainConfig(optimizer="SGD", lr=0.1, extent=extent), (p for p in model.parameters() if p.requires_grad)
    )
    optimizer.zero_grad()
    logits, aux = split_outputs(model(inputs))
    cross_entropy_objective(logits, labels, aux).backward()
    optimizer.step()
    return before, backbone_checksum(model) + _buffers(model)


def test_stub_freeze_policy_keeps_backbone_bit_exact(stub_zoo):
    model = build_model(default_model_spec("AlexNet", "scratch"), seed=1)
    head_before = head_checksum(model)
    before, after = _one_step(model, "last_layer_only")
    assert before == after
    assert head_checksum(model) != head_before

    before, after = _one_step(model, "all_layers")
    assert before != after


@pytest.mark.slow
@pytest.mark.parametrize("arch", ARCHITECTURES)
def test_freeze_policy_for_every_architecture(arch):
    model = build_model(default_model_spec(arch, "scratch"), seed=0)
    before, after = _one_step(model, "last_layer_only")
    assert before == after
    trainable = {n for n, p in model.named_parameters() if p.requires_grad}
    assert trainable == set(model.head_parameter_names())


@pytest.mark.slow
def test_inception_needs_its_canonical_input():
    model = build_model(default_model_spec("InceptionNet", "scratch"), seed=0).eval()
    with torch.no_grad():
        assert model(torch.zeros(1, 3, 299, 299)).shape == (1, 4)
        with pytest.raises(ValueError):
            model(torch.zeros(1, 3, 224, 224))

    model.train()
    logits, aux = split_outputs(model(torch.zeros(2, 3, 299, 299)))
    assert logits.shape == aux.shape == (2, 4)


@pytest.mark.slow
def test_vit_b32_uses_a_seven_by_seven_patch_grid():
    model = build_model(default_model_spec("VTB32", "scratch"), seed=0).eval()
    assert model.backbone.image_size // model.backbone.patch_size == 7
    with torch.no_grad():
        assert model(torch.zeros(1, 3, 224, 224)).shape == (1, 4)


def test_definition_catalog_entry_shape():
    entry = get_architecture_registry().get("InceptionNet").catalog_entry()
    assert entry["head_path"] == "fc"
    assert entry["input_size"] == 299
    assert isinstance(get_architecture_registry().get("SqueezeNet"), ArchitectureDefinition)
