from __future__ import annotations

import json
import math
from pathlib import Path

import pandas as pd
import pytest
import torch
from torch import nn

from ggo.core.errors import CheckpointError
from ggo.core.repro import set_deterministic
from ggo.schemas.synth import SynthSpec
from ggo.schemas.train import PreprocessConfig, TrainConfig
from ggo.services.datasets import load_grid_data, prepare_tensors
from ggo.services.ingest import LabeledScan, ScanVolume
from ggo.services.synthkit import generate_dataset
from ggo.services.trainer import (
    cross_entropy_objective,
    evaluate_model,
    make_optimizer,
    plateau_detector,
    reload_checkpoint,
    save_checkpoint,
    select_best_epoch,
    split_internal,
    train,
)
from ggo.zoo.models import (
    SeverityClassifier,
    apply_freeze_policy,
    backbone_checksum,
    build_model,
    default_model_spec,
)


def _scans(per_class: int = 10) -> list[LabeledScan]:
    return [
        LabeledScan(ScanVolume(f"ct_scan_{k * per_class + i}", (), "train"), k)
        for k in range(4)
        for i in range(per_class)
    ]


def test_split_internal_is_stratified():
    train_part, val_part = split_internal(_scans(), 0.2, seed=11)
    assert (len(train_part), len(val_part)) == (32, 8)
    assert sorted(s.label for s in val_part) == [0, 0, 1, 1, 2, 2, 3, 3]
    assert {s.scan_id for s in train_part}.isdisjoint({s.scan_id for s in val_part})


def test_split_internal_is_seeded():
    first = split_internal(_scans(), 0.2, seed=5)
    assert split_internal(_scans(), 0.2, seed=5) == first
    assert split_internal(_scans(), 0.2, seed=6)[1] != first[1]


def test_singleton_class_stays_in_train():
    scans = _scans(3)[:-2]  # class 3 keeps one scan
    train_part, val_part = split_internal(scans, 0.3, seed=0)
    assert 3 not in {s.label for s in val_part}
    assert len(train_part) + len(val_part) == len(scans)


def test_plateau_detector():
    assert not plateau_detector([1.0 - 0.1 * i for i in range(9)], patience=5, min_delta=0.01)
    losses = [1.0, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9]
    assert not plateau_detector(losses[:6], patience=5, min_delta=0.0)
    assert plateau_detector(losses, patience=5, min_delta=0.0)
    assert not plateau_detector([0.5], patience=1, min_delta=0.0)
    with pytest.raises(ValueError):
        plateau_detector([1.0], patience=0, min_delta=0.0)


def test_best_epoch_is_the_earliest_maximum():
    assert select_best_epoch([0.3, 0.6, 0.6, 0.5]) == 2


def test_uniform_logits_cost_ln_four():
    loss = cross_entropy_objective(torch.zeros(5, 4), torch.tensor([0, 1, 2, 3, 1]))
    assert abs(loss.item() - math.log(4)) < 1e-6


def test_objective_gradients_match_finite_differences():
    torch.manual_seed(0)
    inputs = torch.randn(4, 6, dtype=torch.float64)
    labels = torch.tensor([0, 1, 2, 3])
    hidden = torch.randn(6, 5, dtype=torch.float64, requires_grad=True)
    head = torch.randn(5, 4, dtype=torch.float64, requires_grad=True)

    def objective(w1, w2):
        return cross_entropy_objective(torch.tanh(inputs @ w1) @ w2, labels)

    assert torch.autograd.gradcheck(objective, (hidden, head), eps=1e-6, atol=1e-8, rtol=1e-4)


def test_aux_logits_are_weighted():
    labels = torch.tensor([0, 1])
    logits = torch.tensor([[2.0, 0.0, 0.0, 0.0], [0.0, 2.0, 0.0, 0.0]])
    aux = torch.zeros(2, 4)
    expected = cross_entropy_objective(logits, labels).item() + 0.4 * math.log(4)
    assert abs(cross_entropy_objective(logits, labels, aux).item() - expected) < 1e-6


def test_optimizer_needs_parameters():
    with pytest.raises(ValueError):
        make_optimizer(TrainConfig(), [])


@pytest.fixture
def stub_split(stub_zoo, tiny_root):
    data = load_grid_data(tiny_root)
    spec = default_model_spec("SqueezeNet", "scratch")
    pool = prepare_tensors(data.train, spec, PreprocessConfig())
    train_scans, val_scans = split_internal(data.train, 0.2, seed=0)
    return spec, pool.subset([s.scan_id for s in train_scans]), pool.subset([s.scan_id for s in val_scans])


def _fit(spec, train_t, val_t, run_dir: Path, **overrides):
    cfg = TrainConfig(**{"batch_size": 4, "max_epochs": 4, "plateau_patience": 2, "seed": 0, **overrides})
    model = apply_freeze_policy(build_model(spec, seed=cfg.seed), cfg.extent)
    return model, cfg, train(model, cfg, train_t, val_t, run_dir)


def test_train_writes_run_artifacts(stub_split, tmp_path):
    spec, train_t, val_t = stub_split
    _, cfg, result = _fit(spec, train_t, val_t, tmp_path / "run")

    run_dir = tmp_path / "run"
    assert {"config.json", "log.csv", "best.ckpt", "train.log"} <= {p.name for p in run_dir.iterdir()}
    config = json.loads((run_dir / "config.json").read_text(encoding="utf-8"))
    assert config["settings"] == "BS4 ADAM LR0.001"
    assert config["model_spec"]["arch"] == "SqueezeNet"

    log = pd.read_csv(run_dir / "log.csv")
    assert len(log) == len(result.epoch_log) <= cfg.max_epochs
    accuracies = [row.val_accuracy for row in result.epoch_log]
    assert result.best_epoch == accuracies.index(max(accuracies)) + 1
    if result.stopped_early:
        losses = [row.val_loss for row in result.epoch_log]
        assert plateau_detector(losses, cfg.plateau_patience, cfg.plateau_min_delta)


def test_checkpoint_reproduces_best_accuracy(stub_split, tmp_path):
    spec, train_t, val_t = stub_split
    _, cfg, result = _fit(spec, train_t, val_t, tmp_path / "run")

    model, meta = reload_checkpoint(Path(result.checkpoint_path), expected_spec=spec)
    _, accuracy, _ = evaluate_model(model, val_t, cfg.batch_size)
    assert accuracy == result.best_val_accuracy == meta.best_val_accuracy
    assert meta.best_epoch == result.best_epoch
    assert not model.training


def test_last_layer_only_leaves_backbone_untouched(stub_split, tmp_path):
    spec, train_t, val_t = stub_split
    cfg = TrainConfig(batch_size=4, max_epochs=2, extent="last", seed=0)
    model = apply_freeze_policy(build_model(spec, seed=0), cfg.extent)
    before = backbone_checksum(model)
    train(model, cfg, train_t, val_t, tmp_path / "run")
    assert backbone_checksum(model) == before


def _timeless(result) -> list[dict]:
    return [row.model_dump(exclude={"seconds"}) for row in result.epoch_log]


def test_identical_configs_give_identical_epoch_logs(stub_split, tmp_path):
    spec, train_t, val_t = stub_split
    runs = [_fit(spec, train_t, val_t, tmp_path / f"run{i}", max_epochs=3)[2] for i in range(2)]
    assert _timeless(runs[0]) == _timeless(runs[1])


def test_reload_rejects_mismatched_spec(stub_split, tmp_path):
    spec, train_t, val_t = stub_split
    _, _, result = _fit(spec, train_t, val_t, tmp_path / "run", max_epochs=1)
    with pytest.raises(CheckpointError, match="v: checkpoint=32 expected=64"):
        reload_checkpoint(Path(result.checkpoint_path), expected_spec=spec.model_copy(update={"v": 64}))


def test_reload_errors_on_missing_or_corrupt_file(tmp_path):
    with pytest.raises(CheckpointError, match="not found"):
        reload_checkpoint(tmp_path / "absent.ckpt")
    corrupt = tmp_path / "corrupt.ckpt"
    corrupt.write_bytes(b"\x00garbage")
    with pytest.raises(CheckpointError):
        reload_checkpoint(corrupt)


def test_reload_does_not_need_pretrained_weights(stub_zoo, tmp_path):
    scratch = default_model_spec("ResNet152", "scratch")
    model = build_model(scratch, seed=0)
    model.spec = scratch.model_copy(update={"init": "pretrained"})
    path = save_checkpoint(tmp_path / "best.ckpt", model, TrainConfig(), best_epoch=1, best_val_accuracy=0.5)

    reloaded, meta = reload_checkpoint(path)
    assert meta.model_spec.init == "pretrained"
    assert torch.equal(reloaded.backbone.fc.weight, model.backbone.fc.weight)


def _pretrained_layout(arch: str) -> SeverityClassifier:
    # what torchvision sets when it loads published weights, without the download
    spec = default_model_spec(arch, "pretrained")
    model = build_model(spec.model_copy(update={"init": "scratch"}), seed=0)
    model.spec = spec
    model.backbone.transform_input = True
    return model.eval()


def test_reload_keeps_the_pretrained_input_transform(stub_zoo, tmp_path):
    model = _pretrained_layout("ResNet152")
    path = save_checkpoint(tmp_path / "best.ckpt", model, TrainConfig(), best_epoch=1, best_val_accuracy=0.5)

    reloaded, _ = reload_checkpoint(path, expected_spec=model.spec)
    assert reloaded.backbone.transform_input
    inputs = torch.randn(3, 3, 32, 32, generator=torch.Generator().manual_seed(0))
    with torch.no_grad():
        assert torch.equal(reloaded(inputs), model(inputs))


@pytest.mark.slow
def test_inception_checkpoint_reloads_to_the_same_logits(tmp_path):
    model = _pretrained_layout("InceptionNet")
    path = save_checkpoint(tmp_path / "best.ckpt", model, TrainConfig(), best_epoch=1, best_val_accuracy=0.5)

    reloaded, _ = reload_checkpoint(path)
    assert reloaded.backbone.transform_input
    inputs = torch.randn(2, 3, 299, 299, generator=torch.Generator().manual_seed(0))
    with torch.no_grad():
        assert torch.allclose(reloaded(inputs), model(inputs), atol=1e-5)


class NormedBackbone(nn.Module):
    def __init__(self) -> None:
        super().__init__()
        self.features = nn.Sequential(nn.AdaptiveAvgPool2d(8), nn.Flatten(), nn.Linear(3 * 8 * 8, 16), nn.BatchNorm1d(16))
        self.fc = nn.Linear(16, 4)

    def forward(self, x):
        return self.fc(self.features(x))


def _running_stats(model: SeverityClassifier) -> dict[str, torch.Tensor]:
    return {name: buf.clone() for name, buf in model.backbone.named_buffers()}


@pytest.mark.parametrize("extent, frozen", [("last_layer_only", True), ("all_layers", False)])
def test_batchnorm_statistics_follow_the_extent(stub_split, tmp_path, extent, frozen):
    spec, train_t, val_t = stub_split
    torch.manual_seed(0)
    model = apply_freeze_policy(SeverityClassifier(NormedBackbone(), spec, "fc"), extent)
    before = _running_stats(model)
    train(model, TrainConfig(batch_size=4, max_epochs=1, extent=extent, seed=0), train_t, val_t, tmp_path / "run")

    after = _running_stats(model)
    unchanged = all(torch.equal(before[name], after[name]) for name in before)
    assert unchanged == frozen


def test_best_checkpoint_matches_the_log(stub_split, tmp_path):
    spec, train_t, val_t = stub_split
    _, _, result = _fit(spec, train_t, val_t, tmp_path / "run", max_epochs=4, plateau_patience=4)
    log = pd.read_csv(tmp_path / "run" / "log.csv")
    assert result.best_epoch == select_best_epoch(list(log["val_accuracy"]))
    _, meta = reload_checkpoint(Path(result.checkpoint_path))
    assert meta.best_epoch == result.best_epoch


def test_train_refuses_empty_validation(stub_split, tmp_path):
    spec, train_t, val_t = stub_split
    with pytest.raises(ValueError):
        _fit(spec, train_t, val_t.subset([]), tmp_path / "run")


@pytest.mark.slow
def test_squeezenet_learns_the_planted_signal(tmp_path):
    set_deterministic(True)
    dataset = generate_dataset(SynthSpec.tiny_plus(unseen_val_per_class=0, test_scans=0), tmp_path / "data")
    data = load_grid_data(dataset.root)
    spec = default_model_spec("SqueezeNet", "scratch")
    cfg = TrainConfig(batch_size=16, optimizer="ADAM", lr=0.001, max_epochs=50, plateau_patience=50, seed=0)
    pool = prepare_tensors(data.train, spec, cfg.preprocess)
    train_scans, val_scans = split_internal(data.train, cfg.internal_val_fraction, cfg.seed)
    train_t = pool.subset([s.scan_id for s in train_scans])
    val_t = pool.subset([s.scan_id for s in val_scans])

    logs = []
    for i in range(2):
        model = apply_freeze_policy(build_model(spec, seed=cfg.seed), cfg.extent)
        result = train(model, cfg, train_t, val_t, tmp_path / f"run{i}")
        logs.append(_timeless(result))
    assert max(row["train_accuracy"] for row in logs[0]) >= 0.95
    assert logs[0] == logs[1]
