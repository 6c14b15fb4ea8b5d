"""Fine-tuning loop, plateau early stopping and best-accuracy checkpoints."""

from __future__ import annotations

import json
import math
import pickle
import time
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import pandas as pd
import torch
from logzero import logger
from pydantic import ValidationError
from torch import nn
from torch.utils.data import DataLoader, TensorDataset

from ..core.errors import CheckpointError, DivergenceError
from ..core.logging import attach_logfile, detach_logfile
from ..core.repro import code_version, seed_everything
from ..schemas.labels import NUM_CLASSES
from ..schemas.model import ModelSpec
from ..schemas.train import EpochRecord, TrainConfig, TrainResult
from ..zoo.models import SeverityClassifier, apply_freeze_policy, build_model, split_outputs
from .datasets import ScanTensors
from .ingest import LabeledScan

AUX_LOSS_WEIGHT = 0.4
CHECKPOINT_FORMAT = 1


def split_internal(
    train_scans: Sequence[LabeledScan], fraction: float, seed: int
) -> tuple[list[LabeledScan], list[LabeledScan]]:
    """Stratified, seeded train / internal-validation partition."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    by_class: dict[int, list[LabeledScan]] = defaultdict(list)
    for scan in sorted(train_scans, key=lambda s: s.scan_id):
        by_class[scan.label].append(scan)

    train: list[LabeledScan] = []
    val: list[LabeledScan] = []
    for label in sorted(by_class):
        members = by_class[label]
        if len(members) < 2:
            logger.warning("Class %d has %d scan(s); all of them stay in train", label, len(members))
            train.extend(members)
            continue
        n_val = min(max(int(round(len(members) * fraction)), 1), len(members) - 1)
        chosen = set(rng.permutation(len(members))[:n_val].tolist())
        for i, scan in enumerate(members):
            (val if i in chosen else train).append(scan)
    return sorted(train, key=lambda s: s.scan_id), sorted(val, key=lambda s: s.scan_id)


def plateau_detector(val_losses: Sequence[float], patience: int, min_delta: float) -> bool:
    """True once `patience` epochs pass without beating the running best by more than min_delta."""
    if patience < 1:
        raise ValueError("patience must be >= 1")
    if min_delta < 0:
        raise ValueError("min_delta must be >= 0")
    best = math.inf
    wait = 0
    for loss in val_losses:
        if best - loss > min_delta:
            best = loss
            wait = 0
        else:
            wait += 1
    return wait >= patience


def select_best_epoch(val_accuracies: Sequence[float]) -> int:
    if not val_accuracies:
        raise ValueError("No epochs to choose from")
    return list(val_accuracies).index(max(val_accuracies)) + 1


def cross_entropy_objective(
    logits: torch.Tensor, labels: torch.Tensor, aux_logits: Optional[torch.Tensor] = None
) -> torch.Tensor:
    loss = nn.functional.cross_entropy(logits, labels)
    if aux_logits is not None:
        loss = loss + AUX_LOSS_WEIGHT * nn.functional.cross_entropy(aux_logits, labels)
    return loss


def make_optimizer(cfg: TrainConfig, params: Iterable[nn.Parameter]) -> torch.optim.Optimizer:
    params = list(params)
    if not params:
        raise ValueError("No trainable parameters")
    if cfg.optimizer == "ADAM":
        return torch.optim.Adam(params, lr=cfg.lr, betas=(0.9, 0.999), eps=1e-8)
    return torch.optim.SGD(params, lr=cfg.lr, momentum=cfg.momentum)


@torch.no_grad()
def evaluate_model(
    model: nn.Module, data: ScanTensors, batch_size: int = 64, device: str = "cpu"
) -> tuple[Optional[float], Optional[float], np.ndarray]:
    """(mean loss, accuracy, float64 softmax rows); loss and accuracy are None without labels."""
    model.eval()
    chunks = []
    for start in range(0, len(data), batch_size):
        batch = data.inputs[start : start + batch_size].to(device)
        logits, _ = split_outputs(model(batch))
        chunks.append(logits.detach().cpu())
    logits = torch.cat(chunks) if chunks else torch.empty((0, NUM_CLASSES))
    probs = torch.softmax(logits.double(), dim=1).numpy()
    if data.labels is None or len(data) == 0:
        return None, None, probs
    loss = nn.functional.cross_entropy(logits, data.labels, reduction="sum").item() / len(data)
    accuracy = float((logits.argmax(dim=1) == data.labels).sum().item()) / len(data)
    return loss, accuracy, probs


def _params_finite(model: nn.Module) -> bool:
    return all(torch.isfinite(p).all().item() for p in model.parameters() if p.requires_grad)


def write_run_config(run_dir: Path, spec: ModelSpec, cfg: TrainConfig, run_id: str) -> Path:
    path = Path(run_dir) / "config.json"
    payload = {
        "run_id": run_id,
        "settings": cfg.settings_string(),
        "model_spec": spec.model_dump(mode="json"),
        "train_config": cfg.model_dump(mode="json"),
        "code_version": code_version(),
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    return path


def write_epoch_log(path: Path, epoch_log: Sequence[EpochRecord]) -> None:
    frame = pd.DataFrame([row.model_dump() for row in epoch_log], columns=list(EpochRecord.model_fields))
    frame.to_csv(path, index=False, lineterminator="\n")


def train(
    model: SeverityClassifier,
    cfg: TrainConfig,
    train_data: ScanTensors,
    val_data: ScanTensors,
    run_dir: Path,
    run_id: Optional[str] = None,
    device: str = "cpu",
    loader_workers: int = 0,
) -> TrainResult:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    run_id = run_id or run_dir.name
    if train_data.labels is None or val_data.labels is None or not len(train_data) or not len(val_data):
        raise ValueError("train() needs non-empty labelled train and validation tensors")
    if model.extent != cfg.extent:
        apply_freeze_policy(model, cfg.extent)

    attach_logfile(run_dir / "train.log")
    try:
        return _fit(model, cfg, train_data, val_data, run_dir, run_id, device, loader_workers)
    finally:
        detach_logfile()


def _fit(
    model: SeverityClassifier,
    cfg: TrainConfig,
    train_data: ScanTensors,
    val_data: ScanTensors,
    run_dir: Path,
    run_id: str,
    device: str,
    loader_workers: int,
) -> TrainResult:
    write_run_config(run_dir, model.spec, cfg, run_id)
    seed_everything(cfg.seed)
    model.to(device)
    optimizer = make_optimizer(cfg, (p for p in model.parameters() if p.requires_grad))
    loader = DataLoader(
        TensorDataset(train_data.inputs, train_data.labels),
        batch_size=cfg.batch_size,
        shuffle=True,
        generator=torch.Generator().manual_seed(cfg.seed),
        num_workers=loader_workers,
        # BatchNorm cannot train on a lone trailing sample
        drop_last=len(train_data) > 1 and len(train_data) % cfg.batch_size == 1,
    )
    checkpoint_path = run_dir / "best.ckpt"
    logger.info(
        "Run %s: %s %s %s, %d train / %d val scans",
        run_id, model.spec.arch, cfg.extent, cfg.settings_string(), len(train_data), len(val_data),
    )

    epoch_log: list[EpochRecord] = []
    val_losses: list[float] = []
    best_accuracy = -1.0
    best_epoch = 0
    stopped_early = False
    for epoch in range(1, cfg.max_epochs + 1):
        started = time.perf_counter()
        model.train()
        loss_sum = 0.0
        correct = 0
        seen = 0
        for inputs, labels in loader:
            inputs, labels = inputs.to(device), labels.to(device)
            optimizer.zero_grad()
            logits, aux = split_outputs(model(inputs))
            loss = cross_entropy_objective(logits, labels, aux)
            if not torch.isfinite(loss):
                raise DivergenceError(epoch, f"non-finite training loss ({loss.item()})")
            loss.backward()
            optimizer.step()
            loss_sum += loss.item() * labels.size(0)
            correct += int((logits.argmax(dim=1) == labels).sum().item())
            seen += labels.size(0)
        if not _params_finite(model):
            raise DivergenceError(epoch, "non-finite parameters after update")

        val_loss, val_accuracy, _ = evaluate_model(model, val_data, cfg.batch_size, device)
        if val_loss is None or not math.isfinite(val_loss):
            raise DivergenceError(epoch, f"non-finite validation loss ({val_loss})")

        record = EpochRecord(
            epoch=epoch,
            train_loss=loss_sum / max(seen, 1),
            train_accuracy=correct / max(seen, 1),
            val_loss=val_loss,
            val_accuracy=val_accuracy,
            seconds=time.perf_counter() - started,
        )
        epoch_log.append(record)
        write_epoch_log(run_dir / "log.csv", epoch_log)
        logger.info(
            "epoch %d: train_loss %.4f train_acc %.3f val_loss %.4f val_acc %.3f",
            epoch, record.train_loss, record.train_accuracy, val_loss, val_accuracy,
        )

        if select_best_epoch([row.val_accuracy for row in epoch_log]) == epoch:
            best_accuracy = val_accuracy
            best_epoch = epoch
            save_checkpoint(checkpoint_path, model, cfg, best_epoch, best_accuracy)
            logger.info("New best val accuracy %.4f at epoch %d; checkpoint saved", best_accuracy, epoch)

        val_losses.append(val_loss)
        if plateau_detector(val_losses, cfg.plateau_patience, cfg.plateau_min_delta):
            stopped_early = True
            logger.info("Validation loss plateaued; stopping after epoch %d", epoch)
            break

    return TrainResult(
        run_id=run_id,
        best_epoch=best_epoch,
        best_val_accuracy=best_accuracy,
        epoch_log=epoch_log,
        checkpoint_path=str(checkpoint_path),
        stopped_early=stopped_early,
    )


def save_checkpoint(
    path: Path, model: SeverityClassifier, cfg: TrainConfig, best_epoch: int, best_val_accuracy: float
) -> Path:
    path = Path(path)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "state_dict": {k: v.detach().cpu() for k, v in model.state_dict().items()},
        "model_spec": model.spec.model_dump(mode="json"),
        "train_config": cfg.model_dump(mode="json"),
        "best_epoch": best_epoch,
        "best_val_accuracy": best_val_accuracy,
        "code_version": code_version(),
    }
    tmp = path.with_suffix(".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)
    return path


@dataclass(frozen=True)
class CheckpointMeta:
    model_spec: ModelSpec
    train_config: TrainConfig
    best_epoch: int
    best_val_accuracy: float
    code_version: str


def _spec_mismatch(stored: ModelSpec, expected: ModelSpec) -> list[str]:
    # init only decides where the starting weights came from
    return [name for name in ModelSpec.model_fields if name != "init" and getattr(stored, name) != getattr(expected, name)]


def reload_checkpoint(
    path: Path, expected_spec: Optional[ModelSpec] = None, device: str = "cpu"
) -> tuple[SeverityClassifier, CheckpointMeta]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"Checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except (RuntimeError, EOFError, OSError, ValueError, pickle.UnpicklingError) as exc:
        raise CheckpointError(f"Cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "state_dict" not in payload or "model_spec" not in payload:
        raise CheckpointError(f"Checkpoint {path} is missing its state_dict or model_spec")

    try:
        spec = ModelSpec.model_validate(payload["model_spec"])
        cfg = TrainConfig.model_validate(payload["train_config"])
    except ValidationError as exc:
        raise CheckpointError(f"Checkpoint {path} carries an invalid config: {exc}") from exc
    if expected_spec is not None:
        mismatched = _spec_mismatch(spec, expected_spec)
        if mismatched:
            details = ", ".join(
                f"{name}: checkpoint={getattr(spec, name)!r} expected={getattr(expected_spec, name)!r}"
                for name in mismatched
            )
            raise CheckpointError(f"ModelSpec mismatch for {path}: {details}")

    model = build_model(spec, download=False)
    try:
        model.load_state_dict(payload["state_dict"])
    except RuntimeError as exc:
        raise CheckpointError(f"Checkpoint {path} does not fit {spec.arch}: {exc}") from exc
    model.spec = spec
    apply_freeze_policy(model, cfg.extent)
    model.to(device)
    model.eval()
    meta = CheckpointMeta(
        model_spec=spec,
        train_config=cfg,
        best_epoch=int(payload.get("best_epoch", 0)),
        best_val_accuracy=float(payload.get("best_val_accuracy", 0.0)),
        code_version=str(payload.get("code_version", "")),
    )
    return model, meta
