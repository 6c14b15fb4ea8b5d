"""Turn ingested scans into model-ready tensors, with a per-input-size cache."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import torch
from logzero import logger

from ..core.errors import ConfigError, SliceReadError
from ..schemas.model import ModelSpec
from ..schemas.train import PreprocessConfig
from .ingest import (
    LabeledScan,
    Manifest,
    ScanVolume,
    build_dataset_manifest,
    discover_dataset,
    load_labels,
    manifest_hash,
)
from .preprocess import assemble_batch

ScanLike = Union[LabeledScan, ScanVolume]


@dataclass
class ScanTensors:
    scan_ids: list[str]
    inputs: torch.Tensor
    labels: Optional[torch.Tensor] = None
    errors: list[SliceReadError] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.scan_ids)

    def subset(self, scan_ids: Sequence[str]) -> "ScanTensors":
        position = {sid: i for i, sid in enumerate(self.scan_ids)}
        index = [position[sid] for sid in scan_ids if sid in position]
        idx = torch.as_tensor(index, dtype=torch.long)
        return ScanTensors(
            scan_ids=[self.scan_ids[i] for i in index],
            inputs=self.inputs.index_select(0, idx),
            labels=None if self.labels is None else self.labels.index_select(0, idx),
        )


def _volume(scan: ScanLike) -> ScanVolume:
    return scan.volume if isinstance(scan, LabeledScan) else scan


def prepare_tensors(scans: Sequence[ScanLike], spec: ModelSpec, preprocess: PreprocessConfig) -> ScanTensors:
    labels = {s.scan_id: s.label for s in scans if isinstance(s, LabeledScan)}
    inputs, errors = assemble_batch([_volume(s) for s in scans], spec, preprocess)
    scan_ids = [item.scan_id for item in inputs]
    if inputs:
        pixels = torch.from_numpy(np.stack([item.pixels for item in inputs]))
    else:
        pixels = torch.empty((0, 3, spec.v, spec.v), dtype=torch.float32)
    label_tensor = None
    if labels:
        label_tensor = torch.as_tensor([labels[sid] for sid in scan_ids], dtype=torch.long)
    return ScanTensors(scan_ids=scan_ids, inputs=pixels, labels=label_tensor, errors=errors)


@dataclass
class GridData:
    data_root: Path
    train: list[LabeledScan]
    unseen_val: list[LabeledScan]
    test: list[ScanVolume]
    manifest: Manifest
    manifest_hash: str


def load_grid_data(data_root: Path, labels_path: Optional[Path] = None) -> GridData:
    """Discover every split under ``data_root`` and attach labels from ``labels.csv``."""
    root = Path(data_root)
    dataset = discover_dataset(root)
    if "train" not in dataset:
        raise ConfigError(f"No train split found under {root}")

    manifest = build_dataset_manifest(dataset)
    labelled_volumes = [v for split in ("train", "internal_val", "unseen_val") for v in dataset.get(split, [])]
    labeled = load_labels(Path(labels_path) if labels_path else root / "labels.csv", labelled_volumes)

    # a fixed internal_val folder joins the training pool; the internal split is always re-drawn
    train = [s for s in labeled if s.volume.split in ("train", "internal_val")]
    unseen = [s for s in labeled if s.volume.split == "unseen_val"]
    test = [v for v in dataset.get("test", []) if not v.excluded]
    dropped = sum(1 for volumes in dataset.values() for v in volumes if v.excluded)
    if dropped:
        logger.warning("Dropped %d empty scan folder(s)", dropped)
    logger.info("Loaded %d train, %d unseen_val, %d test scans from %s", len(train), len(unseen), len(test), root)
    return GridData(
        data_root=root,
        train=sorted(train, key=lambda s: s.scan_id),
        unseen_val=sorted(unseen, key=lambda s: s.scan_id),
        test=sorted(test, key=lambda v: v.scan_id),
        manifest=manifest,
        manifest_hash=manifest_hash(manifest),
    )


class TensorCache:
    """Keeps preprocessed tensors per (split, input size, normalization, preprocessing)."""

    def __init__(self) -> None:
        self._entries: dict[tuple, ScanTensors] = {}

    def get(self, name: str, scans: Sequence[ScanLike], spec: ModelSpec, preprocess: PreprocessConfig) -> ScanTensors:
        key = (name, spec.v, spec.norm_mean, spec.norm_std, preprocess.model_dump_json())
        if key not in self._entries:
            self._entries[key] = prepare_tensors(scans, spec, preprocess)
        return self._entries[key]

    def __len__(self) -> int:
        return len(self._entries)
