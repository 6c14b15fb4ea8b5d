"""Scan discovery, label loading and the per-scan file-count manifest."""

from __future__ import annotations

import hashlib
import io
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import pandas as pd
from logzero import logger

from ..core.errors import ConfigError, LabelError
from ..schemas.labels import LABELLED_SPLITS, SPLITS, parse_label_token

ACCEPTED_EXTENSIONS = frozenset({".jpg", ".jpeg"})
_TRAILING_DIGITS = re.compile(r"(\d+)(?!.*\d)")


@dataclass(frozen=True)
class ScanVolume:
    scan_id: str
    slice_paths: tuple[Path, ...]
    split: str

    @property
    def n(self) -> int:
        return len(self.slice_paths)

    @property
    def excluded(self) -> bool:
        return self.n == 0


@dataclass(frozen=True)
class LabeledScan:
    volume: ScanVolume
    label: int

    @property
    def scan_id(self) -> str:
        return self.volume.scan_id


@dataclass(frozen=True)
class ManifestRow:
    scan_id: str
    file_count: int
    split: str


@dataclass(frozen=True)
class Manifest:
    rows: tuple[ManifestRow, ...]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(r.scan_id, r.file_count, r.split) for r in self.rows],
            columns=["scan_id", "file_count", "split"],
        )


@dataclass(frozen=True)
class Discrepancy:
    scan_id: str
    split: str
    expected: int
    actual: int


def slice_sort_key(path: Path) -> tuple[int, int, str]:
    """Numbered files first, by their trailing digit run; the rest lexicographically."""
    match = _TRAILING_DIGITS.search(path.stem)
    if match is None:
        return (1, 0, path.name)
    return (0, int(match.group(1)), path.name)


def is_accepted_image(path: Path) -> bool:
    return path.is_file() and path.suffix.lower() in ACCEPTED_EXTENSIONS


def list_slices(scan_dir: Path) -> tuple[Path, ...]:
    return tuple(sorted((p for p in scan_dir.iterdir() if is_accepted_image(p)), key=slice_sort_key))


def discover_scans(root_dir: Path, split: str) -> list[ScanVolume]:
    """One ScanVolume per immediate subdirectory of ``root_dir``."""
    if split not in SPLITS:
        raise ValueError(f"Unknown split '{split}'")
    root = Path(root_dir)
    if not root.is_dir():
        raise ConfigError(f"Scan root does not exist or is not a directory: {root}")

    volumes: list[ScanVolume] = []
    for scan_dir in sorted((p for p in root.iterdir() if p.is_dir()), key=lambda p: p.name):
        volume = ScanVolume(scan_id=scan_dir.name, slice_paths=list_slices(scan_dir), split=split)
        if volume.excluded:
            logger.warning("Scan folder %s has no JPEG slices; excluded from training", scan_dir)
        volumes.append(volume)
    logger.debug("Discovered %d scans under %s", len(volumes), root)
    return volumes


def discover_dataset(data_root: Path) -> dict[str, list[ScanVolume]]:
    root = Path(data_root)
    if not root.is_dir():
        raise ConfigError(f"Dataset root does not exist or is not a directory: {root}")
    found = {split: discover_scans(root / split, split) for split in SPLITS if (root / split).is_dir()}
    if not found:
        raise ConfigError(f"No split folders ({', '.join(SPLITS)}) found under {root}")
    return found


def load_labels(label_file: Path, scans: Sequence[ScanVolume]) -> list[LabeledScan]:
    path = Path(label_file)
    if not path.is_file():
        raise ConfigError(f"Label file not found: {path}")
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    df.columns = [c.strip().lower() for c in df.columns]
    if list(df.columns[:2]) != ["scan_id", "label"]:
        raise LabelError(f"Label file {path} must start with the header 'scan_id,label'")

    df["scan_id"] = df["scan_id"].str.strip()
    duplicated = sorted(set(df.loc[df["scan_id"].duplicated(), "scan_id"]))
    if duplicated:
        raise LabelError(f"Duplicate scan_id in {path}: {', '.join(duplicated)}")

    labels: dict[str, int] = {}
    for scan_id, token in zip(df["scan_id"], df["label"]):
        try:
            labels[scan_id] = parse_label_token(token)
        except ValueError as exc:
            raise LabelError(f"{path}: scan '{scan_id}': {exc}") from exc

    labeled: list[LabeledScan] = []
    missing: list[str] = []
    for volume in scans:
        if volume.split not in LABELLED_SPLITS or volume.excluded:
            continue
        if volume.scan_id not in labels:
            missing.append(volume.scan_id)
            continue
        labeled.append(LabeledScan(volume=volume, label=labels[volume.scan_id]))

    if missing:
        raise LabelError(
            f"{len(missing)} scan(s) have no label in {path}: {', '.join(missing)}",
            missing=missing,
        )
    return labeled


def build_manifest(scans: Iterable[ScanVolume]) -> Manifest:
    return build_manifest_rows(ManifestRow(scan_id=s.scan_id, file_count=s.n, split=s.split) for s in scans)


def build_dataset_manifest(dataset: Mapping[str, Sequence[ScanVolume]]) -> Manifest:
    return build_manifest(volume for volumes in dataset.values() for volume in volumes)


def verify_manifest(manifest: Manifest, root_dir: Path) -> list[Discrepancy]:
    """Compare manifest counts with the tree under ``root_dir/<split>/<scan_id>``."""
    root = Path(root_dir)
    discrepancies: list[Discrepancy] = []
    listed: dict[str, set[str]] = {}
    for row in manifest.rows:
        listed.setdefault(row.split, set()).add(row.scan_id)
        scan_dir = root / row.split / row.scan_id
        actual = len(list_slices(scan_dir)) if scan_dir.is_dir() else 0
        if actual != row.file_count:
            discrepancies.append(Discrepancy(row.scan_id, row.split, row.file_count, actual))

    for split, scan_ids in listed.items():
        split_dir = root / split
        if not split_dir.is_dir():
            continue
        for scan_dir in sorted(p for p in split_dir.iterdir() if p.is_dir() and p.name not in scan_ids):
            actual = len(list_slices(scan_dir))
            if actual:
                discrepancies.append(Discrepancy(scan_dir.name, split, 0, actual))
    return discrepancies


def _manifest_csv(manifest: Manifest) -> str:
    buffer = io.StringIO()
    manifest.to_frame().to_csv(buffer, index=False, lineterminator="\n")
    return buffer.getvalue()


def write_manifest(manifest: Manifest, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_manifest_csv(manifest), encoding="utf-8", newline="")
    return path


def read_manifest(path: Path) -> Manifest:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Manifest not found: {path}")
    df = pd.read_csv(path, dtype={"scan_id": str, "file_count": int, "split": str})
    if list(df.columns) != ["scan_id", "file_count", "split"]:
        raise ConfigError(f"Manifest {path} must have the header 'scan_id,file_count,split'")
    rows = (ManifestRow(str(r.scan_id), int(r.file_count), str(r.split)) for r in df.itertuples(index=False))
    return build_manifest_rows(rows)


def build_manifest_rows(rows: Iterable[ManifestRow]) -> Manifest:
    return Manifest(rows=tuple(sorted(rows, key=lambda r: (SPLITS.index(r.split), r.scan_id))))


def manifest_hash(manifest: Manifest) -> str:
    return hashlib.sha256(_manifest_csv(manifest).encode("utf-8")).hexdigest()
