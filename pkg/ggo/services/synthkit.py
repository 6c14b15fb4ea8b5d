"""Synthetic CT-like fixtures with a planted involvement signal."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from logzero import logger
from PIL import Image
from scipy.ndimage import gaussian_filter

from ..core.errors import ConfigError
from ..schemas.labels import NUM_CLASSES, label_name
from ..schemas.synth import SynthSpec

AIR_LEVEL = 10
BODY_LEVEL = 200
LUNG_LEVEL = 30
GGO_LEVEL = 85
SEVERE_UPPER = 0.70
DEFAULT_THRESHOLDS = (0.26, 0.50, 0.75)


def involvement_to_label(q: float, thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> int:
    """Grade an involvement fraction; (0.70, 0.75] closes onto severe."""
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"Involvement fraction must lie in [0, 1], got {q}")
    low, mid, high = thresholds
    if q < low:
        return 0
    if q <= mid:
        return 1
    if q <= high:
        return 2
    return 3


def involvement_range(label: int, thresholds: Sequence[float] = DEFAULT_THRESHOLDS, margin: float = 0.03) -> tuple[float, float]:
    """Sampling interval for a class, kept `margin` away from every grade boundary."""
    low, mid, high = thresholds
    bounds = {
        0: (0.0, low),
        1: (low, mid),
        2: (mid, min(SEVERE_UPPER, high)),
        3: (high, 1.0),
    }
    if label not in bounds:
        raise ValueError(f"Class id {label} is outside 0..{NUM_CLASSES - 1}")
    start, stop = bounds[label]
    lo, hi = start + margin, stop - margin
    if lo >= hi:
        raise ValueError(f"Margin {margin} leaves no room inside ({start}, {stop}) for class {label}")
    return lo, hi


def _ellipse(side: int, cy: float, cx: float, ry: float, rx: float) -> np.ndarray:
    yy, xx = np.mgrid[0:side, 0:side]
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def lung_interior_mask(side: int, scale: float = 1.0) -> np.ndarray:
    """The two planted lungs as a boolean image."""
    c = (side - 1) / 2.0
    ry, rx = 0.30 * side * scale, 0.14 * side * scale
    return _ellipse(side, c, c - 0.2 * side, ry, rx) | _ellipse(side, c, c + 0.2 * side, ry, rx)


def slice_scale(index: int, n_slices: int) -> float:
    # lungs are widest mid-volume
    return 0.7 + 0.3 * math.sin(math.pi * (index + 0.5) / n_slices)


def render_slice(side: int, scale: float, q: float, rng: np.random.Generator, noise_level: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """One greyscale slice and its planted lung mask; exactly round(q * lung area) lung pixels are brightened."""
    c = (side - 1) / 2.0
    image = np.full((side, side), AIR_LEVEL, dtype=np.float64)
    image[_ellipse(side, c, c, 0.42 * side, 0.46 * side)] = BODY_LEVEL
    lungs = lung_interior_mask(side, scale)
    image[lungs] = LUNG_LEVEL

    n_ggo = int(round(q * lungs.sum()))
    if n_ggo:
        field = gaussian_filter(rng.standard_normal((side, side)), sigma=side / 24.0)
        lung_idx = np.flatnonzero(lungs)
        order = np.argsort(field.ravel()[lung_idx], kind="stable")[::-1]
        image.flat[lung_idx[order[:n_ggo]]] = GGO_LEVEL

    if noise_level > 0:
        image += rng.normal(0.0, 40.0 * noise_level, size=image.shape)
    return np.clip(np.round(image), 0, 255).astype(np.uint8), lungs


@dataclass(frozen=True)
class SynthScan:
    scan_id: str
    split: str
    q: float
    label: int
    n_slices: int


@dataclass(frozen=True)
class SynthDataset:
    root: Path
    labels_path: Path
    truth_path: Path
    scans: tuple[SynthScan, ...]

    def count(self, split: str) -> int:
        return sum(1 for s in self.scans if s.split == split)


def _split_labels(spec: SynthSpec) -> list[tuple[str, list[int]]]:
    return [
        ("train", [k for k in range(NUM_CLASSES) for _ in range(spec.n_scans_per_class)]),
        ("unseen_val", [k for k in range(NUM_CLASSES) for _ in range(spec.unseen_val_per_class)]),
        ("test", [i % NUM_CLASSES for i in range(spec.test_scans)]),
    ]


def _write_scan(scan_dir: Path, spec: SynthSpec, q: float, n_slices: int, rng: np.random.Generator) -> None:
    scan_dir.mkdir(parents=True, exist_ok=True)
    for i in range(n_slices):
        pixels, _ = render_slice(spec.image_side, slice_scale(i, n_slices), q, rng, spec.noise_level)
        Image.fromarray(pixels).save(scan_dir / f"{i}.jpg", format="JPEG", quality=spec.jpeg_quality)


def generate_dataset(spec: SynthSpec, out_dir: Path) -> SynthDataset:
    root = Path(out_dir)
    try:
        root.mkdir(parents=True, exist_ok=True)
        marker = root / ".write-check"
        marker.write_text("", encoding="utf-8")
        marker.unlink()
    except OSError as exc:
        raise ConfigError(f"Output directory is not writable: {root} ({exc})") from exc

    master = np.random.default_rng(spec.seed)
    scans: list[SynthScan] = []
    next_id = 0
    for split_idx, (split, labels) in enumerate(_split_labels(spec)):
        order = master.permutation(len(labels))
        for scan_idx, label in enumerate(labels[i] for i in order):
            rng = np.random.default_rng([spec.seed, split_idx, scan_idx])
            lo, hi = involvement_range(label, spec.involvement_thresholds, spec.boundary_margin)
            q = float(rng.uniform(lo, hi))
            n_slices = int(rng.integers(spec.slices_per_scan[0], spec.slices_per_scan[1] + 1))
            scan = SynthScan(f"ct_scan_{next_id}", split, q, involvement_to_label(q, spec.involvement_thresholds), n_slices)
            next_id += 1
            _write_scan(root / split / scan.scan_id, spec, q, n_slices, rng)
            scans.append(scan)
        logger.info("Generated %d %s scans under %s", len(labels), split, root / split)

    labels_path = root / "labels.csv"
    pd.DataFrame(
        [(s.scan_id, label_name(s.label)) for s in scans if s.split != "test"], columns=["scan_id", "label"]
    ).to_csv(labels_path, index=False, lineterminator="\n")
    truth_path = root / "truth.csv"
    pd.DataFrame(
        [(s.scan_id, s.split, round(s.q, 6), label_name(s.label)) for s in scans],
        columns=["scan_id", "split", "q", "label"],
    ).to_csv(truth_path, index=False, lineterminator="\n")
    return SynthDataset(root=root, labels_path=labels_path, truth_path=truth_path, scans=tuple(scans))
