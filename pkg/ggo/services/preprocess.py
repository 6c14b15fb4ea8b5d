"""Center-slice selection, lung masking, cropping, resizing and normalization."""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import ROUND_FLOOR, ROUND_HALF_EVEN, Decimal
from pathlib import Path
from typing import Sequence

import numpy as np
from logzero import logger
from PIL import Image
from scipy import ndimage as ndi
from skimage import measure, morphology, segmentation, transform

from ..core.errors import SliceReadError
from ..schemas.model import ModelSpec
from ..schemas.train import PreprocessConfig
from .ingest import ScanVolume


def _decimal(value: float | int) -> Decimal:
    # repr() keeps 0.1 as Decimal('0.1') rather than its binary expansion
    return Decimal(repr(value)) if isinstance(value, float) else Decimal(value)


def select_center_index(n: int, f: float = 0.25) -> int:
    """Nearest integer to n*f (ties to even), clamped into [0, n-1]."""
    if n <= 0:
        raise ValueError(f"Slice count must be positive, got {n}")
    if not 0.0 < f < 1.0:
        raise ValueError(f"Slice fraction must lie in (0, 1), got {f}")
    z = int((_decimal(n) * _decimal(f)).to_integral_value(rounding=ROUND_HALF_EVEN))
    return min(max(z, 0), n - 1)


@dataclass(frozen=True)
class SliceSelector:
    f: float = 0.25

    def __post_init__(self) -> None:
        if not 0.0 < self.f < 1.0:
            raise ValueError(f"Slice fraction must lie in (0, 1), got {self.f}")

    def center_index(self, n: int) -> int:
        return select_center_index(n, self.f)

    def channel_indices(self, n: int) -> tuple[int, int, int]:
        z = self.center_index(n)
        return (max(z - 1, 0), z, min(z + 1, n - 1))


@dataclass(frozen=True)
class LungMask:
    mask: np.ndarray

    def __post_init__(self) -> None:
        if self.mask.ndim != 2:
            raise ValueError("LungMask must be 2D")

    @property
    def area(self) -> int:
        return int(self.mask.sum())

    @property
    def touches_border(self) -> bool:
        m = self.mask.astype(bool)
        return bool(m[0, :].any() or m[-1, :].any() or m[:, 0].any() or m[:, -1].any())


def refine_mask(binary: np.ndarray, closing_radius: int = 2) -> np.ndarray:
    """Border clearing, two largest components, closing, hole filling."""
    cleared = segmentation.clear_border(binary.astype(bool))
    labels = measure.label(cleared)
    regions = sorted(measure.regionprops(labels), key=lambda r: (-r.area, r.label))
    kept = np.isin(labels, [r.label for r in regions[:2]]) if regions else np.zeros_like(cleared, dtype=bool)
    if closing_radius > 0:
        kept = morphology.binary_closing(kept, morphology.disk(closing_radius))
    filled = ndi.binary_fill_holes(kept)
    # closing can reach the frame edge; the mask must never touch it
    return segmentation.clear_border(filled)


def build_lung_mask(slice_: np.ndarray, threshold: int = 100, closing_radius: int = 2) -> LungMask:
    if slice_.ndim != 2:
        raise ValueError(f"Expected a single-channel 2D slice, got shape {slice_.shape}")
    refined = refine_mask(slice_ < threshold, closing_radius=closing_radius)
    return LungMask(mask=refined.astype(np.uint8))


def apply_mask(slice_: np.ndarray, mask: LungMask, fill: int = 0) -> np.ndarray:
    if slice_.shape != mask.mask.shape:
        raise ValueError(f"Mask shape {mask.mask.shape} does not match slice shape {slice_.shape}")
    return np.where(mask.mask.astype(bool), slice_, np.asarray(fill, dtype=slice_.dtype))


def center_crop(slice_: np.ndarray, crop_fraction: float = 0.9) -> np.ndarray:
    """Centered window of floor(side*fraction) per axis; odd margins put the extra pixel last."""
    if not 0.0 < crop_fraction <= 1.0:
        raise ValueError(f"crop_fraction must lie in (0, 1], got {crop_fraction}")
    if crop_fraction == 1.0:
        return slice_
    frac = _decimal(crop_fraction)
    h, w = slice_.shape[:2]
    new_h = int((Decimal(h) * frac).to_integral_value(rounding=ROUND_FLOOR))
    new_w = int((Decimal(w) * frac).to_integral_value(rounding=ROUND_FLOOR))
    if new_h < 1 or new_w < 1:
        raise ValueError(f"Cropping {h}x{w} by {crop_fraction} leaves less than one pixel")
    top = (h - new_h) // 2
    left = (w - new_w) // 2
    return slice_[top : top + new_h, left : left + new_w]


def read_slice(path: Path, scan_id: str = "") -> np.ndarray:
    try:
        with Image.open(path) as image:
            return np.asarray(image.convert("L"), dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise SliceReadError(scan_id, str(path), str(exc)) from exc


def resize_slice(slice_: np.ndarray, side: int) -> np.ndarray:
    return transform.resize(
        slice_.astype(np.float64),
        (side, side),
        order=1,
        mode="reflect",
        anti_aliasing=True,
        preserve_range=True,
    )


def normalize_stack(stack: np.ndarray, mean: Sequence[float], std: Sequence[float]) -> np.ndarray:
    scaled = stack / 255.0
    mean_arr = np.asarray(mean, dtype=np.float64)[:, None, None]
    std_arr = np.asarray(std, dtype=np.float64)[:, None, None]
    return ((scaled - mean_arr) / std_arr).astype(np.float32)


@dataclass(frozen=True)
class PreprocessedInput:
    pixels: np.ndarray
    scan_id: str
    z: int
    masked: bool
    cropped: bool
    channel_indices: tuple[int, int, int] = field(default=(0, 0, 0))

    def __post_init__(self) -> None:
        if self.pixels.ndim != 3 or self.pixels.shape[0] != 3 or self.pixels.shape[1] != self.pixels.shape[2]:
            raise ValueError(f"Expected a 3xvxv stack, got shape {self.pixels.shape}")
        if not np.isfinite(self.pixels).all():
            raise ValueError(f"Non-finite pixels in input for scan '{self.scan_id}'")


def masked_slice(raw: np.ndarray, threshold: int = 100, closing_radius: int = 2) -> tuple[np.ndarray, LungMask]:
    mask = build_lung_mask(raw, threshold=threshold, closing_radius=closing_radius)
    return apply_mask(raw, mask), mask


def _prepare_slice(
    raw: np.ndarray,
    side: int,
    apply_mask_: bool,
    apply_crop: bool,
    crop_fraction: float,
    threshold: int,
    closing_radius: int,
) -> np.ndarray:
    work = raw
    if apply_mask_:
        work, _ = masked_slice(work, threshold, closing_radius)
    if apply_crop:
        work = center_crop(work, crop_fraction)
    return resize_slice(work, side)


def assemble_input(
    volume: ScanVolume,
    selector: SliceSelector,
    spec: ModelSpec,
    apply_mask: bool = True,
    apply_crop: bool = True,
    crop_fraction: float = 0.9,
    threshold: int = 100,
    closing_radius: int = 2,
) -> PreprocessedInput:
    """Stack slices (z-1, z, z+1) of ``volume`` into a normalized 3xvxv input."""
    if volume.n < 1:
        raise ValueError(f"Scan '{volume.scan_id}' has no slices")
    indices = selector.channel_indices(volume.n)
    cache: dict[int, np.ndarray] = {}
    channels = []
    for idx in indices:
        if idx not in cache:
            raw = read_slice(volume.slice_paths[idx], volume.scan_id)
            cache[idx] = _prepare_slice(raw, spec.v, apply_mask, apply_crop, crop_fraction, threshold, closing_radius)
        channels.append(cache[idx])
    pixels = normalize_stack(np.stack(channels), spec.norm_mean, spec.norm_std)
    return PreprocessedInput(
        pixels=pixels,
        scan_id=volume.scan_id,
        z=indices[1],
        masked=apply_mask,
        cropped=apply_crop,
        channel_indices=indices,
    )


def assemble_from_config(volume: ScanVolume, spec: ModelSpec, config: PreprocessConfig) -> PreprocessedInput:
    return assemble_input(
        volume,
        SliceSelector(config.slice_fraction),
        spec,
        apply_mask=config.apply_mask,
        apply_crop=config.apply_crop,
        crop_fraction=config.crop_fraction,
        threshold=config.mask_threshold,
        closing_radius=config.closing_radius,
    )


def assemble_batch(
    volumes: Sequence[ScanVolume], spec: ModelSpec, config: PreprocessConfig
) -> tuple[list[PreprocessedInput], list[SliceReadError]]:
    """Preprocess many scans; unreadable scans are recorded and left out."""
    inputs: list[PreprocessedInput] = []
    errors: list[SliceReadError] = []
    for volume in volumes:
        try:
            inputs.append(assemble_from_config(volume, spec, config))
        except SliceReadError as exc:
            logger.warning("Skipping scan %s: %s", volume.scan_id, exc)
            errors.append(exc)
    return inputs, errors


def dump_triptych(item: PreprocessedInput, out_dir: Path) -> Path:
    """Write the three channels side by side as one greyscale PNG."""
    panels = []
    for channel in item.pixels:
        low, high = float(channel.min()), float(channel.max())
        span = high - low if high > low else 1.0
        panels.append(((channel - low) / span * 255.0).round().astype(np.uint8))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{item.scan_id}_z{item.z}.png"
    Image.fromarray(np.hstack(panels)).save(path, format="PNG")
    return path
