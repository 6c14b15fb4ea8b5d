from __future__ import annotations

from typing import Literal

Split = Literal["train", "internal_val", "unseen_val", "test"]
SPLITS: tuple[str, ...] = ("train", "internal_val", "unseen_val", "test")
LABELLED_SPLITS: frozenset[str] = frozenset({"train", "internal_val", "unseen_val"})

SEVERITY_LABELS: tuple[str, ...] = ("mild", "moderate", "severe", "critical")
NUM_CLASSES = len(SEVERITY_LABELS)


def label_name(class_id: int) -> str:
    if not 0 <= class_id < NUM_CLASSES:
        raise ValueError(f"Class id {class_id} is outside 0..{NUM_CLASSES - 1}")
    return SEVERITY_LABELS[class_id]


def parse_label_token(token: str) -> int:
    """Map 'severe', 'SEVERE' or '2' to the class id 2."""
    cleaned = str(token).strip().lower()
    if cleaned in SEVERITY_LABELS:
        return SEVERITY_LABELS.index(cleaned)
    if cleaned.isdigit() and int(cleaned) < NUM_CLASSES:
        return int(cleaned)
    raise ValueError(f"Unknown severity label '{token}'")
