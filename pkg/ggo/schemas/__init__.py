from .grid import CellFailure, CellResult, GridResult, GridSpec, RunManifestRecord
from .labels import NUM_CLASSES, SEVERITY_LABELS, SPLITS, Split, label_name, parse_label_token
from .model import ARCHITECTURES, EXTENTS, FineTuneExtent, ModelSpec, normalize_extent
from .report import ClassScores, EvalReport
from .synth import SynthSpec
from .train import EpochRecord, PreprocessConfig, TrainConfig, TrainResult

__all__ = [
    "ARCHITECTURES",
    "CellFailure",
    "CellResult",
    "ClassScores",
    "EXTENTS",
    "EpochRecord",
    "EvalReport",
    "FineTuneExtent",
    "GridResult",
    "GridSpec",
    "ModelSpec",
    "NUM_CLASSES",
    "PreprocessConfig",
    "RunManifestRecord",
    "SEVERITY_LABELS",
    "SPLITS",
    "Split",
    "SynthSpec",
    "TrainConfig",
    "TrainResult",
    "label_name",
    "normalize_extent",
    "parse_label_token",
]
