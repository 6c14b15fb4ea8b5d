"""Exception hierarchy shared by the services and the CLI."""

from __future__ import annotations

from typing import Sequence


class HarnessError(Exception):
    """Base class for failures the CLI reports as a runtime error (exit 1)."""


class ConfigError(HarnessError):
    pass


class LabelError(HarnessError):
    def __init__(self, message: str, missing: Sequence[str] = ()) -> None:
        super().__init__(message)
        self.missing = list(missing)


class SliceReadError(HarnessError):
    def __init__(self, scan_id: str, path: str, reason: str) -> None:
        super().__init__(f"Cannot read slice {path} of scan '{scan_id}': {reason}")
        self.scan_id = scan_id
        self.path = path


class PretrainedWeightsUnavailable(HarnessError):
    pass


class CheckpointError(HarnessError):
    pass


class DivergenceError(HarnessError):
    def __init__(self, epoch: int, detail: str) -> None:
        super().__init__(f"Training diverged at epoch {epoch}: {detail}")
        self.epoch = epoch
