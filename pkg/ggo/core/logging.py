from __future__ import annotations

import logging
from pathlib import Path

import logzero
from logzero import logger

LOG_FORMAT = "%(color)s[%(levelname)1.1s %(asctime)s %(module)s:%(lineno)d]%(end_color)s %(message)s"


def configure_logging(level: str = "INFO", logfile: Path | None = None) -> None:
    """Set the logzero level and (optionally) mirror records into a rotating file."""
    numeric = logging.getLevelName(level.upper())
    if not isinstance(numeric, int):
        raise ValueError(f"Unknown log level '{level}'")
    logzero.formatter(logzero.LogFormatter(fmt=LOG_FORMAT))
    logzero.loglevel(numeric)
    if logfile is not None:
        attach_logfile(logfile, numeric)


def attach_logfile(logfile: Path, level: int = logging.DEBUG) -> None:
    logfile = Path(logfile)
    logfile.parent.mkdir(parents=True, exist_ok=True)
    logzero.logfile(str(logfile), maxBytes=5_000_000, backupCount=2, loglevel=level)


def detach_logfile() -> None:
    logzero.logfile(None)


__all__ = ["attach_logfile", "configure_logging", "detach_logfile", "logger"]
