from __future__ import annotations

from pathlib import Path
from typing import Any, Dict, List

from ..models import ArchitectureInfo, CellFailure, CellResult, RunSummary
from ..zoo import get_architecture_registry
from .evaluator import table_caption, table_headers, table_rows
from .gridrunner import load_cell_record, load_grid_result, run_dir_for, table_row


def list_architectures() -> List[Dict[str, Any]]:
    registry = get_architecture_registry()
    return [
        ArchitectureInfo(**definition.catalog_entry()).model_dump()
        for definition in registry.all().values()
    ]


def _summarize(record: CellResult | CellFailure) -> RunSummary:
    cfg = record.train_config
    summary = RunSummary(
        run_id=record.run_id,
        status=record.status,
        arch=record.model_spec.arch,
        extent=cfg.extent,
        settings=cfg.settings_string(),
    )
    if isinstance(record, CellFailure):
        summary.reason = record.reason
        return summary
    summary.f1_macro_val = record.internal_val.f1_macro
    summary.auroc_val = record.internal_val.auroc_macro
    if record.unseen_val is not None:
        summary.f1_macro_unseen = record.unseen_val.f1_macro
        summary.auroc_unseen = record.unseen_val.auroc_macro
    return summary


def list_runs(results_root: Path) -> List[Dict[str, Any]]:
    result = load_grid_result(results_root)
    return [_summarize(r).model_dump() for r in [*result.cells, *result.failures]]


def get_run(run_id: str, results_root: Path) -> Dict[str, Any]:
    if not run_id or "/" in run_id or run_id.startswith("."):
        raise KeyError(f"Unknown run '{run_id}'")
    record = load_cell_record(run_dir_for(results_root, run_id))
    if record is None:
        raise KeyError(f"Unknown run '{run_id}'")
    return record.model_dump(mode="json")


def get_table(layout: str, results_root: Path) -> Dict[str, Any]:
    headers = table_headers(layout)
    result = load_grid_result(results_root)
    cells = result.cells
    if layout == "table1":
        cells = [c for c in cells if c.train_config.extent == "last_layer_only"]
    elif layout == "table2":
        cells = [c for c in cells if c.train_config.extent == "all_layers"]
    return {
        "layout": layout,
        "caption": table_caption(layout),
        "headers": headers,
        "rows": table_rows([table_row(c) for c in cells], layout),
    }
