from __future__ import annotations

from pathlib import Path
from typing import Any, Dict

from fastapi import APIRouter, Depends, HTTPException

from ..core.config import get_settings
from ..services.runs import get_run, get_table, list_architectures, list_runs


router = APIRouter(tags=["results"])


def results_root() -> Path:
    return get_settings().results_root


@router.get("/architectures")
def architectures_catalog() -> Dict[str, Any]:
    return {"architectures": list_architectures()}


@router.get("/runs")
def runs_index(root: Path = Depends(results_root)) -> Dict[str, Any]:
    return {"runs": list_runs(root)}


@router.get("/runs/{run_id}")
def run_detail(run_id: str, root: Path = Depends(results_root)) -> Dict[str, Any]:
    try:
        return get_run(run_id, root)
    except KeyError as exc:
        raise HTTPException(status_code=404, detail=str(exc.args[0]))


@router.get("/tables/{layout}")
def table_view(layout: str, root: Path = Depends(results_root)) -> Dict[str, Any]:
    try:
        return get_table(layout, root)
    except ValueError as exc:
        raise HTTPException(status_code=400, detail=str(exc))
