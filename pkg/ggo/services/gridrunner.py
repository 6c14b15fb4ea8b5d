"""Grid expansion, per-cell execution with resume, summaries and final retraining."""

from __future__ import annotations

import itertools
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional, Sequence, Union

import pandas as pd
from logzero import logger
from pydantic import ValidationError

from ..core.errors import ConfigError
from ..core.repro import fingerprint, set_deterministic
from ..schemas.grid import CellFailure, CellResult, GridResult, GridSpec
from ..schemas.model import ModelSpec
from ..schemas.report import EvalReport
from ..schemas.train import TrainConfig, TrainResult, format_lr
from ..zoo.models import apply_freeze_policy, build_model, default_model_spec
from .datasets import GridData, ScanTensors, TensorCache
from .evaluator import TableRow, emit_predictions, evaluate_predictions, predict_distribution, write_report
from .ingest import LabeledScan
from .trainer import evaluate_model, reload_checkpoint, split_internal, train

CellRecord = Union[CellResult, CellFailure]
TABLE_BEST_ROWS = 3


class GridCell(NamedTuple):
    model_spec: ModelSpec
    train_config: TrainConfig

    @property
    def fingerprint(self) -> str:
        return cell_fingerprint(self.model_spec, self.train_config)

    @property
    def run_id(self) -> str:
        spec, cfg = self
        return (
            f"{spec.arch}-{cfg.extent}-bs{cfg.batch_size}-{cfg.optimizer.lower()}"
            f"-lr{format_lr(cfg.lr)}-s{cfg.seed}-{self.fingerprint[:8]}"
        )


def cell_fingerprint(spec: ModelSpec, cfg: TrainConfig) -> str:
    return fingerprint({"model_spec": spec.model_dump(mode="json"), "train_config": cfg.model_dump(mode="json")})


def grid_order_key(spec: ModelSpec, cfg: TrainConfig) -> tuple:
    return (spec.arch, cfg.extent, cfg.batch_size, cfg.optimizer, cfg.lr, cfg.seed)


def expand_grid(spec: GridSpec) -> list[GridCell]:
    """Deduplicated cartesian product in (arch, extent, bs, opt, lr, seed) order."""
    combos = set(
        itertools.product(
            spec.archs,
            spec.extents,
            spec.batch_sizes,
            [tuple(pair) for pair in spec.optim_lr_pairs],
            spec.seeds,
        )
    )
    if not combos:
        raise ValueError("Grid expands to zero cells")

    cells = []
    for arch, extent, batch_size, (optimizer, lr), seed in combos:
        cfg = TrainConfig(
            batch_size=batch_size,
            optimizer=optimizer,
            lr=lr,
            max_epochs=spec.max_epochs,
            plateau_patience=spec.plateau_patience,
            plateau_min_delta=spec.plateau_min_delta,
            extent=extent,
            seed=seed,
            internal_val_fraction=spec.internal_val_fraction,
            preprocess=spec.preprocess,
        )
        cells.append(GridCell(default_model_spec(arch, spec.init), cfg))
    return sorted(cells, key=lambda c: grid_order_key(*c))


def run_dir_for(results_root: Path, run_id: str) -> Path:
    return Path(results_root) / "runs" / run_id


def write_cell_record(run_dir: Path, record: CellRecord) -> Path:
    run_dir.mkdir(parents=True, exist_ok=True)
    path = run_dir / "cell.json"
    path.write_text(record.model_dump_json(indent=2), encoding="utf-8")
    return path


def load_cell_record(run_dir: Path) -> Optional[CellRecord]:
    path = Path(run_dir) / "cell.json"
    if not path.is_file():
        return None
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
        model = CellFailure if payload.get("status") == "failed" else CellResult
        return model.model_validate(payload)
    except (json.JSONDecodeError, ValidationError) as exc:
        logger.warning("Ignoring unreadable cell record %s: %s", path, exc)
        return None


def evaluate_split(model, data: ScanTensors, run_id: str, split: str, cfg: TrainConfig, device: str) -> EvalReport:
    _, _, probs = evaluate_model(model, data, cfg.batch_size, device)
    return evaluate_predictions(
        run_id,
        split,
        data.labels.tolist(),
        probs,
        masked=cfg.preprocess.apply_mask,
        cropped=cfg.preprocess.apply_crop,
    )


def predict_split(model, data: ScanTensors, cfg: TrainConfig, path: Path, device: str) -> list[int]:
    _, _, probs = evaluate_model(model, data, cfg.batch_size, device)
    preds = probs.argmax(axis=1).tolist()
    emit_predictions(list(zip(data.scan_ids, preds)), path)
    return predict_distribution(preds)


def _fit_and_reload(
    spec: ModelSpec,
    cfg: TrainConfig,
    pool: ScanTensors,
    scans: Sequence[LabeledScan],
    run_dir: Path,
    run_id: str,
    device: str,
    loader_workers: int,
):
    train_scans, val_scans = split_internal(scans, cfg.internal_val_fraction, cfg.seed)
    train_t = pool.subset([s.scan_id for s in train_scans])
    val_t = pool.subset([s.scan_id for s in val_scans])
    model = apply_freeze_policy(build_model(spec, seed=cfg.seed), cfg.extent)
    result = train(model, cfg, train_t, val_t, run_dir, run_id, device, loader_workers)
    best, _ = reload_checkpoint(Path(result.checkpoint_path), expected_spec=spec, device=device)
    return result, best, val_t


def run_cell(
    cell: GridCell,
    data: GridData,
    results_root: Path,
    cache: Optional[TensorCache] = None,
    device: str = "cpu",
    loader_workers: int = 0,
) -> CellResult:
    """split -> preprocess -> build -> freeze -> train -> reload best -> evaluate."""
    spec, cfg = cell
    run_id = cell.run_id
    run_dir = run_dir_for(results_root, run_id)
    cache = cache if cache is not None else TensorCache()

    pool = cache.get("train", data.train, spec, cfg.preprocess)
    result, best, val_t = _fit_and_reload(spec, cfg, pool, data.train, run_dir, run_id, device, loader_workers)
    eval_dir = run_dir / "eval"
    internal = evaluate_split(best, val_t, run_id, "internal_val", cfg, device)

    unseen = None
    if data.unseen_val:
        unseen_t = cache.get("unseen_val", data.unseen_val, spec, cfg.preprocess)
        if len(unseen_t):
            unseen = evaluate_split(best, unseen_t, run_id, "unseen_val", cfg, device)

    test_distribution = None
    if data.test:
        test_t = cache.get("test", data.test, spec, cfg.preprocess)
        if len(test_t):
            test_distribution = predict_split(best, test_t, cfg, eval_dir / "predictions.csv", device)

    layout = "table1" if cfg.extent == "last_layer_only" else "table2"
    row = TableRow(spec.arch, cfg.settings_string(), internal, unseen, test_distribution)
    write_report([row], layout, eval_dir, stem="report")

    record = CellResult(
        run_id=run_id,
        fingerprint=cell.fingerprint,
        manifest_hash=data.manifest_hash,
        model_spec=spec,
        train_config=cfg,
        train_result=result,
        internal_val=internal,
        unseen_val=unseen,
        test_distribution=test_distribution,
    )
    write_cell_record(run_dir, record)
    return record


def _execute_cell(
    cell: GridCell,
    data: GridData,
    results_root: Path,
    device: str,
    loader_workers: int,
    deterministic: bool,
    cache: Optional[TensorCache] = None,
) -> CellRecord:
    set_deterministic(deterministic)
    try:
        return run_cell(cell, data, results_root, cache, device, loader_workers)
    except Exception as exc:  # noqa: BLE001
        logger.exception("Cell %s failed", cell.run_id)
        failure = CellFailure(
            run_id=cell.run_id,
            fingerprint=cell.fingerprint,
            manifest_hash=data.manifest_hash,
            model_spec=cell.model_spec,
            train_config=cell.train_config,
            reason=f"{type(exc).__name__}: {exc}",
        )
        write_cell_record(run_dir_for(results_root, cell.run_id), failure)
        return failure


def _is_done(record: Optional[CellRecord], cell: GridCell, manifest_hash: str, retry_failed: bool) -> bool:
    if record is None or record.fingerprint != cell.fingerprint or record.manifest_hash != manifest_hash:
        return False
    return record.status == "completed" or not retry_failed


def run_grid(
    cells: Sequence[GridCell],
    data: GridData,
    results_root: Path,
    resume: bool = True,
    max_workers: int = 1,
    retry_failed: bool = False,
    device: str = "cpu",
    loader_workers: int = 0,
    deterministic: bool = True,
) -> GridResult:
    outcomes: dict[str, CellRecord] = {}
    pending: list[GridCell] = []
    for cell in cells:
        record = load_cell_record(run_dir_for(results_root, cell.run_id)) if resume else None
        if _is_done(record, cell, data.manifest_hash, retry_failed):
            logger.info("Skipping %s (%s on disk)", cell.run_id, record.status)
            outcomes[cell.fingerprint] = record.model_copy(update={"executed": False})
        else:
            pending.append(cell)

    logger.info("Grid: %d cells, %d to run, %d worker(s)", len(cells), len(pending), max_workers)
    if max_workers > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=max_workers) as pool:
            futures = {
                cell.fingerprint: pool.submit(
                    _execute_cell, cell, data, results_root, device, loader_workers, deterministic
                )
                for cell in pending
            }
            for fp, future in futures.items():
                outcomes[fp] = future.result()
    else:
        cache = TensorCache()
        for i, cell in enumerate(pending, start=1):
            logger.info("[%d/%d] %s", i, len(pending), cell.run_id)
            outcomes[cell.fingerprint] = _execute_cell(
                cell, data, results_root, device, loader_workers, deterministic, cache
            )

    result = GridResult()
    for cell in cells:
        record = outcomes[cell.fingerprint]
        (result.cells if record.status == "completed" else result.failures).append(record)
    return result


def load_grid_result(results_root: Path) -> GridResult:
    runs_dir = Path(results_root) / "runs"
    records = []
    if runs_dir.is_dir():
        records = [r for r in map(load_cell_record, sorted(runs_dir.iterdir())) if r is not None]
    records.sort(key=lambda r: grid_order_key(r.model_spec, r.train_config))
    result = GridResult()
    for record in records:
        record = record.model_copy(update={"executed": False})
        (result.cells if record.status == "completed" else result.failures).append(record)
    return result


def table_row(cell: CellResult) -> TableRow:
    return TableRow(
        model=cell.model_spec.arch,
        settings=cell.train_config.settings_string(),
        val=cell.internal_val,
        unseen=cell.unseen_val,
        test_distribution=cell.test_distribution,
    )


def _selection_score(cell: CellResult) -> float:
    report = cell.unseen_val or cell.internal_val
    return report.f1_macro


def select_best_cell(result: GridResult) -> CellResult:
    """Highest unseen-val F1-macro; the earliest cell in grid order wins ties."""
    if not result.cells:
        raise ValueError("No completed cells to choose from")
    ordered = sorted(result.cells, key=lambda c: grid_order_key(c.model_spec, c.train_config))
    if any(c.unseen_val is None for c in ordered):
        logger.warning("Some cells lack an unseen_val report; their internal_val F1 is used instead")
    best = ordered[0]
    for cell in ordered[1:]:
        if _selection_score(cell) > _selection_score(best):
            best = cell
    return best


def summary_frame(result: GridResult) -> pd.DataFrame:
    records = []
    for record in sorted(
        [*result.cells, *result.failures], key=lambda r: grid_order_key(r.model_spec, r.train_config)
    ):
        cfg = record.train_config
        row = {
            "run_id": record.run_id,
            "status": record.status,
            "arch": record.model_spec.arch,
            "extent": cfg.extent,
            "batch_size": cfg.batch_size,
            "optimizer": cfg.optimizer,
            "lr": cfg.lr,
            "seed": cfg.seed,
            "settings": cfg.settings_string(),
            "best_epoch": None,
            "best_val_accuracy": None,
            "stopped_early": None,
            "f1_macro_val": None,
            "f1_macro_unseen": None,
            "auroc_val": None,
            "auroc_unseen": None,
            "pred_class_distribution": None,
            "reason": None,
            "fingerprint": record.fingerprint,
            "manifest_hash": record.manifest_hash,
        }
        if isinstance(record, CellResult):
            row.update(
                best_epoch=record.train_result.best_epoch,
                best_val_accuracy=record.train_result.best_val_accuracy,
                stopped_early=record.train_result.stopped_early,
                f1_macro_val=record.internal_val.f1_macro,
                auroc_val=record.internal_val.auroc_macro,
                f1_macro_unseen=record.unseen_val.f1_macro if record.unseen_val else None,
                auroc_unseen=record.unseen_val.auroc_macro if record.unseen_val else None,
                pred_class_distribution=(
                    ", ".join(map(str, record.test_distribution)) if record.test_distribution else None
                ),
            )
        else:
            row["reason"] = record.reason
        records.append(row)
    return pd.DataFrame(records)


def write_summary(result: GridResult, results_root: Path) -> dict[str, Path]:
    out_dir = Path(results_root) / "results"
    out_dir.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}
    summary_path = out_dir / "summary.csv"
    summary_frame(result).to_csv(summary_path, index=False, lineterminator="\n")
    written["summary"] = summary_path

    ordered = sorted(result.cells, key=lambda c: grid_order_key(c.model_spec, c.train_config))
    for extent, layout in (("last_layer_only", "table1"), ("all_layers", "table2")):
        rows = [table_row(c) for c in ordered if c.train_config.extent == extent]
        if rows:
            txt, _ = write_report(rows, layout, out_dir, stem=f"table_{extent}")
            written[f"table_{extent}"] = txt

    if ordered:
        ranked = sorted(ordered, key=_selection_score, reverse=True)[:TABLE_BEST_ROWS]
        txt, _ = write_report([table_row(c) for c in ranked], "table3", out_dir, stem="table_best")
        written["table_best"] = txt
    logger.info("Wrote grid summary for %d cells to %s", len(result.cells) + len(result.failures), out_dir)
    return written


@dataclass(frozen=True)
class FinalRun:
    source_run_id: str
    train_result: TrainResult
    internal_val: EvalReport
    union_size: int
    predictions_path: Path
    test_distribution: list[int]


def retrain_final(
    best_cell: CellResult,
    data: GridData,
    results_root: Path,
    device: str = "cpu",
    loader_workers: int = 0,
) -> FinalRun:
    """Retrain the chosen configuration on train + unseen_val and predict the test split."""
    if not data.test:
        raise ConfigError(f"No test scans under {data.data_root}; nothing to predict")
    spec, cfg = best_cell.model_spec, best_cell.train_config
    run_id = f"final-{best_cell.run_id}"
    run_dir = run_dir_for(results_root, run_id)
    union = sorted([*data.train, *data.unseen_val], key=lambda s: s.scan_id)
    logger.info("Retraining %s on %d scans (train + unseen_val)", best_cell.run_id, len(union))

    cache = TensorCache()
    pool = cache.get("train+unseen_val", union, spec, cfg.preprocess)
    result, best, val_t = _fit_and_reload(spec, cfg, pool, union, run_dir, run_id, device, loader_workers)
    internal = evaluate_split(best, val_t, run_id, "internal_val", cfg, device)

    test_t = cache.get("test", data.test, spec, cfg.preprocess)
    predictions_path = run_dir / "eval" / "predictions.csv"
    distribution = predict_split(best, test_t, cfg, predictions_path, device)
    return FinalRun(
        source_run_id=best_cell.run_id,
        train_result=result,
        internal_val=internal,
        union_size=len(union),
        predictions_path=predictions_path,
        test_distribution=distribution,
    )
