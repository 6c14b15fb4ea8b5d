"""Command-line entry point: manifest, preview, train, grid, eval, retrain-final, synth."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

from logzero import logger

from .core.config import Settings, get_settings
from .core.errors import ConfigError, HarnessError
from .core.logging import configure_logging
from .core.repro import code_version, fingerprint, set_deterministic
from .schemas.grid import GridSpec, RunManifestRecord
from .schemas.labels import SPLITS
from .schemas.model import ARCHITECTURES, normalize_extent
from .schemas.synth import SynthSpec
from .schemas.train import PreprocessConfig, TrainConfig, normalize_optimizer
from .services.datasets import load_grid_data, prepare_tensors
from .services.evaluator import LAYOUTS, TableRow, emit_predictions, emit_report, predict_distribution, write_report
from .services.gridrunner import (
    GridCell,
    evaluate_split,
    expand_grid,
    load_cell_record,
    load_grid_result,
    retrain_final,
    run_cell,
    run_dir_for,
    run_grid,
    select_best_cell,
    table_row,
    write_summary,
)
from .services.ingest import (
    build_dataset_manifest,
    discover_dataset,
    manifest_hash,
    read_manifest,
    verify_manifest,
    write_manifest,
)
from .services.preprocess import assemble_from_config, dump_triptych
from .services.synthkit import generate_dataset
from .services.trainer import evaluate_model, reload_checkpoint
from .zoo.models import default_model_spec

RUN_RECORDS_FILE = "run_records.jsonl"


@dataclass
class CommandContext:
    results_root: Path
    device: str
    loader_workers: int
    grid_workers: int
    deterministic: bool
    manifest_hash: Optional[str] = None
    run_dir: Optional[Path] = None


def _load_json_config(path: Optional[str]) -> dict[str, Any]:
    if not path:
        return {}
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"Cannot read config file {path}: {exc}") from exc
    if not isinstance(payload, dict):
        raise ConfigError(f"Config file {path} must hold a JSON object")
    return payload


def _overlay(base: dict[str, Any], flags: dict[str, Any]) -> dict[str, Any]:
    """Flags win over file values, which win over model defaults."""
    merged = dict(base)
    merged.update({k: v for k, v in flags.items() if v is not None})
    return merged


def _preprocess_flags(args: argparse.Namespace) -> dict[str, Any]:
    return {
        "slice_fraction": args.slice_fraction,
        "apply_mask": False if args.no_mask else None,
        "apply_crop": False if args.no_crop else None,
        "crop_fraction": args.crop_fraction,
    }


def _echo(payload: dict[str, Any]) -> None:
    print(json.dumps(payload, indent=2, default=str))


# -- subcommands -----------------------------------------------------------------


def cmd_manifest(args: argparse.Namespace, ctx: CommandContext) -> int:
    root = Path(args.root)
    if args.verify:
        manifest = read_manifest(Path(args.verify))
        ctx.manifest_hash = manifest_hash(manifest)
        discrepancies = verify_manifest(manifest, root)
        for d in discrepancies:
            print(f"{d.split}/{d.scan_id}: expected {d.expected}, found {d.actual}")
        print(f"{len(discrepancies)} discrepancies")
        return 1 if discrepancies else 0

    manifest = build_dataset_manifest(discover_dataset(root))
    ctx.manifest_hash = manifest_hash(manifest)
    out = write_manifest(manifest, Path(args.out) if args.out else root / "manifest.csv")
    print(f"Wrote manifest with {len(manifest.rows)} scans to {out}")
    return 0


def cmd_preview(args: argparse.Namespace, ctx: CommandContext) -> int:
    dataset = discover_dataset(Path(args.data))
    volumes = {v.scan_id: v for v in dataset.get(args.split, [])}
    if args.scan_id not in volumes:
        raise ConfigError(f"Scan '{args.scan_id}' not found in split '{args.split}'")
    preprocess = PreprocessConfig(**_overlay({}, _preprocess_flags(args)))
    item = assemble_from_config(volumes[args.scan_id], default_model_spec(args.arch, "scratch"), preprocess)
    out_dir = Path(args.out) if args.out else ctx.results_root / "previews"
    path = dump_triptych(item, out_dir)
    print(f"Wrote {path} (z={item.z}, channels={list(item.channel_indices)})")
    return 0


def _train_config(args: argparse.Namespace) -> tuple[dict[str, Any], TrainConfig]:
    file_cfg = _load_json_config(args.config)
    model_keys = {"arch": file_cfg.pop("arch", None), "init": file_cfg.pop("init", None)}
    model_keys = _overlay(model_keys, {"arch": args.arch, "init": args.init})
    flags = {
        "batch_size": args.bs,
        "optimizer": args.opt,
        "lr": args.lr,
        "momentum": args.momentum,
        "max_epochs": args.max_epochs,
        "plateau_patience": args.patience,
        "plateau_min_delta": args.min_delta,
        "extent": args.extent,
        "seed": args.seed,
        "internal_val_fraction": args.val_fraction,
    }
    merged = _overlay(file_cfg, flags)
    merged["preprocess"] = _overlay(file_cfg.get("preprocess", {}), _preprocess_flags(args))
    if not model_keys.get("arch"):
        raise ConfigError("train needs --arch (or 'arch' in the config file)")
    return model_keys, TrainConfig(**merged)


def cmd_train(args: argparse.Namespace, ctx: CommandContext) -> int:
    model_keys, cfg = _train_config(args)
    spec = default_model_spec(model_keys["arch"], model_keys.get("init") or "pretrained")
    data = load_grid_data(Path(args.data), Path(args.labels) if args.labels else None)
    ctx.manifest_hash = data.manifest_hash
    cell = GridCell(spec, cfg)
    record = run_cell(cell, data, ctx.results_root, device=ctx.device, loader_workers=ctx.loader_workers)
    ctx.run_dir = run_dir_for(ctx.results_root, cell.run_id)
    _echo(
        {
            "run_id": record.run_id,
            "settings": cfg.settings_string(),
            "best_epoch": record.train_result.best_epoch,
            "best_val_accuracy": record.train_result.best_val_accuracy,
            "stopped_early": record.train_result.stopped_early,
            "f1_macro_internal_val": record.internal_val.f1_macro,
            "f1_macro_unseen_val": record.unseen_val.f1_macro if record.unseen_val else None,
            "run_dir": ctx.run_dir,
        }
    )
    return 0


def _grid_spec(args: argparse.Namespace) -> GridSpec:
    overrides = {"init": args.init, "max_epochs": args.max_epochs}
    if args.grid:
        return GridSpec(**_overlay(_load_json_config(args.grid), overrides))
    return GridSpec.full_grid(**{k: v for k, v in overrides.items() if v is not None})


def cmd_grid(args: argparse.Namespace, ctx: CommandContext) -> int:
    spec = _grid_spec(args)
    cells = expand_grid(spec)
    data = load_grid_data(Path(args.data), Path(args.labels) if args.labels else None)
    ctx.manifest_hash = data.manifest_hash
    grid_dir = ctx.results_root / "results"
    grid_dir.mkdir(parents=True, exist_ok=True)
    (grid_dir / "grid.json").write_text(spec.model_dump_json(indent=2), encoding="utf-8")

    result = run_grid(
        cells,
        data,
        ctx.results_root,
        resume=not args.no_resume,
        max_workers=args.workers or ctx.grid_workers,
        retry_failed=args.retry_failed,
        device=ctx.device,
        loader_workers=ctx.loader_workers,
        deterministic=ctx.deterministic,
    )
    written = write_summary(result, ctx.results_root)
    _echo(
        {
            "cells": len(cells),
            "executed": result.executed_count,
            "completed": len(result.cells),
            "failed": [f.run_id for f in result.failures],
            "summary": written["summary"],
        }
    )
    return 0


def _layout_rows(layout: str, ctx: CommandContext) -> list[TableRow]:
    cells = load_grid_result(ctx.results_root).cells
    if layout == "table1":
        cells = [c for c in cells if c.train_config.extent == "last_layer_only"]
    elif layout == "table2":
        cells = [c for c in cells if c.train_config.extent == "all_layers"]
    if not cells:
        raise ConfigError(f"No completed cells for {layout} under {ctx.results_root / 'runs'}")
    return [table_row(c) for c in cells]


def cmd_eval(args: argparse.Namespace, ctx: CommandContext) -> int:
    if args.layout:
        print(emit_report(_layout_rows(args.layout, ctx), args.layout), end="")
        return 0
    if not (args.checkpoint and args.data):
        raise ConfigError("eval needs --layout, or --checkpoint together with --data")

    checkpoint = Path(args.checkpoint)
    model, meta = reload_checkpoint(checkpoint, device=ctx.device)
    spec, cfg = meta.model_spec, meta.train_config
    data = load_grid_data(Path(args.data), Path(args.labels) if args.labels else None)
    ctx.manifest_hash = data.manifest_hash
    out_dir = Path(args.out) if args.out else checkpoint.parent / "eval"
    run_id = checkpoint.parent.name

    if args.split == "test":
        tensors = prepare_tensors(data.test, spec, cfg.preprocess)
        _, _, probs = evaluate_model(model, tensors, cfg.batch_size, ctx.device)
        preds = probs.argmax(axis=1).tolist()
        path = emit_predictions(list(zip(tensors.scan_ids, preds)), out_dir / "test_predictions.csv")
        _echo({"predictions": path, "rows": len(preds), "distribution": predict_distribution(preds)})
        return 0

    scans = data.unseen_val if args.split == "unseen_val" else data.train
    tensors = prepare_tensors(scans, spec, cfg.preprocess)
    if not len(tensors):
        raise ConfigError(f"No scans to evaluate in split '{args.split}'")
    report = evaluate_split(model, tensors, run_id, args.split, cfg, ctx.device)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{args.split}.json").write_text(report.model_dump_json(indent=2), encoding="utf-8")
    layout = "table1" if cfg.extent == "last_layer_only" else "table2"
    unseen = report if args.split == "unseen_val" else None
    val = None if unseen else report
    write_report([TableRow(spec.arch, cfg.settings_string(), val, unseen)], layout, out_dir, stem=f"{args.split}_report")
    _echo({"split": args.split, "f1_macro": report.f1_macro, "auroc_macro": report.auroc_macro, "n": report.n_evaluated})
    return 0


def cmd_retrain_final(args: argparse.Namespace, ctx: CommandContext) -> int:
    if args.run_id:
        best = load_cell_record(run_dir_for(ctx.results_root, args.run_id))
        if best is None or best.status != "completed":
            raise ConfigError(f"No completed grid cell '{args.run_id}' under {ctx.results_root / 'runs'}")
    else:
        best = select_best_cell(load_grid_result(ctx.results_root))
    data = load_grid_data(Path(args.data), Path(args.labels) if args.labels else None)
    ctx.manifest_hash = data.manifest_hash
    final = retrain_final(best, data, ctx.results_root, device=ctx.device, loader_workers=ctx.loader_workers)
    ctx.run_dir = final.predictions_path.parent.parent
    _echo(
        {
            "source_run_id": final.source_run_id,
            "union_size": final.union_size,
            "best_epoch": final.train_result.best_epoch,
            "predictions": final.predictions_path,
            "test_distribution": final.test_distribution,
        }
    )
    return 0


def _synth_spec(args: argparse.Namespace) -> SynthSpec:
    base = _load_json_config(args.config)
    flags = {
        "seed": args.seed,
        "n_scans_per_class": args.n_per_class,
        "image_side": args.side,
        "noise_level": args.noise,
        "slices_per_scan": (args.slices, args.slices) if args.slices else None,
    }
    if args.tiny:
        return SynthSpec.tiny(**_overlay(base, flags))
    if args.tiny_plus:
        return SynthSpec.tiny_plus(**_overlay(base, flags))
    return SynthSpec(**_overlay(base, flags))


def cmd_synth(args: argparse.Namespace, ctx: CommandContext) -> int:
    spec = _synth_spec(args)
    dataset = generate_dataset(spec, Path(args.out))
    manifest = build_dataset_manifest(discover_dataset(dataset.root))
    ctx.manifest_hash = manifest_hash(manifest)
    write_manifest(manifest, dataset.root / "manifest.csv")
    _echo({split: dataset.count(split) for split in ("train", "unseen_val", "test")} | {"labels": dataset.labels_path})
    return 0


# -- parser ----------------------------------------------------------------------


def _add_preprocess_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--no-mask", action="store_true", help="Skip lung masking")
    p.add_argument("--no-crop", action="store_true", help="Skip the centered crop")
    p.add_argument("--slice-fraction", type=float, help="Relative depth f of the center slice (default 0.25)")
    p.add_argument("--crop-fraction", type=float, help="Kept side fraction for the centered crop (default 0.9)")


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="Dataset root holding train/, unseen_val/ and test/ folders")
    p.add_argument("--labels", help="Label CSV (scan_id,label); defaults to <data>/labels.csv")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--results-root", help="Parent of runs/ and results/ (env GGO_RESULTS_ROOT)")
    common.add_argument("--device", help="torch device, e.g. cpu or cuda (env GGO_DEVICE)")
    common.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR (env GGO_LOG_LEVEL)")

    parser = argparse.ArgumentParser(
        prog="ggosev", description="GGO severity classification harness for CT slice folders"
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("manifest", parents=[common], help="Write or verify the per-scan file-count manifest")
    p.add_argument("--root", required=True, help="Dataset root with split folders")
    p.add_argument("--out", help="Manifest CSV to write (default <root>/manifest.csv)")
    p.add_argument("--verify", metavar="MANIFEST", help="Compare an existing manifest against --root instead")
    p.set_defaults(handler=cmd_manifest)

    p = sub.add_parser("preview", parents=[common], help="Render the 3-channel input of one scan as a PNG")
    p.add_argument("--data", required=True, help="Dataset root with split folders")
    p.add_argument("--scan-id", required=True, help="Scan folder name")
    p.add_argument("--split", default="train", choices=SPLITS, help="Split holding the scan")
    p.add_argument("--arch", default="ResNet152", choices=ARCHITECTURES, help="Architecture deciding input side")
    p.add_argument("--out", help="Output directory (default <results-root>/previews)")
    _add_preprocess_flags(p)
    p.set_defaults(handler=cmd_preview)

    p = sub.add_parser("train", parents=[common], help="Fine-tune one architecture under one configuration")
    _add_data_flags(p)
    p.add_argument("--config", help="JSON file with TrainConfig fields plus optional arch/init")
    p.add_argument("--arch", choices=ARCHITECTURES, help="Architecture to fine-tune")
    p.add_argument("--init", choices=["pretrained", "scratch"], help="Weight initialization (default pretrained)")
    p.add_argument("--extent", type=normalize_extent, help="Fine-tuning extent: all|all_layers|last|last_layer_only")
    p.add_argument("--bs", type=int, help="Batch size (default 16)")
    p.add_argument("--opt", type=normalize_optimizer, help="Optimizer: adam or sgd (default adam)")
    p.add_argument("--lr", type=float, help="Learning rate (default 0.001)")
    p.add_argument("--momentum", type=float, help="SGD momentum (default 0.9)")
    p.add_argument("--max-epochs", type=int, help="Epoch cap (default 500)")
    p.add_argument("--patience", type=int, help="Plateau patience in epochs (default 10)")
    p.add_argument("--min-delta", type=float, help="Minimum val-loss improvement (default 1e-4)")
    p.add_argument("--val-fraction", type=float, help="Internal validation fraction (default 0.2)")
    p.add_argument("--seed", type=int, help="Seed for split, init and batch order (default 0)")
    _add_preprocess_flags(p)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("grid", parents=[common], help="Run the experiment grid with resume")
    _add_data_flags(p)
    p.add_argument("--grid", help="GridSpec JSON (default: the full 144-cell grid)")
    p.add_argument("--init", choices=["pretrained", "scratch"], help="Override the grid's weight initialization")
    p.add_argument("--max-epochs", type=int, help="Override the grid's epoch cap")
    p.add_argument("--workers", type=int, help="Concurrent cells (env GGO_GRID_WORKERS)")
    p.add_argument("--no-resume", action="store_true", help="Re-run cells already recorded on disk")
    p.add_argument("--retry-failed", action="store_true", help="Re-run cells recorded as failed")
    p.set_defaults(handler=cmd_grid)

    p = sub.add_parser("eval", parents=[common], help="Evaluate a checkpoint or render a results table")
    p.add_argument("--layout", choices=LAYOUTS, help="Render this table from grid results and exit")
    p.add_argument("--checkpoint", help="best.ckpt to evaluate")
    p.add_argument("--data", help="Dataset root (with --checkpoint)")
    p.add_argument("--labels", help="Label CSV; defaults to <data>/labels.csv")
    p.add_argument("--split", default="unseen_val", choices=["train", "unseen_val", "test"], help="Split to evaluate")
    p.add_argument("--out", help="Output directory (default <run_dir>/eval)")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("retrain-final", parents=[common], help="Retrain the best cell on train + unseen_val")
    _add_data_flags(p)
    p.add_argument("--run-id", help="Grid cell to retrain (default: best unseen-val F1-macro)")
    p.set_defaults(handler=cmd_retrain_final)

    p = sub.add_parser("synth", parents=[common], help="Generate a synthetic dataset")
    p.add_argument("--out", required=True, help="Output dataset root")
    preset = p.add_mutually_exclusive_group()
    preset.add_argument("--tiny", action="store_true", help="8 scans per class, 12 slices, 128 px")
    preset.add_argument("--tiny-plus", action="store_true", help="16 scans per class, 12 slices, 128 px")
    p.add_argument("--config", help="SynthSpec JSON")
    p.add_argument("--seed", type=int, help="Generator seed (default 0)")
    p.add_argument("--n-per-class", type=int, help="Training scans per class")
    p.add_argument("--slices", type=int, help="Slices per scan")
    p.add_argument("--side", type=int, help="Image side in pixels (>= 64)")
    p.add_argument("--noise", type=float, help="Gaussian noise level in [0, 1]")
    p.set_defaults(handler=cmd_synth)
    return parser


def _context(args: argparse.Namespace, settings: Settings) -> CommandContext:
    return CommandContext(
        results_root=Path(args.results_root) if args.results_root else settings.results_root,
        device=args.device or settings.resolve_device(),
        loader_workers=settings.loader_workers,
        grid_workers=settings.grid_workers,
        deterministic=settings.deterministic,
    )


def _invocation_fingerprint(args: argparse.Namespace) -> str:
    return fingerprint({k: str(v) for k, v in sorted(vars(args).items()) if k != "handler"})


def write_run_record(ctx: CommandContext, record: RunManifestRecord) -> None:
    line = record.model_dump_json()
    try:
        ctx.results_root.mkdir(parents=True, exist_ok=True)
        with (ctx.results_root / RUN_RECORDS_FILE).open("a", encoding="utf-8") as fh:
            fh.write(line + "\n")
        if ctx.run_dir is not None and ctx.run_dir.is_dir():
            (ctx.run_dir / "run.json").write_text(record.model_dump_json(indent=2), encoding="utf-8")
    except OSError as exc:
        logger.warning("Could not write run record: %s", exc)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    settings = get_settings()
    configure_logging(args.log_level or settings.log_level)
    ctx = _context(args, settings)
    set_deterministic(ctx.deterministic)

    started = datetime.now(timezone.utc)
    fp = _invocation_fingerprint(args)
    handler: Callable[[argparse.Namespace, CommandContext], int] = args.handler
    try:
        code = handler(args, ctx)
    except (HarnessError, ValueError, KeyError, OSError) as exc:
        message = exc.args[0] if isinstance(exc, KeyError) and exc.args else str(exc)
        print(json.dumps({"error": type(exc).__name__, "message": str(message).replace("\n", " ")}), file=sys.stderr)
        code = 1

    record = RunManifestRecord(
        run_id=f"{args.command}-{started.strftime('%Y%m%dT%H%M%S%fZ')}-{fp[:8]}",
        command=args.command,
        fingerprint=fp,
        manifest_hash=ctx.manifest_hash,
        code_version=code_version(),
        started_at=started,
        finished_at=datetime.now(timezone.utc),
        exit_code=code,
    )
    write_run_record(ctx, record)
    return code


if __name__ == "__main__":
    raise SystemExit(main())
