#!/usr/bin/env python3

import argparse
import dataclasses
import importlib
import inspect
import json
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from base_analyzer import AnalysisResult, BaseAnalyzer
from base_checker import BaseChecker, CheckResult
from dataset import (
    ArrayDataset,
    DatasetManifest,
    SplitSpec,
    find_image,
    load_image,
    parse_metadata,
    patient_split,
    read_manifest_csv,
    resize_image,
    save_image_array,
    subsample,
    write_manifest_csv,
)
from errors import ConfigError, DomainError, MissingDataError
from losses import write_weights_csv
from metrics import auc, roc_curve
from models import PRESETS, preset_config, build_model
from pca_compress import compress, fit_channel_pca, save_compressed
from run_manifest import TOOL_VERSION, RunManifest
from trainer import (
    DEFAULT_LOSS,
    AdamState,
    TrainConfig,
    evaluate,
    load_checkpoint,
    predict,
    save_checkpoint,
    task_targets,
    train,
    train_class_weights,
)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_DOMAIN = 4

ROOT = Path(__file__).parent
CHECKER_CONFIG = ROOT / "config.json"


def build_parser():
    parser = argparse.ArgumentParser(
        description="Thorax CNN Toolkit - chest X-ray classification from scratch",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Pipeline:
  1. ingest METADATA IMAGES OUT          manifests, resized arrays, demographics
  2. pca IMAGE_OR_DIR --threshold 0.99   variance curves, compressed containers
  3. train OUT --task binary --model baseline --epochs 5
  4. eval CHECKPOINT OUT/test.csv --roc roc.svg
  gradcheck                              finite-difference check of every layer
        """,
    )
    parser.add_argument(
        "--version", action="version", version=f"Thorax CNN Toolkit {TOOL_VERSION}"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers = {}

    p = sub.add_parser("ingest", help="Parse metadata, split by patient, resize images")
    p.add_argument("metadata", help="Metadata CSV (wide or long format)")
    p.add_argument("image_dir", help="Directory holding the NPY/PGM images")
    p.add_argument("out_dir", help="Output directory for manifests and arrays")
    p.add_argument("--subset", type=int, metavar="N", help="Seeded uniform subset of N images")
    p.add_argument("--seed", type=int, default=0, help="Seed for subset and split (default: 0)")
    p.add_argument("--size", type=int, default=256, help="Resize target edge (default: 256)")
    p.add_argument(
        "--fractions", type=float, nargs=3, default=[0.7, 0.15, 0.15],
        metavar=("TRAIN", "VAL", "TEST"), help="Patient split fractions (default: 0.7 0.15 0.15)",
    )
    subparsers["ingest"] = p

    p = sub.add_parser("pca", help="Per-channel PCA variance analysis and compression")
    p.add_argument("path", help="Image file or directory of images")
    p.add_argument("--components", type=int, metavar="K", help="Compress with K components")
    p.add_argument("--threshold", type=float, metavar="T", help="Report k reaching variance T")
    p.add_argument("--out-dir", default="pca_out", help="Output directory (default: pca_out)")
    subparsers["pca"] = p

    p = sub.add_parser("train", help="Train a model on ingested manifests")
    p.add_argument("manifest_dir", help="Directory written by ingest")
    p.add_argument("--task", choices=["binary", "multilabel"], default="binary")
    p.add_argument("--model", choices=list(PRESETS), default="baseline")
    p.add_argument("--loss", choices=["eq1-softmax", "weighted-bce"], help="Default depends on task")
    p.add_argument("--weighted", action="store_true", help="Inverse-frequency class weights")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--learning-rate", type=float, default=0.001)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--resume", metavar="CHECKPOINT", help="Continue from a checkpoint directory")
    p.add_argument("--out-dir", default="runs", help="Output directory (default: runs)")
    subparsers["train"] = p

    p = sub.add_parser("eval", help="Evaluate a checkpoint on a manifest")
    p.add_argument("checkpoint", help="Checkpoint directory")
    p.add_argument("manifest", help="Manifest CSV (e.g. OUT/test.csv)")
    p.add_argument("--images", help="Image array directory (default: <manifest dir>/images)")
    p.add_argument("--threshold", type=float, help="Decision threshold (default: checkpoint's)")
    p.add_argument("--roc", metavar="SVG", help="Write ROC SVG (and CSV) per label")
    p.add_argument("--out-dir", default="eval_out", help="Output directory (default: eval_out)")
    subparsers["eval"] = p

    p = sub.add_parser("gradcheck", help="Run every gradient checker plugin")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, help="Override grad_check_tolerance")
    p.add_argument("--eps", type=float, help="Override grad_check_eps")
    p.add_argument("--samples", type=int, help="Override grad_check_samples")
    subparsers["gradcheck"] = p

    for p in subparsers.values():
        p.add_argument("--config", metavar="FILE", help="JSON file of flag defaults")
    return parser, subparsers


def parse_args(argv: Optional[List[str]]):
    """Parse flags; a --config JSON file supplies defaults that explicit flags override"""
    parser, subparsers = build_parser()
    args = parser.parse_args(argv)
    if not args.config:
        return args

    path = Path(args.config)
    if not path.exists():
        raise MissingDataError(f"config file not found: {path}", [str(path)])
    try:
        values = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}")
    if not isinstance(values, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")

    subparser = subparsers[args.command]
    known = {a.dest for a in subparser._actions} - {"help", "config"}
    defaults = {}
    for key, value in values.items():
        dest = key.lstrip("-").replace("-", "_")
        if dest not in known:
            raise ConfigError(
                f"unknown key '{key}' in {path} for '{args.command}', expected one of {sorted(known)}"
            )
        defaults[dest] = value
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


# ---------------------------------------------------------------------------
# Plugins
# ---------------------------------------------------------------------------


def _plugin_classes(directory: str, base):
    plugin_dir = ROOT / directory
    classes = []
    for py_file in sorted(plugin_dir.glob("*.py")):
        if py_file.name.startswith("__"):
            continue
        module_name = f"{directory}.{py_file.stem}"
        try:
            module = importlib.import_module(module_name)
        except Exception as e:
            print(f"Warning: Failed to load {directory[:-1]} from {py_file.name}: {e}")
            continue
        for name, obj in inspect.getmembers(module, inspect.isclass):
            if issubclass(obj, base) and obj is not base and obj.__module__ == module.__name__:
                classes.append(obj)
    return classes


def load_all_checkers(config: dict) -> List[BaseChecker]:
    """Auto-load all checkers from checkers directory"""
    checkers = [cls(config) for cls in _plugin_classes("checkers", BaseChecker)]
    print(f"Loaded {len(checkers)} checkers")
    return checkers


def load_all_analyzers(output_dir) -> List[BaseAnalyzer]:
    """Auto-load all analyzers from analyzers directory"""
    return [cls(output_dir) for cls in _plugin_classes("analyzers", BaseAnalyzer)]


def run_analyzers(kind: str, data: dict, output_dir) -> List[AnalysisResult]:
    results = []
    for analyzer in load_all_analyzers(output_dir):
        if analyzer.handles == kind:
            results.append(analyzer.analyze(data))
    print_analysis_results(results)
    return results


def print_results(results: List[CheckResult]):
    """Simple results printing"""
    colors = {
        "PASS": "\033[92m",  # Green
        "FAIL": "\033[91m",  # Red
        "WARN": "\033[93m",  # Yellow
        "ERROR": "\033[91m",  # Red
        "RESET": "\033[0m",  # Reset
    }

    print("\n" + "=" * 60)
    print("GRADIENT CHECK RESULTS")
    print("=" * 60)

    passed = sum(1 for r in results if r.status == "PASS")
    failed = sum(1 for r in results if r.status == "FAIL")
    warnings = sum(1 for r in results if r.status == "WARN")
    errors = sum(1 for r in results if r.status == "ERROR")

    print(f"Total Checks: {len(results)}")
    print(f"Passed: {colors['PASS']}{passed}{colors['RESET']}")
    print(f"Failed: {colors['FAIL']}{failed}{colors['RESET']}")
    print(f"Warnings: {colors['WARN']}{warnings}{colors['RESET']}")
    print(f"Errors: {colors['ERROR']}{errors}{colors['RESET']}")
    print()

    for result in results:
        color = colors.get(result.status, colors["RESET"])
        print(f"[{color}{result.status}{colors['RESET']}] {result.checker_name}")
        print(f"    {result.message}")
        if result.details:
            for line in result.details.split("\n"):
                if line.strip():
                    print(f"      {line}")
        print()

    if failed == 0 and errors == 0:
        print(f"{colors['PASS']}✅ ALL CHECKS PASSED{colors['RESET']}")
    else:
        print(f"{colors['FAIL']}❌ GRADIENT CHECK FAILED - {failed + errors} critical issues{colors['RESET']}")


def print_analysis_results(results: List[AnalysisResult]):
    for result in results:
        print(f"\n📊 {result.analyzer_name}")
        print(f"   {result.summary}")
        if result.plot_path:
            print(f"   📈 Plot saved: {result.plot_path}")
        if result.details:
            for line in result.details.split("\n"):
                if line.strip():
                    print(f"   {line}")


def run_checks(checkers: List[BaseChecker], seed: int) -> List[CheckResult]:
    results = []
    for i, checker in enumerate(checkers, 1):
        print(f"[{i}/{len(checkers)}] Running {checker.name}...")
        try:
            result = checker.check(np.random.default_rng([seed, i]))
            results.append(result)
            marker = "✓" if result.status == "PASS" else "✗"
            print(f"  {marker} {result.status}")
        except Exception as e:
            results.append(CheckResult(checker.name, "ERROR", f"Checker crashed: {e}"))
            print(f"  ✗ ERROR: {e}")
    return results


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_ingest(args, manifest: RunManifest) -> int:
    metadata_path = Path(args.metadata)
    if not metadata_path.exists():
        raise MissingDataError(f"metadata file not found: {metadata_path}", [str(metadata_path)])
    if args.size < 1:
        raise ConfigError(f"--size must be positive, got {args.size}")
    spec = SplitSpec(tuple(args.fractions), args.seed)
    manifest.seeds["split"] = args.seed
    manifest.add_inputs([metadata_path, args.image_dir])

    print(f"Loading metadata from: {metadata_path}")
    records = parse_metadata(metadata_path.read_text(encoding="utf-8"))
    selected = subsample(records, args.subset, args.seed)
    print(f"Parsed {len(records)} images, using {len(selected)}")

    sources = {r.image_id: find_image(args.image_dir, r.image_id) for r in selected}
    missing = [image_id for image_id, path in sources.items() if path is None]
    if missing:
        raise MissingDataError(
            f"{len(missing)} images referenced by metadata are missing from {args.image_dir}: "
            f"{', '.join(missing)}",
            missing,
        )

    out_dir = Path(args.out_dir)
    image_out = out_dir / "images"
    for i, record in enumerate(selected, 1):
        image = resize_image(load_image(sources[record.image_id]), (args.size, args.size))
        save_image_array(image, image_out, record.image_id)
        if i % 100 == 0 or i == len(selected):
            print(f"  [{i}/{len(selected)}] resized to {args.size}x{args.size}")

    full = DatasetManifest.from_records(selected)
    for split, part in zip(("train", "val", "test"), patient_split(full, spec)):
        path = write_manifest_csv(part, split, out_dir / f"{split}.csv")
        print(f"  ✓ {split}: {part.total} images, {len(part.patients)} patients -> {path}")

    run_analyzers("demographics", {"manifest": full}, out_dir)
    return EXIT_OK


def _image_paths(path: Path) -> List[Path]:
    if path.is_dir():
        paths = sorted(p for p in path.iterdir() if p.suffix.lower() in (".npy", ".pgm"))
        if not paths:
            raise MissingDataError(f"no .npy or .pgm images in {path}", [str(path)])
        return paths
    if not path.exists():
        raise MissingDataError(f"image not found: {path}", [str(path)])
    return [path]


def cmd_pca(args, manifest: RunManifest) -> int:
    paths = _image_paths(Path(args.path))
    manifest.add_inputs(paths)
    if args.threshold is not None and not 0.0 < args.threshold <= 1.0:
        raise ConfigError(f"--threshold must be in (0, 1], got {args.threshold}")
    out_dir = Path(args.out_dir)

    for i, path in enumerate(paths, 1):
        print(f"[{i}/{len(paths)}] {path.name}")
        image = load_image(path)
        channels = [fit_channel_pca(channel) for channel in image]
        run_analyzers(
            "pca", {"name": path.stem, "channels": channels, "threshold": args.threshold}, out_dir
        )
        if args.components is not None:
            compressed = compress(image, args.components)
            target = save_compressed(compressed, out_dir / f"{path.stem}_k{args.components}")
            print(
                f"   compressed to {target}: {compressed.payload_size()} values "
                f"vs {compressed.raw_size()} raw"
            )
    return EXIT_OK


def _load_split(manifest_dir: Path, split: str, image_dir: Path) -> Optional[ArrayDataset]:
    path = manifest_dir / f"{split}.csv"
    if not path.exists():
        if split == "train":
            raise MissingDataError(f"training manifest not found: {path}", [str(path)])
        return None
    records = read_manifest_csv(path)
    if records.total == 0:
        return None
    return ArrayDataset.from_manifest(records, image_dir)


def cmd_train(args, manifest: RunManifest) -> int:
    manifest_dir = Path(args.manifest_dir)
    image_dir = manifest_dir / "images"
    out_dir = Path(args.out_dir)
    manifest.seeds["train"] = args.seed
    manifest.add_inputs([manifest_dir / "train.csv", manifest_dir / "val.csv", image_dir])

    config = TrainConfig(
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        epochs=args.epochs,
        seed=args.seed,
        loss_kind=args.loss or DEFAULT_LOSS[args.task],
        use_class_weights=args.weighted,
        threshold=args.threshold,
    )
    train_set = _load_split(manifest_dir, "train", image_dir)
    if train_set is None:
        raise ConfigError(f"training manifest in {manifest_dir} is empty")
    val_set = _load_split(manifest_dir, "val", image_dir)

    state = None
    if args.resume:
        manifest.add_inputs([args.resume])
        model, state, _ = load_checkpoint(args.resume)
        if model.config.task != args.task:
            raise ConfigError(
                f"checkpoint was trained for task '{model.config.task}', not '{args.task}'"
            )
        print(f"Resuming {model.config.name} after epoch {state.epoch}")
    else:
        model = build_model(preset_config(args.model, args.task, train_set.input_shape, args.seed))
    print(model.summary())

    weights = train_class_weights(args.task, train_set, args.weighted)
    write_weights_csv(weights, out_dir / "class_weights.csv")
    print(f"Training {config.epochs} epochs on {len(train_set)} images (loss {config.loss_kind})")
    if state is None:
        state = AdamState.for_params(model.parameters())
    model, history = train(model, train_set, val_set, config, state=state, verbose=True)
    checkpoint = save_checkpoint(model, state, config, out_dir / "checkpoint")
    print(f"  ✓ checkpoint saved: {checkpoint}")

    run_analyzers("history", {"history": history}, out_dir)
    return EXIT_OK


def cmd_eval(args, manifest: RunManifest) -> int:
    manifest_path = Path(args.manifest)
    model, _, config = load_checkpoint(args.checkpoint)
    if args.threshold is not None:
        config = dataclasses.replace(config, threshold=args.threshold)
    manifest.add_inputs([args.checkpoint, manifest_path])

    records = read_manifest_csv(manifest_path)
    image_dir = Path(args.images) if args.images else manifest_path.parent / "images"
    dataset = ArrayDataset.from_manifest(records, image_dir)
    task = model.config.task

    report = evaluate(model, dataset, config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.to_frame().to_csv(out_dir / "metrics.csv", index=False)
    report.summary_frame().to_csv(out_dir / "metrics_summary.csv", index=False)
    (out_dir / "metrics.txt").write_text(report.to_text())
    print(report.to_text())

    if args.roc:
        probs = predict(model, dataset, config.batch_size)
        scored, truth, names = task_targets(task, probs, dataset.targets(task))
        curves, aucs = {}, {}
        for j, name in enumerate(names):
            if name in report.auc_excluded:
                continue
            curves[name] = roc_curve(scored[:, j], truth[:, j])
            aucs[name] = auc(curves[name])
        run_analyzers("roc", {"curves": curves, "aucs": aucs, "svg_path": args.roc}, out_dir)
    return EXIT_OK


def cmd_gradcheck(args, manifest: RunManifest) -> int:
    config = json.loads(CHECKER_CONFIG.read_text()) if CHECKER_CONFIG.exists() else {}
    overrides = {
        "grad_check_tolerance": args.tolerance,
        "grad_check_eps": args.eps,
        "grad_check_samples": args.samples,
    }
    config.update({k: v for k, v in overrides.items() if v is not None})
    manifest.seeds["gradcheck"] = args.seed

    results = run_checks(load_all_checkers(config), args.seed)
    print_results(results)
    failed = sum(1 for r in results if r.status in ["FAIL", "ERROR"])
    return EXIT_OK if failed == 0 else EXIT_DOMAIN


COMMANDS = {
    "ingest": cmd_ingest,
    "pca": cmd_pca,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
}


def _output_dir(args) -> Optional[Path]:
    out = getattr(args, "out_dir", None)
    return Path(out) if out else None


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_CONFIG
    except ConfigError as e:
        print(f"Error: {e}")
        return EXIT_CONFIG
    except MissingDataError as e:
        print(f"Error: {e}")
        return EXIT_MISSING

    echo = {k: v for k, v in vars(args).items() if k != "command"}
    manifest = RunManifest(command=args.command, config=echo)
    code = EXIT_FAILURE
    try:
        code = COMMANDS[args.command](args, manifest)
    except DomainError as e:
        print(f"Error: {e}")
        code = EXIT_DOMAIN
    except ConfigError as e:
        print(f"Error: {e}")
        code = EXIT_CONFIG
    except MissingDataError as e:
        print(f"Error: {e}")
        code = EXIT_MISSING
    except Exception as e:
        print(f"Error: {str(e)}")
        code = EXIT_FAILURE
    finally:
        out_dir = _output_dir(args)
        if out_dir is not None:
            manifest.finish(code)
            manifest.write(out_dir)
    return code


if __name__ == "__main__":
    exit_code = main()
    sys.exit(exit_code)
