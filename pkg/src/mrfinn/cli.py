"""Command-line front end: reproducible simulate/train/evaluate runs.

Every command takes one master seed and derives all internal random streams
from it, so a rerun with identical flags and input files writes identical
artifacts.  Each output directory gets a ``run.manifest`` recording the
flags, seeds, input-file hashes, and tool version.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .dictionary import (Dictionary, GridSpec, build_dictionary,
                         expand_grid, load_dictionary, save_dictionary,
                         split_dictionary, subsample_stratified)
from .errors import FormatError, MrfError, NumericsError, ValidationError
from .evaluation import (DEFAULT_REPETITIONS, DEFAULT_SNR_LEVELS_DB,
                         evaluate_model, fwd_bwd_correlate, heatmap_diff,
                         snr_sweep)
from .models import load_checkpoint, save_checkpoint
from .sequence import (DEFAULT_FAT_SHIFT_HZ, default_schedule, load_schedule,
                       save_schedule)
from .simulator import PARAM_NAMES
from .svg import render_heatmap, render_sweep
from .training import TrainConfig, log_to_csv, train

DICT_BASENAME = "dict"

TRAIN_CONFIG_KEYS = {"learning_rate", "batch_size", "epochs", "noise_sd",
                     "seed", "weight_forward", "weight_backward",
                     "bwd_loss_dims", "perturb_forward_target"}

PIPELINE_KEYS = {"output_dir", "seed", "schedule", "train_grid", "eval_grid",
                 "fat_shift_hz", "subsample_train", "subsample_eval",
                 "split_fraction", "models", "snr_levels_db",
                 "snr_repetitions", "heatmap_params", "training"}


class UsageError(MrfError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_run_manifest(out_dir: Path, command: str, args: dict,
                        inputs: list[Path]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    hashes = {}
    for path in sorted(set(map(Path, inputs))):
        if path.is_dir():
            for child in sorted(path.iterdir()):
                if child.is_file():
                    hashes[str(child)] = _sha256(child)
        elif path.is_file():
            hashes[str(path)] = _sha256(path)
    manifest = {
        "tool": "mrfinn",
        "version": __version__,
        "command": command,
        "args": {k: v for k, v in sorted(args.items())},
        "input_hashes": hashes,
    }
    (out_dir / "run.manifest").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _dict_base(path: str | Path) -> Path:
    """Dictionaries live in a directory as ``dict.{manifest,params.bin,fp.bin}``."""
    path = Path(path)
    return path / DICT_BASENAME if path.is_dir() else path


def _load_dict(path: str | Path) -> Dictionary:
    return load_dictionary(_dict_base(path))


def _load_schedule_arg(schedule_path: str | None,
                       fat_shift: float | None) -> tuple:
    if schedule_path is None:
        schedule, file_shift = default_schedule(), DEFAULT_FAT_SHIFT_HZ
    else:
        schedule, file_shift = load_schedule(schedule_path)
    return schedule, file_shift if fat_shift is None else float(fat_shift)


# --- commands -------------------------------------------------------------

def cmd_simulate_dict(args) -> int:
    spec = GridSpec.load(args.grid)
    schedule, fat_shift = _load_schedule_arg(args.schedule, args.fat_shift)
    params = expand_grid(spec)
    n_full = params.shape[0]
    if args.dry_run:
        print(f"grid expands to N={n_full} entries "
              f"(T={len(schedule)} repetitions per fingerprint)")
        return 0
    subset_note = None
    if args.subsample is not None:
        idx = subsample_stratified(params, args.subsample, args.seed)
        params = params[idx]
        subset_note = {"kind": "stratified_subsample", "target": args.subsample,
                       "seed": args.seed, "parent_n": int(n_full)}
    started = time.perf_counter()
    d = build_dictionary(spec, schedule, fat_shift, seed=args.seed,
                         params=params, subset_note=subset_note)
    elapsed = time.perf_counter() - started
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_dictionary(d, out_dir / DICT_BASENAME)
    inputs = [Path(args.grid)] + ([Path(args.schedule)] if args.schedule else [])
    _write_run_manifest(out_dir, "simulate-dict", vars(args), inputs)
    print(f"wrote dictionary: N={len(d)} T={d.n_repetitions} "
          f"({elapsed:.1f} s) -> {out_dir}")
    return 0


def cmd_split_dict(args) -> int:
    d = _load_dict(args.dict)
    part_a, part_b = split_dictionary(d, args.fraction, args.seed)
    for part, out in ((part_a, args.out_a), (part_b, args.out_b)):
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_dictionary(part, out_dir / DICT_BASENAME)
        _write_run_manifest(out_dir, "split-dict", vars(args),
                            [Path(args.dict)])
    print(f"split N={len(d)} into {len(part_a)} / {len(part_b)} "
          f"(fraction {args.fraction})")
    return 0


def _read_train_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ValidationError(f"config {path} must hold a JSON object")
    unknown = set(data) - TRAIN_CONFIG_KEYS
    if unknown:
        raise ValidationError(f"config {path}: unknown keys {sorted(unknown)}")
    return data


def _build_train_config(args) -> TrainConfig:
    values = {}
    if args.preset == "desk":
        values.update(epochs=20, batch_size=50, learning_rate=0.001)
    values.update(_read_train_config(args.config))
    for key, flag in (("learning_rate", args.lr), ("batch_size", args.batch_size),
                      ("epochs", args.epochs), ("noise_sd", args.noise_sd),
                      ("seed", args.seed)):
        if flag is not None:
            values[key] = flag
    values.setdefault("seed", 0)
    return TrainConfig(model_kind=args.model, **values)


def cmd_train(args) -> int:
    train_dict = _load_dict(args.train)
    val_dict = _load_dict(args.val)
    config = _build_train_config(args)
    result = train(args.model, train_dict, val_dict, config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / f"{args.model}.ckpt"
    save_checkpoint(result.model, ckpt_path)
    (out_dir / f"{args.model}_train_log.csv").write_text(log_to_csv(result.log))
    inputs = [Path(args.train), Path(args.val)]
    if args.config:
        inputs.append(Path(args.config))
    _write_run_manifest(out_dir, "train", vars(args), inputs)
    print(f"trained {args.model}: {result.model.parameter_count} parameters, "
          f"best epoch {result.best_epoch} "
          f"(validation R^2 {result.best_val_r2:.4f}) -> {ckpt_path}")
    return 0


def _checkpoint_name(path: str | Path) -> str:
    return Path(path).stem


def cmd_evaluate(args) -> int:
    test_dict = _load_dict(args.test)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for ckpt in args.models:
        model = load_checkpoint(ckpt)
        if model.dim != 2 * test_dict.n_repetitions:
            raise ValidationError(
                f"checkpoint {ckpt} has dimension {model.dim} but the test "
                f"dictionary needs {2 * test_dict.n_repetitions}")
        report = evaluate_model(model, test_dict)
        name = _checkpoint_name(ckpt)
        (out_dir / f"metrics_{name}.csv").write_text(report.to_csv())
        print(f"{name}: " + "  ".join(
            f"{pm.name} R2={pm.r2:.4f} MRE={pm.mre_mean:.2f}%"
            for pm in report.per_param))
    _write_run_manifest(out_dir, "evaluate", vars(args),
                        [Path(args.test)] + [Path(p) for p in args.models])
    return 0


def cmd_snr_sweep(args) -> int:
    test_dict = _load_dict(args.test)
    models = {_checkpoint_name(p): load_checkpoint(p) for p in args.models}
    results = snr_sweep(models, test_dict, levels_db=args.levels,
                        repetitions=args.repetitions, seed=args.seed,
                        signal_ref=args.signal_ref)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, res in results.items():
        (out_dir / f"snr_sweep_{name}.csv").write_text(res.to_csv())
    for parameter in PARAM_NAMES:
        (out_dir / f"snr_sweep_{parameter}.svg").write_text(
            render_sweep(results, parameter))
    _write_run_manifest(out_dir, "snr-sweep", vars(args),
                        [Path(args.test)] + [Path(p) for p in args.models])
    print(f"swept {len(args.levels)} SNR levels x {args.repetitions} "
          f"repetitions for {len(models)} models -> {out_dir}")
    return 0


def cmd_heatmap(args) -> int:
    test_dict = _load_dict(args.test)
    model_a = load_checkpoint(args.a)
    model_b = load_checkpoint(args.b)
    hm = heatmap_diff(model_a, model_b, test_dict, args.param)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"heatmap_{args.param}.csv").write_text(hm.to_csv())
    title = (f"{args.param}: MRE({_checkpoint_name(args.a)}) - "
             f"MRE({_checkpoint_name(args.b)})")
    (out_dir / f"heatmap_{args.param}.svg").write_text(render_heatmap(hm, title))
    _write_run_manifest(out_dir, "heatmap", vars(args),
                        [Path(args.test), Path(args.a), Path(args.b)])
    finite = hm.cells[np.isfinite(hm.cells)]
    print(f"heat map {args.param}: {hm.cells.shape[0]}x{hm.cells.shape[1]} "
          f"cells, mean difference {finite.mean():+.3f} pp")
    return 0


def cmd_correlate(args) -> int:
    test_dict = _load_dict(args.test)
    model = load_checkpoint(args.model)
    if model.kind not in ("inn", "inn_bwd"):
        raise ValidationError("correlate needs an invertible model checkpoint")
    result = fwd_bwd_correlate(model, test_dict)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "correlation.csv").write_text(result.to_csv())
    _write_run_manifest(out_dir, "correlate", vars(args),
                        [Path(args.test), Path(args.model)])
    print(f"forward/backward Spearman rho = {result.rho:+.4f} "
          f"over {result.per_entry_mre.size} entries")
    return 0


def cmd_make_schedule(args) -> int:
    schedule = default_schedule(args.repetitions)
    save_schedule(schedule, args.out, fat_shift_hz=args.fat_shift)
    print(f"wrote default schedule (T={len(schedule)}) -> {args.out}")
    return 0


# --- pipeline --------------------------------------------------------------

def _load_pipeline_config(path: str | Path) -> dict:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path} is not valid JSON: {exc}") from exc
    unknown = set(data) - PIPELINE_KEYS
    if unknown:
        raise ValidationError(f"config {path}: unknown keys {sorted(unknown)}")
    for key in ("train_grid", "eval_grid", "output_dir"):
        if key not in data:
            raise ValidationError(f"config {path}: missing required key {key!r}")
    if "training" in data:
        unknown = set(data["training"]) - (TRAIN_CONFIG_KEYS - {"seed"})
        if unknown:
            raise ValidationError(
                f"config {path}: unknown training keys {sorted(unknown)}")
    base = path.parent
    for key in ("schedule", "train_grid", "eval_grid"):
        if data.get(key) is not None:
            resolved = (base / data[key]).resolve()
            if not resolved.is_file():
                raise ValidationError(f"config {path}: {key} file {resolved} not found")
            data[key] = str(resolved)
    data["output_dir"] = str((base / data["output_dir"]).resolve())
    return data


def cmd_run_pipeline(args) -> int:
    cfg = _load_pipeline_config(args.config)
    out_root = Path(cfg["output_dir"])
    seed = int(cfg.get("seed", 0))
    model_kinds = cfg.get("models", ["inn", "inn_bwd", "fcn"])
    schedule, fat_shift = _load_schedule_arg(cfg.get("schedule"),
                                             cfg.get("fat_shift_hz"))

    def build(grid_path, subsample, label):
        spec = GridSpec.load(grid_path)
        params = expand_grid(spec)
        note = None
        if subsample:
            idx = subsample_stratified(params, int(subsample), seed)
            note = {"kind": "stratified_subsample", "target": int(subsample),
                    "seed": seed, "parent_n": int(params.shape[0])}
            params = params[idx]
        d = build_dictionary(spec, schedule, fat_shift, seed=seed,
                             params=params, subset_note=note)
        out_dir = out_root / label
        out_dir.mkdir(parents=True, exist_ok=True)
        save_dictionary(d, out_dir / DICT_BASENAME)
        print(f"[pipeline] {label}: N={len(d)} T={d.n_repetitions}")
        return d

    train_dict = build(cfg["train_grid"], cfg.get("subsample_train"), "train_dict")
    eval_dict = build(cfg["eval_grid"], cfg.get("subsample_eval"), "eval_dict")
    val_dict, test_dict = split_dictionary(
        eval_dict, float(cfg.get("split_fraction", 0.2)), seed)
    for part, label in ((val_dict, "val_dict"), (test_dict, "test_dict")):
        out_dir = out_root / label
        out_dir.mkdir(parents=True, exist_ok=True)
        save_dictionary(part, out_dir / DICT_BASENAME)
    print(f"[pipeline] split eval: val={len(val_dict)} test={len(test_dict)}")

    train_kwargs = dict(cfg.get("training", {}))
    models = {}
    for kind in model_kinds:
        config = TrainConfig(model_kind=kind, seed=seed, **train_kwargs)
        result = train(kind, train_dict, val_dict, config)
        ckpt_dir = out_root / "models"
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(result.model, ckpt_dir / f"{kind}.ckpt")
        (ckpt_dir / f"{kind}_train_log.csv").write_text(log_to_csv(result.log))
        models[kind] = result.model
        print(f"[pipeline] trained {kind}: best epoch {result.best_epoch}, "
              f"validation R^2 {result.best_val_r2:.4f}")

    eval_dir = out_root / "evaluation"
    eval_dir.mkdir(parents=True, exist_ok=True)
    for kind, model in models.items():
        report = evaluate_model(model, test_dict)
        (eval_dir / f"metrics_{kind}.csv").write_text(report.to_csv())

    levels = [float(v) for v in cfg.get("snr_levels_db", DEFAULT_SNR_LEVELS_DB)]
    reps = int(cfg.get("snr_repetitions", DEFAULT_REPETITIONS))
    sweep = snr_sweep(models, test_dict, levels_db=levels, repetitions=reps,
                      seed=seed)
    for name, res in sweep.items():
        (eval_dir / f"snr_sweep_{name}.csv").write_text(res.to_csv())
    for parameter in PARAM_NAMES:
        (eval_dir / f"snr_sweep_{parameter}.svg").write_text(
            render_sweep(sweep, parameter))

    if "inn" in models and "inn_bwd" in models:
        for parameter in cfg.get("heatmap_params", ["t1_h2o", "t1_fat"]):
            hm = heatmap_diff(models["inn_bwd"], models["inn"], test_dict,
                              parameter)
            (eval_dir / f"heatmap_{parameter}.csv").write_text(hm.to_csv())
            (eval_dir / f"heatmap_{parameter}.svg").write_text(
                render_heatmap(hm, f"{parameter}: MRE(inn_bwd) - MRE(inn)"))

    if "inn" in models:
        corr = fwd_bwd_correlate(models["inn"], test_dict)
        (eval_dir / "correlation.csv").write_text(corr.to_csv())
        print(f"[pipeline] forward/backward Spearman rho = {corr.rho:+.4f}")

    inputs = [Path(cfg["train_grid"]), Path(cfg["eval_grid"]), Path(args.config)]
    if cfg.get("schedule"):
        inputs.append(Path(cfg["schedule"]))
    _write_run_manifest(out_root, "run-pipeline", {"config": str(args.config)},
                        inputs)
    print(f"[pipeline] artifacts -> {out_root}")
    return 0


# --- parser ----------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="mrfinn",
                     description="Fingerprint simulation, invertible-network "
                                 "training, and evaluation experiments.")
    parser.add_argument("--version", action="version",
                        version=f"mrfinn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate-dict", help="expand a grid and simulate fingerprints")
    p.add_argument("--grid", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--schedule", default=None,
                   help="schedule file (default: built-in T=175 schedule)")
    p.add_argument("--fat-shift", type=float, default=None,
                   help="override the fat chemical-shift offset in Hz")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--subsample", type=int, default=None,
                   help="stratified subsample target size (over FF x T1H2O)")
    p.add_argument("--dry-run", action="store_true",
                   help="report the expansion count without simulating")
    p.set_defaults(func=cmd_simulate_dict)

    p = sub.add_parser("split-dict", help="seeded disjoint split of a dictionary")
    p.add_argument("--dict", required=True)
    p.add_argument("--fraction", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-a", required=True)
    p.add_argument("--out-b", required=True)
    p.set_defaults(func=cmd_split_dict)

    p = sub.add_parser("train", help="train a model on dictionaries")
    p.add_argument("--model", required=True, choices=("inn", "inn_bwd", "fcn"))
    p.add_argument("--train", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="JSON training config")
    p.add_argument("--preset", choices=("desk",), default=None,
                   help="desk: 20 epochs, batch 50, lr 0.001")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--noise-sd", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="noise-free metrics for checkpoints")
    p.add_argument("--models", nargs="+", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("snr-sweep", help="Monte-Carlo robustness over SNR levels")
    p.add_argument("--models", nargs="+", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--levels", nargs="+", type=float,
                   default=list(DEFAULT_SNR_LEVELS_DB))
    p.add_argument("--repetitions", type=int, default=DEFAULT_REPETITIONS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--signal-ref", type=float, default=None,
                   help="override the SNR signal reference S")
    p.set_defaults(func=cmd_snr_sweep)

    p = sub.add_parser("heatmap", help="error-difference heat map of two models")
    p.add_argument("--a", required=True, help="checkpoint A (minuend)")
    p.add_argument("--b", required=True, help="checkpoint B (subtrahend)")
    p.add_argument("--test", required=True)
    p.add_argument("--param", required=True, choices=("t1_h2o", "t1_fat"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("correlate", help="backward error vs forward agreement")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("make-schedule", help="write the default schedule file")
    p.add_argument("--out", required=True)
    p.add_argument("--repetitions", type=int, default=175)
    p.add_argument("--fat-shift", type=float, default=DEFAULT_FAT_SHIFT_HZ)
    p.set_defaults(func=cmd_make_schedule)

    p = sub.add_parser("run-pipeline", help="simulate, split, train, evaluate")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_run_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except NumericsError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (ValidationError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # argparse --help / --version
        return int(exc.code or 0)


def entry() -> None:
    sys.exit(main())
