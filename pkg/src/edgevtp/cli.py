"""Command-line entry point: synth, ingest, train, eval, bench, density, sweep.

Exit codes: 0 success, 2 configuration error, 3 training divergence,
4 artifact mismatch (missing/incompatible checkpoint or dataset, empty data).
Configuration precedence: explicit flags > JSON config file > built-in defaults.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, bench, data, training
from .model import EdgeVTP
from .numerics import container

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_ARTIFACT = 4

REPORT_DIR_ENV = "EDGEVTP_REPORT_DIR"
DEFAULT_REPORT_DIR = "reports"
OPERATING_POINTS = ((20.0, 16, False), (20.0, 16, True), (30.0, 16, True))

log = logging.getLogger("edgevtp")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _config_error(msg: str) -> CliError:
    return CliError(EXIT_CONFIG, msg)


def _artifact_error(msg: str) -> CliError:
    return CliError(EXIT_ARTIFACT, msg)


# -- argument helpers -------------------------------------------------------

def _k_value(text: str) -> float:
    if text.lower() in ("inf", "none", "uncapped"):
        return math.inf
    try:
        k = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"K must be a positive integer or 'inf', got {text!r}")
    if k < 1:
        raise argparse.ArgumentTypeError(f"K must be >= 1, got {k}")
    return k


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _read_json(path: str | None, what: str) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise _config_error(f"{what} file {p} does not exist")
    try:
        obj = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise _config_error(f"{what} file {p} is not valid JSON: {exc}")
    if not isinstance(obj, dict):
        raise _config_error(f"{what} file {p} must hold a JSON object")
    return obj


def _report_dir(args) -> Path:
    d = args.report_dir or os.environ.get(REPORT_DIR_ENV) or DEFAULT_REPORT_DIR
    return Path(d)


def _output(args, name: str) -> Path:
    """Explicit --out wins; otherwise the report directory."""
    if getattr(args, "out", None):
        path = Path(args.out)
    else:
        path = _report_dir(args) / name
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _load_dataset(path: str) -> list:
    if not container.manifest_path(path).exists():
        raise _artifact_error(f"dataset {path} not found")
    try:
        windows, _ = data.load_windows(path)
    except (container.ContainerError, KeyError, ValueError) as exc:
        raise _artifact_error(f"dataset {path} is unreadable: {exc}")
    return windows


def _load_checkpoint(path: str) -> tuple[EdgeVTP, dict]:
    if not container.manifest_path(path).exists():
        raise _artifact_error(f"checkpoint {path} not found")
    try:
        return EdgeVTP.load(path)
    except (container.ContainerError, KeyError, ValueError, TypeError) as exc:
        raise _artifact_error(f"checkpoint {path} does not match its configuration: {exc}")


def _check_shapes(model: EdgeVTP, windows, path: str) -> None:
    if windows and (windows[0].t_in != model.cfg.t_in):
        raise _artifact_error(
            f"dataset {path} has T_in={windows[0].t_in}, checkpoint expects {model.cfg.t_in}")


# -- subcommands ------------------------------------------------------------

def cmd_synth(args) -> int:
    spec_dict = _read_json(args.spec, "synthetic spec")
    if args.seed is not None:
        spec_dict["seed"] = args.seed
    if args.vehicles is not None:
        spec_dict["n_vehicles"] = args.vehicles
    try:
        spec = data.SyntheticSpec.from_dict(spec_dict)
        spec.validate()
        if args.windows < 1:
            raise data.ConfigError("--windows must be >= 1")
        windows = data.synthesize_corpus(spec, args.windows, args.scenes, args.stride,
                                         args.t_in, args.t_out)
    except (data.ConfigError, TypeError) as exc:
        raise _config_error(f"invalid synthetic spec: {exc}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    data.save_windows(out, windows, {"source": "synthetic", "spec": spec.to_dict(),
                                     "effective_config": _echo(args)})
    _summary_line(windows, out)
    return EXIT_OK


_INGEST_DEFAULTS = {"columns": None, "source_hz": 10, "target_hz": 5, "unit_scale": None,
                    "units": "feet", "t_in": data.T_IN, "t_out": data.T_OUT, "stride": None}


def ingest_config_from(args) -> dict:
    """Defaults <- --config JSON <- explicit flags, for the ingest subcommand."""
    merged = dict(_INGEST_DEFAULTS)
    file_cfg = _read_json(args.config, "ingest config")
    unknown = set(file_cfg) - set(merged)
    if unknown:
        raise _config_error(f"unknown ingest config keys {sorted(unknown)}")
    merged.update(file_cfg)
    if args.columns:
        merged["columns"] = _read_json(args.columns, "column map")
    for key in ("source_hz", "target_hz", "units", "t_in", "t_out", "stride"):
        if getattr(args, key) is not None:
            merged[key] = getattr(args, key)
    if merged["units"] not in ("feet", "meters", "pixels"):
        raise _config_error(f"units must be feet, meters or pixels, got {merged['units']!r}")
    if merged["unit_scale"] is None or args.units is not None:
        merged["unit_scale"] = data.NGSIM_UNIT_SCALE if merged["units"] == "feet" else 1.0
    return merged


def cmd_ingest(args) -> int:
    src = Path(args.csv)
    if not src.is_file():
        raise _config_error(f"trajectory file {src} does not exist")
    cfg = ingest_config_from(args)
    try:
        tracks = data.parse_trajectory_csv(src, cfg["columns"], float(cfg["unit_scale"]))
        tracks = data.resample(tracks, int(cfg["source_hz"]), int(cfg["target_hz"]))
        windows = data.window(tracks, int(cfg["t_in"]), int(cfg["t_out"]), cfg["stride"],
                              units="meters" if cfg["units"] == "feet" else cfg["units"])
    except (data.ConfigError, data.ParseError, TypeError, ValueError) as exc:
        raise _config_error(str(exc))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    data.save_windows(out, windows, {"source": str(src), "effective_config": cfg})
    _summary_line(windows, out)
    return EXIT_OK


def _summary_line(windows, out) -> None:
    n_veh = sum(w.n for w in windows)
    density = n_veh / len(windows) if windows else 0.0
    print(f"wrote {out}: {len(windows)} windows, {n_veh} vehicle tracks, "
          f"{density:.2f} vehicles/window")


_TRAIN_FLAGS = {
    "epochs": "epochs", "lr": "lr", "wd": "weight_decay", "milestones": "milestones",
    "gamma": "gamma", "batch": "batch_size", "dropout": "dropout", "seed": "seed", "r": "radius",
    "k": "k", "residual": "residual", "t_in": "t_in", "t_out": "t_out", "grad_clip": "grad_clip",
    "checkpoint_every": "checkpoint_every", "decoupled_wd": "decoupled_weight_decay",
}


def train_config_from(args) -> training.TrainConfig:
    """Defaults <- config file <- explicit flags."""
    merged = training.TrainConfig().to_dict()
    merged.update(_read_json(getattr(args, "config", None), "training config"))
    for flag, key in _TRAIN_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            merged[key] = list(value) if isinstance(value, tuple) else value
    if merged.get("grad_clip") in (0, 0.0):
        merged["grad_clip"] = None
    if isinstance(merged.get("k"), float) and math.isinf(merged["k"]):
        merged["k"] = "inf"
    try:
        cfg = training.TrainConfig.from_dict(merged)
        cfg.validate()
    except (ValueError, TypeError) as exc:
        raise _config_error(f"invalid training config: {exc}")
    return cfg


def cmd_train(args) -> int:
    cfg = train_config_from(args)
    windows = _load_dataset(args.data)
    if not windows:
        raise _artifact_error(f"no windows in dataset {args.data}")
    if windows[0].t_in != cfg.t_in or windows[0].t_out != cfg.t_out:
        raise _artifact_error(
            f"dataset windows are T_in={windows[0].t_in}, T_out={windows[0].t_out}; "
            f"config expects {cfg.t_in}, {cfg.t_out}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if cfg.checkpoint_every and not cfg.checkpoint_dir:
        cfg.checkpoint_dir = str(out.parent)
    try:
        result = training.fit(windows, cfg)
    except training.TrainingDiverged as exc:
        raise CliError(EXIT_DIVERGED, f"training diverged: {exc}; snapshot at {exc.snapshot}")
    meta = {"train": cfg.to_dict(), "epochs_completed": len(result.history), "data": str(args.data)}
    result.model.save(out, meta)
    history = Path(args.history) if args.history else out.with_name(out.name + "_loss.csv")
    training.write_history_csv(history, result.history)
    final = f", final loss {result.history[-1][1]:.6g}" if result.history else ""
    print(f"wrote {out} ({result.model.n_parameters()} parameters{final}); history {history}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, _ = _load_checkpoint(args.checkpoint)
    windows = _load_dataset(args.data)
    if not windows:
        raise _artifact_error(f"no windows in dataset {args.data}")
    _check_shapes(model, windows, args.data)
    rep = training.evaluate(windows, model)
    if rep.empty:
        raise _artifact_error(f"no windows with visible future slots in {args.data}")
    out = _output(args, "metrics.csv")
    out.write_text(f"# effective config {json.dumps(_echo(args), sort_keys=True)}\n" + rep.to_csv())
    if args.predictions:
        preds = model.predict(windows)
        ctrl = np.concatenate([c for c, _ in preds])
        samples = np.concatenate([s for _, s in preds])
        ids = np.concatenate([w.vehicle_ids for w in windows])
        from .curve_head import write_predictions_csv
        write_predictions_csv(args.predictions, ctrl, samples, ids)
    print(f"ADE {rep.ade:.4f} FDE {rep.fde:.4f} AVG-RMSE {rep.avg_rmse:.4f} -> {out}")
    return EXIT_OK


def _bench_scene(args, model: EdgeVTP):
    if args.data:
        windows = _load_dataset(args.data)
        if not windows:
            raise _artifact_error(f"no windows in dataset {args.data}")
        if not 0 <= args.window < len(windows):
            raise _config_error(f"--window {args.window} outside 0..{len(windows) - 1}")
        _check_shapes(model, windows, args.data)
        return windows[args.window]
    try:
        return bench.scene_for_density(args.vehicles, data.SyntheticSpec(), args.scene_seed,
                                       model.cfg.t_in, model.cfg.t_out)
    except data.ConfigError as exc:
        raise _config_error(str(exc))


def cmd_bench(args) -> int:
    model, _ = _load_checkpoint(args.checkpoint)
    scene = _bench_scene(args, model)
    if args.iters < 1 or args.warmup < 0:
        raise _config_error("--iters must be >= 1 and --warmup >= 0")
    rep = bench.measure(model, scene, args.warmup, args.iters, args.precision, args.threads,
                        r=args.r, k=args.k)
    out = _output(args, "latency.csv")
    out.write_text(rep.to_csv())
    st = rep.stage_stats()
    print(f"warmup={rep.warmup} iters={rep.iters} N={scene.n} e2e mean {rep.e2e_mean_ms:.4f} ms "
          f"(edge {st['edge_build']['mean']:.4f}, forward {st['forward']['mean']:.4f}, "
          f"reconstruct {st['reconstruct']['mean']:.4f}); overhead {rep.overhead_fraction:.3f} -> {out}")
    return EXIT_OK


def cmd_density(args) -> int:
    model, _ = _load_checkpoint(args.checkpoint)
    try:
        rows = bench.density_sweep(model, sorted(args.densities), r=args.r, k=args.k,
                                   seeds=args.seeds, warmup=args.warmup, iters=args.iters,
                                   precision=args.precision, uncapped=not args.capped_only)
    except (ValueError, data.ConfigError) as exc:
        raise _config_error(str(exc))
    out = _output(args, "density.csv")
    comment = f"density sweep; effective config {json.dumps(_echo(args), sort_keys=True)}"
    if not args.capped_only and len({row['N'] for row in rows}) > 1:
        ns = [row["N"] for row in rows]
        cap = bench.growth_exponent(ns, [row["e2e_median_ms"] for row in rows])
        unc = bench.growth_exponent(ns, [row["uncapped_e2e_median_ms"] for row in rows])
        comment += f"\ngrowth exponent capped={cap:.4f} uncapped={unc:.4f}"
        print(f"growth exponent capped {cap:.3f} vs uncapped {unc:.3f}")
    bench.write_rows_csv(out, rows, bench.DENSITY_COLUMNS, comment)
    print(f"wrote {out} ({len(rows)} rows)")
    return EXIT_OK


def _grid_from(args) -> list[tuple]:
    spec = _read_json(args.grid, "sweep grid")
    if not spec:
        return list(OPERATING_POINTS)
    if "points" in spec:
        try:
            return [(float(p["r"]), _k_value(str(p["K"])), bool(p["residual"])) for p in spec["points"]]
        except (KeyError, TypeError, argparse.ArgumentTypeError) as exc:
            raise _config_error(f"invalid sweep point: {exc}")
    try:
        return bench.ablation_grid([float(r) for r in spec["r"]],
                                   [_k_value(str(k)) for k in spec["K"]],
                                   [bool(v) for v in spec.get("residual", [False, True])])
    except (KeyError, TypeError, argparse.ArgumentTypeError) as exc:
        raise _config_error(f"sweep grid needs 'points' or 'r'/'K' lists: {exc}")


def cmd_sweep(args) -> int:
    grid = _grid_from(args)
    windows = _load_dataset(args.data)
    if not windows:
        raise _artifact_error(f"no windows in dataset {args.data}")
    train_cfg = train_config_from(args) if args.train else None
    rows = bench.ablation_sweep(grid, windows, args.checkpoint_dir, train_cfg,
                                args.warmup, args.iters, args.precision)
    out = _output(args, "sweep.csv")
    bench.write_rows_csv(out, rows, bench.SWEEP_COLUMNS + ["error"],
                         f"ablation sweep; effective config {json.dumps(_echo(args), sort_keys=True)}")
    failed = [r for r in rows if r["error"]]
    for r in failed:
        print(f"row {r['ID']} failed: {r['error']}", file=sys.stderr)
    print(f"wrote {out} ({len(rows)} rows, {len(failed)} failed)")
    return EXIT_OK


def _echo(args) -> dict:
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in ("func",) or callable(v):
            continue
        if isinstance(v, float) and math.isinf(v):
            v = "inf"
        out[k] = list(v) if isinstance(v, tuple) else v
    return out


# -- parser -----------------------------------------------------------------

def _add_train_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training recipe (flags override --config, which overrides defaults)")
    g.add_argument("--config", help="JSON file with training config keys")
    g.add_argument("--epochs", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--wd", type=float, help="weight decay")
    g.add_argument("--milestones", type=_int_list, help="comma-separated epochs, e.g. 40,60,70")
    g.add_argument("--gamma", type=float, help="lr decay factor at each milestone")
    g.add_argument("--batch", type=int, help="windows per batch")
    g.add_argument("--dropout", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--r", type=float, help="edge radius")
    g.add_argument("--k", type=_k_value, help="top-K neighbor cap or 'inf'")
    g.add_argument("--residual", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--t-in", dest="t_in", type=int)
    g.add_argument("--t-out", dest="t_out", type=int)
    g.add_argument("--grad-clip", dest="grad_clip", type=float, help="global gradient norm cap; 0 disables")
    g.add_argument("--decoupled-wd", dest="decoupled_wd", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)


def _add_bench_flags(p: argparse.ArgumentParser, warmup=bench.DEFAULT_WARMUP, iters=bench.DEFAULT_ITERS):
    p.add_argument("--warmup", type=int, default=warmup)
    p.add_argument("--iters", type=int, default=iters)
    p.add_argument("--precision", choices=("float32", "float64"), default="float32")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edgevtp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"edgevtp {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--report-dir", help=f"report directory (else ${REPORT_DIR_ENV}, else ./{DEFAULT_REPORT_DIR})")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a seeded synthetic dataset")
    p.add_argument("--spec", help="JSON synthetic spec (fields of SyntheticSpec)")
    p.add_argument("--out", required=True, help="dataset stem (writes .json + .bin)")
    p.add_argument("--windows", type=int, default=512)
    p.add_argument("--scenes", type=int)
    p.add_argument("--stride", type=int, default=5)
    p.add_argument("--seed", type=int)
    p.add_argument("--vehicles", type=int)
    p.add_argument("--t-in", dest="t_in", type=int, default=data.T_IN)
    p.add_argument("--t-out", dest="t_out", type=int, default=data.T_OUT)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="convert a trajectory CSV into windows")
    p.add_argument("--csv", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON with keys columns, source_hz, target_hz, unit_scale, "
                                    "units, t_in, t_out, stride")
    p.add_argument("--columns", help="JSON map with keys id, frame, x, y")
    p.add_argument("--units", choices=("feet", "meters", "pixels"),
                   help="input units; feet are scaled to meters (default feet)")
    p.add_argument("--source-hz", dest="source_hz", type=int, help="default 10")
    p.add_argument("--target-hz", dest="target_hz", type=int, help="default 5")
    p.add_argument("--t-in", dest="t_in", type=int)
    p.add_argument("--t-out", dest="t_out", type=int)
    p.add_argument("--stride", type=int)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint stem")
    p.add_argument("--history", help="loss history CSV (default <out>_loss.csv)")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="ADE/FDE/RMSE of a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="metrics CSV (default <report-dir>/metrics.csv)")
    p.add_argument("--predictions", help="optional per-vehicle prediction CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="end-to-end latency of one scene at batch size 1")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="dataset to take the scene from")
    p.add_argument("--window", type=int, default=0)
    p.add_argument("--vehicles", type=int, default=25, help="synthetic scene size when --data is absent")
    p.add_argument("--scene-seed", dest="scene_seed", type=int, default=0)
    p.add_argument("--r", type=float)
    p.add_argument("--k", type=_k_value)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", help="latency CSV (default <report-dir>/latency.csv)")
    _add_bench_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("density", help="latency and edge counts against scene size")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--densities", type=_int_list, default=(10, 25, 50, 100, 200))
    p.add_argument("--seeds", type=_int_list, default=(0,))
    p.add_argument("--r", type=float, default=1e6, help="radius (default covers the scene)")
    p.add_argument("--k", type=_k_value, default=16)
    p.add_argument("--capped-only", dest="capped_only", action="store_true")
    p.add_argument("--out")
    _add_bench_flags(p, warmup=10, iters=50)
    p.set_defaults(func=cmd_density)

    p = sub.add_parser("sweep", help="metrics + latency over (r, K, residual) points")
    p.add_argument("--data", required=True)
    p.add_argument("--grid", help="JSON with 'points' or 'r'/'K'/'residual' lists "
                                  "(default: the three reference operating points)")
    p.add_argument("--checkpoint-dir", dest="checkpoint_dir", help="directory of <config_id> checkpoints")
    p.add_argument("--train", action="store_true", help="train each point instead of loading")
    p.add_argument("--out")
    _add_train_flags(p)
    _add_bench_flags(p, warmup=10, iters=50)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for usage errors, matching EXIT_CONFIG
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except container.ContainerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
