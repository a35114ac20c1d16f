"""End-to-end latency harness: warm-up, batch-1 timing of the three pipeline stages,
density sweeps and (r, K, residual) ablation sweeps.

The timed pipeline per iteration is::

    edge_build   center the scene, build the capped interaction graph
    forward      encoder + decoder + head (no tape, dropout off)
    reconstruct  un-center control points, evaluate the Bezier curves

Timestamps are taken back to back with ``time.perf_counter_ns`` so the
stage durations sum exactly to the per-iteration end-to-end time.
"""
from __future__ import annotations

import csv
import io
import itertools
import math
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import curve_head, kernels
from .data import SceneWindow, SyntheticSpec, synthesize, window
from .edge_builder import build_edges, edge_count_stats
from .metrics import SWEEP_COLUMNS, UndefinedMetricError
from .model import EdgeVTP

STAGES = ("edge_build", "forward", "reconstruct")
DEFAULT_WARMUP = 50
DEFAULT_ITERS = 1000


def _thread_limits(threads: int):
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover - optional
        return None
    return threadpool_limits(limits=threads)


def _summary(ns: np.ndarray) -> dict:
    ms = ns / 1e6
    return {"mean": float(ms.mean()), "median": float(np.median(ms)),
            "p95": float(np.percentile(ms, 95)), "max": float(ms.max())}


@dataclass
class LatencyReport:
    timings_ns: np.ndarray          # (iters, 3) per-stage durations
    e2e_ns: np.ndarray              # (iters,) end-to-end per iteration
    warmup: int
    iters: int
    env: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def stage_stats(self) -> dict:
        return {s: _summary(self.timings_ns[:, i]) for i, s in enumerate(STAGES)}

    def e2e_stats(self) -> dict:
        return _summary(self.e2e_ns)

    @property
    def e2e_mean_ms(self) -> float:
        return float(self.e2e_ns.mean() / 1e6)

    @property
    def forward_mean_ms(self) -> float:
        return float(self.timings_ns[:, 1].mean() / 1e6)

    @property
    def overhead_fraction(self) -> float:
        """(edge_build + reconstruct) / e2e, from mean timings."""
        total = self.e2e_ns.sum()
        if total <= 0:
            return 0.0
        return float((self.timings_ns[:, 0].sum() + self.timings_ns[:, 2].sum()) / total)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        buf.write("# per-iteration stage timings in nanoseconds; e2e_ns = sum of stages\n")
        buf.write("# " + ", ".join(f"{k}={v}" for k, v in sorted(self.env.items())) + "\n")
        buf.write(f"# warmup={self.warmup} iters={self.iters}\n")
        for msg in self.warnings:
            buf.write(f"# warning: {msg}\n")
        w.writerow(["iteration", *[f"{s}_ns" for s in STAGES], "e2e_ns"])
        for i, (row, e2e) in enumerate(zip(self.timings_ns.tolist(), self.e2e_ns.tolist())):
            w.writerow([i, *row, e2e])
        buf.write("\n# summary (milliseconds)\n")
        w.writerow(["stage", "mean_ms", "median_ms", "p95_ms", "max_ms"])
        stats = self.stage_stats() | {"e2e": self.e2e_stats()}
        for name, s in stats.items():
            w.writerow([name, *(f"{s[k]:.6f}" for k in ("mean", "median", "p95", "max"))])
        w.writerow(["overhead_fraction", f"{self.overhead_fraction:.6f}", "", "", ""])
        return buf.getvalue()


def measure(model: EdgeVTP, scene: SceneWindow, warmup: int = DEFAULT_WARMUP,
            iters: int = DEFAULT_ITERS, precision: str = "float32", threads: int = 1,
            r: float | None = None, k: float | None = None, t_out: int | None = None,
            stage_hook: Callable[[str, int, bool], None] | None = None,
            scenes: Sequence[SceneWindow] | None = None) -> LatencyReport:
    """Time ``warmup + iters`` full pipelines on one scene; warm-up runs are discarded.

    ``scenes`` switches to streaming mode (cycle through distinct scenes).
    ``stage_hook(stage, iteration, is_warmup)`` runs inside the timed region
    at the start of each stage; it exists for harness self-tests.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    dtype = np.dtype(precision)
    frozen = model.astype(dtype) if model.dtype != dtype else model
    cfg = frozen.cfg
    r = cfg.radius if r is None else r
    k = cfg.k if k is None else k
    t_out = t_out or cfg.t_out
    stream = list(scenes) if scenes else [scene]
    prepared = [(np.ascontiguousarray(s.positions_in), np.ascontiguousarray(s.displacements_in),
                 np.ascontiguousarray(s.last_positions)) for s in stream]
    timings = np.zeros((iters, len(STAGES)), dtype=np.int64)
    e2e = np.zeros(iters, dtype=np.int64)
    clock = time.perf_counter_ns
    warnings = []
    res = time.get_clock_info("perf_counter").resolution
    if res > 1e-6:
        warnings.append(f"clock resolution {res:.3g}s is coarser than 1us")
    limiter = _thread_limits(threads)
    try:
        for it in range(warmup + iters):
            is_warm = it < warmup
            pos, disp, last = prepared[it % len(prepared)]
            t0 = clock()
            if stage_hook is not None:
                stage_hook("edge_build", it, is_warm)
            shift = last.mean(axis=0) if cfg.center else np.zeros(2)
            anchors = last - shift
            edges = build_edges(anchors, r, k)
            t1 = clock()
            if stage_hook is not None:
                stage_hook("forward", it, is_warm)
            ctrl = frozen.control_points(pos - shift, disp, anchors, edges).data
            t2 = clock()
            if stage_hook is not None:
                stage_hook("reconstruct", it, is_warm)
            curve_head.evaluate_bezier(ctrl.astype(np.float64) + shift, t_out)
            t3 = clock()
            if not is_warm:
                j = it - warmup
                timings[j] = (t1 - t0, t2 - t1, t3 - t2)
                e2e[j] = t3 - t0
    finally:
        if limiter is not None:
            limiter.restore_original_limits()
    env = {"threads": threads, "precision": dtype.name, "n_vehicles": scene.n,
           "kernels": kernels.BACKEND, "r": r, "K": k, "t_out": t_out,
           "mode": "streaming" if scenes else "steady-state"}
    return LatencyReport(timings, e2e, warmup, iters, env, warnings)


# -- sweeps -----------------------------------------------------------------

def scene_for_density(n: int, spec: SyntheticSpec, seed: int, t_in: int, t_out: int) -> SceneWindow:
    """One synthetic window with ``n`` vehicles; the road grows so the requested density stays feasible."""
    lanes = spec.lane_count
    length = max(spec.road_length, spec.min_gap * math.ceil(n / lanes) * 1.5)
    sub = replace(spec, n_vehicles=n, road_length=length, seed=seed)
    w = window(synthesize(sub, t_in + t_out, t_in, t_out), t_in, t_out)
    return w[0]


DENSITY_COLUMNS = ["N", "seed", "r", "K", "total_edges", "max_list_size", "mean_list_size",
                   "uncapped_edges", "e2e_ms", "e2e_median_ms", "edge_build_ms", "forward_ms",
                   "reconstruct_ms", "overhead_fraction", "uncapped_e2e_ms",
                   "uncapped_e2e_median_ms"]


def density_sweep(model: EdgeVTP, densities: Sequence[int], spec: SyntheticSpec | None = None,
                  r: float | None = None, k: float | None = None, seeds: Sequence[int] = (0,),
                  warmup: int = 10, iters: int = 50, precision: str = "float32",
                  uncapped: bool = True) -> list[dict]:
    """Latency and edge counts per scene size; ``uncapped`` also times K = infinity."""
    if list(densities) != sorted(densities):
        raise ValueError("densities must be sorted ascending")
    spec = spec or SyntheticSpec()
    cfg = model.cfg
    r = cfg.radius if r is None else r
    k = cfg.k if k is None else k
    rows = []
    for n in densities:
        for seed in seeds:
            scene = scene_for_density(n, spec, seed, cfg.t_in, cfg.t_out)
            anchors = scene.last_positions - scene.last_positions.mean(axis=0)
            capped = edge_count_stats(build_edges(anchors, r, k))
            full = edge_count_stats(build_edges(anchors, r, math.inf))
            rep = measure(model, scene, warmup, iters, precision, r=r, k=k)
            st = rep.stage_stats()
            row = {
                "N": n, "seed": seed, "r": r, "K": k,
                "total_edges": capped["total_edges"], "max_list_size": capped["max_list_size"],
                "mean_list_size": capped["mean_list_size"], "uncapped_edges": full["total_edges"],
                "e2e_ms": rep.e2e_mean_ms, "e2e_median_ms": rep.e2e_stats()["median"],
                "edge_build_ms": st["edge_build"]["mean"], "forward_ms": st["forward"]["mean"],
                "reconstruct_ms": st["reconstruct"]["mean"],
                "overhead_fraction": rep.overhead_fraction,
                "uncapped_e2e_ms": float("nan"), "uncapped_e2e_median_ms": float("nan"),
            }
            if uncapped:
                rep_u = measure(model, scene, warmup, iters, precision, r=r, k=math.inf)
                row["uncapped_e2e_ms"] = rep_u.e2e_mean_ms
                row["uncapped_e2e_median_ms"] = rep_u.e2e_stats()["median"]
            rows.append(row)
    return rows


def growth_exponent(ns, times) -> float:
    """Least-squares slope of log(time) against log(N)."""
    x = np.log(np.asarray(ns, dtype=np.float64))
    y = np.log(np.asarray(times, dtype=np.float64))
    return float(np.polyfit(x, y, 1)[0])


def config_id(r: float, k: float, residual: bool) -> str:
    kk = "inf" if isinstance(k, float) and math.isinf(k) else str(int(k))
    return f"r{r:g}_k{kk}_res{'Y' if residual else 'N'}"


def ablation_grid(radii, ks, residuals) -> list[tuple]:
    """Grid points in a stable order: residual, then r, then K (IDs are 1-based positions)."""
    return sorted(itertools.product(radii, ks, residuals), key=lambda t: (t[2], t[0], t[1]))


def ablation_sweep(grid: Sequence[tuple], dataset: Sequence[SceneWindow],
                   checkpoint_dir=None, train_config=None, warmup: int = 10, iters: int = 50,
                   precision: str = "float32") -> list[dict]:
    """One metrics + latency row per (r, K, residual) point.

    Models come from ``checkpoint_dir/<config_id>`` or, when
    ``train_config`` is given, are trained in place. Failures produce a row
    whose ``error`` field is set; the sweep continues.
    """
    from .training import evaluate, fit

    rows = []
    for idx, (r, k, residual) in enumerate(grid, start=1):
        row = {c: "" for c in SWEEP_COLUMNS}
        row.update({"ID": idx, "r": r, "K": k, "residual": "Y" if residual else "N", "error": ""})
        try:
            if train_config is not None:
                cfg = replace(train_config, radius=r, k=k, residual=residual)
                model = fit(dataset, cfg).model
            else:
                path = Path(checkpoint_dir or ".") / config_id(r, k, residual)
                if not path.with_name(path.name + ".json").exists():
                    raise FileNotFoundError(f"missing checkpoint {path}.json")
                model, _ = EdgeVTP.load(path)
                if model.cfg.residual != residual:
                    raise ValueError(f"checkpoint {path} has residual={model.cfg.residual}")
                model.cfg = replace(model.cfg, radius=r, k=k)
            rep = evaluate(dataset, model)
            if rep.empty:
                raise UndefinedMetricError("no windows to evaluate")
            lat = measure(model, dataset[0], warmup, iters, precision, r=r, k=k)
            row.update(rep.row())
            row.update({"params": model.n_parameters(), "E2E_ms": lat.e2e_mean_ms,
                        "model_only_ms": lat.forward_mean_ms})
        except Exception as exc:  # noqa: BLE001 - a broken row must not stop the sweep
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return rows


def write_rows_csv(path_or_buf, rows: Sequence[dict], columns: Sequence[str], comment: str = ""):
    own = isinstance(path_or_buf, (str, os.PathLike))
    fh = open(path_or_buf, "w", newline="") if own else path_or_buf
    try:
        if comment:
            for line in comment.splitlines():
                fh.write(f"# {line}\n")
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({c: _cell(row.get(c, "")) for c in columns})
    finally:
        if own:
            fh.close()


def _cell(v):
    if isinstance(v, float):
        return "inf" if math.isinf(v) else f"{v:.6g}"
    return v
