"""Trajectory ingestion, resampling, windowing and synthetic highway scenes."""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .numerics import container

T_IN = 15
T_OUT = 25

NGSIM_COLUMNS = {"id": "Vehicle_ID", "frame": "Frame_ID", "x": "Local_X", "y": "Local_Y"}
NGSIM_UNIT_SCALE = 0.3048


class ConfigError(ValueError):
    """Invalid user configuration (columns, rates, synthetic spec)."""


class ParseError(ValueError):
    """A CSV cell could not be parsed."""


@dataclass(frozen=True, order=True)
class TrackPoint:
    vehicle_id: int
    frame: int
    x: float
    y: float


@dataclass
class SceneWindow:
    """One sample: N vehicles observed for ``t_in`` steps ending at ``time_index``."""

    time_index: int
    positions_in: np.ndarray      # (N, T_in, 2)
    displacements_in: np.ndarray  # (N, T_in, 2), first step zero
    futures: np.ndarray           # (N, T_out, 2), (0, 0) where masked
    mask: np.ndarray              # (N, T_out) in {0, 1}
    last_positions: np.ndarray    # (N, 2)
    vehicle_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    units: str = "meters"

    @property
    def n(self) -> int:
        return self.positions_in.shape[0]

    @property
    def t_in(self) -> int:
        return self.positions_in.shape[1]

    @property
    def t_out(self) -> int:
        return self.futures.shape[1]


def validate_window(w: SceneWindow) -> None:
    """Raise ``ValueError`` if ``w`` breaks any SceneWindow invariant."""
    n, t_in = w.positions_in.shape[:2]
    t_out = w.futures.shape[1]
    if w.positions_in.shape != (n, t_in, 2) or w.displacements_in.shape != (n, t_in, 2):
        raise ValueError("history arrays must be (N, T_in, 2)")
    if w.futures.shape != (n, t_out, 2) or w.mask.shape != (n, t_out):
        raise ValueError("future arrays must be (N, T_out, 2) and (N, T_out)")
    if not np.array_equal(w.displacements_in, displacements(w.positions_in)):
        raise ValueError("displacements do not match positions")
    if not np.array_equal(w.last_positions, w.positions_in[:, -1]):
        raise ValueError("last_positions must equal the final history step")
    if not np.all((w.mask == 0) | (w.mask == 1)):
        raise ValueError("mask must be binary")
    if np.any(w.futures[w.mask == 0] != 0):
        raise ValueError("masked future slots must hold (0, 0)")


# -- ingestion --------------------------------------------------------------

def parse_trajectory_csv(path, columns: dict | None = None,
                         unit_scale: float = NGSIM_UNIT_SCALE) -> list[TrackPoint]:
    """Read a headered CSV into TrackPoints sorted by (vehicle_id, frame).

    ``columns`` maps the keys ``id``, ``frame``, ``x``, ``y`` to header
    names; it defaults to the NGSIM names. ``unit_scale`` multiplies x and y.
    """
    columns = dict(NGSIM_COLUMNS if columns is None else columns)
    missing_keys = {"id", "frame", "x", "y"} - set(columns)
    if missing_keys:
        raise ConfigError(f"column map lacks keys {sorted(missing_keys)}")
    points = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        header = [h.strip() for h in header]
        idx = {}
        for key in ("id", "frame", "x", "y"):
            if columns[key] not in header:
                raise ConfigError(f"missing column {columns[key]!r} (for {key}) in {path}")
            idx[key] = header.index(columns[key])
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                vid = int(float(row[idx["id"]]))
                frame = int(float(row[idx["frame"]]))
                x = float(row[idx["x"]]) * unit_scale
                y = float(row[idx["y"]]) * unit_scale
            except (ValueError, IndexError) as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            points.append(TrackPoint(vid, frame, x, y))
    points.sort(key=lambda p: (p.vehicle_id, p.frame))
    return points


def _by_vehicle(tracks: Iterable[TrackPoint]) -> dict[int, list[TrackPoint]]:
    out: dict[int, list[TrackPoint]] = defaultdict(list)
    for p in tracks:
        out[p.vehicle_id].append(p)
    for pts in out.values():
        pts.sort(key=lambda p: p.frame)
    return dict(sorted(out.items()))


def resample(tracks: Sequence[TrackPoint], source_hz: int, target_hz: int = 5) -> list[TrackPoint]:
    """Keep every (source_hz/target_hz)-th frame of each vehicle, starting at its first frame.

    Kept frames are renumbered onto the target-rate timeline (``frame // step``)
    so consecutive output frames are one target period apart and resampling
    composes: resample(resample(x, s, m), m, t) == resample(x, s, t).
    """
    if target_hz <= 0 or source_hz <= 0 or source_hz % target_hz:
        raise ConfigError(
            f"source rate {source_hz} Hz is not an integer multiple of target {target_hz} Hz")
    step = source_hz // target_hz
    out = []
    for pts in _by_vehicle(tracks).values():
        first = pts[0].frame
        out.extend(TrackPoint(p.vehicle_id, p.frame // step, p.x, p.y)
                   for p in pts if (p.frame - first) % step == 0)
    return out


def displacements(positions: np.ndarray) -> np.ndarray:
    """Per-step differences along the time axis with a zero first step."""
    positions = np.asarray(positions, dtype=np.float64)
    out = np.zeros_like(positions)
    out[..., 1:, :] = positions[..., 1:, :] - positions[..., :-1, :]
    return out


def window(tracks: Sequence[TrackPoint], t_in: int = T_IN, t_out: int = T_OUT,
           stride: int | None = None, frame_step: int = 1,
           units: str = "meters") -> list[SceneWindow]:
    """Cut tracks into scene windows.

    Anchors are ``f0 + (t_in-1)*frame_step + m*stride*frame_step`` where
    ``f0`` is the earliest frame. A vehicle joins a window when it has all
    ``t_in`` history frames ending at the anchor; missing future frames
    are masked. ``stride`` defaults to ``t_in + t_out`` (non-overlapping).
    """
    if stride is None:
        stride = t_in + t_out
    if stride < 1:
        raise ConfigError("stride must be >= 1")
    per_vehicle = {vid: {p.frame: (p.x, p.y) for p in pts}
                   for vid, pts in _by_vehicle(tracks).items()}
    if not per_vehicle:
        return []
    f0 = min(min(f) for f in per_vehicle.values())
    f_last = max(max(f) for f in per_vehicle.values())
    windows = []
    anchor = f0 + (t_in - 1) * frame_step
    while anchor <= f_last:
        hist_frames = [anchor - (t_in - 1 - s) * frame_step for s in range(t_in)]
        fut_frames = [anchor + (k + 1) * frame_step for k in range(t_out)]
        ids, hist, fut, mask = [], [], [], []
        for vid, frames in per_vehicle.items():
            if not all(f in frames for f in hist_frames):
                continue
            ids.append(vid)
            hist.append([frames[f] for f in hist_frames])
            fut.append([frames.get(f, (0.0, 0.0)) for f in fut_frames])
            mask.append([1.0 if f in frames else 0.0 for f in fut_frames])
        if ids:
            pos = np.asarray(hist, dtype=np.float64)
            windows.append(SceneWindow(
                time_index=anchor,
                positions_in=pos,
                displacements_in=displacements(pos),
                futures=np.asarray(fut, dtype=np.float64),
                mask=np.asarray(mask, dtype=np.float64),
                last_positions=pos[:, -1].copy(),
                vehicle_ids=np.asarray(ids, dtype=np.int64),
                units=units,
            ))
        anchor += stride * frame_step
    return windows


# -- synthetic scenes -------------------------------------------------------

@dataclass
class SyntheticSpec:
    """Seeded highway scene generator settings (units per frame for speeds)."""

    n_vehicles: int = 8
    lane_count: int = 3
    lane_width: float = 3.5
    speed_range: tuple = (0.8, 1.6)
    maneuver_mix: tuple = (0.6, 0.2, 0.2)  # lane-keep, lane-change, stop-and-go
    noise_std: float = 0.02
    seed: int = 0
    road_length: float = 60.0
    min_gap: float = 2.0
    change_frames: tuple = (15, 30)   # duration range of a lane change
    stop_go_period: tuple = (40, 80)  # frames per speed oscillation
    stop_go_amplitude: tuple = (0.3, 0.8)

    def validate(self) -> None:
        if self.n_vehicles < 1:
            raise ConfigError("n_vehicles must be >= 1")
        if self.lane_count < 1:
            raise ConfigError("lane_count must be >= 1")
        mix = tuple(self.maneuver_mix)
        if len(mix) != 3 or any(f < 0 for f in mix) or not math.isclose(sum(mix), 1.0, abs_tol=1e-9):
            raise ConfigError(f"maneuver_mix must be three non-negative fractions summing to 1, got {mix}")
        lo, hi = self.speed_range
        if lo < 0 or hi < lo:
            raise ConfigError(f"invalid speed_range {self.speed_range}")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be >= 0")
        if self.min_gap <= 0 or self.road_length <= 0:
            raise ConfigError("min_gap and road_length must be positive")
        if self.n_vehicles > self.capacity():
            raise ConfigError(
                f"{self.n_vehicles} vehicles exceed lane capacity {self.capacity()} "
                f"({self.lane_count} lanes x {self.road_length} units / {self.min_gap} gap)")

    def capacity(self) -> int:
        return self.lane_count * (int(math.floor(self.road_length / self.min_gap)) + 1)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown synthetic spec fields {sorted(unknown)}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kw)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def lane_change_profile(progress) -> np.ndarray:
    """Logistic ramp rescaled to hit exactly 0 at progress<=0 and 1 at progress>=1."""
    p = np.clip(np.asarray(progress, dtype=np.float64), 0.0, 1.0)
    a = 10.0
    lo = 1.0 / (1.0 + math.exp(a / 2))
    hi = 1.0 / (1.0 + math.exp(-a / 2))
    return (1.0 / (1.0 + np.exp(-a * (p - 0.5))) - lo) / (hi - lo)


def synthesize(spec: SyntheticSpec, duration_frames: int, t_in: int = T_IN,
               t_out: int = T_OUT) -> list[TrackPoint]:
    """Generate a deterministic multi-lane scene of ``duration_frames`` frames."""
    spec.validate()
    if duration_frames < t_in + t_out:
        raise ConfigError(f"duration_frames must be >= t_in + t_out = {t_in + t_out}")
    rng = np.random.default_rng(spec.seed)
    slots_per_lane = spec.capacity() // spec.lane_count
    slot_ids = rng.choice(spec.lane_count * slots_per_lane, size=spec.n_vehicles, replace=False)
    kinds = rng.choice(3, size=spec.n_vehicles, p=np.asarray(spec.maneuver_mix) / sum(spec.maneuver_mix))
    k = np.arange(duration_frames, dtype=np.float64)
    points = []
    for vid, (slot, kind) in enumerate(zip(slot_ids.tolist(), kinds.tolist())):
        lane, s = divmod(slot, slots_per_lane)
        x0 = s * spec.min_gap
        y0 = (lane + 0.5) * spec.lane_width
        v = rng.uniform(*spec.speed_range)
        if kind == 2:  # stop-and-go: speed v*(1 + A sin(wk + phi)), integrated in closed form
            period = rng.uniform(*spec.stop_go_period)
            amp = rng.uniform(*spec.stop_go_amplitude)
            phi = rng.uniform(0, 2 * math.pi)
            w = 2 * math.pi / period
            x = x0 + v * k + v * amp / w * (math.cos(phi) - np.cos(w * k + phi))
        else:
            x = x0 + v * k
        y = np.full(duration_frames, y0)
        if kind == 1:
            if spec.lane_count > 1:
                target = lane + 1 if lane + 1 < spec.lane_count and (lane == 0 or rng.random() < 0.5) else lane - 1
            else:
                target = lane
            length = int(rng.integers(spec.change_frames[0], spec.change_frames[1] + 1))
            start = int(rng.integers(0, max(1, duration_frames - length)))
            y1 = (target + 0.5) * spec.lane_width
            y = y0 + (y1 - y0) * lane_change_profile((k - start) / length)
        if spec.noise_std > 0:
            x = x + rng.normal(0.0, spec.noise_std, duration_frames)
            y = y + rng.normal(0.0, spec.noise_std, duration_frames)
        points.extend(TrackPoint(vid, f, float(px), float(py))
                      for f, px, py in zip(range(duration_frames), x, y))
    return points


def synthesize_corpus(spec: SyntheticSpec, n_windows: int, scenes: int | None = None,
                      stride: int = 5, t_in: int = T_IN, t_out: int = T_OUT) -> list[SceneWindow]:
    """Concatenate windows from several seeded scenes until ``n_windows`` are collected."""
    if scenes is None:
        scenes = max(1, math.ceil(n_windows / 16))
    per_scene = math.ceil(n_windows / scenes)
    duration = t_in + t_out + (per_scene - 1) * stride
    seeds = np.random.SeedSequence(spec.seed).spawn(scenes)
    out: list[SceneWindow] = []
    for ss in seeds:
        sub = SyntheticSpec(**{**asdict(spec), "seed": int(ss.generate_state(1)[0])})
        out.extend(window(synthesize(sub, duration, t_in, t_out), t_in, t_out, stride)[:per_scene])
        if len(out) >= n_windows:
            break
    return out[:n_windows]


# -- dataset container ------------------------------------------------------

def save_windows(path, windows: Sequence[SceneWindow], meta: dict | None = None):
    """Store windows as one container; all payloads are float64."""
    if windows:
        counts = np.array([w.n for w in windows], dtype=np.float64)
        arrays = {
            "counts": counts,
            "time_index": np.array([w.time_index for w in windows], dtype=np.float64),
            "positions_in": np.concatenate([w.positions_in for w in windows]),
            "futures": np.concatenate([w.futures for w in windows]),
            "mask": np.concatenate([w.mask for w in windows]),
            "vehicle_ids": np.concatenate([w.vehicle_ids for w in windows]).astype(np.float64),
        }
        t_in, t_out = windows[0].t_in, windows[0].t_out
        units = windows[0].units
    else:
        arrays = {}
        t_in = t_out = 0
        units = "meters"
    info = {"kind": "scene-windows", "n_windows": len(windows), "t_in": t_in,
            "t_out": t_out, "units": units}
    info.update(meta or {})
    return container.save(path, arrays, info)


def load_windows(path) -> tuple[list[SceneWindow], dict]:
    arrays, meta = container.load(path)
    if meta.get("kind") != "scene-windows":
        raise container.ContainerError(f"{path} is not a scene-window dataset")
    if meta.get("n_windows", 0) == 0:
        return [], meta
    counts = arrays["counts"].astype(np.int64)
    bounds = np.concatenate([[0], np.cumsum(counts)])
    units = meta.get("units", "meters")
    out = []
    for w, (a, b) in enumerate(zip(bounds[:-1], bounds[1:])):
        pos = arrays["positions_in"][a:b].copy()
        out.append(SceneWindow(
            time_index=int(arrays["time_index"][w]),
            positions_in=pos,
            displacements_in=displacements(pos),
            futures=arrays["futures"][a:b].copy(),
            mask=arrays["mask"][a:b].copy(),
            last_positions=pos[:, -1].copy(),
            vehicle_ids=arrays["vehicle_ids"][a:b].astype(np.int64),
            units=units,
        ))
    return out, meta
