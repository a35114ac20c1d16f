"""EdgeVTP model: configuration, parameters, batching and the forward pipeline."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from . import curve_head, decoder, encoder
from . import numerics as nx
from .data import SceneWindow
from .edge_builder import DETERMINISTIC, EdgeSet, build_edges
from .numerics import Tensor, container


@dataclass
class ModelConfig:
    t_in: int = 15
    t_out: int = 25
    d_main: int = 64
    d_branch: int = 32
    d_model: int = 64
    d_ff: int = 128
    n_layers: int = 2
    n_heads: int = 2
    gie_layers: int = 1
    residual: bool = False
    pos_encoding: bool = True
    layer_norm: bool = True
    dropout: float = 0.2
    leaky_slope: float = 0.01
    gate_init: float = 0.1
    radius: float = 20.0
    k: float = 16
    center: bool = True
    pos_scale: float = 1.0
    disp_shift: tuple = (0.0, 0.0)
    disp_scale: tuple = (1.0, 1.0)
    out_scale: float = 1.0

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        kw = {k: v for k, v in d.items() if k in names}
        for key in ("disp_shift", "disp_scale"):
            if key in kw:
                kw[key] = tuple(float(v) for v in kw[key])
        if "k" in kw and kw["k"] is not None and not (isinstance(kw["k"], float) and math.isinf(kw["k"])):
            kw["k"] = int(kw["k"]) if float(kw["k"]).is_integer() else kw["k"]
        return cls(**kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["disp_shift"] = list(self.disp_shift)
        d["disp_scale"] = list(self.disp_scale)
        if isinstance(d["k"], float) and math.isinf(d["k"]):
            d["k"] = "inf"
        return d


@dataclass
class Batch:
    """Several windows flattened into one block-diagonal vehicle set."""

    positions: np.ndarray      # (V, T_in, 2), centered per window
    displacements: np.ndarray  # (V, T_in, 2)
    anchors: np.ndarray        # (V, 2), centered
    futures: np.ndarray        # (V, T_out, 2), centered (masked slots stay 0)
    mask: np.ndarray           # (V, T_out)
    shift: np.ndarray          # (V, 2) offset subtracted from every coordinate
    window_index: np.ndarray   # (V,)
    counts: np.ndarray         # (B,)
    slot_weight: np.ndarray    # (V,) 1 / (N_w * T_out * B)

    @property
    def n_vehicles(self) -> int:
        return self.positions.shape[0]


def make_batch(windows: Sequence[SceneWindow], center: bool = True) -> Batch:
    pos, fut, mask, shift, widx, counts, weight = [], [], [], [], [], [], []
    b = len(windows)
    for i, w in enumerate(windows):
        c = w.last_positions.mean(axis=0) if center else np.zeros(2)
        pos.append(w.positions_in - c)
        fut.append(np.where(w.mask[..., None] > 0, w.futures - c, 0.0))
        mask.append(w.mask)
        shift.append(np.broadcast_to(c, (w.n, 2)))
        widx.append(np.full(w.n, i))
        counts.append(w.n)
        weight.append(np.full(w.n, 1.0 / (w.n * w.t_out * b)))
    positions = np.concatenate(pos)
    # displacements are translation invariant; reuse the stored ones to stay bit-exact
    disp = np.concatenate([w.displacements_in for w in windows])
    return Batch(
        positions=positions,
        displacements=disp,
        anchors=positions[:, -1].copy(),
        futures=np.concatenate(fut),
        mask=np.concatenate(mask),
        shift=np.concatenate(shift),
        window_index=np.concatenate(widx).astype(np.int64),
        counts=np.asarray(counts, dtype=np.int64),
        slot_weight=np.concatenate(weight),
    )


def fit_scales(windows: Sequence[SceneWindow], center: bool = True) -> dict:
    """Fixed standardization constants fitted once on a training corpus.

    pos_scale is the RMS of centered observed positions, disp_shift/disp_scale the
    per-axis mean/std of observed displacements (the all-zero first slot excluded)
    and out_scale the RMS of visible future offsets from the last observed position.
    Degenerate scales fall back to 1.
    """
    if not windows:
        return {"pos_scale": 1.0, "disp_shift": (0.0, 0.0), "disp_scale": (1.0, 1.0), "out_scale": 1.0}
    pos = np.concatenate([(w.positions_in - (w.last_positions.mean(axis=0) if center else 0.0)).reshape(-1)
                          for w in windows])
    disp = np.concatenate([w.displacements_in[:, 1:].reshape(-1, 2) for w in windows])
    off = np.concatenate([(w.futures - w.last_positions[:, None])[w.mask > 0].reshape(-1)
                          for w in windows])

    def rms(v):
        r = float(np.sqrt(np.mean(np.square(v)))) if v.size else 0.0
        return r if r > 1e-12 else 1.0

    mean = disp.mean(axis=0) if len(disp) else np.zeros(2)
    std = disp.std(axis=0) if len(disp) else np.ones(2)
    std = np.where(std > 1e-9, std, 1.0)
    return {"pos_scale": rms(pos), "disp_shift": tuple(float(v) for v in mean),
            "disp_scale": tuple(float(v) for v in std), "out_scale": rms(off)}


def batch_edges(batch: Batch, r: float, k: float, mode: str = DETERMINISTIC, rng=None) -> EdgeSet:
    """Per-window edge sets stitched into one block-diagonal EdgeSet."""
    offsets = [np.zeros(1, np.int64)]
    neigh = []
    start = 0
    total = 0
    for n in batch.counts.tolist():
        e = build_edges(batch.anchors[start:start + n], r, k, mode, rng)
        neigh.append(e.neighbors + start)
        offsets.append(e.offsets[1:] + total)
        total += len(e.neighbors)
        start += n
    return EdgeSet(np.concatenate(offsets), np.concatenate(neigh) if neigh else np.empty(0, np.int64),
                   float(r), k, mode)


class EdgeVTP:
    """Parameters plus the forward pipeline: encoder -> decoder -> Bezier head."""

    def __init__(self, cfg: ModelConfig, params: dict[str, Tensor] | None = None, seed: int = 0):
        self.cfg = cfg
        self.seed = seed
        if params is None:
            rng = np.random.default_rng(seed)
            params = {}
            params.update(encoder.init_encoder_params(cfg, rng))
            params.update(decoder.init_decoder_params(cfg, rng))
            params.update(curve_head.init_head_params(cfg, rng))
        self.params = params

    @property
    def dtype(self):
        return self.params["enc.temp.w"].dtype

    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def astype(self, dtype) -> "EdgeVTP":
        """Frozen copy with every parameter cast (e.g. float32 for timing)."""
        params = {k: Tensor(v.data.astype(dtype), name=k) for k, v in self.params.items()}
        return EdgeVTP(self.cfg, params, self.seed)

    def control_points(self, positions, displacements, anchors, edges: EdgeSet, rng=None) -> Tensor:
        """Encoder, decoder and head for pre-centered inputs; returns (V, 5, 2)."""
        cfg = self.cfg
        dt = self.dtype
        # fixed (non-learned) input scaling; anchors and outputs stay in scene units
        positions = np.asarray(positions, dtype=np.float64) * (1.0 / cfg.pos_scale)
        displacements = ((np.asarray(displacements, dtype=np.float64) - np.asarray(cfg.disp_shift))
                         / np.asarray(cfg.disp_scale))
        positions = positions.astype(dt, copy=False)
        displacements = displacements.astype(dt, copy=False)
        z = encoder.encode(positions, displacements, edges, self.params, cfg, rng)
        seq = encoder.to_sequence(z, cfg.t_in, cfg.pos_encoding)
        memory = decoder.build_memory(displacements, seq)
        latent = decoder.decode_latent(memory, self.params, cfg, rng)
        return curve_head.head_forward(latent, anchors, self.params, cfg.out_scale)

    def forward(self, batch: Batch, edges: EdgeSet, rng=None) -> Tensor:
        """Differentiable predictions (V, T_out, 2) in the centered frame."""
        ctrl = self.control_points(batch.positions, batch.displacements, batch.anchors, edges, rng)
        return curve_head.bezier_curve(ctrl, self.cfg.t_out)

    def predict(self, windows: Sequence[SceneWindow], t_out: int | None = None):
        """Eval-mode absolute predictions per window: list of (ctrl (N,5,2), samples (N,T,2))."""
        t_out = t_out or self.cfg.t_out
        out = []
        for w in windows:
            batch = make_batch([w], self.cfg.center)
            edges = batch_edges(batch, self.cfg.radius, self.cfg.k)
            ctrl = self.control_points(batch.positions, batch.displacements, batch.anchors, edges).data
            ctrl = ctrl.astype(np.float64) + batch.shift[:, None, :]
            out.append((ctrl, curve_head.evaluate_bezier(ctrl, t_out)))
        return out

    # -- checkpoints ---------------------------------------------------------

    def save(self, path, extra_meta: dict | None = None):
        meta = {"kind": "edgevtp-checkpoint", "seed": self.seed, "model": self.cfg.to_dict(),
                "param_count": self.n_parameters()}
        meta.update(extra_meta or {})
        return container.save(path, {k: v.data for k, v in self.params.items()}, meta)

    @classmethod
    def load(cls, path) -> tuple["EdgeVTP", dict]:
        arrays, meta = container.load(path)
        if meta.get("kind") != "edgevtp-checkpoint":
            raise container.ContainerError(f"{path} is not an EdgeVTP checkpoint")
        mcfg = dict(meta["model"])
        if mcfg.get("k") == "inf":
            mcfg["k"] = math.inf
        cfg = ModelConfig.from_dict(mcfg)
        reference = cls(cfg, seed=meta.get("seed", 0))
        if set(arrays) != set(reference.params):
            raise container.ContainerError("checkpoint tensors do not match the model configuration")
        params = {}
        for name, ref in reference.params.items():
            if arrays[name].shape != ref.shape:
                raise container.ContainerError(
                    f"tensor {name!r} has shape {arrays[name].shape}, config expects {ref.shape}")
            params[name] = Tensor(arrays[name], requires_grad=True, name=name)
        return cls(cfg, params, meta.get("seed", 0)), meta
