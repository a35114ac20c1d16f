"""Masked l2 objective, Adam with a multi-step schedule, and the training loop."""
from __future__ import annotations

import csv
import logging
import math
import tempfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import metrics
from . import numerics as nx
from .data import SceneWindow
from .edge_builder import DETERMINISTIC, SAMPLED
from .model import EdgeVTP, ModelConfig, batch_edges, fit_scales, make_batch
from .numerics import Tensor

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, snapshot: Path | None):
        super().__init__(message)
        self.snapshot = snapshot


@dataclass
class TrainConfig:
    epochs: int = 80
    lr: float = 1e-2
    weight_decay: float = 5e-4
    milestones: tuple = (40, 60, 70)
    gamma: float = 0.1
    batch_size: int = 16
    dropout: float = 0.2
    seed: int = 0
    radius: float = 20.0
    k: float = 16
    residual: bool = False
    t_in: int = 15
    t_out: int = 25
    sample_edges: bool = True
    decoupled_weight_decay: bool = False
    d_main: int = 64
    d_branch: int = 32
    d_model: int = 64
    d_ff: int = 128
    n_layers: int = 2
    n_heads: int = 2
    gie_layers: int = 1
    pos_encoding: bool = True
    layer_norm: bool = True
    normalize_inputs: bool = True
    grad_clip: float | None = 50.0
    checkpoint_every: int = 0
    checkpoint_dir: str | None = None

    def validate(self) -> None:
        ms = list(self.milestones)
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ValueError(f"milestones must be strictly increasing, got {ms}")
        if self.epochs > 0 and ms and ms[-1] >= self.epochs:
            raise ValueError(f"milestones {ms} must be < epochs={self.epochs}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"decay factor must lie in (0, 1), got {self.gamma}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")

    def model_config(self) -> ModelConfig:
        names = {f.name for f in fields(ModelConfig)}
        return ModelConfig.from_dict({k: v for k, v in asdict(self).items() if k in names}
                                     | {"radius": self.radius, "k": self.k})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["milestones"] = list(self.milestones)
        if isinstance(self.k, float) and math.isinf(self.k):
            d["k"] = "inf"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown training config keys {sorted(unknown)}")
        kw = dict(d)
        if "milestones" in kw:
            kw["milestones"] = tuple(int(m) for m in kw["milestones"])
        if kw.get("k") == "inf":
            kw["k"] = math.inf
        return cls(**kw)


# -- objective --------------------------------------------------------------

def masked_l2_loss(pred, target, mask, slot_weight=None) -> Tensor:
    """(1/(N*T_out)) * sum_i sum_k m_i^k ||pred - target||^2.

    The denominator counts every slot, masked or not. ``slot_weight`` (per
    vehicle) replaces 1/(N*T_out) when several windows share a batch.
    """
    pred = pred if isinstance(pred, Tensor) else Tensor(pred)
    target = np.asarray(target, dtype=pred.dtype)
    mask = np.asarray(mask, dtype=pred.dtype)
    if pred.shape != target.shape or mask.shape != pred.shape[:-1]:
        raise nx.DimensionError(
            f"loss shapes pred={pred.shape} target={target.shape} mask={mask.shape}")
    n, t_out = mask.shape
    if slot_weight is None:
        slot_weight = np.full(n, 1.0 / (n * t_out))
    # zero the masked targets so their values cannot leak into the loss
    target = np.where(mask[..., None] > 0, target, 0.0)
    w = (mask * np.asarray(slot_weight, dtype=pred.dtype)[:, None])[..., None]
    diff = nx.sub(pred, Tensor(target))
    return nx.sum_all(nx.mul(nx.square(diff), Tensor(w)))


# -- schedule + optimizer ---------------------------------------------------

def lr_at(epoch: int, config: TrainConfig) -> float:
    passed = sum(1 for m in config.milestones if m <= epoch)
    # divide by the integer-valued 1/gamma: 0.01 * 0.1**2 is 1.0000000000000002e-04,
    # while 0.01 / 10.0**2 rounds to the same double as the literal 1e-4
    return config.lr / (1.0 / config.gamma) ** passed


@dataclass
class OptimizerState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def optimizer_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: OptimizerState,
                   lr: float, weight_decay: float = 0.0, decoupled: bool = False) -> None:
    """One Adam update in place. Coupled decay adds wd*param to the gradient."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if weight_decay and not decoupled:
            g = g + weight_decay * p.data
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        if weight_decay and decoupled:
            update = update + lr * weight_decay * p.data
        p.data = p.data - update


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Rescale every gradient in place so the global l2 norm is at most ``max_norm``."""
    total = math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for name in grads:
            grads[name] = grads[name] * scale
    return total


# -- loop -------------------------------------------------------------------

@dataclass
class FitResult:
    model: EdgeVTP
    history: list  # (epoch, mean_loss, lr)


def split_seeds(seed: int) -> dict[str, int]:
    """Deterministic per-subsystem seeds derived from one root seed."""
    names = ("data", "edges", "init", "shuffle", "dropout")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: int(c.generate_state(1)[0]) for n, c in zip(names, children)}


def fit(dataset: Sequence[SceneWindow], config: TrainConfig, model: EdgeVTP | None = None,
        on_epoch=None) -> FitResult:
    """Train on ``dataset`` with shuffled batches, sampled edges, Adam and the lr schedule."""
    config.validate()
    if not dataset:
        raise ValueError("training dataset is empty")
    seeds = split_seeds(config.seed)
    cfg = config.model_config()
    cfg.dropout = config.dropout
    if model is None:
        if config.normalize_inputs:
            for key, value in fit_scales(dataset, cfg.center).items():
                setattr(cfg, key, value)
        model = EdgeVTP(cfg, seed=seeds["init"])
    cfg = model.cfg
    shuffle_rng = np.random.default_rng(seeds["shuffle"])
    edge_rng = np.random.default_rng(seeds["edges"])
    drop_rng = np.random.default_rng(seeds["dropout"])
    state = OptimizerState()
    mode = SAMPLED if config.sample_edges else DETERMINISTIC
    history = []
    n = len(dataset)
    for epoch in range(config.epochs):
        lr = lr_at(epoch, config)
        order = shuffle_rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            windows = [dataset[i] for i in order[start:start + config.batch_size]]
            batch = make_batch(windows, cfg.center)
            edges = batch_edges(batch, cfg.radius, cfg.k, mode, edge_rng)
            with nx.Tape() as tape:
                pred = model.forward(batch, edges, drop_rng if cfg.dropout > 0 else None)
                loss = masked_l2_loss(pred, batch.futures, batch.mask, batch.slot_weight)
            value = float(loss.data)
            if not math.isfinite(value):
                snap = _snapshot(model, config, epoch, start)
                raise TrainingDiverged(
                    f"non-finite loss {value} at epoch {epoch}, batch offset {start}", snap)
            grads = tape.backward(loss)
            named = {name: grads[p] for name, p in model.params.items() if p in grads}
            if config.grad_clip:
                clip_grad_norm(named, config.grad_clip)
            optimizer_step(model.params, named, state, lr, config.weight_decay,
                           config.decoupled_weight_decay)
            losses.append(value)
        history.append((epoch, float(np.mean(losses)), lr))
        log.info("epoch %d loss %.6f lr %.1e", epoch, history[-1][1], lr)
        if on_epoch is not None:
            on_epoch(epoch, history[-1][1])
        if config.checkpoint_every and config.checkpoint_dir and (epoch + 1) % config.checkpoint_every == 0:
            model.save(Path(config.checkpoint_dir) / f"epoch{epoch + 1:03d}",
                       {"train": config.to_dict(), "epoch": epoch + 1})
    return FitResult(model, history)


def _snapshot(model: EdgeVTP, config: TrainConfig, epoch: int, offset: int) -> Path:
    base = Path(config.checkpoint_dir) if config.checkpoint_dir else Path(tempfile.mkdtemp(prefix="edgevtp-"))
    path = base / "divergence_snapshot"
    model.save(path, {"train": config.to_dict(), "epoch": epoch, "batch_offset": offset,
                      "diverged": True})
    return path


def write_history_csv(path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "mean_loss", "lr"])
        for epoch, loss, lr in history:
            w.writerow([epoch, repr(float(loss)), repr(float(lr))])


def predict_windows(model: EdgeVTP, dataset: Sequence[SceneWindow]):
    """Stacked absolute predictions, targets and masks over all windows (eval mode)."""
    preds, targets, masks = [], [], []
    for w, (_, samples) in zip(dataset, model.predict(dataset)):
        preds.append(samples)
        targets.append(w.futures)
        masks.append(w.mask)
    return np.concatenate(preds), np.concatenate(targets), np.concatenate(masks)


def evaluate(dataset: Sequence[SceneWindow], model: EdgeVTP, rate_hz: int = 5) -> metrics.MetricReport:
    """Deterministic edges, dropout off; empty dataset gives an empty report."""
    if not dataset:
        return metrics.MetricReport()
    pred, target, mask = predict_windows(model, dataset)
    return metrics.report(pred, target, mask, rate_hz)
