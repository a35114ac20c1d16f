"""ADE, FDE and per-horizon RMSE over masked prediction slots."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

HORIZONS_S = (1, 2, 3, 4, 5)
SWEEP_COLUMNS = ["ID", "r", "K", "residual", "ADE", "FDE", "RMSE1", "RMSE2", "RMSE3",
                 "RMSE4", "RMSE5", "AVG", "params", "E2E_ms", "model_only_ms"]


class UndefinedMetricError(ValueError):
    """No unmasked slot contributes to the requested metric."""


def _errors(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} differs from target {target.shape}")
    return np.linalg.norm(pred - target, axis=-1)


def _mask(mask, shape):
    if mask is None:
        return np.ones(shape, dtype=bool)
    m = np.asarray(mask)
    if m.shape != shape:
        raise ValueError(f"mask shape {m.shape} differs from error grid {shape}")
    return m > 0


def ade(pred, target, mask=None) -> float:
    """Mean Euclidean error over every unmasked (vehicle, step) pair."""
    err = _errors(pred, target)
    m = _mask(mask, err.shape)
    if not m.any():
        raise UndefinedMetricError("ADE undefined: every slot is masked")
    return float(err[m].mean())


def fde(pred, target, mask=None) -> float:
    """Mean Euclidean error at the last step over vehicles visible there."""
    err = _errors(pred, target)
    m = _mask(mask, err.shape)
    last = m[..., -1]
    if not last.any():
        raise UndefinedMetricError("FDE undefined: no vehicle is visible at the final step")
    return float(err[..., -1][last].mean())


def rmse_at(pred, target, mask=None, horizon_s: float = 1, rate_hz: int = 5) -> float:
    """RMSE at the single step ending second ``horizon_s`` (step index horizon_s * rate_hz)."""
    err = _errors(pred, target)
    m = _mask(mask, err.shape)
    step = int(round(horizon_s * rate_hz))
    if step < 1 or step > err.shape[-1]:
        raise ValueError(f"horizon {horizon_s}s at {rate_hz} Hz is step {step}, outside 1..{err.shape[-1]}")
    col = m[..., step - 1]
    if not col.any():
        raise UndefinedMetricError(f"RMSE@{horizon_s}s undefined: step {step} fully masked")
    sq = err[..., step - 1][col] ** 2
    return float(np.sqrt(sq.mean()))


@dataclass
class MetricReport:
    ade: float = float("nan")
    fde: float = float("nan")
    rmse_by_horizon: dict = field(default_factory=dict)
    avg_rmse: float = float("nan")
    n_slots: int = 0
    n_final: int = 0

    @property
    def empty(self) -> bool:
        return self.n_slots == 0

    def row(self) -> dict:
        out = {"ADE": self.ade, "FDE": self.fde}
        for h in HORIZONS_S:
            out[f"RMSE{h}"] = self.rmse_by_horizon.get(h, float("nan"))
        out["AVG"] = self.avg_rmse
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = ["ADE", "FDE"] + [f"RMSE{h}" for h in HORIZONS_S] + ["AVG", "n_slots", "n_final"]
        w.writerow(cols)
        row = self.row()
        w.writerow([_fmt(row[c]) for c in cols[:-2]] + [self.n_slots, self.n_final])
        return buf.getvalue()


def _fmt(v) -> str:
    return repr(float(v))


def report(pred, target, mask=None, rate_hz: int = 5) -> MetricReport:
    """All metrics for one concatenated set; horizons beyond T_out are skipped."""
    err = _errors(pred, target)
    m = _mask(mask, err.shape)
    if err.size == 0 or not m.any():
        return MetricReport()
    rmse = {}
    for h in HORIZONS_S:
        if h * rate_hz <= err.shape[-1]:
            rmse[h] = rmse_at(pred, target, m, h, rate_hz)
    return MetricReport(
        ade=ade(pred, target, m),
        fde=fde(pred, target, m),
        rmse_by_horizon=rmse,
        avg_rmse=float(np.mean(list(rmse.values()))) if rmse else float("nan"),
        n_slots=int(m.sum()),
        n_final=int(m[..., -1].sum()),
    )
