"""One-shot degree-4 Bezier head: latent token -> 4 offsets -> T_out waypoints."""
from __future__ import annotations

import csv
from functools import lru_cache

import numpy as np

from . import kernels
from . import numerics as nx
from .numerics import Tensor

DEGREE = 4
BINOMIAL = (1.0, 4.0, 6.0, 4.0, 1.0)
N_OFFSET_OUTPUTS = 2 * DEGREE  # learned reals per vehicle, independent of T_out


def init_head_params(cfg, rng: np.random.Generator) -> dict[str, Tensor]:
    return {
        "head.w": nx.kaiming_uniform(rng, cfg.d_model, (cfg.d_model, N_OFFSET_OUTPUTS), "head.w"),
        "head.b": nx.kaiming_uniform(rng, cfg.d_model, (N_OFFSET_OUTPUTS,), "head.b"),
    }


def sample_params(t_out: int) -> np.ndarray:
    """u_s = s / t_out for s = 1..t_out."""
    if t_out < 1:
        raise ValueError("t_out must be >= 1")
    return np.arange(1, t_out + 1, dtype=np.float64) / t_out


@lru_cache(maxsize=32)
def _basis(t_out: int) -> np.ndarray:
    u = sample_params(t_out)
    v = 1.0 - u
    u2, v2 = u * u, v * v
    cols = (v2 * v2, u * v2 * v, u2 * v2, u2 * u * v, u2 * u2)
    b = np.stack([c * w for c, w in zip(cols, BINOMIAL)], axis=1)
    b.setflags(write=False)
    return b


def bernstein_basis(t_out: int) -> np.ndarray:
    """(t_out, 5) matrix B[s-1, k] = C(4,k) (1-u_s)^(4-k) u_s^k, cached per t_out."""
    return _basis(int(t_out))


def head_forward(latent: Tensor, anchors, params, out_scale: float = 1.0) -> Tensor:
    """Control points (N, 5, 2): P_0 = anchor, P_k = P_0 + out_scale * offset_k."""
    n = latent.shape[0]
    offsets = nx.reshape(nx.linear(latent, params["head.w"], params["head.b"]), (n, DEGREE, 2))
    if out_scale != 1.0:
        offsets = nx.mul(offsets, Tensor(np.asarray(out_scale, dtype=latent.dtype)))
    p0 = Tensor(np.asarray(anchors, dtype=latent.dtype).reshape(n, 1, 2))
    return nx.concat([p0, nx.add(p0, offsets)], axis=1)


def bezier_curve(ctrl: Tensor, t_out: int) -> Tensor:
    """Differentiable evaluation: (N, 5, 2) control points -> (N, t_out, 2) samples."""
    basis = Tensor(bernstein_basis(t_out).astype(ctrl.dtype, copy=False))
    return nx.matmul(basis, ctrl)


def evaluate_bezier(ctrl, t_out: int, impl=None) -> np.ndarray:
    """Samples at u_s = s/t_out for one (5, 2) or a batch (N, 5, 2) of control points."""
    ctrl = np.asarray(ctrl, dtype=np.float64)
    single = ctrl.ndim == 2
    out = kernels.bezier_eval(bernstein_basis(t_out), ctrl[None] if single else ctrl, impl=impl)
    return out[0] if single else out


def bezier_gradient(ctrl, upstream) -> np.ndarray:
    """dL/dP_k = sum_s B_k(u_s) * upstream_s; evaluation is linear in the control points."""
    upstream = np.asarray(upstream, dtype=np.float64)
    basis = bernstein_basis(upstream.shape[-2])
    return np.swapaxes(basis, 0, 1) @ upstream


def write_predictions_csv(path, ctrl: np.ndarray, samples: np.ndarray, vehicle_ids=None) -> None:
    """Rows ``vehicle_id, step, x, y`` followed by the five control points per vehicle."""
    ctrl = np.asarray(ctrl)
    samples = np.asarray(samples)
    ids = np.arange(len(ctrl)) if vehicle_ids is None else np.asarray(vehicle_ids)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["vehicle_id", "step", "x", "y"]
                   + [f"p{k}_{c}" for k in range(DEGREE + 1) for c in "xy"])
        for vid, cp, traj in zip(ids, ctrl, samples):
            flat = [repr(float(v)) for v in cp.reshape(-1)]
            for s, (x, y) in enumerate(traj, start=1):
                w.writerow([int(vid), s, repr(float(x)), repr(float(y))] + flat)
