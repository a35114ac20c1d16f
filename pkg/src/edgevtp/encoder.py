"""Temporal projection, GIN-style interaction encoding and gated residual fusion."""
from __future__ import annotations

import numpy as np

from . import numerics as nx
from .numerics import ContractError, DimensionError, Tensor


def init_encoder_params(cfg, rng: np.random.Generator) -> dict[str, Tensor]:
    d, db, t_in = cfg.d_main, cfg.d_branch, cfg.t_in
    p = {}

    def lin(name, fan_in, fan_out):
        p[f"{name}.w"] = nx.kaiming_uniform(rng, fan_in, (fan_in, fan_out), f"{name}.w")
        p[f"{name}.b"] = nx.kaiming_uniform(rng, fan_in, (fan_out,), f"{name}.b")

    lin("enc.temp", 4 * t_in, d)
    for layer in range(cfg.gie_layers):
        lin(f"enc.gie.{layer}", d, d)
    if cfg.residual:
        lin("enc.temp_cx", 2 * t_in, db)
        lin("enc.temp_d", 2 * t_in, db)
        for layer in range(cfg.gie_layers):
            lin(f"enc.gie_cx.{layer}", db, db)
            lin(f"enc.gie_d.{layer}", db, db)
        # no bias: zero branches must leave the main feature untouched
        p["enc.proj.w"] = nx.kaiming_uniform(rng, db, (db, d), "enc.proj.w")
        p["enc.alpha"] = Tensor(np.array(cfg.gate_init), requires_grad=True, name="enc.alpha")
        p["enc.beta"] = Tensor(np.array(cfg.gate_init), requires_grad=True, name="enc.beta")
    return p


def temporal_encode(positions_in, displacements_in, params, cfg, rng=None) -> dict:
    """Project flattened histories to node embeddings.

    Returns ``{"main": h_main}`` plus ``"cx"`` and ``"d"`` branch embeddings
    when residual separation is on.
    """
    pos = np.asarray(positions_in)
    disp = np.asarray(displacements_in)
    n, t_in = pos.shape[:2]
    if pos.shape != (n, cfg.t_in, 2) or disp.shape != pos.shape:
        raise DimensionError(
            f"histories must be (N, {cfg.t_in}, 2); got {pos.shape} and {disp.shape}")
    dtype = params["enc.temp.w"].dtype
    x_cx = pos.reshape(n, 2 * t_in).astype(dtype, copy=False)
    x_d = disp.reshape(n, 2 * t_in).astype(dtype, copy=False)
    x_real = Tensor(np.concatenate([x_cx, x_d], axis=1))
    slope = cfg.leaky_slope
    h = nx.leaky_relu(nx.linear(x_real, params["enc.temp.w"], params["enc.temp.b"]), slope)
    out = {"main": nx.dropout(h, cfg.dropout, rng)}
    if cfg.residual:
        h_cx = nx.leaky_relu(nx.linear(Tensor(x_cx), params["enc.temp_cx.w"], params["enc.temp_cx.b"]), slope)
        h_d = nx.leaky_relu(nx.linear(Tensor(x_d), params["enc.temp_d.w"], params["enc.temp_d.b"]), slope)
        out["cx"] = nx.dropout(h_cx, cfg.dropout, rng)
        out["d"] = nx.dropout(h_d, cfg.dropout, rng)
    return out


def gie_forward(h: Tensor, edges, layers, slope: float = 0.01) -> Tensor:
    """z_i = MLP(h_i + sum_{j in E_i} h_j), repeated once per (w, b) in ``layers``."""
    n = h.shape[0]
    if edges.n != n:
        raise ContractError(f"edge set covers {edges.n} vehicles but features have {n} rows")
    if len(edges.neighbors) and (edges.neighbors.min() < 0 or edges.neighbors.max() >= n):
        raise ContractError(f"neighbor index out of range for {n} vehicles")
    adj = edges.adjacency(dtype=h.dtype)
    z = h
    for w, b in layers:
        z = nx.leaky_relu(nx.linear(nx.neighbor_sum(z, adj), w, b), slope)
    return z


def residual_fuse(z_main: Tensor, z_cx: Tensor | None, z_d: Tensor | None,
                  alpha: Tensor | None, beta: Tensor | None, proj_w: Tensor | None) -> Tensor:
    """z = z_main + alpha * Proj(z_cx) + beta * Proj(z_d); z_main alone without branches."""
    if z_cx is None or z_d is None:
        return z_main
    return nx.add(nx.add(z_main, nx.mul(alpha, nx.matmul(z_cx, proj_w))),
                  nx.mul(beta, nx.matmul(z_d, proj_w)))


def sinusoid_table(length: int, width: int) -> np.ndarray:
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(width)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / width)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def to_sequence(z: Tensor, t_in: int, pos_encoding: bool = True) -> Tensor:
    """Tile z over ``t_in`` slots (N, t_in, D), adding the sinusoid table when enabled."""
    n, d = z.shape
    table = sinusoid_table(t_in, d) if pos_encoding else np.zeros((t_in, d))
    return nx.add(nx.reshape(z, (n, 1, d)), Tensor(table[None].astype(z.dtype)))


def encode(positions_in, displacements_in, edges, params, cfg, rng=None) -> Tensor:
    """Full encoder: temporal projection, GIE, fusion. Returns z of shape (N, D)."""
    h = temporal_encode(positions_in, displacements_in, params, cfg, rng)
    slope = cfg.leaky_slope
    main_layers = [(params[f"enc.gie.{l}.w"], params[f"enc.gie.{l}.b"]) for l in range(cfg.gie_layers)]
    z_main = gie_forward(h["main"], edges, main_layers, slope)
    if not cfg.residual:
        return z_main
    cx_layers = [(params[f"enc.gie_cx.{l}.w"], params[f"enc.gie_cx.{l}.b"]) for l in range(cfg.gie_layers)]
    d_layers = [(params[f"enc.gie_d.{l}.w"], params[f"enc.gie_d.{l}.b"]) for l in range(cfg.gie_layers)]
    z_cx = gie_forward(h["cx"], edges, cx_layers, slope)
    z_d = gie_forward(h["d"], edges, d_layers, slope)
    return residual_fuse(z_main, z_cx, z_d, params["enc.alpha"], params["enc.beta"],
                         params["enc.proj.w"])
