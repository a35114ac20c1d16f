"""Decoder memory tokens and the compact one-query transformer decoder."""
from __future__ import annotations

import numpy as np

from . import numerics as nx
from .numerics import DimensionError, Tensor


def init_decoder_params(cfg, rng: np.random.Generator) -> dict[str, Tensor]:
    dm, dff = cfg.d_model, cfg.d_ff
    if dm % cfg.n_heads:
        raise ValueError(f"d_model={dm} is not divisible by n_heads={cfg.n_heads}")
    p = {}

    def lin(name, fan_in, fan_out):
        p[f"{name}.w"] = nx.kaiming_uniform(rng, fan_in, (fan_in, fan_out), f"{name}.w")
        p[f"{name}.b"] = nx.kaiming_uniform(rng, fan_in, (fan_out,), f"{name}.b")

    def norm(name):
        p[f"{name}.g"] = Tensor(np.ones(dm), requires_grad=True, name=f"{name}.g")
        p[f"{name}.b"] = Tensor(np.zeros(dm), requires_grad=True, name=f"{name}.b")

    lin("dec.in", 2 + cfg.d_main, dm)
    p["dec.query"] = nx.kaiming_uniform(rng, dm, (1, dm), "dec.query")
    if cfg.layer_norm:
        norm("dec.ln_mem")
    for l in range(cfg.n_layers):
        for block in ("self", "cross"):
            for proj in ("q", "k", "v", "o"):
                lin(f"dec.{l}.{block}.{proj}", dm, dm)
        lin(f"dec.{l}.ff1", dm, dff)
        lin(f"dec.{l}.ff2", dff, dm)
        if cfg.layer_norm:
            for ln in ("ln1", "ln2", "ln3"):
                norm(f"dec.{l}.{ln}")
    return p


def build_memory(displacements_in, z_seq: Tensor) -> Tensor:
    """Concatenate displacements (first two features) with the lifted encoder sequence."""
    disp = np.asarray(displacements_in)
    if disp.shape[:2] != z_seq.shape[:2] or disp.shape[-1] != 2:
        raise DimensionError(
            f"displacements {disp.shape} and encoder sequence {z_seq.shape} disagree")
    return nx.concat([Tensor(disp.astype(z_seq.dtype, copy=False)), z_seq], axis=-1)


def multi_head_attention(x_q: Tensor, x_kv: Tensor, params, prefix: str, n_heads: int) -> Tensor:
    n, lq, dm = x_q.shape
    lk = x_kv.shape[1]
    dh = dm // n_heads

    def heads(x, length, proj):
        y = nx.linear(x, params[f"{prefix}.{proj}.w"], params[f"{prefix}.{proj}.b"])
        return nx.transpose(nx.reshape(y, (n, length, n_heads, dh)), (0, 2, 1, 3))

    att = nx.scaled_dot_attention(heads(x_q, lq, "q"), heads(x_kv, lk, "k"), heads(x_kv, lk, "v"))
    merged = nx.reshape(nx.transpose(att, (0, 2, 1, 3)), (n, lq, dm))
    return nx.linear(merged, params[f"{prefix}.o.w"], params[f"{prefix}.o.b"])


def _norm(x, params, name, cfg):
    if not cfg.layer_norm:
        return x
    return nx.layer_norm(x, params[f"{name}.g"], params[f"{name}.b"])


def decode_latent(memory: Tensor, params, cfg, rng=None) -> Tensor:
    """One learned query through ``n_layers`` pre-norm decoder layers; returns (N, d_model).

    Runs exactly once per call whatever the prediction horizon.
    """
    n, t_in, _ = memory.shape
    dm = cfg.d_model
    mem = _norm(nx.linear(memory, params["dec.in.w"], params["dec.in.b"]), params, "dec.ln_mem", cfg)
    x = nx.add(Tensor(np.zeros((n, 1, dm), dtype=mem.dtype)), params["dec.query"])
    for l in range(cfg.n_layers):
        y = _norm(x, params, f"dec.{l}.ln1", cfg)
        x = nx.add(x, multi_head_attention(y, y, params, f"dec.{l}.self", cfg.n_heads))
        y = _norm(x, params, f"dec.{l}.ln2", cfg)
        x = nx.add(x, multi_head_attention(y, mem, params, f"dec.{l}.cross", cfg.n_heads))
        y = _norm(x, params, f"dec.{l}.ln3", cfg)
        hidden = nx.leaky_relu(nx.linear(y, params[f"dec.{l}.ff1.w"], params[f"dec.{l}.ff1.b"]),
                               cfg.leaky_slope)
        hidden = nx.dropout(hidden, cfg.dropout, rng)
        x = nx.add(x, nx.linear(hidden, params[f"dec.{l}.ff2.w"], params[f"dec.{l}.ff2.b"]))
    return nx.reshape(x, (n, dm))
