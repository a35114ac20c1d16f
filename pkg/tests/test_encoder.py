import numpy as np
import pytest

from edgevtp import encoder
from edgevtp.edge_builder import EdgeSet, build_edges
from edgevtp.numerics import ContractError, DimensionError, Tensor

import oracles
from conftest import tiny_model_config


def _edges(lists):
    offsets = np.concatenate([[0], np.cumsum([len(r) for r in lists])]).astype(np.int64)
    neigh = np.array([j for r in lists for j in r], dtype=np.int64)
    return EdgeSet(offsets, neigh, 1.0, 8)


def _history(rng, n, t_in):
    pos = rng.normal(size=(n, t_in, 2))
    disp = np.zeros_like(pos)
    disp[:, 1:] = np.diff(pos, axis=1)
    return pos, disp


def _params(cfg, seed=0):
    return encoder.init_encoder_params(cfg, np.random.default_rng(seed))


# -- temporal projection ----------------------------------------------------

def test_zero_history_zero_bias_gives_zero_embedding():
    cfg = tiny_model_config()
    p = _params(cfg)
    p["enc.temp.b"].data[:] = 0
    h = encoder.temporal_encode(np.zeros((2, 5, 2)), np.zeros((2, 5, 2)), p, cfg)
    assert np.all(h["main"].data == 0)


def test_default_widths_shape():
    cfg = tiny_model_config(t_in=15, d_main=64)
    h = encoder.temporal_encode(np.ones((1, 15, 2)), np.zeros((1, 15, 2)), _params(cfg), cfg)
    assert h["main"].shape == (1, 64)
    assert set(h) == {"main"}


def test_temporal_projection_matches_direct_formula(rng):
    cfg = tiny_model_config(residual=True)
    p = _params(cfg)
    pos, disp = _history(rng, 3, 5)
    h = encoder.temporal_encode(pos, disp, p, cfg)
    x_cx, x_d = pos.reshape(3, -1), disp.reshape(3, -1)
    expect = oracles.leaky(np.hstack([x_cx, x_d]) @ p["enc.temp.w"].data + p["enc.temp.b"].data, 0.01)
    np.testing.assert_allclose(h["main"].data, expect, rtol=0, atol=1e-12)
    expect_cx = oracles.leaky(x_cx @ p["enc.temp_cx.w"].data + p["enc.temp_cx.b"].data, 0.01)
    np.testing.assert_allclose(h["cx"].data, expect_cx, rtol=0, atol=1e-12)
    assert h["d"].shape == (3, cfg.d_branch)


def test_temporal_shape_mismatch():
    cfg = tiny_model_config()
    with pytest.raises(DimensionError):
        encoder.temporal_encode(np.zeros((2, 4, 2)), np.zeros((2, 4, 2)), _params(cfg), cfg)


# -- interaction encoding ---------------------------------------------------

def _identity_layer(d):
    return [(Tensor(np.eye(d)), Tensor(np.zeros(d)))]


def test_empty_edges_apply_mlp_only(rng):
    h = Tensor(rng.normal(size=(3, 4)))
    w, b = Tensor(rng.normal(size=(4, 4))), Tensor(rng.normal(size=4))
    z = encoder.gie_forward(h, _edges([[], [], []]), [(w, b)])
    np.testing.assert_allclose(z.data, oracles.leaky(h.data @ w.data + b.data, 0.01), atol=1e-14)


def test_mutual_edges_identical_features_are_symmetric(rng):
    row = rng.normal(size=4)
    z = encoder.gie_forward(Tensor(np.stack([row, row])), _edges([[1], [0]]),
                            [(Tensor(rng.normal(size=(4, 4))), Tensor(rng.normal(size=4)))])
    assert z.data[0].tobytes() == z.data[1].tobytes()


def test_line_graph_hand_sum():
    h = np.array([[1.0, 0.0], [0.0, 2.0], [3.0, 3.0]])
    z = encoder.gie_forward(Tensor(h), _edges([[1], [0, 2], [1]]), _identity_layer(2))
    assert z.data.tolist() == [[1.0, 2.0], [4.0, 5.0], [3.0, 5.0]]


def test_out_of_range_neighbor_is_contract_error():
    with pytest.raises(ContractError):
        encoder.gie_forward(Tensor(np.zeros((2, 2))), _edges([[5], []]), _identity_layer(2))


# -- residual fusion --------------------------------------------------------

def test_zero_gates_return_main(rng):
    zm = Tensor(rng.normal(size=(3, 4)))
    out = encoder.residual_fuse(zm, Tensor(rng.normal(size=(3, 2))), Tensor(rng.normal(size=(3, 2))),
                                Tensor(0.0), Tensor(0.0), Tensor(rng.normal(size=(2, 4))))
    np.testing.assert_array_equal(out.data, zm.data)


def test_initial_gates_with_zero_branches_return_main(rng):
    cfg = tiny_model_config(residual=True)
    p = _params(cfg)
    assert float(p["enc.alpha"].data) == float(p["enc.beta"].data) == 0.1
    zm = Tensor(rng.normal(size=(3, cfg.d_main)))
    zero = Tensor(np.zeros((3, cfg.d_branch)))
    out = encoder.residual_fuse(zm, zero, zero, p["enc.alpha"], p["enc.beta"], p["enc.proj.w"])
    np.testing.assert_array_equal(out.data, zm.data)


def test_fusion_matches_direct_formula(rng):
    zm, zc, zd = rng.normal(size=(3, 4)), rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
    w = rng.normal(size=(2, 4))
    out = encoder.residual_fuse(Tensor(zm), Tensor(zc), Tensor(zd), Tensor(0.3), Tensor(-0.7), Tensor(w))
    np.testing.assert_allclose(out.data, zm + 0.3 * (zc @ w) - 0.7 * (zd @ w), rtol=0, atol=1e-12)


def test_non_residual_returns_main_unchanged(rng):
    zm = Tensor(rng.normal(size=(2, 3)))
    assert encoder.residual_fuse(zm, None, None, None, None, None) is zm


# -- sequence lifting -------------------------------------------------------

def test_tiling_without_encoding():
    seq = encoder.to_sequence(Tensor([[1.0, 2.0]]), 4, pos_encoding=False)
    assert seq.data.tolist() == [[[1.0, 2.0]] * 4]


def test_sequence_shape():
    assert encoder.to_sequence(Tensor(np.zeros((3, 6))), 15).shape == (3, 15, 6)


def test_positional_encoding_matches_sinusoid(rng):
    z = rng.normal(size=(2, 6))
    seq = encoder.to_sequence(Tensor(z), 15).data
    for s in range(15):
        for i in range(6):
            assert seq[1, s, i] == pytest.approx(z[1, i] + oracles.sinusoid(s, i, 6), abs=1e-13)


# -- whole-encoder properties -----------------------------------------------

def test_permutation_equivariance(rng):
    cfg = tiny_model_config(residual=True)
    p = _params(cfg)
    pos, disp = _history(rng, 7, 5)
    pos *= 3
    disp[:, 1:] = np.diff(pos, axis=1)
    z = encoder.encode(pos, disp, build_edges(pos[:, -1], 4.0, 2), p, cfg).data
    perm = rng.permutation(7)
    zp = encoder.encode(pos[perm], disp[perm], build_edges(pos[perm, -1], 4.0, 2), p, cfg).data
    np.testing.assert_allclose(zp, z[perm], rtol=0, atol=1e-10)


def test_gate_ablation_is_bit_equal_to_main_branch(rng):
    cfg_res = tiny_model_config(residual=True)
    p = _params(cfg_res)
    p["enc.alpha"].data[...] = 0.0
    p["enc.beta"].data[...] = 0.0
    pos, disp = _history(rng, 5, 5)
    edges = build_edges(pos[:, -1], 2.0, 3)
    z_res = encoder.encode(pos, disp, edges, p, cfg_res).data
    z_main = encoder.encode(pos, disp, edges, p, tiny_model_config(residual=False)).data
    assert z_res.tobytes() == z_main.tobytes()


def test_one_hop_locality(rng):
    cfg = tiny_model_config(residual=True)
    p = _params(cfg)
    pos, disp = _history(rng, 4, 5)
    edges = _edges([[1], [0], [3], [2]])
    z = encoder.encode(pos, disp, edges, p, cfg).data
    pos[2:] = 0
    disp[2:] = 0
    z2 = encoder.encode(pos, disp, edges, p, cfg).data
    np.testing.assert_array_equal(z2[:2], z[:2])
    assert not np.array_equal(z2[2:], z[2:])
