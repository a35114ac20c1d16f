import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from edgevtp import numerics as nx
from edgevtp.numerics import ContractError, DimensionError, Tape, Tensor

import oracles


def _param(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def _fd_check(build, tensors, h=1e-6, tol=1e-7):
    """Compare tape gradients of scalar ``build()`` with central differences."""
    with Tape() as tape:
        loss = build()
    grads = tape.backward(loss)
    for t in tensors:
        num = np.zeros_like(t.data)
        for idx in np.ndindex(t.shape):
            orig = t.data[idx]
            t.data[idx] = orig + h
            up = float(build().data)
            t.data[idx] = orig - h
            down = float(build().data)
            t.data[idx] = orig
            num[idx] = (up - down) / (2 * h)
        np.testing.assert_allclose(grads[t], num, atol=tol, rtol=1e-6)


# -- matmul -----------------------------------------------------------------

def test_matmul_identity_returns_operand(rng):
    b = rng.normal(size=(3, 4))
    np.testing.assert_array_equal(nx.matmul(Tensor(np.eye(3)), Tensor(b)).data, b)


def test_matmul_scalar_product():
    assert nx.matmul(Tensor([[2.0]]), Tensor([[3.0]])).data.tolist() == [[6.0]]


def test_matmul_matches_triple_loop(rng):
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    np.testing.assert_allclose(nx.matmul(Tensor(a), Tensor(b)).data, oracles.naive_matmul(a, b),
                               rtol=0, atol=1e-14)


def test_matmul_mismatch_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 5\)"):
        nx.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))


def test_matmul_gradients(rng):
    a, b = _param(rng.normal(size=(3, 4))), _param(rng.normal(size=(4, 2)))
    w = rng.normal(size=(3, 2))
    _fd_check(lambda: nx.sum_all(nx.mul(nx.matmul(a, b), Tensor(w))), [a, b])


def test_batched_matmul_gradients(rng):
    a, b = _param(rng.normal(size=(2, 3, 4))), _param(rng.normal(size=(4, 5)))
    w = rng.normal(size=(2, 3, 5))
    _fd_check(lambda: nx.sum_all(nx.mul(nx.matmul(a, b), Tensor(w))), [a, b])


# -- leaky relu -------------------------------------------------------------

def test_leaky_relu_positive_passthrough():
    assert nx.leaky_relu(Tensor([2.0]), 0.01).data[0] == 2.0


def test_leaky_relu_negative_scaled():
    assert nx.leaky_relu(Tensor([-1.0]), 0.01).data[0] == pytest.approx(-0.01, abs=1e-15)


def test_leaky_relu_gradient_at_negative_input():
    x = _param([-3.0])
    with Tape() as tape:
        y = nx.sum_all(nx.leaky_relu(x, 0.01))
    g = tape.backward(y)[x][0]
    h = 1e-6
    fd = (0.01 * (-3.0 + h) - 0.01 * (-3.0 - h)) / (2 * h)
    assert g == pytest.approx(0.01, abs=1e-15)
    assert abs(g - fd) < 1e-8


@pytest.mark.parametrize("slope", [0.0, 1.0, -0.5, 2.0])
def test_leaky_relu_rejects_slope_outside_unit_interval(slope):
    with pytest.raises(ContractError):
        nx.leaky_relu(Tensor([1.0]), slope)


# -- attention --------------------------------------------------------------

def test_attention_single_key_returns_value(rng):
    q, k, v = (Tensor(rng.normal(size=(1, 4))) for _ in range(3))
    np.testing.assert_array_equal(nx.scaled_dot_attention(q, k, v).data, v.data)


def test_attention_orthogonal_query_is_uniform(rng):
    q = Tensor([[0.0, 0.0, 1.0]])
    k = Tensor([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]])
    v = rng.normal(size=(3, 3))
    out = nx.scaled_dot_attention(q, k, Tensor(v)).data
    np.testing.assert_allclose(out[0], v.mean(axis=0), atol=1e-15)


def test_attention_matches_direct_formula(rng):
    q, k, v = rng.normal(size=(2, 4)), rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    out = nx.scaled_dot_attention(Tensor(q), Tensor(k), Tensor(v)).data
    np.testing.assert_allclose(out, oracles.attention(q, k, v), rtol=0, atol=1e-12)


def test_attention_rejects_zero_width():
    z = Tensor(np.zeros((2, 0)))
    with pytest.raises(DimensionError):
        nx.scaled_dot_attention(z, z, z)


@given(arrays(np.float64, (3, 5), elements=st.floats(-20, 20)),
       arrays(np.float64, (4, 5), elements=st.floats(-20, 20)))
def test_softmax_rows_sum_to_one(q, k):
    scores = nx.matmul(Tensor(q), Tensor(k.T))
    p = nx.softmax(scores).data
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all(p >= 0)


def test_attention_gradients(rng):
    q, k, v = (_param(rng.normal(size=(2, 3, 4))) for _ in range(3))
    w = rng.normal(size=(2, 3, 4))
    _fd_check(lambda: nx.sum_all(nx.mul(nx.scaled_dot_attention(q, k, v), Tensor(w))), [q, k, v])


# -- other ops --------------------------------------------------------------

def test_layer_norm_matches_formula_and_gradients(rng):
    x = _param(rng.normal(size=(3, 2, 6)))
    g, b = _param(rng.normal(size=6)), _param(rng.normal(size=6))
    np.testing.assert_allclose(nx.layer_norm(x, g, b).data,
                               oracles.layer_norm_rows(x.data, g.data, b.data), atol=1e-13)
    w = rng.normal(size=(3, 2, 6))
    _fd_check(lambda: nx.sum_all(nx.mul(nx.layer_norm(x, g, b), Tensor(w))), [x, g, b])


def test_shape_ops_gradients(rng):
    x = _param(rng.normal(size=(2, 3, 4)))
    y = _param(rng.normal(size=(2, 3, 1)))
    w = rng.normal(size=(4, 5, 2))

    def build():
        c = nx.concat([x, y], axis=-1)                      # (2, 3, 5)
        t = nx.transpose(c, (2, 1, 0))                      # (5, 3, 2)
        r = nx.reshape(t, (5, 6))
        rows = nx.take_rows(r, np.array([0, 2, 2, 4]))       # (4, 6)
        s = nx.sum_axis(nx.reshape(rows, (4, 3, 2)), 1)      # (4, 2)
        m = nx.mean_axis(nx.reshape(rows, (4, 3, 2)), 1)
        return nx.sum_all(nx.mul(nx.add(s, nx.square(m)), Tensor(w[:, :2, 0])))

    _fd_check(build, [x, y])


def test_neighbor_sum_gradient(rng):
    from scipy import sparse

    adj = sparse.csr_matrix(np.array([[0, 1, 1], [1, 0, 0], [0, 0, 0]], dtype=np.float64))
    h = _param(rng.normal(size=(3, 4)))
    w = rng.normal(size=(3, 4))
    out = nx.neighbor_sum(h, adj).data
    np.testing.assert_allclose(out, h.data + adj.toarray() @ h.data, atol=1e-15)
    _fd_check(lambda: nx.sum_all(nx.mul(nx.neighbor_sum(h, adj), Tensor(w))), [h])


def test_dropout_is_identity_without_rng_and_scaled_with_it(rng):
    x = Tensor(np.ones((200, 50)))
    assert nx.dropout(x, 0.2, None) is x
    y = nx.dropout(x, 0.2, rng).data
    assert set(np.unique(y)) <= {0.0, 1.25}
    assert abs((y == 0).mean() - 0.2) < 0.02


# -- backward contract ------------------------------------------------------

def test_constant_loss_gives_zero_gradients(rng):
    x = _param(rng.normal(size=(2, 2)))
    with Tape() as tape:
        loss = nx.add(nx.sum_all(nx.mul(x, Tensor(0.0))), Tensor(5.0))
    grads = tape.backward(loss)
    np.testing.assert_array_equal(grads[x], np.zeros((2, 2)))


def test_linear_scalar_loss_gradient():
    x = _param(2.5)
    with Tape() as tape:
        loss = nx.mul(x, Tensor(3.0))
    assert tape.backward(loss)[x] == pytest.approx(3.0)
    assert x.grad == pytest.approx(3.0)


def test_non_scalar_loss_is_contract_error():
    x = _param(np.ones(3))
    with Tape() as tape:
        y = nx.mul(x, Tensor(2.0))
    with pytest.raises(ContractError):
        tape.backward(y)


def test_gradient_accumulates_over_reuse():
    x = _param(1.5)
    with Tape() as tape:
        loss = nx.add(nx.mul(x, x), x)
    assert tape.backward(loss)[x] == pytest.approx(4.0)


def test_tape_is_a_dag_in_order(rng):
    x = _param(rng.normal(size=(2, 3)))
    with Tape() as tape:
        nx.sum_all(nx.leaky_relu(nx.matmul(x, Tensor(rng.normal(size=(3, 2)))), 0.1))
    seen = {id(x)}
    for node in tape.nodes:
        assert all(id(t) in seen or not t.requires_grad for t in node.inputs)
        seen.add(id(node.output))


def test_count_ops_records_without_tape(rng):
    with nx.count_ops() as c:
        nx.matmul(Tensor(rng.normal(size=(2, 2))), Tensor(rng.normal(size=(2, 2))))
    assert c["matmul"] == 1
    assert nx.current_tape() is None


def test_forward_is_deterministic(rng):
    a, b = rng.normal(size=(4, 5)), rng.normal(size=(5, 3))
    r1 = nx.softmax(nx.matmul(Tensor(a), Tensor(b))).data
    r2 = nx.softmax(nx.matmul(Tensor(a), Tensor(b))).data
    assert r1.tobytes() == r2.tobytes()


def test_kaiming_uniform_bounds(rng):
    w = nx.kaiming_uniform(rng, 16, (16, 8))
    assert w.requires_grad
    assert np.all(np.abs(w.data) <= 0.25)
