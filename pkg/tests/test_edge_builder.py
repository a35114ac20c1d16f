import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from edgevtp.edge_builder import SAMPLED, build_edges, edge_count_stats

import oracles

coords = arrays(np.float64, st.tuples(st.integers(1, 200), st.just(2)),
                elements=st.floats(-100, 100, allow_nan=False))


def test_single_vehicle_has_no_edges():
    e = build_edges(np.zeros((1, 2)), 5.0, 3)
    assert e.neighbor_lists() == [[]]


def test_radius_gate_example():
    e = build_edges([(0, 0), (1, 0), (5, 0)], 2.0, 4)
    assert e.neighbor_lists() == [[1], [0], []]


def test_top_k_cap_example():
    e = build_edges([(0, 0), (1, 0), (2, 0), (3, 0)], 10.0, 2)
    assert e.neighbor_lists()[0] == [1, 2]
    assert edge_count_stats(e) == {"total_edges": 8, "max_list_size": 2, "mean_list_size": 2.0}


def test_stats_empty_graph():
    e = build_edges([(0, 0), (100, 0)], 1.0, 3)
    assert edge_count_stats(e) == {"total_edges": 0, "max_list_size": 0, "mean_list_size": 0.0}


def test_stats_fully_dense():
    e = build_edges([(0, 0), (1, 0), (0, 1)], 1e6, 10)
    assert edge_count_stats(e)["total_edges"] == 6


def test_radius_is_inclusive():
    e = build_edges([(0, 0), (3, 4)], 5.0, 1)
    assert e.neighbor_lists() == [[1], [0]]


def test_ties_broken_by_index():
    e = build_edges([(0, 0), (1, 0), (-1, 0), (0, 1)], 2.0, 2)
    assert e.neighbor_lists()[0] == [1, 2]


@pytest.mark.parametrize("bad", [dict(r=0.0), dict(r=-1.0), dict(k=0)])
def test_invalid_parameters(bad):
    kw = dict(r=1.0, k=2) | bad
    with pytest.raises(ValueError):
        build_edges(np.zeros((3, 2)), kw["r"], kw["k"])


def test_pairs_and_adjacency_agree():
    e = build_edges([(0, 0), (1, 0), (5, 0)], 2.0, 4)
    assert e.pairs().tolist() == [[0, 1], [1, 0]]
    assert e.adjacency().toarray().tolist() == [[0, 1, 0], [1, 0, 0], [0, 0, 0]]


def test_matches_oracle_on_random_scenes(rng):
    for _ in range(200):
        n = int(rng.integers(1, 150))
        pos = rng.uniform(0, 80, size=(n, 2))
        r, k = float(rng.uniform(1, 30)), int(rng.integers(1, 12))
        assert build_edges(pos, r, k).neighbor_lists() == oracles.knn_radius_oracle(pos, r, k)


@given(coords, st.floats(0.1, 300), st.integers(1, 20))
def test_degree_bound_and_edge_validity(pos, r, k):
    e = build_edges(pos, r, k)
    for i, row in enumerate(e.neighbor_lists()):
        assert len(row) <= k
        assert i not in row
        assert len(set(row)) == len(row)
        for j in row:
            assert math.hypot(*(pos[i] - pos[j])) <= r


@given(coords, st.floats(0.1, 100), st.floats(0.0, 100))
def test_uncapped_edges_monotone_in_radius(pos, r, extra):
    small = set(map(tuple, build_edges(pos, r, math.inf).pairs().tolist()))
    large = set(map(tuple, build_edges(pos, r + extra, math.inf).pairs().tolist()))
    assert small <= large


def test_sampled_mode_is_subset_and_seeded(rng):
    pos = rng.uniform(0, 10, size=(40, 2))
    full = build_edges(pos, 6.0, math.inf).neighbor_lists()
    a = build_edges(pos, 6.0, 3, mode=SAMPLED, rng=5)
    b = build_edges(pos, 6.0, 3, mode=SAMPLED, rng=5)
    assert a.neighbor_lists() == b.neighbor_lists()
    for row, cand in zip(a.neighbor_lists(), full):
        assert len(row) == min(3, len(cand))
        assert set(row) <= set(cand)


def test_sampled_mode_keeps_all_when_under_cap():
    pos = [(0, 0), (1, 0), (2, 0)]
    assert build_edges(pos, 5.0, 4, mode=SAMPLED, rng=0).neighbor_lists() == \
        build_edges(pos, 5.0, 4).neighbor_lists()


def test_sampled_mode_is_roughly_uniform():
    pos = np.array([(0, 0)] + [(math.cos(t), math.sin(t)) for t in np.linspace(0, 6, 6)])
    gen = np.random.default_rng(0)
    hits = np.zeros(7)
    for _ in range(3000):
        for j in build_edges(pos, 2.5, 2, mode=SAMPLED, rng=gen).neighbor_lists()[0]:
            hits[j] += 1
    assert hits[0] == 0
    np.testing.assert_allclose(hits[1:] / 3000, 2 / 6, atol=0.04)


def test_unknown_mode():
    with pytest.raises(ValueError, match="mode"):
        build_edges(np.zeros((2, 2)), 1.0, 1, mode="random")
