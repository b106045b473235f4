import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rcapacity.errors import SizingError, ValidationError
from rcapacity.lattice import (
    ball_edges,
    build_annulus,
    build_full_box,
    build_half_box,
    build_slab_segment,
    domain_from_json,
    edges_at,
    memory_budget,
    set_memory_budget,
    shell_edges,
)


@pytest.mark.parametrize("d,M,V,E,B", [(2, 1, 9, 12, 8), (1, 4, 9, 8, 2), (3, 2, 125, 300, 98)])
def test_full_box_counts(d, M, V, E, B):
    dom = build_full_box(d, M)
    assert (dom.n_vertices, dom.n_edges, len(dom.targets)) == (V, E, B)
    assert dom.coords[dom.source].tolist() == [0] * d


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 8))
def test_full_box_closed_form(d, M):
    if (2 * M + 1) ** d > 20_000:
        return
    dom = build_full_box(d, M)
    s = 2 * M + 1
    assert dom.n_vertices == s**d
    assert dom.n_edges == d * (s - 1) * s ** (d - 1)
    assert len(dom.targets) == s**d - (s - 2) ** d


def test_edges_are_unit_steps_in_canonical_order():
    dom = build_full_box(3, 2)
    diff = dom.coords[dom.edges[:, 1]] - dom.coords[dom.edges[:, 0]]
    assert np.array_equal(diff, np.eye(3, dtype=int)[dom.edge_axis])
    key = dom.edges[:, 0] * 3 + dom.edge_axis
    assert np.all(np.diff(key) > 0)


def test_half_box():
    dom = build_half_box(2, 1, 5)
    assert sorted(map(tuple, dom.coords.tolist())) == [(0, 0), (0, 1), (1, 0), (1, 1)]
    assert dom.n_edges == 4
    assert sorted(map(tuple, dom.coords[dom.targets].tolist())) == [(0, 1), (1, 0), (1, 1)]
    dom = build_half_box(1, 3, 7)
    assert dom.coords[:, 0].tolist() == [0, 1, 2, 3] and dom.coords[dom.targets].tolist() == [[3]]
    dom = build_half_box(2, 2, 2)
    assert (dom.n_vertices, dom.n_edges, len(dom.targets)) == (9, 12, 5)


def test_annulus():
    full = build_full_box(2, 2)
    ann = build_annulus(2, 0, 2)
    assert ann.n_edges == full.n_edges
    # E_3 has 84 edges, 12 of them lie inside D_1
    assert build_annulus(2, 1, 3).n_edges == 84 - 12
    ann = build_annulus(1, 1, 4)
    assert sorted(ann.coords[:, 0].tolist()) == [-4, -3, -2, -1, 1, 2, 3, 4]
    assert ann.n_edges == 6 and ann.multi_source


def test_shell_edges_partition():
    dom = build_full_box(2, 2)
    assert len(shell_edges(dom, 1)) == 4
    assert len(shell_edges(dom, 2)) == 12
    d1 = build_full_box(1, 3)
    pts = sorted(sorted(d1.coords[e, 0].tolist()) for e in d1.edges[shell_edges(d1, 2)])
    assert pts == [[-2, -1], [1, 2]]
    allk = np.concatenate([shell_edges(dom, k) for k in range(0, 2 * 2 + 1)])
    assert sorted(allk.tolist()) == list(range(dom.n_edges))


def test_json_round_trip_preserves_indices():
    for dom in (build_full_box(2, 3), build_annulus(2, 1, 3), build_slab_segment(2, 2, -1, 4)):
        again = domain_from_json(dom.to_json())
        assert np.array_equal(dom.coords, again.coords)
        assert np.array_equal(dom.edges, again.edges)
        assert np.array_equal(dom.targets, again.targets)


def test_index_and_edge_lookup():
    dom = build_full_box(2, 2)
    o = dom.index_of((0, 0))
    assert o == dom.source and dom.index_of((3, 0)) == -1
    e = dom.edge_index((0, 0), (1, 0))
    assert set(dom.edges[e].tolist()) == {o, dom.index_of((1, 0))}
    assert dom.edge_index((1, 0), (0, 0)) == e
    assert dom.edge_index((0, 0), (1, 1)) == -1
    assert edges_at(dom, [[0, 0]], 0)[0] == e
    assert len(ball_edges(dom, (0, 0), 1)) == 12


def test_slab_segment_validation():
    with pytest.raises(ValidationError):
        build_slab_segment(2, 1, 1, 4)
    dom = build_slab_segment(2, 1, -1, 4, target=(2, 0))
    assert dom.coords[dom.targets].tolist() == [[2, 0]]


def test_memory_budget():
    old = memory_budget()
    try:
        set_memory_budget(10_000)
        with pytest.raises(SizingError):
            build_full_box(2, 64)
    finally:
        set_memory_budget(old)
    with pytest.raises(ValidationError):
        build_full_box(2, 0)
