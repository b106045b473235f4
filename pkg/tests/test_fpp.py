import math

import numpy as np
import pytest

from rcapacity.fpp import (
    WeightConfig,
    estimate_mu,
    geodesic_weight,
    passage_domain,
    passage_time,
    sample_config,
    slab_passage,
    subadditivity_check,
)
from rcapacity.errors import ValidationError
from rcapacity.lattice import build_full_box, build_slab_segment
from rcapacity.weights import ConstantWeights, WeightModel


def brute_force(dom, tau, s, t, max_len):
    """Cheapest simple path of at most ``max_len`` edges, by DFS."""
    indptr, nbr, eid = dom.adjacency
    best = math.inf

    def go(v, cost, seen, depth):
        nonlocal best
        if cost >= best:
            return
        if v == t:
            best = cost
            return
        if depth == max_len:
            return
        for k in range(indptr[v], indptr[v + 1]):
            w = nbr[k]
            if w not in seen:
                seen.add(w)
                go(w, cost + tau[eid[k]], seen, depth + 1)
                seen.discard(w)

    go(s, 0.0, {s}, 0)
    return best


def grid5():
    return build_slab_segment(2, 2, -2, 2, target=(2, 2))


def test_constant_weights_box():
    dom = build_full_box(2, 6)
    cfg = WeightConfig(dom, np.ones(dom.n_edges))
    res = passage_time(cfg, dom.source, dom.targets)
    assert res.value == 6 and len(res.geodesic) == 7
    assert passage_time(WeightConfig(dom, np.zeros(dom.n_edges)), dom.source, dom.targets).value == 0


def test_brute_force_oracle():
    dom = grid5()
    rng = np.random.default_rng(3)
    s, t = dom.index_of((-2, -2)), dom.index_of((2, 2))
    for _ in range(5):
        tau = rng.exponential(1.0, dom.n_edges)
        cfg = WeightConfig(dom, tau)
        res = passage_time(cfg, s, t)
        assert res.value == pytest.approx(brute_force(dom, tau, s, t, 16), abs=1e-12)
        assert geodesic_weight(cfg, res.geodesic) == pytest.approx(res.value, abs=1e-12)


def test_unreachable_and_mask():
    dom = build_full_box(1, 3)
    cfg = WeightConfig(dom, np.ones(dom.n_edges))
    res = passage_time(cfg, dom.source, dom.targets, edge_mask=np.zeros(dom.n_edges, bool))
    assert res.unreachable and res.value == math.inf and res.geodesic is None


def test_restriction_never_decreases():
    dom = passage_domain(2, 10)
    rng = np.random.default_rng(1)
    for _ in range(20):
        cfg = sample_config(dom, WeightModel(1, 1), rng)
        mask = rng.random(dom.n_edges) < 0.8
        a = passage_time(cfg, dom.source, dom.targets, geodesic=False).value
        b = passage_time(cfg, dom.source, dom.targets, edge_mask=mask, geodesic=False).value
        assert b >= a


def test_subadditivity_random_triples():
    dom = passage_domain(2, 6)
    rng = np.random.default_rng(2)
    for _ in range(200):
        cfg = sample_config(dom, WeightModel(1, 0.7), rng)
        x, y, z = rng.integers(0, dom.n_vertices, 3)
        assert subadditivity_check(cfg, x, y, z)


def test_subadditivity_equality_on_geodesic():
    dom = grid5()
    cfg = sample_config(dom, WeightModel(1, 1), np.random.default_rng(4))
    x, z = dom.index_of((-2, -2)), dom.index_of((2, 1))
    geo = passage_time(cfg, x, z).geodesic
    y = geo[len(geo) // 2]
    t = lambda a, b: passage_time(cfg, a, b).value  # noqa: E731
    assert t(x, z) == pytest.approx(t(x, y) + t(y, z), abs=1e-9)
    line = build_full_box(1, 5)
    cfg = WeightConfig(line, np.ones(line.n_edges))
    i = line.index_of
    assert passage_time(cfg, i(-3), i(4)).value == passage_time(cfg, i(-3), i(1)).value + passage_time(cfg, i(1), i(4)).value


def test_slab_passage():
    rng = np.random.default_rng(0)
    # K = 0 reduces to a chain; only the forward path counts
    assert slab_passage(0, 5, 5, ConstantWeights(1.5), rng) == pytest.approx(7.5)
    a = np.random.default_rng(9)
    x = slab_passage(0, 6, 6, WeightModel(1, 1), a)
    w = WeightModel(1, 1).draw(np.random.default_rng(9), 6)
    assert x == pytest.approx(w.sum())
    with pytest.raises(ValidationError):
        slab_passage(1, 5, 4, ConstantWeights(1), rng)


def test_slab_coupling_dominates_box():
    # same weights: the slab is a sub-edge-set of the box
    n, K = 8, 1
    box = passage_domain(2, n)
    rng = np.random.default_rng(8)
    slab = np.abs(box.coords[:, 1]) <= K
    keep = slab[box.edges[:, 0]] & slab[box.edges[:, 1]]
    diffs = []
    for _ in range(50):
        cfg = sample_config(box, WeightModel(1, 1), rng)
        a = passage_time(cfg, box.source, box.targets, geodesic=False).value
        b = passage_time(cfg, box.source, box.targets, edge_mask=keep, geodesic=False).value
        diffs.append(b - a)
    assert min(diffs) >= 0


def test_mu_deterministic():
    est = estimate_mu(2, ConstantWeights(0.7), [2, 4, 8], 4)
    assert est.mu_hat == pytest.approx(0.7, abs=1e-12)


def test_mu_thread_invariant():
    a = estimate_mu(2, WeightModel(1, 1), [4, 8], 300, seed=5, threads=1)
    b = estimate_mu(2, WeightModel(1, 1), [4, 8], 300, seed=5, threads=3)
    assert a.mu_hat == b.mu_hat and np.array_equal(a.records, b.records)


def test_mu_nested_boxes():
    # enlarging the box never increases T (same weights on shared edges)
    small, big = passage_domain(2, 6, 0.5), passage_domain(2, 6, 1.0)
    rng = np.random.default_rng(6)
    for _ in range(20):
        cfg = sample_config(big, WeightModel(1, 1), rng)
        inside = np.all((big.coords >= [-3, -3]) & (big.coords <= [9, 3]), axis=1)
        keep = inside[big.edges[:, 0]] & inside[big.edges[:, 1]]
        a = passage_time(cfg, big.source, big.targets, geodesic=False).value
        b = passage_time(cfg, big.source, big.targets, edge_mask=keep, geodesic=False).value
        assert a <= b
    assert small.n_edges == int(keep.sum())


def test_mu_validation():
    with pytest.raises(ValidationError):
        estimate_mu(2, ConstantWeights(1), [4], 10)
