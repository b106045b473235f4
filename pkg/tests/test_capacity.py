import itertools
import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from rcapacity import capacity as cap
from rcapacity.errors import (
    DegenerateMeasure,
    InfeasiblePotential,
    NonConvergence,
    UnsupportedExponent,
)
from rcapacity.lattice import build_full_box
from rcapacity.pathflow import edge_marginals


def dense_harmonic_value(dom):
    """r = 2 oracle: dense Dirichlet solve on the full graph Laplacian."""
    V = dom.n_vertices
    L = np.zeros((V, V))
    for a, b in dom.edges:
        L[a, a] += 1
        L[b, b] += 1
        L[a, b] -= 1
        L[b, a] -= 1
    fixed = np.zeros(V, dtype=bool)
    fixed[dom.sources] = True
    fixed[dom.targets] = True
    f = np.zeros(V)
    f[dom.targets] = 1.0
    free = ~fixed
    f[free] = scipy.linalg.solve(L[np.ix_(free, free)], -L[np.ix_(free, fixed)] @ f[fixed])
    return float(((f[dom.edges[:, 0]] - f[dom.edges[:, 1]]) ** 2).sum())


def test_one_dimensional_value():
    _, est = cap.solve_potential(build_full_box(1, 4), 2.0)
    assert est.value == pytest.approx(0.5, abs=1e-12)
    _, est = cap.solve_potential(build_full_box(1, 4), 2.0, method="gauss-seidel")
    assert est.value == pytest.approx(0.5, abs=1e-9)


def test_trivial_box_r3():
    pot, est = cap.solve_potential(build_full_box(2, 1), 3.0)
    assert est.value == pytest.approx(4.0, abs=1e-12)
    t = cap.potential_to_edgefield(pot).t
    origin = (pot.domain.edges == pot.domain.source).any(axis=1)
    assert np.allclose(t[origin], 1) and np.allclose(t[~origin], 0)


@pytest.mark.parametrize("M", [2, 3])
def test_r2_dense_oracle(M):
    dom = build_full_box(2, M)
    _, est = cap.solve_potential(dom, 2.0, 1e-12, method="gauss-seidel")
    assert est.value == pytest.approx(dense_harmonic_value(dom), abs=1e-8)


def test_energy_examples():
    dom = build_full_box(1, 2)
    assert cap.energy(cap.Potential(dom, np.zeros(dom.n_vertices)), 2) == 0
    f = np.abs(dom.coords[:, 0]) / 2.0
    assert cap.energy(cap.Potential(dom, f), 2) == pytest.approx(1.0)
    d2 = build_full_box(2, 4)
    f = np.log(d2.l1_norm + 1.0) / math.log(4)
    assert cap.energy(cap.Potential(d2, f), 2) == pytest.approx(cap.testfn_upper_bound(d2, 2, "logarithmic"))


def test_edgefield_round_trip_one_dimensional():
    pot, _ = cap.solve_potential(build_full_box(1, 4), 2.0)
    t = cap.potential_to_edgefield(pot)
    assert np.allclose(t.t, 0.25)
    back = cap.edgefield_to_potential(t)
    assert np.allclose(back.f, pot.f, atol=1e-12)


def test_edgefield_examples():
    dom = build_full_box(2, 2)
    zero = cap.EdgeField(dom, np.zeros(dom.n_edges))
    assert np.all(cap.edgefield_to_potential(zero).f == 0)
    m, ok = cap.verify_path_feasibility(zero)
    assert m == 0 and not ok
    t = (dom.edges == dom.source).any(axis=1).astype(float)
    f = cap.edgefield_to_potential(cap.EdgeField(dom, t)).f
    assert f[dom.source] == 0 and np.all(np.delete(f, dom.source) == 1)
    assert cap.verify_path_feasibility(cap.EdgeField(dom, t)) == (1.0, True)


def test_infeasible_potential():
    dom = build_full_box(2, 2)
    with pytest.raises(InfeasiblePotential):
        cap.potential_to_edgefield(cap.Potential(dom, np.zeros(dom.n_vertices)))


def test_kkt_tightness_r15():
    pot, est = cap.solve_potential(build_full_box(2, 8), 1.5)
    m, ok = cap.verify_path_feasibility(cap.potential_to_edgefield(pot), tol=1e-6)
    assert ok and abs(m - 1) <= 1e-6
    assert est.lower_bound <= est.value <= est.lower_bound + 1e-7


def test_testfn_examples():
    d2 = build_full_box(2, 5)
    assert cap.testfn_upper_bound(d2, 2, "indicator") == 4
    assert cap.testfn_upper_bound(build_full_box(1, 2), 2, "linear") == pytest.approx(1.0)
    val = cap.testfn_upper_bound(build_full_box(2, 16), 2, "logarithmic")
    assert math.isfinite(val) and val * math.log(16) < 4 * math.log(16)


def test_flow_lower_bound_examples():
    d1 = build_full_box(1, 4)
    pm = edge_marginals(d1)
    assert cap.flow_lower_bound(pm, 2) == pytest.approx(0.5)
    assert cap.flow_lower_bound(np.ones(7), 3) == pytest.approx(7.0 ** -2)
    d2 = build_full_box(2, 4)
    _, est = cap.solve_potential(d2, 2.0)
    assert cap.flow_lower_bound(edge_marginals(d2), 2) <= est.value
    with pytest.raises(DegenerateMeasure):
        cap.flow_lower_bound(np.zeros(3), 2)


def test_small_r():
    assert cap.small_r_upper_bound(build_full_box(2, 3), 0.5) == 4
    assert cap.small_r_upper_bound(build_full_box(3, 1), 1.0) == 6
    with pytest.raises(UnsupportedExponent, match="small_r_upper_bound"):
        cap.solve_potential(build_full_box(2, 2), 0.5)


def test_small_r_brute_force_one_dimensional():
    # d=1, r=1, n=3: no t-field on a 1/32 grid beats 2
    step, best = 1 / 32, math.inf
    grid = np.arange(0, 1 + step / 2, step)
    for a in itertools.product(grid, repeat=3):
        if sum(a) < 1 - 1e-12:
            continue
        # the cheapest feasible side costs sum(a); both sides are needed
        best = min(best, 2 * sum(a))
    assert best == pytest.approx(cap.small_r_upper_bound(build_full_box(1, 3), 1.0))


def test_kappa_examples():
    assert cap.kappa(2, 1.5, 10, 0.8) == 0.8
    assert cap.kappa(2, 2, 10, 1.0) == pytest.approx(math.log(10))
    assert cap.kappa(2, 3, 4, 0.1) == pytest.approx(0.4)


def test_sweep_one_dimensional_and_monotone():
    res = cap.capacity_sweep(1, 2, [2, 4, 8])
    assert [row["lambda"] for row in res.rows] == pytest.approx([1.0, 0.5, 0.25])
    assert res.monotone


def test_half_box():
    assert cap.half_box_capacity(1, 3, 5, 2).value == pytest.approx(1 / 3)
    for r in (1.5, 2.0, 3.0):
        assert cap.half_box_capacity(2, 1, 3, r).value == pytest.approx(2.0)
    _, full = cap.solve_potential(build_full_box(2, 4), 2.0)
    assert cap.half_box_capacity(2, 4, 8, 2).value >= full.value / 4 - 1e-6


def test_nonconvergence_carries_iterate():
    with pytest.raises(NonConvergence) as info:
        cap.solve_potential(build_full_box(2, 6), 1.5, 1e-12, max_iter=2)
    assert info.value.potential is not None and not info.value.estimate.converged
    _, est = cap.solve_potential(build_full_box(2, 6), 1.5, 1e-12, max_iter=2, strict=False)
    assert not est.converged


@settings(max_examples=15, deadline=None)
@given(st.integers(2, 5), st.sampled_from([1.5, 2.0, 3.0]), st.integers(0, 2**31 - 1))
def test_clamping_never_raises_energy(M, r, seed):
    dom = build_full_box(2, M)
    f = np.random.default_rng(seed).normal(0.5, 1.0, dom.n_vertices)
    raw = cap.energy(cap.Potential(dom, f), r)
    assert cap.energy(cap.Potential(dom, np.clip(f, 0, 1)), r) <= raw + 1e-12


def test_monotone_in_r_when_field_bounded():
    dom = build_full_box(2, 4)
    lam = [cap.solve_potential(dom, r)[1].value for r in (1.5, 2.0, 3.0)]
    assert lam[0] >= lam[1] - 1e-8 >= lam[2] - 2e-8
    pot, _ = cap.solve_potential(dom, 2.0)
    assert cap.energy(pot, 3.0) >= lam[2] - 1e-8


def test_duality_gap_shrinks_with_tol():
    dom = build_full_box(2, 6)
    loose = cap.solve_potential(dom, 1.5, 1e-4)[1]
    tight = cap.solve_potential(dom, 1.5, 1e-10)[1]
    assert tight.duality_gap <= loose.duality_gap + 1e-15
