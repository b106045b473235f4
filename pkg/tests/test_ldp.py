import math

import numpy as np
import pytest
from scipy import stats

from rcapacity.errors import (
    DegenerateTilt,
    GeometryError,
    InsufficientHits,
    MissingLambda,
    OutOfRange,
    ValidationError,
)
from rcapacity.fpp import WeightConfig, passage_domain, sample_config
from rcapacity.lattice import ball_edges, incident_edges
from rcapacity.ldp import (
    adversarial_configs,
    ell_M,
    estimate_upper_tail,
    event_inclusion_check,
    g_scaling,
    inclusion_events,
    localization_stat,
    rate_curve,
    sum_tail_check,
    theoretical_rate,
    tilt_plan,
)
from rcapacity.weights import WeightModel


def test_ell_and_scaling():
    assert ell_M(3, 2, 1.0, 64) == 8
    assert ell_M(2, 2, 1.0, 32) == math.ceil(32 / (1 + math.log(32)))
    assert ell_M(3, 3, 2.0, 10) == math.ceil(20 / (1 + math.log(10)))
    with pytest.raises(OutOfRange):
        ell_M(2, 3, 1.0, 10)
    with pytest.raises(OutOfRange):
        ell_M(2, 1, 1.0, 10)
    assert g_scaling(3, 2, 10, 20) == 400
    assert g_scaling(2, 2, 10, 10) == pytest.approx(100 / (1 + math.log(10)))
    assert g_scaling(2, 3, 4, 8) == pytest.approx(512 / 4)


def test_theoretical_rate():
    assert theoretical_rate(2, 0.5, 1.0, 1.0) == 4.0
    assert theoretical_rate(3, 1.0, 2.0, 0.5) == 6.0
    assert theoretical_rate(3, 2, 1.0, 1.0, lambda_value=0.66) == pytest.approx(0.33)
    assert theoretical_rate(2, 2, 1.0, 2.0) == 2.0
    with pytest.raises(MissingLambda):
        theoretical_rate(3, 2, 1.0, 1.0)
    with pytest.raises(OutOfRange):
        theoretical_rate(2, 3, 1.0, 1.0)
    with pytest.raises(ValidationError):
        theoretical_rate(2, 0.5, 1.0, 0.0)


def test_inclusion_random_and_adversarial():
    n, xi, eps, mu = 16, 0.5, 0.1, 0.43
    dom = passage_domain(2, n)
    ell = ell_M(2, 2, 1.0, n)
    rng = np.random.default_rng(0)
    for _ in range(100):
        cfg = sample_config(dom, WeightModel(1, 0.5), rng)
        assert event_inclusion_check(2, n, xi, eps, 1.0, cfg, mu_hat=mu, r=2)
    for cfg in adversarial_configs(dom, n, ell, xi, eps, mu, rng):
        assert event_inclusion_check(2, n, xi, eps, 1.0, cfg, mu_hat=mu, r=2)


def test_inclusion_decomposition():
    n = 12
    dom = passage_domain(2, n)
    cfg = sample_config(dom, WeightModel(1, 1), np.random.default_rng(2))
    ev = inclusion_events(2, n, 0.2, 0.1, 1.0, cfg, mu_hat=0.4, ell=2)
    assert ev["Tn"] >= ev["T1"] + ev["T2"] + ev["TG"] - 1e-12


def test_inclusion_geometry():
    dom = passage_domain(2, 8, 0.25)
    cfg = WeightConfig(dom, np.ones(dom.n_edges))
    with pytest.raises(GeometryError):
        inclusion_events(2, 8, 0.1, 0.1, 1.0, cfg, mu_hat=0.5, ell=4)
    with pytest.raises(GeometryError):
        inclusion_events(2, 8, 0.1, 0.1, 1.0, cfg, mu_hat=0.5, ell=3)


def test_tilt_plan_shapes():
    dom = passage_domain(2, 8)
    plan = tilt_plan(dom, WeightModel(1, 0.5), 8, 1.0)
    assert plan.name == "ends" and len(plan.edges) == 2 and plan.weights == (0.5, 0.5)
    o = dom.index_of((0, 0))
    assert set(plan.edges[0]) == set(incident_edges(dom, o))
    plan2 = tilt_plan(dom, WeightModel(1, 2), 8, 1.0)
    assert plan2.name == "balls" and plan2.weights[-1] == 0.2 and len(plan2.edges[-1]) == 0
    assert all(np.all(t < 1) for t in plan2.tilts)
    with pytest.raises(DegenerateTilt):
        tilt_plan(dom, WeightModel(1, 1), 8, 1.0, "origin", tilt=1.0)


def test_plain_vs_tilted_small():
    m = WeightModel(1, 0.5)
    a = estimate_upper_tail(2, m, 6, 0.5, 0.2, "plain", 4000, seed=3)
    b = estimate_upper_tail(2, m, 6, 0.5, 0.2, "tilted", 4000, seed=3)
    assert abs(a.p_hat - b.p_hat) < 3 * math.hypot(a.stderr, b.stderr)


def test_gamma_tail_d1():
    # on a line T is a sum of n exponentials
    n, xi, mu = 6, 0.5, 1.0
    exact = stats.gamma.sf((mu + xi) * n, a=n)
    for method in ("plain", "tilted"):
        est = estimate_upper_tail(1, WeightModel(1, 1), n, xi, mu, method, 6000, seed=4)
        assert abs(est.p_hat - exact) < 3 * est.stderr + 1e-12


def test_plain_is_hit_fraction_and_sensitivity():
    est = estimate_upper_tail(1, WeightModel(1, 1), 4, 0.5, 1.0, samples=500, seed=1, mu_stderr=0.05)
    assert est.p_hat == est.n_hits / 500
    s = est.sensitivity
    assert s["mu_minus_2se"]["p_hat"] >= est.p_hat >= s["mu_plus_2se"]["p_hat"]
    with pytest.raises(ValidationError):
        estimate_upper_tail(1, WeightModel(1, 1), 4, 0.0, 1.0)


def test_thread_invariance():
    kw = dict(samples=600, seed=9)
    a = estimate_upper_tail(2, WeightModel(1, 0.5), 6, 0.5, 0.2, "tilted", threads=1, **kw)
    b = estimate_upper_tail(2, WeightModel(1, 0.5), 6, 0.5, 0.2, "tilted", threads=3, **kw)
    assert a == b


def test_rate_curve_rows():
    rows = rate_curve(2, WeightModel(1, 0.5), 1.0, [4, 6], 0.2, 300, seed=1)
    assert [r["n"] for r in rows] == [4, 6]
    assert all(r["theory"] == 4.0 and r["error"] == "" for r in rows)


def test_localization_pinned_origin():
    n = 8
    dom = passage_domain(2, n)
    e = incident_edges(dom, dom.index_of((0, 0)))[0]
    res = localization_stat(2, WeightModel(1, 1), n, 0.2, 1, 0.25, 400, 0.4, method="plain",
                            pinned={int(e): 1e3}, seed=2)
    assert res.freq_loc == 0.0 and res.signal == 1.0


def test_localization_insufficient_hits():
    with pytest.raises(InsufficientHits):
        localization_stat(2, WeightModel(1, 2), 8, 5.0, 1, 0.25, 100, 0.7, method="plain")


def test_ball_edges_count():
    dom = passage_domain(2, 8)
    assert len(ball_edges(dom, (0, 0), 1)) == 12


def test_sum_tail_exact():
    rep = sum_tail_check(WeightModel(1, 1), 2, [2, 4, 6], 200_000, seed=0)
    for row in rep.rows:
        assert row["exact"] == pytest.approx(stats.gamma.sf(row["n"], a=2))
        assert abs(row["p_hat"] - row["exact"]) < 4 * row["stderr"] + 1e-9
    rep1 = sum_tail_check(WeightModel(1, 0.5), 1, [4, 9], 100_000, seed=1)
    for row in rep1.rows:
        assert row["exact"] == pytest.approx(math.exp(-math.sqrt(row["n"])))
    assert rep1.n0 == 4
    with pytest.raises(ValidationError):
        sum_tail_check(WeightModel(1, 2), 2, [4], 10)
