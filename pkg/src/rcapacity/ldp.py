"""Upper-tail large deviations of the point-to-point passage time.

Scaling helpers, the deterministic event inclusion behind the lower-bound
argument, plain and importance-sampled estimators of
``P(T(0, n e1) > (mu + xi) n)``, normalized rate curves, localization
statistics and the tail of short sums of Weibull variables.

Importance sampling draws from a mixture of tilted product measures.  Each
component tilts a set of edges ``C_k`` (per-edge tilt on the ``t^r``
scale), so the exact weight of a configuration is

    dP/dQ = 1 / sum_k w_k prod_{e in C_k} exp(-LLR_k(tau_e)).
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from scipy import special, stats

from . import _parallel
from .capacity import potential_to_edgefield, solve_potential
from .errors import (
    DegenerateTilt,
    GeometryError,
    InsufficientHits,
    MissingLambda,
    OutOfRange,
    ValidationError,
)
from .fpp import WeightConfig, _passage_many, passage_domain, passage_time
from .lattice import Domain, ball_boundary, ball_edges, build_full_box, edges_at, incident_edges
from .weights import WeightModel, tilt_for_mean
from .weights import mean as weight_mean

__all__ = [
    "ScalingReport",
    "RareEventEstimate",
    "TiltPlan",
    "ell_M",
    "g_scaling",
    "theoretical_rate",
    "scaling_report",
    "inclusion_events",
    "event_inclusion_check",
    "adversarial_configs",
    "tilt_plan",
    "estimate_upper_tail",
    "rate_curve",
    "localization_stat",
    "sum_tail_check",
]

MIN_HITS = 30
_PLAIN, _TILTED, _SUMTAIL = 1, 2, 3


# ---------------------------------------------------------------- scaling

def ell_M(d: int, r: float, M: float, n: int) -> int:
    """Ball radius ``ceil(M n^((r-1)/(d-1)))`` for 1<r<d, ``ceil(M n / (1 + log n))`` for r=d."""
    if d < 2 or not 1 < r <= d:
        raise OutOfRange(f"ell_M needs d >= 2 and 1 < r <= d, got d={d}, r={r}")
    if M <= 0 or n < 1:
        raise ValidationError("need M > 0 and n >= 1")
    if r == d:
        return int(math.ceil(M * n / (1.0 + math.log(n))))
    return int(math.ceil(M * n ** ((r - 1.0) / (d - 1.0))))


def g_scaling(d: int, r: float, n: int, N: float) -> float:
    if not r > 1 or n < 1 or N < n:
        raise ValidationError("need r > 1 and N >= n >= 1")
    if r < d:
        return float(N) ** r
    if r == d:
        return float(N) ** d / (1.0 + math.log(n)) ** (d - 1)
    return float(N) ** r / float(n) ** (r - d)


def theoretical_rate(d: int, r: float, alpha: float, xi: float, lambda_value: float | None = None) -> float:
    """Absolute value of the limiting rate constant (the log-probability is its negative).

    r <= 1: 2 d alpha xi^r.  1 < r < d: alpha 2^(1-r) lambda xi^r.
    r = d: alpha 2^(1-d) xi^d, per unit of n^d lambda_{d,d}(ell_M(n)).
    """
    if xi <= 0:
        raise ValidationError("xi must be positive")
    if r <= 1:
        return 2.0 * d * alpha * xi**r
    if r < d:
        if lambda_value is None:
            raise MissingLambda("the 1 < r < d rate needs a capacity value")
        return alpha * 2.0 ** (1.0 - r) * lambda_value * xi**r
    if r == d:
        return alpha * 2.0 ** (1.0 - d) * xi**d
    raise OutOfRange(f"no rate constant implemented for r > d (r={r}, d={d})")


@dataclass(frozen=True)
class ScalingReport:
    d: int
    r: float
    n: int
    N: float
    ell: int
    g: float
    rate: float


def scaling_report(d, r, n, N, M, alpha, xi, lambda_value=None) -> ScalingReport:
    return ScalingReport(d, r, n, N, ell_M(d, r, M, n), g_scaling(d, r, n, N),
                         theoretical_rate(d, r, alpha, xi, lambda_value))


# ---------------------------------------------------------- inclusion

def _check_balls(domain: Domain, n: int, ell: int) -> None:
    if 2 * ell >= n:
        raise GeometryError(f"balls of radius {ell} around 0 and {n} e1 intersect")
    lo, hi = np.asarray(domain.lo), np.asarray(domain.lo) + np.asarray(domain.shape) - 1
    for c in (0, n):
        center = np.zeros(domain.d, dtype=np.int64)
        center[0] = c
        if np.any(center - ell < lo) or np.any(center + ell > hi):
            raise GeometryError(f"ball of radius {ell} around {center.tolist()} leaves the domain")


def inclusion_events(d: int, n: int, xi: float, eps: float, M: float, config: WeightConfig, *,
                     mu_hat: float, r: float | None = None, ell: int | None = None) -> dict:
    """Indicators and passage times behind the inclusion F1 & F2 & G => tail.

    F1, F2: crossing times of the radius-ell balls around 0 and n e1 are at
    least (xi + eps) n / 2.  G: the cheapest connection between the two ball
    boundaries avoiding ball edges costs at least (mu - eps) n.
    """
    dom = config.domain
    if ell is None:
        ell = ell_M(d, d if r is None else r, M, n)
    _check_balls(dom, n, ell)
    end = np.zeros(d, dtype=np.int64)
    end[0] = n
    o, t = dom.index_of(np.zeros(d)), dom.index_of(end)
    if o < 0 or t < 0:
        raise GeometryError("domain must contain 0 and n e1")
    e0, e1 = ball_edges(dom, np.zeros(d), ell), ball_edges(dom, end, ell)
    b0, b1 = ball_boundary(dom, np.zeros(d), ell), ball_boundary(dom, end, ell)
    m0 = np.zeros(dom.n_edges, dtype=bool)
    m0[e0] = True
    m1 = np.zeros(dom.n_edges, dtype=bool)
    m1[e1] = True
    T1 = passage_time(config, o, b0, edge_mask=m0, geodesic=False).value
    T2 = passage_time(config, t, b1, edge_mask=m1, geodesic=False).value
    Tg = passage_time(config, b0, b1, edge_mask=~(m0 | m1), geodesic=False).value
    Tn = passage_time(config, o, t, geodesic=False).value
    half = (xi + eps) * n / 2.0
    F1, F2, G = T1 >= half, T2 >= half, Tg >= (mu_hat - eps) * n
    # T_n >= T1 + T2 + Tg holds exactly; allow only float rounding
    tail = Tn >= (mu_hat + xi) * n - 1e-9 * max(1.0, abs(Tn))
    return {"ell": ell, "T1": T1, "T2": T2, "TG": Tg, "Tn": Tn,
            "F1": bool(F1), "F2": bool(F2), "G": bool(G), "tail": bool(tail)}


def event_inclusion_check(d: int, n: int, xi: float, eps: float, M: float, config: WeightConfig, *,
                          mu_hat: float, r: float | None = None, ell: int | None = None) -> bool:
    """True iff F1 & F2 & G implies the tail event on ``config``."""
    ev = inclusion_events(d, n, xi, eps, M, config, mu_hat=mu_hat, r=r, ell=ell)
    return (not (ev["F1"] and ev["F2"] and ev["G"])) or ev["tail"]


def adversarial_configs(domain: Domain, n: int, ell: int, xi: float, eps: float, mu_hat: float,
                        rng: np.random.Generator) -> list:
    """Ten hand-built configurations that sit on or near the event boundaries."""
    d = domain.d
    end = np.zeros(d, dtype=np.int64)
    end[0] = n
    e0, e1 = ball_edges(domain, np.zeros(d), ell), ball_edges(domain, end, ell)
    balls = np.union1d(e0, e1)
    E = domain.n_edges
    half = (xi + eps) * n / 2.0
    outside = (mu_hat - eps) * n / (n - 2 * ell)
    straight = edges_at(domain, np.array([[k] + [0] * (d - 1) for k in range(n)]), 0)
    out = []

    def put(base, where, val):
        t = base.copy()
        t[where] = val
        return t

    big = 10.0 * (xi + mu_hat + 1.0) * n
    out.append(put(np.full(E, max(mu_hat, 0.1)), balls, big))            # F1, F2 clearly
    cheap = put(np.full(E, big), balls, half / ell)                      # cheap outer corridor
    out.append(put(cheap, np.setdiff1d(straight, balls), 0.0))
    out.append(np.zeros(E))
    tight = put(np.full(E, outside), balls, half / ell)                  # every bound tight
    out.append(tight)
    out.append(tight * (1.0 + 1e-12))
    out.append(put(np.full(E, outside), e0, big))
    out.append(np.full(E, max(mu_hat, 0.0)))
    heavy = rng.weibull(0.5, E)
    out.append(put(heavy, e1, big))
    out.append(np.full(E, big))
    out.append(put(rng.exponential(1.0, E), balls, half / ell * (1.0 + rng.random(len(balls)))))
    return [WeightConfig(domain, t) for t in out]


# -------------------------------------------------------- tilted sampling

@dataclass(frozen=True, eq=False)
class TiltPlan:
    """Mixture proposal: component k multiplies the rate of ``edges[k]`` by tilts."""

    name: str
    edges: tuple
    tilts: tuple
    weights: tuple

    def describe(self) -> dict:
        return {
            "region": self.name,
            "components": len(self.edges),
            "edges_per_component": [int(len(e)) for e in self.edges],
            "max_tilt": [float(t.max()) if len(t) else 0.0 for t in self.tilts],
            "weights": list(self.weights),
        }


@lru_cache(maxsize=32)
def _capacity_profile(d: int, r: float, ell: int):
    """Optimal edge field t* on FullBox(ell), keyed by (lower endpoint, axis)."""
    dom = build_full_box(d, ell)
    pot, _ = solve_potential(dom, r)
    t = potential_to_edgefield(pot).t
    return dom.coords[dom.edges[:, 0]], dom.edge_axis, t


def _ball_radius(d, r, n, M):
    if r <= 1:
        return 1
    if r <= d:
        ell = ell_M(d, r, M, n)
    else:
        ell = max(1, n // 4)
    return max(1, min(ell, (n - 1) // 2))


def tilt_plan(domain: Domain, model: WeightModel, n: int, xi: float, region=None, tilt=None,
              M: float = 1.0, defensive: float | None = None) -> TiltPlan:
    """Build the importance-sampling proposal.

    ``region`` is "origin", "target", "ends" (a two-component mixture of the
    two), "balls" (both radius-ell balls tilted together), or a list of edge
    index arrays, one per mixture component.  The default is "ends" for
    r <= 1 and "balls" otherwise.

    Without an explicit ``tilt`` each edge gets the tilt that moves its mean
    to ``(xi + 0.1) n t*_e / k``, where t* is the optimal capacity edge field
    of the ball (1 on the 2d end edges for r <= 1) and k is the number of
    ends a component carries.  Edges whose target lies below the untilted
    mean stay untilted.  For r > 1 a defensive untilted component with
    weight ``defensive`` keeps every likelihood ratio below 1/defensive.
    """
    r, d = model.r, domain.d
    if region is None:
        region = "ends" if r <= 1 else "balls"
    end = np.zeros(d, dtype=np.int64)
    end[0] = n
    o, t = domain.index_of(np.zeros(d)), domain.index_of(end)

    def profile(center):
        if r <= 1:
            v = o if not np.any(center) else t
            e = incident_edges(domain, v)
            return e, np.ones(len(e))
        ell = _ball_radius(d, r, n, M)
        low, ax, ts = _capacity_profile(d, float(r), ell)
        e = edges_at(domain, low + center, ax)
        keep = e >= 0
        return e[keep], ts[keep]

    if isinstance(region, str):
        zero = np.zeros(d, dtype=np.int64)
        if region == "origin":
            comps = [(profile(zero), 1)]
        elif region == "target":
            comps = [(profile(end), 1)]
        elif region == "ends":
            comps = [(profile(zero), 1), (profile(end), 1)]
        elif region == "balls":
            (ea, ta), (eb, tb) = profile(zero), profile(end)
            comps = [((np.concatenate([ea, eb]), np.concatenate([ta, tb])), 2)]
        else:
            raise ValidationError(f"unknown tilt region {region!r}")
        name = region
    else:
        comps = [((np.asarray(e, dtype=np.int64), np.ones(len(e))), 1) for e in region]
        name = "custom"

    edges, tilts = [], []
    for (e, prof), k in comps:
        if tilt is not None:
            if tilt >= model.alpha:
                raise DegenerateTilt(f"tilt {tilt} must stay below alpha {model.alpha}")
            if tilt < 0:
                raise ValidationError("tilt must be nonnegative")
            tl = np.full(len(e), float(tilt))
        else:
            target = (xi + 0.1) * n * prof / k
            tl = tilt_for_mean(model.alpha, r, np.maximum(target, 1e-300))
            tl = np.where(target > weight_mean(model), tl, 0.0)
        sel = tl > 0
        edges.append(e[sel])
        tilts.append(tl[sel])
    if defensive is None:
        defensive = 0.2 if r > 1 else 0.0
    w = [(1.0 - defensive) / len(edges)] * len(edges)
    if defensive > 0:
        edges.append(np.zeros(0, dtype=np.int64))
        tilts.append(np.zeros(0))
        w.append(defensive)
    return TiltPlan(name, tuple(edges), tuple(tilts), tuple(w))


def _sample_block(domain, model, plan, block, watch, pinned):
    """Passage times, log-weights and watched maxima for one block."""
    rng = block.rng()
    B, E = block.size, domain.n_edges
    rate = np.full((B, E), float(model.alpha))
    logw = np.zeros(B)
    if plan is not None:
        comp = rng.choice(len(plan.edges), size=B, p=plan.weights)
        for k, (e, tl) in enumerate(zip(plan.edges, plan.tilts)):
            rows = np.flatnonzero(comp == k)
            rate[np.ix_(rows, e)] = model.alpha - tl
    u = 1.0 - rng.random((B, E))
    tau = (-np.log(u) / rate) ** (1.0 / model.r)
    if pinned:
        idx = np.fromiter(pinned.keys(), dtype=np.int64)
        tau[:, idx] = np.fromiter(pinned.values(), dtype=float)
    if plan is not None:
        # log dQ_k/dP for every component, then the mixture weight
        lq = np.empty((len(plan.edges), B))
        for k, (e, tl) in enumerate(zip(plan.edges, plan.tilts)):
            lq[k] = (tau[:, e] ** model.r) @ tl + np.log((model.alpha - tl) / model.alpha).sum()
        logw = -special.logsumexp(lq, axis=0, b=np.asarray(plan.weights)[:, None])
    T = _passage_many(domain, tau)
    wmax = tau[:, watch].max(axis=1) if watch is not None and len(watch) else np.zeros(B)
    return T, logw, wmax


def _simulate(domain, model, plan, samples, seed, tag, threads, watch=None, pinned=None):
    if pinned:
        bad = set(pinned) & set(int(i) for e in (plan.edges if plan else ()) for i in e)
        if bad:
            plan = TiltPlan(plan.name,
                            tuple(e[~np.isin(e, list(bad))] for e in plan.edges),
                            tuple(t[~np.isin(e, list(bad))] for e, t in zip(plan.edges, plan.tilts)),
                            plan.weights)
    parts = _parallel.run_blocks(
        lambda b: _sample_block(domain, model, plan, b, watch, pinned),
        _parallel.blocks(samples, seed, tag=tag),
        threads,
    )
    return tuple(np.concatenate(x) for x in zip(*parts))


@dataclass
class RareEventEstimate:
    p_hat: float
    log_p_hat: float
    stderr: float
    n_samples: int
    n_hits: int
    method: str
    tilt: dict
    threshold: dict
    low_confidence: bool
    sensitivity: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _weighted(T, logw, thr, plain):
    hit = T > thr
    N = len(T)
    if plain:
        k = int(hit.sum())
        p = k / N
        se = math.sqrt(p * (1 - p) / (N - 1)) if N > 1 else 0.0
        return p, se, k
    x = np.where(hit, np.exp(logw), 0.0)
    p = float(x.sum() / N)
    se = float(x.std(ddof=1) / math.sqrt(N)) if N > 1 else 0.0
    return p, se, int(hit.sum())


def estimate_upper_tail(d: int, model: WeightModel, n: int, xi: float, mu_hat: float,
                        method: str = "plain", samples: int = 10_000, tilt_region=None,
                        tilt: float | None = None, *, seed: int = 0, threads: int = 1,
                        box_margin: float = 1.0, M: float = 1.0, mu_stderr: float | None = None,
                        pinned: dict | None = None) -> RareEventEstimate:
    """Estimate P(T(0, n e1) > (mu_hat + xi) n).

    ``method="plain"`` counts hits.  ``method="tilted"`` uses the mixture
    proposal from :func:`tilt_plan` with exact likelihood ratios and no
    self-normalization.  With ``mu_stderr`` the same draws are re-scored at
    mu_hat -/+ 2 stderr.
    """
    if xi <= 0:
        raise ValidationError("xi must be positive")
    if method not in ("plain", "tilted"):
        raise ValidationError(f"unknown method {method!r}")
    if samples < 2:
        raise ValidationError("need at least two samples")
    dom = passage_domain(d, n, box_margin)
    plan = None
    if method == "tilted":
        plan = tilt_plan(dom, model, n, xi, tilt_region, tilt, M)
    tag = (_PLAIN if plan is None else _TILTED, d, n)
    T, logw, _ = _simulate(dom, model, plan, samples, seed, tag, threads, pinned=pinned)
    return _estimate(T, logw, n, xi, mu_hat, plan, mu_stderr)


def _estimate(T, logw, n, xi, mu_hat, plan, mu_stderr=None):
    thr = (mu_hat + xi) * n
    p, se, k = _weighted(T, logw, thr, plan is None)
    sens = {}
    if mu_stderr is not None:
        for lab, mu in (("mu_minus_2se", mu_hat - 2 * mu_stderr), ("mu_plus_2se", mu_hat + 2 * mu_stderr)):
            ps, ss, _ = _weighted(T, logw, (mu + xi) * n, plan is None)
            sens[lab] = {"mu": mu, "p_hat": ps, "stderr": ss}
    return RareEventEstimate(
        p_hat=p,
        log_p_hat=math.log(p) if p > 0 else -math.inf,
        stderr=se,
        n_samples=len(T),
        n_hits=k,
        method="plain" if plan is None else "tilted",
        tilt={"region": None} if plan is None else plan.describe(),
        threshold={"xi": xi, "mu_hat": mu_hat, "value": thr},
        low_confidence=k < MIN_HITS,
        sensitivity=sens,
    )


def rate_curve(d: int, model: WeightModel, xi: float, n_list, mu_hat: float, samples: int, *,
               method: str = "tilted", tilt_region=None, tilt=None, M: float = 1.0,
               lambda_value: float | None = None, seed: int = 0, threads: int = 1,
               box_margin: float = 1.0) -> list:
    """Rows of (n, p_hat, -log p_hat / scale(n), theoretical constant).

    scale(n) is n^r, except for r = d where it is n^d lambda_{d,d}(ell_M(n)).
    Estimator failures are recorded in the row instead of aborting the curve.
    """
    if xi <= 0:
        raise ValidationError("xi must be positive")
    r = model.r
    target = theoretical_rate(d, r, model.alpha, xi, lambda_value)
    rows = []
    for n in n_list:
        row = {"n": int(n), "theory": target}
        try:
            est = estimate_upper_tail(d, model, n, xi, mu_hat, method, samples, tilt_region, tilt,
                                      seed=seed, threads=threads, box_margin=box_margin, M=M)
            if r == d and r > 1:
                ell = ell_M(d, r, M, n)
                scale = n**d * solve_potential(build_full_box(d, ell), r)[1].value
            else:
                scale = float(n) ** r
            rate = -est.log_p_hat / scale if est.p_hat > 0 else math.inf
            row.update(p_hat=est.p_hat, stderr=est.stderr, hits=est.n_hits, scale=scale,
                       rate=rate, low_confidence=est.low_confidence, error="")
        except Exception as exc:  # noqa: BLE001 - recorded per row
            row.update(p_hat=math.nan, stderr=math.nan, hits=0, scale=math.nan, rate=math.nan,
                       low_confidence=True, error=f"{type(exc).__name__}: {exc}")
        rows.append(row)
    return rows


@dataclass
class LocalizationResult:
    freq_loc: float
    stderr: float
    signal: float
    hits: int
    effective_hits: float
    n_samples: int

    def to_dict(self) -> dict:
        return asdict(self)


def localization_stat(d: int, model: WeightModel, n: int, xi: float, R: int, eps0: float,
                      samples: int, mu_hat: float, *, method: str = "tilted", tilt_region=None,
                      tilt=None, M: float = 1.0, seed: int = 0, threads: int = 1,
                      box_margin: float = 1.0, pinned: dict | None = None) -> LocalizationResult:
    """Conditional probability that every edge of E_R(0) and E_R(n e1) stays <= eps0 n.

    Conditioning on {T_n > (mu_hat + xi) n} is done by importance weighting.
    ``signal`` is the complement, the chance that some edge near either end
    carries a macroscopic weight.
    """
    if xi <= 0 or eps0 <= 0 or R < 1:
        raise ValidationError("need xi > 0, eps0 > 0 and R >= 1")
    dom = passage_domain(d, n, box_margin)
    end = np.zeros(d, dtype=np.int64)
    end[0] = n
    watch = np.union1d(ball_edges(dom, np.zeros(d), R), ball_edges(dom, end, R))
    plan = tilt_plan(dom, model, n, xi, tilt_region, tilt, M) if method == "tilted" else None
    tag = (_PLAIN if plan is None else _TILTED, d, n)
    T, logw, wmax = _simulate(dom, model, plan, samples, seed, tag, threads, watch, pinned)
    hit = T > (mu_hat + xi) * n
    k = int(hit.sum())
    if k < MIN_HITS:
        raise InsufficientHits(f"only {k} hits on the conditioning event (need {MIN_HITS})")
    w = np.where(hit, np.exp(logw - logw[hit].max()), 0.0)
    a = w * (wmax <= eps0 * n)
    q = a.sum() / w.sum()
    se = math.sqrt(((a - q * w) ** 2).sum()) / w.sum()
    ess = w.sum() ** 2 / (w**2).sum()
    return LocalizationResult(float(q), float(se), float(1 - q), k, float(ess), samples)


# ------------------------------------------------------------ sum tails

@dataclass
class SumTailReport:
    rows: list
    n0: float | None
    c: float

    def to_dict(self) -> dict:
        return asdict(self)


def _exact_sum_tail(model, k, n):
    if k == 1:
        return math.exp(-model.rate * n**model.r)
    if model.r == 1:
        return float(stats.gamma.sf(n, a=k, scale=1.0 / model.rate))
    return None


def sum_tail_check(model: WeightModel, k: int, n_list, samples: int, c: float = 0.2, *,
                   seed: int = 0, threads: int = 1) -> SumTailReport:
    """Empirical P(X_1 + ... + X_k > n) against exp(-(1 - c) alpha n^r).

    ``n0`` is the smallest listed n from which the inequality holds for
    every larger listed n (None if it fails at the largest).
    """
    if model.r > 1:
        raise ValidationError("sum_tail_check needs r <= 1")
    if k < 1:
        raise ValidationError("k must be at least 1")
    n_list = sorted(float(n) for n in n_list)
    sums = np.concatenate(_parallel.run_blocks(
        lambda b: model.draw(b.rng(), (b.size, k)).sum(axis=1),
        _parallel.blocks(samples, seed, tag=(_SUMTAIL, k), block_size=1 << 16),
        threads,
    ))
    rows = []
    for n in n_list:
        h = int((sums > n).sum())
        p = h / samples
        se = math.sqrt(p * (1 - p) / samples)
        env = math.exp(-(1.0 - c) * model.alpha * n**model.r)
        rows.append({"n": n, "p_hat": p, "stderr": se, "ci_lo": max(0.0, p - 1.96 * se),
                     "ci_hi": min(1.0, p + 1.96 * se), "envelope": env, "holds": p <= env,
                     "exact": _exact_sum_tail(model, k, n)})
    n0 = None
    for row in reversed(rows):
        if not row["holds"]:
            break
        n0 = row["n"]
    return SumTailReport(rows, n0, c)


def write_rows_csv(rows, path) -> None:
    if not rows:
        open(path, "w").close()
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
