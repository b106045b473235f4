"""First-passage percolation on lattice domains.

Passage times are label-setting shortest paths (binary heap, ties broken by
vertex index).  An edge weight of ``+inf`` or a False entry in an edge mask
removes the edge, which is how restricted passage times are expressed.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import _kernels, _parallel
from .errors import ValidationError
from .lattice import Domain, build_slab_segment

__all__ = [
    "WeightConfig",
    "PassageResult",
    "MuEstimate",
    "passage_time",
    "subadditivity_check",
    "passage_domain",
    "sample_config",
    "slab_passage",
    "estimate_mu",
]

_BOOT_TAG = 7_777


@dataclass(frozen=True, eq=False)
class WeightConfig:
    domain: Domain = field(repr=False)
    tau: np.ndarray = field(repr=False)

    def __post_init__(self):
        tau = np.ascontiguousarray(self.tau, dtype=float)
        if tau.shape != (self.domain.n_edges,):
            raise ValidationError(f"need {self.domain.n_edges} weights, got shape {tau.shape}")
        if not np.all(np.isfinite(tau)) or np.any(tau < 0):
            raise ValidationError("edge weights must be finite and nonnegative")
        object.__setattr__(self, "tau", tau)


@dataclass(frozen=True)
class PassageResult:
    value: float
    geodesic: list | None
    source: tuple
    targets: tuple
    unreachable: bool = False


def _vertex_array(domain: Domain, v) -> np.ndarray:
    a = np.atleast_1d(np.asarray(v, dtype=np.int64))
    if a.size == 0 or a.min() < 0 or a.max() >= domain.n_vertices:
        raise ValidationError("vertex index outside the domain")
    return a


def _geodesic_edges(domain: Domain, path) -> list:
    indptr, nbr, eid = domain.adjacency
    out = []
    for u, v in zip(path[:-1], path[1:]):
        k = indptr[v] + np.searchsorted(nbr[indptr[v]:indptr[v + 1]], u)
        out.append(int(eid[k]))
    return out


def passage_time(config: WeightConfig, source, targets, *, edge_mask=None,
                 geodesic: bool = True) -> PassageResult:
    """Restricted first-passage time from ``source`` to the ``targets`` set.

    ``source`` and ``targets`` are vertex indices (scalars or arrays).
    ``edge_mask``, if given, keeps only edges where it is True.  When no
    path exists the result carries ``value = inf`` and ``unreachable``.
    """
    dom = config.domain
    src = _vertex_array(dom, source)
    tgt = _vertex_array(dom, targets)
    w = config.tau
    if edge_mask is not None:
        mask = np.asarray(edge_mask, dtype=bool)
        if mask.shape != w.shape:
            raise ValidationError("edge mask has the wrong length")
        w = np.where(mask, w, np.inf)
    is_t = np.zeros(dom.n_vertices, dtype=np.bool_)
    is_t[tgt] = True
    indptr, nbr, eid = dom.adjacency
    dist, pred, hit = _kernels.dijkstra(indptr, nbr, eid, w, src, is_t, True)
    if hit < 0:
        return PassageResult(math.inf, None, tuple(src.tolist()), tuple(tgt.tolist()), True)
    path = None
    if geodesic:
        path = [int(hit)]
        while pred[path[-1]] >= 0:
            path.append(int(pred[path[-1]]))
        path.reverse()
    return PassageResult(float(dist[hit]), path, tuple(src.tolist()), tuple(tgt.tolist()))


def geodesic_weight(config: WeightConfig, path) -> float:
    return float(sum(config.tau[e] for e in _geodesic_edges(config.domain, path)))


def subadditivity_check(config: WeightConfig, x: int, y: int, z: int, slack: float = 1e-9) -> bool:
    """T(x, z) <= T(x, y) + T(y, z) up to ``slack``."""
    t = lambda a, b: passage_time(config, a, b, geodesic=False).value  # noqa: E731
    return t(x, z) <= t(x, y) + t(y, z) + slack


@lru_cache(maxsize=16)
def passage_domain(d: int, n: int, box_margin: float = 1.0) -> Domain:
    """Box [-m, n+m] x [-m, m]^(d-1), m = ceil(box_margin * n), target n e1."""
    m = int(math.ceil(box_margin * n))
    return build_slab_segment(d, m, -m, n + m, target=[n] + [0] * (d - 1))


def sample_config(domain: Domain, model, rng) -> WeightConfig:
    return WeightConfig(domain, model.draw(rng, domain.n_edges))


def _passage_many(domain: Domain, W: np.ndarray) -> np.ndarray:
    indptr, nbr, eid = domain.adjacency
    return _kernels.batch_passage(indptr, nbr, eid, W, domain.sources, domain.target_mask)


def _draw_passages(domain: Domain, model, rng, count: int) -> np.ndarray:
    """``count`` independent passage times; chunking does not change the stream."""
    E = domain.n_edges
    rows = max(1, (1 << 20) // E)
    out = np.empty(count)
    for a in range(0, count, rows):
        b = min(a + rows, count)
        out[a:b] = _passage_many(domain, model.draw(rng, (b - a, E)))
    return out


def slab_passage(K: int, n: int, L: int, model, rng, d: int = 2) -> float:
    """One draw of T over [-(L-n), L] x [-K, K]^(d-1) from 0 to n e1.

    Truncating the slab only removes paths, so the value is biased upward
    relative to the infinite slab.
    """
    if L < n or n < 1 or K < 0:
        raise ValidationError(f"need L >= n >= 1 and K >= 0, got K={K}, n={n}, L={L}")
    dom = _slab_domain(d, K, -(L - n), L, n)
    return float(_draw_passages(dom, model, rng, 1)[0])


@lru_cache(maxsize=16)
def _slab_domain(d, K, lo, hi, n):
    tgt = [n] + [0] * (d - 1)
    return build_slab_segment(d, K, lo, hi, target=tgt)


@dataclass
class MuEstimate:
    mu_hat: float
    stderr: float
    intercept: float
    table: list
    records: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {"mu_hat": self.mu_hat, "stderr": self.stderr, "intercept": self.intercept,
                "table": self.table}

    def write_records(self, path, seed: int) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["seed", "n", "sample", "T"])
            for n, i, t in self.records:
                w.writerow([seed, int(n), int(i), repr(float(t))])


def _slope(x, y):
    """OLS slope of each row of ``y`` against ``x``."""
    xc = x - x.mean()
    return (y - y.mean(axis=-1, keepdims=True)) @ xc / (xc @ xc)


def estimate_mu(d: int, model, n_list, samples: int, box_margin: float = 1.0, *,
                seed: int = 0, threads: int = 1, n_boot: int = 200) -> MuEstimate:
    """Time constant from the least-squares slope of mean T(0, n e1) against n.

    The intercept absorbs the subadditive finite-n bias.  The standard error
    is a bootstrap over samples within each n.
    """
    n_list = [int(n) for n in n_list]
    if len(n_list) < 2 or any(b <= a for a, b in zip(n_list, n_list[1:])) or n_list[0] < 1:
        raise ValidationError("n_list must hold at least two increasing positive integers")
    if samples < 2:
        raise ValidationError("need at least two samples per n")
    per_n = []
    for n in n_list:
        dom = passage_domain(d, n, box_margin)
        parts = _parallel.run_blocks(
            lambda b, dom=dom: _draw_passages(dom, model, b.rng(), b.size),
            _parallel.blocks(samples, seed, tag=(d, n)),
            threads,
        )
        per_n.append(np.concatenate(parts))
    x = np.asarray(n_list, dtype=float)
    means = np.array([t.mean() for t in per_n])
    A = np.column_stack([np.ones_like(x), x])
    (c0, mu), *_ = np.linalg.lstsq(A, means, rcond=None)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_BOOT_TAG,)))
    boot = np.empty((n_boot, len(n_list)))
    for j, t in enumerate(per_n):
        boot[:, j] = t[rng.integers(0, samples, size=(n_boot, samples))].mean(axis=1)
    slopes = _slope(x, boot)
    table = [
        {"n": n, "mean_T": float(t.mean()), "sd_T": float(t.std(ddof=1)),
         "stderr": float(t.std(ddof=1) / math.sqrt(samples)), "samples": samples}
        for n, t in zip(n_list, per_n)
    ]
    records = np.array([(n, i, v) for n, t in zip(n_list, per_n) for i, v in enumerate(t)])
    return MuEstimate(float(mu), float(np.std(slopes, ddof=1)), float(c0), table, records)
