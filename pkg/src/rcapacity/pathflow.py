"""Near-straight lattice paths and the edge marginals of a random boundary target.

For each x on the sup-norm sphere of FullBox(n) the path gamma_x walks from
the origin to x one unit step at a time, always toward x, choosing the
candidate vertex with the smallest Euclidean distance to the segment
[0, x].  Exact ties go to the larger axis index.  Distances are compared in
integer arithmetic, so the rule is reproducible bit for bit.

Averaging edge usage over a uniform boundary target gives a unit flow
p_e, and C_n = sum_e p_e^(r/(r-1)) controls the capacity lower bound.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .errors import BudgetExceeded, NotBoundary, UnsupportedDomain, ValidationError
from .lattice import Domain, _edge_table, build_full_box

__all__ = [
    "PathMeasure",
    "build_gamma",
    "edge_marginals",
    "lagrangian_constant",
    "set_boundary_cap",
]

_BOUNDARY_CAP = 500_000


def set_boundary_cap(n_points: int) -> None:
    global _BOUNDARY_CAP
    _BOUNDARY_CAP = int(n_points)


@dataclass(frozen=True, eq=False)
class PathMeasure:
    domain: Domain = field(repr=False)
    counts: np.ndarray = field(repr=False)
    boundary_count: int

    @property
    def p(self) -> np.ndarray:
        return self.counts / self.boundary_count

    def exact(self) -> list:
        """Marginals as exact fractions."""
        return [Fraction(int(c), self.boundary_count) for c in self.counts]

    def shells(self) -> np.ndarray:
        l1 = self.domain.l1_norm
        e = self.domain.edges
        return np.maximum(l1[e[:, 0]], l1[e[:, 1]])

    def to_csv(self, path) -> None:
        p = self.p
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["edge", "shell", "p_e"])
            for k, (s, pe) in enumerate(zip(self.shells(), p)):
                w.writerow([k, int(s), repr(float(pe))])


def _step_choice(pos, x):
    """Next vertex for every row of ``pos`` heading to the matching row of ``x``.

    Returns (next_pos, axis).  Rows already at their target keep axis -1.
    """
    B, d = pos.shape
    xx = (x * x).sum(axis=1)
    best = np.full(B, np.iinfo(np.int64).max, dtype=np.int64)
    axis = np.full(B, -1, dtype=np.int64)
    for i in range(d):
        movable = pos[:, i] != x[:, i]
        cand = pos.copy()
        cand[:, i] += np.sign(x[:, i])
        # |x|^2 * squared distance from cand to the line through 0 and x
        score = (cand * cand).sum(axis=1) * xx - (cand * x).sum(axis=1) ** 2
        take = movable & (score <= best)
        best = np.where(take, score, best)
        axis = np.where(take, i, axis)
    nxt = pos.copy()
    rows = np.flatnonzero(axis >= 0)
    nxt[rows, axis[rows]] += np.sign(x[rows, axis[rows]])
    return nxt, axis


def build_gamma(x, domain: Domain) -> list:
    """Vertex list of gamma_x from the origin to boundary point ``x``."""
    if domain.kind != "FullBox":
        raise UnsupportedDomain("paths are defined on FullBox domains")
    x = np.asarray(x, dtype=np.int64).reshape(1, domain.d)
    if int(np.abs(x).max()) != domain.params["M"]:
        raise NotBoundary(f"{x.ravel().tolist()} is not on the boundary of {domain.descriptor()}")
    pos = np.zeros_like(x)
    path = [tuple(pos[0].tolist())]
    while True:
        pos, ax = _step_choice(pos, x)
        if ax[0] < 0:
            break
        path.append(tuple(pos[0].tolist()))
    return path


@lru_cache(maxsize=32)
def _marginal_counts(d: int, n: int):
    dom = build_full_box(d, n)
    xs = dom.coords[dom.targets]
    if len(xs) > _BOUNDARY_CAP:
        raise BudgetExceeded(f"|boundary| = {len(xs)} exceeds cap {_BOUNDARY_CAP}")
    tab = _edge_table(dom)
    lo = np.asarray(dom.lo)
    counts = np.zeros(dom.n_edges, dtype=np.int64)
    pos = np.zeros_like(xs)
    while True:
        nxt, ax = _step_choice(pos, xs)
        moving = np.flatnonzero(ax >= 0)
        if len(moving) == 0:
            break
        a, b, axm = pos[moving], nxt[moving], ax[moving]
        lower = np.where((b - a).sum(axis=1)[:, None] > 0, a, b)
        u = dom.lookup[tuple((lower - lo).T)]
        e = tab[u, axm]
        np.add.at(counts, e, 1)
        pos = nxt
    counts.setflags(write=False)
    return dom, counts, len(xs)


def edge_marginals(domain: Domain) -> PathMeasure:
    """Exact p_e = #{x on the boundary : e in gamma_x} / |boundary|."""
    if domain.kind != "FullBox":
        raise UnsupportedDomain("edge marginals need a FullBox domain")
    dom, counts, nb = _marginal_counts(domain.d, domain.params["M"])
    return PathMeasure(domain if domain.n_edges == dom.n_edges else dom, counts, nb)


def lagrangian_constant(p: PathMeasure, r: float) -> float:
    """C_n = sum_e p_e^(r/(r-1))."""
    if not r > 1:
        raise ValidationError("lagrangian constant needs r > 1")
    q = r / (r - 1.0)
    return float(np.sum(p.p**q))
