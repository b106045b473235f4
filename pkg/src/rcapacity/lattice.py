"""Finite regions of Z^d with dense vertex indexing and canonical edge order.

Every region lives inside an axis-aligned bounding box.  Vertices are the
box points accepted by a membership mask, numbered in C order of the box
(mixed-radix encoding, first axis slowest).  An edge ``(u, v)`` always has
``v = u + e_axis``; edges are sorted by ``(u, axis)``.

Domain kinds
------------
FullBox      D_M(0) with target the sup-norm sphere of radius M.
HalfBox      D_k(0) ∩ [0, n]^d with target the faces of [0, k]^d away from 0.
Annulus      edges of E_n not inside D_R; sources are the inner sphere.
SlabSegment  [lo, hi] x [-K, K]^(d-1); used for passage-time boxes.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import SizingError, ValidationError

__all__ = [
    "Domain",
    "build_full_box",
    "build_half_box",
    "build_annulus",
    "build_slab_segment",
    "domain_from_json",
    "shell_edges",
    "edges_at",
    "ball_edges",
    "ball_boundary",
    "incident_edges",
    "set_memory_budget",
    "memory_budget",
]

_MEMORY_BUDGET = 2 * 1024**3


def set_memory_budget(nbytes: int) -> None:
    """Set the nominal byte budget checked before any domain is allocated."""
    global _MEMORY_BUDGET
    if nbytes <= 0:
        raise ValidationError("memory budget must be positive")
    _MEMORY_BUDGET = int(nbytes)


def memory_budget() -> int:
    return _MEMORY_BUDGET


def _check_budget(d: int, shape) -> None:
    # nominal footprint: one 8-byte word per (axis, box point)
    nbytes = 8 * d * int(np.prod(shape, dtype=np.int64))
    if nbytes > _MEMORY_BUDGET:
        raise SizingError(
            f"domain needs ~{nbytes / 2**20:.1f} MiB, budget is "
            f"{_MEMORY_BUDGET / 2**20:.1f} MiB (see set_memory_budget)"
        )


def _freeze(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Domain:
    d: int
    kind: str
    params: dict
    lo: tuple
    shape: tuple
    coords: np.ndarray = field(repr=False)
    edges: np.ndarray = field(repr=False)
    edge_axis: np.ndarray = field(repr=False)
    sources: np.ndarray = field(repr=False)
    targets: np.ndarray = field(repr=False)
    lookup: np.ndarray = field(repr=False)

    @property
    def n_vertices(self) -> int:
        return len(self.coords)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def multi_source(self) -> bool:
        return len(self.sources) != 1

    @property
    def source(self) -> int:
        if self.multi_source:
            raise ValidationError(f"{self.kind} domain has {len(self.sources)} sources")
        return int(self.sources[0])

    def index_of(self, point) -> int:
        """Dense index of a lattice point, or -1 if it is not a vertex."""
        p = np.asarray(point, dtype=np.int64).reshape(self.d)
        rel = p - np.asarray(self.lo)
        if np.any(rel < 0) or np.any(rel >= np.asarray(self.shape)):
            return -1
        return int(self.lookup[tuple(rel)])

    def edge_index(self, a, b) -> int:
        """Index of the edge joining points ``a`` and ``b``, or -1."""
        ia, ib = self.index_of(a), self.index_of(b)
        if ia < 0 or ib < 0:
            return -1
        u, v = min(ia, ib), max(ia, ib)
        k = int(np.searchsorted(self._edge_keys, u * (self.n_vertices + 1) + v))
        if k < self.n_edges and self._edge_keys[k] == u * (self.n_vertices + 1) + v:
            return int(self._edge_order[k])
        return -1

    @cached_property
    def _edge_keys_sorted(self):
        keys = self.edges[:, 0] * (self.n_vertices + 1) + self.edges[:, 1]
        order = np.argsort(keys, kind="stable")
        return keys[order], order

    @property
    def _edge_keys(self):
        return self._edge_keys_sorted[0]

    @property
    def _edge_order(self):
        return self._edge_keys_sorted[1]

    @cached_property
    def target_mask(self) -> np.ndarray:
        m = np.zeros(self.n_vertices, dtype=bool)
        m[self.targets] = True
        return _freeze(m)

    @cached_property
    def source_mask(self) -> np.ndarray:
        m = np.zeros(self.n_vertices, dtype=bool)
        m[self.sources] = True
        return _freeze(m)

    @cached_property
    def adjacency(self):
        """CSR adjacency ``(indptr, neighbor, edge_id)``, neighbors sorted by index."""
        V, E = self.n_vertices, self.n_edges
        u, v = self.edges[:, 0], self.edges[:, 1]
        src = np.concatenate([u, v])
        dst = np.concatenate([v, u])
        eid = np.concatenate([np.arange(E), np.arange(E)])
        order = np.lexsort((dst, src))
        src, dst, eid = src[order], dst[order], eid[order]
        indptr = np.zeros(V + 1, dtype=np.int64)
        np.add.at(indptr, src + 1, 1)
        np.cumsum(indptr, out=indptr)
        return _freeze(indptr), _freeze(dst.astype(np.int64)), _freeze(eid.astype(np.int64))

    @cached_property
    def l1_norm(self) -> np.ndarray:
        return _freeze(np.abs(self.coords).sum(axis=1))

    @cached_property
    def sup_norm(self) -> np.ndarray:
        return _freeze(np.abs(self.coords).max(axis=1))

    def descriptor(self) -> dict:
        return {"kind": self.kind, "d": self.d, **self.params}

    def to_json(self) -> str:
        return json.dumps(self.descriptor(), sort_keys=True)

    def dump_vertices_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", *[f"x{i}" for i in range(self.d)], "role"])
            for i, c in enumerate(self.coords):
                role = "source" if self.source_mask[i] else "target" if self.target_mask[i] else "interior"
                w.writerow([i, *c.tolist(), role])

    def dump_edges_csv(self, path) -> None:
        shells = np.maximum(self.l1_norm[self.edges[:, 0]], self.l1_norm[self.edges[:, 1]])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "u", "v", "axis", "shell"])
            for k, ((a, b), ax, s) in enumerate(zip(self.edges, self.edge_axis, shells)):
                w.writerow([k, int(a), int(b), int(ax), int(s)])


def _build(d, kind, params, lo, hi, vertex_mask_fn, edge_ok_fn, source_fn, target_fn):
    lo = np.asarray(lo, dtype=np.int64)
    hi = np.asarray(hi, dtype=np.int64)
    shape = tuple(int(s) for s in hi - lo + 1)
    _check_budget(d, shape)
    grid = np.indices(shape, dtype=np.int64).reshape(d, -1).T + lo
    mask = vertex_mask_fn(grid)
    lookup = np.full(int(np.prod(shape)), -1, dtype=np.int64)
    lookup[mask] = np.arange(int(mask.sum()))
    lookup = lookup.reshape(shape)
    coords = grid[mask]

    strides = np.array([int(np.prod(shape[i + 1:])) for i in range(d)], dtype=np.int64)
    flat_ids = np.flatnonzero(mask)
    us, vs, axes = [], [], []
    for ax in range(d):
        ok = coords[:, ax] < hi[ax]
        nb_flat = flat_ids[ok] + strides[ax]
        nb = lookup.reshape(-1)[nb_flat]
        a = np.flatnonzero(ok)
        keep = nb >= 0
        a, b = a[keep], nb[keep]
        good = edge_ok_fn(coords[a], coords[b])
        us.append(a[good])
        vs.append(b[good])
        axes.append(np.full(int(good.sum()), ax, dtype=np.int64))
    u = np.concatenate(us)
    v = np.concatenate(vs)
    axis = np.concatenate(axes)
    order = np.lexsort((axis, u))
    edges = np.stack([u[order], v[order]], axis=1)

    # drop vertices no kept edge touches (annulus inner ball)
    used = np.zeros(len(coords), dtype=bool)
    used[edges.ravel()] = True
    if not used.all():
        remap = np.full(len(coords), -1, dtype=np.int64)
        remap[used] = np.arange(int(used.sum()))
        coords = coords[used]
        edges = remap[edges]
        flat = lookup.reshape(-1)
        sel = flat >= 0
        flat[sel] = remap[flat[sel]]
        lookup = flat.reshape(shape)

    sources = np.flatnonzero(source_fn(coords))
    targets = np.flatnonzero(target_fn(coords))
    dom = Domain(
        d=d,
        kind=kind,
        params=dict(params),
        lo=tuple(int(x) for x in lo),
        shape=shape,
        coords=_freeze(coords),
        edges=_freeze(edges),
        edge_axis=_freeze(axis[order]),
        sources=_freeze(sources),
        targets=_freeze(targets),
        lookup=_freeze(lookup),
    )
    if len(dom.sources) == 0:
        raise ValidationError("domain has no source vertex")
    if np.any(dom.target_mask[dom.sources]):
        raise ValidationError("source vertex lies in the target set")
    return dom


def _all(pts):
    return np.ones(len(pts), dtype=bool)


def _edges_all(a, b):
    return np.ones(len(a), dtype=bool)


def _is_origin(pts):
    return ~np.any(pts, axis=1)


def build_full_box(d: int, M: int) -> Domain:
    """D_M(0) with target set {|y|_inf = M} and source the origin."""
    if d < 1 or M < 1:
        raise ValidationError(f"FullBox needs d >= 1 and M >= 1, got d={d}, M={M}")
    return _build(
        d, "FullBox", {"M": int(M)}, [-M] * d, [M] * d,
        _all, _edges_all, _is_origin,
        lambda p: np.abs(p).max(axis=1) == M,
    )


def build_half_box(d: int, k: int, n: int) -> Domain:
    """D_k(0) ∩ [0, n]^d; target is the union of faces of [0, k]^d not containing 0."""
    if not (1 <= k <= n):
        raise ValidationError(f"HalfBox needs 1 <= k <= n, got k={k}, n={n}")
    hi = min(k, n)
    return _build(
        d, "HalfBox", {"k": int(k), "n": int(n)}, [0] * d, [hi] * d,
        _all, _edges_all, _is_origin,
        lambda p: p.max(axis=1) == k,
    )


def build_annulus(d: int, R: int, n: int) -> Domain:
    """Edge set E_n minus E_R; sources are the inner sphere (origin when R=0)."""
    if not (0 <= R < n):
        raise ValidationError(f"Annulus needs 0 <= R < n, got R={R}, n={n}")

    def edge_ok(a, b):
        return ~((np.abs(a).max(axis=1) <= R) & (np.abs(b).max(axis=1) <= R))

    return _build(
        d, "Annulus", {"R": int(R), "n": int(n)}, [-n] * d, [n] * d,
        lambda p: np.abs(p).max(axis=1) >= R,
        edge_ok,
        lambda p: np.abs(p).max(axis=1) == R,
        lambda p: np.abs(p).max(axis=1) == n,
    )


def build_slab_segment(d: int, K: int, lo: int, hi: int, target=None) -> Domain:
    """Box [lo, hi] x [-K, K]^(d-1) with source 0 and a single target point.

    ``target`` defaults to ``hi * e1``.  The box must contain the origin.
    """
    if K < 0 or lo > 0 or hi < 0 or hi <= lo:
        raise ValidationError(f"bad slab segment K={K}, lo={lo}, hi={hi}")
    tgt = np.zeros(d, dtype=np.int64)
    tgt[0] = hi
    if target is not None:
        tgt = np.asarray(target, dtype=np.int64).reshape(d)
    lo_v = [lo] + [-K] * (d - 1)
    hi_v = [hi] + [K] * (d - 1)
    if np.any(tgt < lo_v) or np.any(tgt > hi_v) or not np.any(tgt):
        raise ValidationError(f"target {tgt.tolist()} outside slab or equal to source")
    return _build(
        d, "SlabSegment",
        {"K": int(K), "lo": int(lo), "hi": int(hi), "target": tgt.tolist()},
        lo_v, hi_v, _all, _edges_all, _is_origin,
        lambda p: np.all(p == tgt, axis=1),
    )


def domain_from_json(text) -> Domain:
    desc = json.loads(text) if isinstance(text, str) else dict(text)
    kind, d = desc["kind"], int(desc["d"])
    if kind == "FullBox":
        return build_full_box(d, int(desc["M"]))
    if kind == "HalfBox":
        return build_half_box(d, int(desc["k"]), int(desc["n"]))
    if kind == "Annulus":
        return build_annulus(d, int(desc["R"]), int(desc["n"]))
    if kind == "SlabSegment":
        return build_slab_segment(d, int(desc["K"]), int(desc["lo"]), int(desc["hi"]), desc.get("target"))
    raise ValidationError(f"unknown domain kind {kind!r}")


def shell_edges(domain: Domain, k: int) -> np.ndarray:
    """Edges with |e|_1 = k, where |<x,y>|_1 = max(|x|_1, |y|_1)."""
    l1 = domain.l1_norm
    s = np.maximum(l1[domain.edges[:, 0]], l1[domain.edges[:, 1]])
    return np.flatnonzero(s == k)


def edges_at(domain: Domain, lower, axis) -> np.ndarray:
    """Indices of edges ``(p, p + e_axis)`` for rows ``p`` of ``lower`` (-1 if absent)."""
    lower = np.atleast_2d(np.asarray(lower, dtype=np.int64))
    axis = np.broadcast_to(np.asarray(axis, dtype=np.int64), (len(lower),))
    tab = _edge_table(domain)
    rel = lower - np.asarray(domain.lo)
    inside = np.all((rel >= 0) & (rel < np.asarray(domain.shape)), axis=1)
    out = np.full(len(lower), -1, dtype=np.int64)
    u = domain.lookup[tuple(rel[inside].T)]
    ok = u >= 0
    sel = np.flatnonzero(inside)[ok]
    out[sel] = tab[u[ok], axis[sel]]
    return out


def _edge_table(domain: Domain) -> np.ndarray:
    """``table[u, axis]`` = index of edge (u, u + e_axis), or -1."""
    tab = domain.__dict__.get("_edge_tab")
    if tab is None:
        tab = np.full((domain.n_vertices, domain.d), -1, dtype=np.int64)
        tab[domain.edges[:, 0], domain.edge_axis] = np.arange(domain.n_edges)
        tab.setflags(write=False)
        object.__setattr__(domain, "_edge_tab", tab)
    return tab


def ball_edges(domain: Domain, center, radius: int) -> np.ndarray:
    """Edges with both endpoints within sup-distance ``radius`` of ``center``."""
    c = np.asarray(center, dtype=np.int64)
    inside = np.abs(domain.coords - c).max(axis=1) <= radius
    return np.flatnonzero(inside[domain.edges[:, 0]] & inside[domain.edges[:, 1]])


def ball_boundary(domain: Domain, center, radius: int) -> np.ndarray:
    """Vertices at sup-distance exactly ``radius`` from ``center``."""
    c = np.asarray(center, dtype=np.int64)
    return np.flatnonzero(np.abs(domain.coords - c).max(axis=1) == radius)


def incident_edges(domain: Domain, v: int) -> np.ndarray:
    indptr, _, eid = domain.adjacency
    return np.sort(eid[indptr[v]:indptr[v + 1]])
