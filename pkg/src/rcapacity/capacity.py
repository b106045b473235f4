"""Discrete r-capacity of lattice domains.

The primal problem minimizes the r-Dirichlet energy
``sum_<x,y> |f(x) - f(y)|^r`` over potentials with ``f = 0`` at the source
and ``f >= 1`` on the target set.  Its pathwise dual minimizes
``sum_e t_e^r`` over edge fields whose every source-to-target path weighs at
least one.  This module solves the primal by symmetric nonlinear
Gauss-Seidel, converts between the two formulations, and produces
certified two-sided bounds.
"""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels
from .errors import (
    DegenerateMeasure,
    InfeasiblePotential,
    NonConvergence,
    RCapacityError,
    UnsupportedDomain,
    UnsupportedExponent,
    ValidationError,
)
from .lattice import Domain, build_full_box, build_half_box

log = logging.getLogger(__name__)

__all__ = [
    "Potential",
    "EdgeField",
    "CapacityEstimate",
    "SweepResult",
    "solve_potential",
    "energy",
    "potential_to_edgefield",
    "edgefield_to_potential",
    "verify_path_feasibility",
    "testfn_upper_bound",
    "flow_lower_bound",
    "dual_flow",
    "small_r_upper_bound",
    "kappa",
    "capacity_sweep",
    "half_box_capacity",
    "default_tol",
]


@dataclass(frozen=True, eq=False)
class Potential:
    domain: Domain = field(repr=False)
    f: np.ndarray = field(repr=False)


@dataclass(frozen=True, eq=False)
class EdgeField:
    domain: Domain = field(repr=False)
    t: np.ndarray = field(repr=False)

    def __post_init__(self):
        if np.any(self.t < 0) or not np.all(np.isfinite(self.t)):
            raise ValidationError("edge field must be finite and nonnegative")


@dataclass
class CapacityEstimate:
    value: float
    lower_bound: float
    upper_bound: float
    duality_gap: float
    iterations: int
    final_residual: float
    r: float
    domain: dict
    converged: bool = True
    method: str = "gauss-seidel"

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def default_tol(extent: int) -> float:
    return 1e-9 if extent <= 64 else 1e-7


def _extent(domain: Domain) -> int:
    p = domain.params
    return int(p.get("M", p.get("n", p.get("k", max(domain.shape)))))


def energy(potential: Potential, r: float) -> float:
    """Exact r-Dirichlet energy, summed in canonical edge order."""
    f = np.ascontiguousarray(potential.f, dtype=float)
    return float(_kernels.edge_energy(f, potential.domain.edges, float(r)))


def _ramp(domain: Domain) -> np.ndarray:
    sup = domain.sup_norm.astype(float)
    p = domain.params
    if domain.kind == "FullBox":
        f = sup / p["M"]
    elif domain.kind == "HalfBox":
        f = sup / p["k"]
    elif domain.kind == "Annulus":
        f = (sup - p["R"]) / (p["n"] - p["R"])
    else:
        f = np.zeros(domain.n_vertices)
    f = np.clip(f, 0.0, 1.0)
    f[domain.sources] = 0.0
    f[domain.targets] = 1.0
    return f


def _interior(domain: Domain) -> np.ndarray:
    return np.flatnonzero(~(domain.source_mask | domain.target_mask))


def _laplacian_block(domain: Domain, interior: np.ndarray):
    """Graph Laplacian restricted to ``interior`` and its coupling to the rest."""
    V = domain.n_vertices
    u, v = domain.edges[:, 0], domain.edges[:, 1]
    ones = np.ones(len(u))
    A = sp.coo_matrix((np.concatenate([ones, ones]), (np.concatenate([u, v]), np.concatenate([v, u]))), shape=(V, V)).tocsr()
    deg = np.asarray(A.sum(axis=1)).ravel()
    L = (sp.diags(deg) - A).tocsr()
    return L[interior][:, interior].tocsc(), L[interior]


def _harmonic(domain: Domain, interior: np.ndarray) -> np.ndarray:
    f = np.zeros(domain.n_vertices)
    f[domain.targets] = 1.0
    if len(interior):
        L_ii, L_i = _laplacian_block(domain, interior)
        fixed = f.copy()
        rhs = -(L_i @ fixed)
        f[interior] = spla.spsolve(L_ii, rhs)
    return np.clip(f, 0.0, 1.0)


def solve_potential(
    domain: Domain,
    r: float,
    tol: float | None = None,
    max_iter: int = 200_000,
    *,
    method: str = "auto",
    omega: float = 1.5,
    init: str = "ramp",
    strict: bool = True,
):
    """Minimize the r-Dirichlet energy with f = 0 on sources and f = 1 on targets.

    Parameters
    ----------
    method : {"auto", "gauss-seidel", "direct"}
        ``"direct"`` (only for r = 2) solves the Dirichlet Laplacian system
        with a sparse factorization; ``"auto"`` picks it for r = 2 and
        symmetric Gauss-Seidel otherwise.  Either way the returned residual
        is the one-coordinate optimality defect of the final iterate.
    omega : float
        Over-relaxation factor for the Gauss-Seidel route.  Values above 1
        are applied only where they do not raise the local energy.
    init : {"ramp", "harmonic"}
        Starting iterate for Gauss-Seidel.
    strict : bool
        Raise :class:`NonConvergence` (carrying the best iterate) when the
        residual is still above ``tol`` after ``max_iter`` sweeps; otherwise
        return it with ``converged=False``.
    """
    r = float(r)
    if not r > 1:
        raise UnsupportedExponent(
            f"r={r} <= 1 makes the problem non-convex; use small_r_upper_bound for an upper bound"
        )
    if len(domain.targets) == 0:
        raise ValidationError("target set is empty")
    if tol is None:
        tol = default_tol(_extent(domain))
    indptr, nbr, _ = domain.adjacency
    interior = _interior(domain)
    order = np.ascontiguousarray(interior, dtype=np.int64)

    if method == "auto":
        method = "direct" if r == 2.0 else "gauss-seidel"
    if method == "direct":
        if r != 2.0:
            raise ValidationError("direct method is only available for r = 2")
        f = _harmonic(domain, interior)
        iters = 0
    elif method == "gauss-seidel":
        f = _harmonic(domain, interior) if init == "harmonic" else _ramp(domain)
        iters = 0
        change = np.inf
        while iters < max_iter:
            change = _kernels.sgs_sweep(f, indptr, nbr, order, r, float(omega))
            iters += 1
            if change <= tol and _kernels.defect(f, indptr, nbr, order, r) <= tol:
                break
    else:
        raise ValidationError(f"unknown method {method!r}")

    f[domain.sources] = 0.0
    f[domain.targets] = 1.0
    residual = float(_kernels.defect(f, indptr, nbr, order, r)) if len(order) else 0.0
    pot = Potential(domain, f)
    value = energy(pot, r)
    lower = _dual_lower_bound(pot, r)
    est = CapacityEstimate(
        value=value,
        lower_bound=lower,
        upper_bound=value,
        duality_gap=value - lower,
        iterations=iters,
        final_residual=residual,
        r=r,
        domain=domain.descriptor(),
        converged=residual <= tol,
        method=method,
    )
    if not est.converged:
        msg = f"residual {residual:.3e} > tol {tol:.1e} after {iters} sweeps on {domain.descriptor()}"
        if strict:
            raise NonConvergence(msg, pot, est)
        log.warning(msg)
    return pot, est


def dual_flow(potential: Potential, r: float) -> np.ndarray:
    """Unit flow from the sources to the targets built from the potential.

    Takes theta_e = |df|^(r-2) df (the optimality flux), repairs its
    divergence at interior vertices with one Laplacian solve so conservation
    holds, and scales it to unit net outflow.  Returns |theta| per edge.
    """
    dom = potential.domain
    f = potential.f
    u, v = dom.edges[:, 0], dom.edges[:, 1]
    diff = f[v] - f[u]
    ad = np.abs(diff)
    with np.errstate(divide="ignore", invalid="ignore"):
        theta = np.where(ad > 0, ad ** (r - 1.0) * np.sign(diff), 0.0)
    V = dom.n_vertices
    div = np.bincount(u, theta, minlength=V) - np.bincount(v, theta, minlength=V)
    interior = _interior(dom)
    if len(interior):
        L_ii, _ = _laplacian_block(dom, interior)
        phi = np.zeros(V)
        phi[interior] = spla.spsolve(L_ii, -div[interior])
        theta = theta + (phi[u] - phi[v])
        div = np.bincount(u, theta, minlength=V) - np.bincount(v, theta, minlength=V)
    strength = float(div[dom.sources].sum())
    if not strength > 0:
        raise DegenerateMeasure("potential carries no flow from the sources")
    return np.abs(theta) / strength


def _dual_lower_bound(pot: Potential, r: float) -> float:
    try:
        return flow_lower_bound(dual_flow(pot, r), r)
    except DegenerateMeasure:
        return 0.0


def flow_lower_bound(p, r: float) -> float:
    """Certified lower bound (sum_e p_e^(r/(r-1)))^(1-r) from a unit flow.

    ``p`` is a :class:`~rcapacity.pathflow.PathMeasure` or an array of
    edge usages of a unit source-to-target flow.
    """
    if not r > 1:
        raise UnsupportedExponent("flow lower bound needs r > 1")
    arr = np.asarray(getattr(p, "p", p), dtype=float)
    if not np.any(arr > 0):
        raise DegenerateMeasure("all edge usages are zero")
    q = r / (r - 1.0)
    C = float(np.sum(arr**q))
    return C ** (1.0 - r)


def potential_to_edgefield(potential: Potential, tol: float = 1e-9) -> EdgeField:
    """t_e = |f(x) - f(y)|; requires f(source) = 0 and f >= 1 on targets."""
    dom = potential.domain
    f = potential.f
    if np.any(np.abs(f[dom.sources]) > tol) or np.any(f[dom.targets] < 1 - tol):
        raise InfeasiblePotential("potential violates f(source)=0 or f>=1 on targets")
    t = np.abs(f[dom.edges[:, 0]] - f[dom.edges[:, 1]])
    return EdgeField(dom, t)


def _distances(t: EdgeField) -> np.ndarray:
    dom = t.domain
    indptr, nbr, eid = dom.adjacency
    dist, _, _ = _kernels.dijkstra(
        indptr, nbr, eid, np.ascontiguousarray(t.t, dtype=float),
        np.ascontiguousarray(dom.sources), np.zeros(dom.n_vertices, dtype=np.bool_), False,
    )
    return dist


def edgefield_to_potential(t: EdgeField, domain: Domain | None = None) -> Potential:
    """f(x) = least t-weight of a path from the source to x."""
    if domain is not None and domain is not t.domain:
        t = EdgeField(domain, t.t)
    return Potential(t.domain, _distances(t))


def verify_path_feasibility(t: EdgeField, domain: Domain | None = None, tol: float = 1e-9):
    """Return ``(min_path_weight, feasible)`` over all source-to-target paths."""
    if domain is not None and domain is not t.domain:
        t = EdgeField(domain, t.t)
    dist = _distances(t)
    m = float(dist[t.domain.targets].min())
    return m, m >= 1.0 - tol


_TESTFNS = ("indicator", "logarithmic", "linear")


def testfn_upper_bound(domain: Domain, r: float, kind: str) -> float:
    """Energy of an explicit feasible potential on FullBox(n).

    indicator   f = 0 at the origin, 1 elsewhere
    logarithmic f = log(|x|_1 + 1) / log n   (n >= 2)
    linear      f = |x|_1 / n
    """
    if domain.kind != "FullBox":
        raise UnsupportedDomain(f"test functions are defined on FullBox, got {domain.kind}")
    if kind not in _TESTFNS:
        raise ValidationError(f"kind must be one of {_TESTFNS}")
    n = domain.params["M"]
    l1 = domain.l1_norm.astype(float)
    if kind == "indicator":
        f = (l1 > 0).astype(float)
    elif kind == "logarithmic":
        if n < 2:
            raise ValidationError("logarithmic test function needs n >= 2")
        f = np.log(l1 + 1.0) / math.log(n)
    else:
        f = l1 / n
    return energy(Potential(domain, f), r)


def small_r_upper_bound(domain: Domain, r: float) -> float:
    """Upper bound 2d for 0 < r <= 1 (indicator test function).

    Only an upper bound: whether it is attained is not known in general.
    """
    if not (0 < r <= 1):
        raise ValidationError("small_r_upper_bound is for 0 < r <= 1")
    if domain.kind != "FullBox":
        raise UnsupportedDomain("small_r_upper_bound needs a FullBox domain")
    return float(2 * domain.d)


def kappa(d: int, r: float, n: int, lambda_value: float) -> float:
    """Scale-free capacity: lambda, (log n)^(d-1) lambda, or n^(r-d) lambda."""
    if r < d:
        return float(lambda_value)
    if n < 2:
        raise ValidationError("kappa needs n >= 2 when r >= d")
    if r == d:
        return math.log(n) ** (d - 1) * lambda_value
    return n ** (r - d) * lambda_value


@dataclass
class SweepResult:
    d: int
    r: float
    rows: list
    monotone: bool
    fit: dict | None = None

    def csv_rows(self):
        header = ["d", "r", "n", "lambda", "lower", "upper", "gap", "kappa", "iterations"]
        out = [header]
        for row in self.rows:
            out.append([self.d, self.r] + [row[k] for k in header[2:]])
        return out


def _sweep_row(d, r, n, tol, method, omega):
    try:
        _, est = solve_potential(build_full_box(d, n), r, tol, method=method, omega=omega)
    except RCapacityError as exc:
        return {"n": n, "lambda": math.nan, "lower": math.nan, "upper": math.nan, "gap": math.nan,
                "kappa": math.nan, "iterations": 0, "residual": math.nan, "error": repr(exc)}
    return {
        "n": n,
        "lambda": est.value,
        "lower": est.lower_bound,
        "upper": est.upper_bound,
        "gap": est.duality_gap,
        "kappa": kappa(d, r, n, est.value) if (r < d or n >= 2) else math.nan,
        "iterations": est.iterations,
        "residual": est.final_residual,
        "error": "",
    }


def capacity_sweep(d, r, n_list, tol=None, *, threads=1, method="auto", omega=1.5) -> SweepResult:
    """Solve FullBox(d, n) for each n; check monotonicity; fit kappa when r = d.

    Rows run in parallel; results are ordered as ``n_list``.  A failed row
    is recorded with NaNs and its error text instead of aborting the sweep.
    """
    n_list = [int(n) for n in n_list]
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValidationError("n_list must be strictly increasing")
    with ThreadPoolExecutor(max_workers=max(1, int(threads))) as ex:
        rows = list(ex.map(lambda n: _sweep_row(d, r, n, tol, method, omega), n_list))
    ok = [row for row in rows if not row["error"]]
    slack = 1e-9 if tol is None else max(tol, 1e-12)
    monotone = all(b["lambda"] <= a["lambda"] + slack for a, b in zip(ok, ok[1:]))
    fit = None
    if r == d and len(ok) >= 2:
        logn = np.array([math.log(row["n"]) for row in ok])
        kap = np.array([row["kappa"] for row in ok])
        A = np.stack([np.ones_like(logn), 1.0 / logn], axis=1)
        (c0, c1), *_ = np.linalg.lstsq(A, kap, rcond=None)
        fit = {"model": "c0 + c1/log(n)", "c0": float(c0), "c1": float(c1)}
    return SweepResult(d=d, r=float(r), rows=rows, monotone=monotone, fit=fit)


def half_box_capacity(d, k, n, r, tol=None, **kw) -> CapacityEstimate:
    """Capacity of D_k(0) ∩ [0,n]^d towards the far faces of [0,k]^d."""
    _, est = solve_potential(build_half_box(d, k, n), r, tol, **kw)
    return est
