"""Compiled inner loops: label-setting shortest paths and r-Laplacian sweeps."""
import numpy as np
from numba import njit

_INF = np.inf


@njit(cache=True, nogil=True, inline="always")
def _less(da, va, db, vb):
    return da < db or (da == db and va < vb)


@njit(cache=True, nogil=True)
def _heap_push(hd, hv, size, d, v):
    i = size
    hd[i] = d
    hv[i] = v
    while i > 0:
        p = (i - 1) >> 1
        if _less(hd[i], hv[i], hd[p], hv[p]):
            hd[i], hd[p] = hd[p], hd[i]
            hv[i], hv[p] = hv[p], hv[i]
            i = p
        else:
            break
    return size + 1


@njit(cache=True, nogil=True)
def _heap_pop(hd, hv, size):
    d0 = hd[0]
    v0 = hv[0]
    size -= 1
    hd[0] = hd[size]
    hv[0] = hv[size]
    i = 0
    while True:
        a = 2 * i + 1
        if a >= size:
            break
        b = a + 1
        c = a
        if b < size and _less(hd[b], hv[b], hd[a], hv[a]):
            c = b
        if _less(hd[c], hv[c], hd[i], hv[i]):
            hd[i], hd[c] = hd[c], hd[i]
            hv[i], hv[c] = hv[c], hv[i]
            i = c
        else:
            break
    return d0, v0, size


@njit(cache=True, nogil=True)
def dijkstra(indptr, nbr, nbr_edge, w, sources, is_target, stop_at_target):
    """Multi-source shortest paths with nonnegative edge weights.

    Edges whose weight is +inf are treated as absent.  Heap ties are broken
    by vertex index.  Returns ``(dist, pred, hit)`` where ``hit`` is the first
    target vertex settled (-1 if none); with ``stop_at_target`` the search
    ends there, so ``dist`` is exact only for settled vertices.
    """
    V = indptr.shape[0] - 1
    dist = np.full(V, _INF)
    pred = np.full(V, -1, dtype=np.int64)
    done = np.zeros(V, dtype=np.bool_)
    cap = nbr.shape[0] + sources.shape[0] + 1
    hd = np.empty(cap)
    hv = np.empty(cap, dtype=np.int64)
    size = 0
    for s in sources:
        if dist[s] > 0.0:
            dist[s] = 0.0
            size = _heap_push(hd, hv, size, 0.0, s)
    hit = -1
    while size > 0:
        du, u, size = _heap_pop(hd, hv, size)
        if done[u] or du > dist[u]:
            continue
        done[u] = True
        if is_target[u]:
            if hit < 0:
                hit = u
            if stop_at_target:
                break
        for k in range(indptr[u], indptr[u + 1]):
            we = w[nbr_edge[k]]
            if we == _INF:
                continue
            v = nbr[k]
            if done[v]:
                continue
            nd = du + we
            if nd < dist[v] or (nd == dist[v] and pred[v] > u):
                dist[v] = nd
                pred[v] = u
                size = _heap_push(hd, hv, size, nd, v)
    return dist, pred, hit


@njit(cache=True, nogil=True)
def _phi(s, f, nbr, a, b, r):
    acc = 0.0
    for k in range(a, b):
        acc += abs(s - f[nbr[k]]) ** r
    return acc


@njit(cache=True, nogil=True)
def local_argmin(f, nbr, a, b, r, s0):
    """Minimize s -> sum_k |s - f[nbr[k]]|^r over the neighbor hull.

    Safeguarded Newton on the derivative inside a bisection bracket,
    terminated at bracket width 1e-12 or a vanishing step.
    """
    lo = _INF
    hi = -_INF
    for k in range(a, b):
        y = f[nbr[k]]
        if y < lo:
            lo = y
        if y > hi:
            hi = y
    if hi - lo <= 1e-15:
        return lo
    if r == 2.0:
        acc = 0.0
        for k in range(a, b):
            acc += f[nbr[k]]
        return acc / (b - a)
    s = min(max(s0, lo), hi)
    L = lo
    H = hi
    for _ in range(200):
        g = 0.0
        h = 0.0
        exact = False
        for k in range(a, b):
            dlt = s - f[nbr[k]]
            ad = abs(dlt)
            if ad == 0.0:
                exact = True
                continue
            p = ad ** (r - 2.0)
            g += p * dlt
            h += p
        if g == 0.0:
            return s
        if g > 0.0:
            H = s
        else:
            L = s
        if H - L <= 1e-12:
            return 0.5 * (L + H)
        step = 0.0
        if not exact and h > 0.0:
            step = g / ((r - 1.0) * h)
        t = s - step
        if step == 0.0 or not (L < t < H):
            t = 0.5 * (L + H)
        elif abs(step) < 1e-14:
            return t
        s = t
    return s


@njit(cache=True, nogil=True)
def sgs_sweep(f, indptr, nbr, order, r, omega):
    """One forward + backward Gauss-Seidel pass over ``order`` (in place).

    With ``omega > 1`` the over-relaxed point is kept only if it does not
    raise the local energy; otherwise the plain minimizer is used.
    Returns the largest change of any coordinate.
    """
    n = order.shape[0]
    biggest = 0.0
    for rep in range(2):
        for j in range(n):
            x = order[j] if rep == 0 else order[n - 1 - j]
            a = indptr[x]
            b = indptr[x + 1]
            old = f[x]
            s = local_argmin(f, nbr, a, b, r, old)
            if omega != 1.0:
                t = old + omega * (s - old)
                t = min(max(t, 0.0), 1.0)
                if _phi(t, f, nbr, a, b, r) <= _phi(old, f, nbr, a, b, r):
                    s = t
            f[x] = s
            c = abs(s - old)
            if c > biggest:
                biggest = c
    return biggest


@njit(cache=True, nogil=True)
def defect(f, indptr, nbr, order, r):
    """Largest one-coordinate optimality defect, without updating ``f``."""
    worst = 0.0
    for j in range(order.shape[0]):
        x = order[j]
        s = local_argmin(f, nbr, indptr[x], indptr[x + 1], r, f[x])
        c = abs(s - f[x])
        if c > worst:
            worst = c
    return worst


@njit(cache=True, nogil=True)
def edge_energy(f, edges, r):
    acc = 0.0
    for k in range(edges.shape[0]):
        acc += abs(f[edges[k, 0]] - f[edges[k, 1]]) ** r
    return acc


@njit(cache=True, nogil=True)
def batch_passage(indptr, nbr, nbr_edge, W, sources, is_target):
    """Point-to-set passage time for each row of the weight matrix ``W``."""
    out = np.empty(W.shape[0])
    for b in range(W.shape[0]):
        dist, pred, hit = dijkstra(indptr, nbr, nbr_edge, W[b], sources, is_target, True)
        out[b] = dist[hit] if hit >= 0 else _INF
    return out
