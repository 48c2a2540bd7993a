"""Numba kernels behind the geodesic engine.

Points live in a window of unit boxes, sorted by box, with ``ptr`` giving
each box's slice.  ``h = inf`` selects the pure power cost.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

INF = np.inf


@njit(cache=True)
def phi(t, alpha, h):
    if t <= h:
        return t**alpha
    return h**alpha + alpha * h ** (alpha - 1.0) * (t - h)


@njit(cache=True)
def _dist2(pts, i, x):
    s = 0.0
    for k in range(x.shape[0]):
        dx = pts[i, k] - x[k]
        s += dx * dx
    return s


@njit(cache=True)
def _box_of(x, lo, shape, out):
    """Window-relative box coordinates of ``x``; returns False when outside."""
    inside = True
    for k in range(x.shape[0]):
        c = int(math.floor(x[k] + 0.5)) - lo[k]
        out[k] = c
        if c < 0 or c >= shape[k]:
            inside = False
    return inside


@njit(cache=True)
def _box_lin(c, o, shape):
    """Linear id of box ``c + o`` or -1 when it falls outside the window."""
    idx = 0
    for k in range(c.shape[0]):
        v = c[k] + o[k]
        if v < 0 or v >= shape[k]:
            return -1
        idx = idx * shape[k] + v
    return idx


@njit(cache=True)
def _box_min_dist2(x, c, o, lo):
    # squared distance from x to the box with window coords c + o
    s = 0.0
    for k in range(x.shape[0]):
        centre = c[k] + o[k] + lo[k]
        g = abs(x[k] - centre) - 0.5
        if g > 0.0:
            s += g * g
    return s


@njit(cache=True)
def region_radius(L, alpha, h):
    """Radius about the midpoint of a hop of length ``L`` that contains its
    improvement region.

    Any witness has both distances below ``L`` (the lens, radius
    sqrt(3)/2 L).  When ``L <= h`` every cost involved is a power and, for
    ``alpha >= 2``, the power mean bound ``da^a + db^a >= 2 ((da^2 + db^2)/2)^(a/2)``
    with ``da^2 + db^2 = 2 r^2 + L^2/2`` gives the smaller radius
    ``L sqrt((2^(1 - 2/alpha) - 1/2) / 2)`` (L/2 at alpha = 2).
    """
    f = 0.8660254037844387
    if alpha >= 2.0 and L <= h:
        f = min(f, math.sqrt((2.0 ** (1.0 - 2.0 / alpha) - 0.5) / 2.0))
    return f * L * (1.0 + 1e-12) + 1e-12


@njit(cache=True)
def dominated(a, b, L, cL, pts, lo, shape, ptr, offsets, alpha, h):
    """True if some point w satisfies phi(|w-a|) + phi(|w-b|) < phi(|a-b|)."""
    return witness(a, b, L, cL, pts, lo, shape, ptr, offsets, alpha, h) >= 0


@njit(cache=True)
def witness(a, b, L, cL, pts, lo, shape, ptr, offsets, alpha, h):
    """Index of the first strict witness w of hop ab found, or -1.

    Witnesses lie within ``region_radius`` of the midpoint; boxes are
    scanned in order of Chebyshev distance from the midpoint's box.
    """
    d = a.shape[0]
    m = np.empty(d)
    for k in range(d):
        m[k] = 0.5 * (a[k] + b[k])
    c = np.empty(d, dtype=np.int64)
    _box_of(m, lo, shape, c)
    reach = region_radius(L, alpha, h)
    reach2 = reach * reach
    kmax = int(reach) + 1
    for oi in range(offsets.shape[0]):
        o = offsets[oi]
        cheb = 0
        for k in range(d):
            if abs(o[k]) > cheb:
                cheb = abs(o[k])
        if cheb > kmax:
            break
        bid = _box_lin(c, o, shape)
        if bid < 0:
            continue
        if _box_min_dist2(m, c, o, lo) > reach2:
            continue
        for w in range(ptr[bid], ptr[bid + 1]):
            da = math.sqrt(_dist2(pts, w, a))
            db = math.sqrt(_dist2(pts, w, b))
            if da >= L or db >= L:
                continue
            if phi(da, alpha, h) + phi(db, alpha, h) < cL:
                return w
    return -1


@njit(cache=True)
def _grow(arr, n):
    out = np.empty(max(2 * arr.shape[0], n), dtype=arr.dtype)
    out[: arr.shape[0]] = arr
    return out


@njit(cache=True)
def _affected(a, b, L, centre, alpha, h):
    """True if the improvement region of hop ab can reach the unit box at ``centre``."""
    g2 = 0.0
    for k in range(a.shape[0]):
        g = abs(0.5 * (a[k] + b[k]) - centre[k]) - 0.5
        if g > 0.0:
            g2 += g * g
    r = region_radius(L, alpha, h) + 1e-9
    return g2 <= r * r


@njit(cache=True)
def affected_edges(pts, eu, ev, centre, alpha, h):
    out = np.zeros(eu.shape[0], dtype=np.bool_)
    for i in range(eu.shape[0]):
        a = pts[eu[i]]
        b = pts[ev[i]]
        L = math.sqrt(_dist2(pts, eu[i], b))
        out[i] = _affected(a, b, L, centre, alpha, h)
    return out


@njit(cache=True)
def witnessed_by(pts, eu, ev, w_lo, w_hi, alpha, h):
    """For each hop, whether a point with index in ``[w_lo, w_hi)`` is a strict witness."""
    out = np.zeros(eu.shape[0], dtype=np.bool_)
    for i in range(eu.shape[0]):
        a = pts[eu[i]]
        b = pts[ev[i]]
        L = math.sqrt(_dist2(pts, eu[i], b))
        cL = phi(L, alpha, h)
        for w in range(w_lo, w_hi):
            da = math.sqrt(_dist2(pts, w, a))
            db = math.sqrt(_dist2(pts, w, b))
            if da < L and db < L and phi(da, alpha, h) + phi(db, alpha, h) < cL:
                out[i] = True
                break
    return out


@njit(cache=True)
def build_point_edges(pts, lo, shape, ptr, todo, alpha, h, R, offsets, prune,
                      focus=False, centre=np.zeros(1), fresh_lo=0, fresh_hi=0,
                      skip_keys=np.zeros(0, dtype=np.int64)):
    """Undirected candidate edges (u < v, cost) incident to points with ``todo``.

    Pairs longer than ``R`` are omitted (they are certified dominated by the
    caller); shorter pairs are dropped when a strict witness exists.

    With ``focus`` (a rebuild after a box's points were replaced by
    ``[fresh_lo, fresh_hi)``), only pairs touching the fresh points or whose
    improvement region reaches the box at ``centre`` are considered; pairs
    whose key ``min * n + max`` is in the sorted ``skip_keys`` are left to
    the caller.
    """
    n = pts.shape[0]
    d = pts.shape[1]
    cap = 8 * n + 16 if not focus else 1024
    eu = np.empty(cap, dtype=np.int64)
    ev = np.empty(cap, dtype=np.int64)
    ew = np.empty(cap)
    ne = 0
    R2 = R * R
    kmax = int(R) + 1
    c = np.empty(d, dtype=np.int64)
    for u in range(n):
        if not todo[u]:
            continue
        a = pts[u]
        _box_of(a, lo, shape, c)
        for oi in range(offsets.shape[0]):
            o = offsets[oi]
            cheb = 0
            for k in range(d):
                if abs(o[k]) > cheb:
                    cheb = abs(o[k])
            if cheb > kmax:
                break
            bid = _box_lin(c, o, shape)
            if bid < 0:
                continue
            if _box_min_dist2(a, c, o, lo) > R2:
                continue
            for v in range(ptr[bid], ptr[bid + 1]):
                if v == u or (todo[v] and v < u):
                    continue
                L2 = _dist2(pts, v, a)
                if L2 > R2:
                    continue
                L = math.sqrt(L2)
                if focus:
                    fresh = (fresh_lo <= u < fresh_hi) or (fresh_lo <= v < fresh_hi)
                    if not fresh:
                        if not _affected(a, pts[v], L, centre, alpha, h):
                            continue
                        if skip_keys.shape[0]:
                            key = min(u, v) * n + max(u, v)
                            j = np.searchsorted(skip_keys, key)
                            if j < skip_keys.shape[0] and skip_keys[j] == key:
                                continue
                cL = phi(L, alpha, h)
                if prune and dominated(a, pts[v], L, cL, pts, lo, shape, ptr, offsets, alpha, h):
                    continue
                if ne == eu.shape[0]:
                    eu = _grow(eu, ne + 1)
                    ev = _grow(ev, ne + 1)
                    ew = _grow(ew, ne + 1)
                eu[ne] = min(u, v)
                ev[ne] = max(u, v)
                ew[ne] = cL
                ne += 1
    return eu[:ne], ev[:ne], ew[:ne]


@njit(cache=True)
def endpoint_edges(e, pts, lo, shape, ptr, alpha, h, R, offsets, prune, skip_lo, skip_hi):
    """Edges from an extra endpoint ``e`` to process points within ``R``.

    Points with index in ``[skip_lo, skip_hi)`` are ignored.
    """
    cap = 64
    ev = np.empty(cap, dtype=np.int64)
    ew = np.empty(cap)
    ne = 0
    R2 = R * R
    kmax = int(R) + 1
    c = np.empty(e.shape[0], dtype=np.int64)
    _box_of(e, lo, shape, c)
    for oi in range(offsets.shape[0]):
        o = offsets[oi]
        cheb = 0
        for k in range(e.shape[0]):
            if abs(o[k]) > cheb:
                cheb = abs(o[k])
        if cheb > kmax:
            break
        bid = _box_lin(c, o, shape)
        if bid < 0:
            continue
        if _box_min_dist2(e, c, o, lo) > R2:
            continue
        for v in range(ptr[bid], ptr[bid + 1]):
            if skip_lo <= v < skip_hi:
                continue
            L2 = _dist2(pts, v, e)
            if L2 > R2:
                continue
            L = math.sqrt(L2)
            cL = phi(L, alpha, h)
            if prune and dominated(e, pts[v], L, cL, pts, lo, shape, ptr, offsets, alpha, h):
                continue
            if ne == ev.shape[0]:
                ev = _grow(ev, ne + 1)
                ew = _grow(ew, ne + 1)
            ev[ne] = v
            ew[ne] = cL
            ne += 1
    return ev[:ne], ew[:ne]


@njit(cache=True)
def nearest_distances(samples, pts, lo, shape, ptr, offsets):
    """Distance from each sample to its nearest point (inf if none)."""
    ns = samples.shape[0]
    d = samples.shape[1]
    out = np.full(ns, np.inf)
    c = np.empty(d, dtype=np.int64)
    for s in range(ns):
        x = samples[s]
        _box_of(x, lo, shape, c)
        best2 = np.inf
        for oi in range(offsets.shape[0]):
            o = offsets[oi]
            cheb = 0
            for k in range(d):
                if abs(o[k]) > cheb:
                    cheb = abs(o[k])
            # every point of a box at Chebyshev offset cheb is >= cheb - 1 away
            if cheb >= 1 and (cheb - 1.0) ** 2 > best2:
                break
            bid = _box_lin(c, o, shape)
            if bid < 0:
                continue
            if _box_min_dist2(x, c, o, lo) > best2:
                continue
            for w in range(ptr[bid], ptr[bid + 1]):
                q = _dist2(pts, w, x)
                if q < best2:
                    best2 = q
        out[s] = math.sqrt(best2)
    return out


@njit(cache=True)
def nearest_point(x, pts, lo, shape, ptr, offsets):
    """Index of the nearest point to ``x``; ties go to the lexicographically smaller point."""
    d = x.shape[0]
    c = np.empty(d, dtype=np.int64)
    _box_of(x, lo, shape, c)
    best2 = np.inf
    best = -1
    for oi in range(offsets.shape[0]):
        o = offsets[oi]
        cheb = 0
        for k in range(d):
            if abs(o[k]) > cheb:
                cheb = abs(o[k])
        if cheb >= 1 and (cheb - 1.0) ** 2 > best2:
            break
        bid = _box_lin(c, o, shape)
        if bid < 0:
            continue
        for w in range(ptr[bid], ptr[bid + 1]):
            q = _dist2(pts, w, x)
            better = q < best2
            if q == best2 and best >= 0:
                for k in range(d):
                    if pts[w, k] != pts[best, k]:
                        better = pts[w, k] < pts[best, k]
                        break
            if better:
                best2 = q
                best = w
    return best


@njit(cache=True)
def build_csr(n_nodes, eu, ev, ew):
    """Symmetric CSR adjacency with neighbours sorted by index."""
    deg = np.zeros(n_nodes + 1, dtype=np.int64)
    for i in range(eu.shape[0]):
        deg[eu[i] + 1] += 1
        deg[ev[i] + 1] += 1
    for i in range(n_nodes):
        deg[i + 1] += deg[i]
    indptr = deg.copy()
    fill = deg[:-1].copy()
    m = indptr[n_nodes]
    indices = np.empty(m, dtype=np.int64)
    weights = np.empty(m)
    for i in range(eu.shape[0]):
        u, v, w = eu[i], ev[i], ew[i]
        indices[fill[u]] = v
        weights[fill[u]] = w
        fill[u] += 1
        indices[fill[v]] = u
        weights[fill[v]] = w
        fill[v] += 1
    for u in range(n_nodes):
        # insertion sort; degrees are small
        for i in range(indptr[u] + 1, indptr[u + 1]):
            kv = indices[i]
            kw = weights[i]
            j = i - 1
            while j >= indptr[u] and indices[j] > kv:
                indices[j + 1] = indices[j]
                weights[j + 1] = weights[j]
                j -= 1
            indices[j + 1] = kv
            weights[j + 1] = kw
    return indptr, indices, weights


@njit(cache=True)
def _heap_push(hk, hv, size, key, val):
    i = size
    hk[i] = key
    hv[i] = val
    while i > 0:
        p = (i - 1) // 2
        if hk[p] < hk[i] or (hk[p] == hk[i] and hv[p] <= hv[i]):
            break
        hk[p], hk[i] = hk[i], hk[p]
        hv[p], hv[i] = hv[i], hv[p]
        i = p
    return size + 1


@njit(cache=True)
def _heap_pop(hk, hv, size):
    key = hk[0]
    val = hv[0]
    size -= 1
    hk[0] = hk[size]
    hv[0] = hv[size]
    i = 0
    while True:
        l = 2 * i + 1
        r = l + 1
        s = i
        if l < size and (hk[l] < hk[s] or (hk[l] == hk[s] and hv[l] < hv[s])):
            s = l
        if r < size and (hk[r] < hk[s] or (hk[r] == hk[s] and hv[r] < hv[s])):
            s = r
        if s == i:
            break
        hk[s], hk[i] = hk[i], hk[s]
        hv[s], hv[i] = hv[i], hv[s]
        i = s
    return key, val, size


@njit(cache=True)
def dijkstra(indptr, indices, weights, src_nodes, src_w, tgt_w, direct_w, early_exit):
    """Label-setting shortest path from a virtual source to a virtual target.

    The source reaches ``src_nodes`` at cost ``src_w``; node ``u`` reaches
    the target at cost ``tgt_w[u]`` (inf if no edge); ``direct_w`` is the
    source-target edge.  Returns (target distance, last node before the
    target or -1 for the direct edge, node distances, predecessors with -1
    meaning the virtual source).
    """
    n = indptr.shape[0] - 1
    dist = np.full(n, np.inf)
    pred = np.full(n, -2, dtype=np.int64)
    done = np.zeros(n, dtype=np.bool_)
    cap = indices.shape[0] + src_nodes.shape[0] + 1
    hk = np.empty(cap)
    hv = np.empty(cap, dtype=np.int64)
    size = 0
    for i in range(src_nodes.shape[0]):
        v = src_nodes[i]
        w = src_w[i]
        if w < dist[v]:
            dist[v] = w
            pred[v] = -1
            size = _heap_push(hk, hv, size, w, v)
    best = direct_w
    best_pred = -1
    while size > 0:
        du, u, size = _heap_pop(hk, hv, size)
        if done[u] or du > dist[u]:
            continue
        if early_exit and du >= best:
            break
        done[u] = True
        tw = tgt_w[u]
        if du + tw < best:
            best = du + tw
            best_pred = u
        for i in range(indptr[u], indptr[u + 1]):
            v = indices[i]
            if done[v]:
                continue
            nd = du + weights[i]
            if nd < dist[v]:
                dist[v] = nd
                pred[v] = u
                size = _heap_push(hk, hv, size, nd, v)
    return best, best_pred, dist, pred


@njit(cache=True)
def entry_lower_bounds(newpts, radius, pts, lo, shape, ptr, offsets, D, alpha, h):
    """``out[i, z] = min D[z, x] + phi(|x - p_i|)`` over existing points x
    within ``radius[i]`` of new point ``p_i`` (inf when there are none).

    With ``D`` the distances from one endpoint and ``radius`` bounding every
    hop of some optimal path, this bounds the cost of reaching ``p_i`` as the
    first new point (hops straight from the endpoint are added by the caller).
    """
    npn = newpts.shape[0]
    nz = D.shape[0]
    d = newpts.shape[1]
    out = np.full((npn, nz), np.inf)
    c = np.empty(d, dtype=np.int64)
    for i in range(npn):
        x = newpts[i]
        r2 = radius[i] * radius[i]
        kmax = int(radius[i]) + 1
        _box_of(x, lo, shape, c)
        for oi in range(offsets.shape[0]):
            o = offsets[oi]
            cheb = 0
            for k in range(d):
                if abs(o[k]) > cheb:
                    cheb = abs(o[k])
            if cheb > kmax:
                break
            bid = _box_lin(c, o, shape)
            if bid < 0:
                continue
            if _box_min_dist2(x, c, o, lo) > r2:
                continue
            for w in range(ptr[bid], ptr[bid + 1]):
                q = _dist2(pts, w, x)
                if q > r2:
                    continue
                cw = phi(math.sqrt(q), alpha, h)
                for z in range(nz):
                    v = D[z, w] + cw
                    if v < out[i, z]:
                        out[i, z] = v
    return out


@njit(cache=True)
def removal_delta(s_lo, spacing, s_shape, nd, reach, pts, lo, shape, ptr, offsets, bids):
    """For each box in ``bids``: the largest nearest-point distance over the
    sample grid once the box's points are removed (samples whose nearest
    point lies elsewhere keep their distance and are skipped).

    Samples sit at ``s_lo + spacing * index``, stored in C order over
    ``s_shape``; ``reach`` bounds every nearest distance after removal
    for the samples considered (pass the largest distance of interest).
    """
    d = s_lo.shape[0]
    out = np.zeros(bids.shape[0])
    c = np.empty(d, dtype=np.int64)
    ilo = np.empty(d, dtype=np.int64)
    ihi = np.empty(d, dtype=np.int64)
    idx = np.empty(d, dtype=np.int64)
    x = np.empty(d)
    cen = np.empty(d)
    for j in range(bids.shape[0]):
        bid = bids[j]
        a = ptr[bid]
        b = ptr[bid + 1]
        if a == b:
            continue
        rem = bid
        for k in range(d - 1, -1, -1):
            cen[k] = rem % shape[k] + lo[k]
            rem //= shape[k]
        for k in range(d):
            lo_k = int(math.floor((cen[k] - 0.5 - reach - s_lo[k]) / spacing))
            hi_k = int(math.ceil((cen[k] + 0.5 + reach - s_lo[k]) / spacing))
            ilo[k] = max(0, lo_k)
            ihi[k] = min(s_shape[k] - 1, hi_k)
            idx[k] = ilo[k]
        best_box = 0.0
        done = False
        while not done:
            flat = 0
            for k in range(d):
                flat = flat * s_shape[k] + idx[k]
                x[k] = s_lo[k] + spacing * idx[k]
            g2 = 0.0
            for k in range(d):
                g = abs(x[k] - cen[k]) - 0.5
                if g > 0.0:
                    g2 += g * g
            if nd[flat] * nd[flat] * (1.0 + 1e-12) + 1e-300 >= g2:
                _box_of(x, lo, shape, c)
                best2 = np.inf
                for oi in range(offsets.shape[0]):
                    o = offsets[oi]
                    cheb = 0
                    for k in range(d):
                        if abs(o[k]) > cheb:
                            cheb = abs(o[k])
                    if cheb >= 1 and (cheb - 1.0) ** 2 > best2:
                        break
                    ob = _box_lin(c, o, shape)
                    if ob < 0 or ob == bid:
                        continue
                    if _box_min_dist2(x, c, o, lo) > best2:
                        continue
                    for w in range(ptr[ob], ptr[ob + 1]):
                        q = _dist2(pts, w, x)
                        if q < best2:
                            best2 = q
                v = math.sqrt(best2)
                if v > best_box:
                    best_box = v
            # odometer step
            k = d - 1
            while k >= 0:
                idx[k] += 1
                if idx[k] <= ihi[k]:
                    break
                idx[k] = ilo[k]
                k -= 1
            if k < 0:
                done = True
        out[j] = best_box
    return out


@njit(cache=True)
def _ray_extent(L, theta, alpha, h):
    # largest t (certified inside) with m + t*(cos, sin) in the improvement
    # region of a = (-L/2, 0), b = (L/2, 0); the region lies within 0.87 L of m
    cL = phi(L, alpha, h)
    ct = math.cos(theta)
    st = math.sin(theta)
    lo = 0.0
    hi = 0.87 * L
    for _ in range(56):
        t = 0.5 * (lo + hi)
        x = t * ct
        y = t * st
        da = math.sqrt((x + 0.5 * L) ** 2 + y * y)
        db = math.sqrt((x - 0.5 * L) ** 2 + y * y)
        if phi(da, alpha, h) + phi(db, alpha, h) <= cL:
            lo = t
        else:
            hi = t
    return lo


@njit(cache=True)
def inscribed_radius(L, alpha, h, n_angles=16):
    """Radius of a ball around the midpoint of a segment of length ``L``
    contained in its improvement region.

    The region is convex and symmetric under reflection in the segment's
    axis and bisector and under rotation about the axis, so the star polygon
    through certified boundary points at ``n_angles + 1`` angles of a
    quarter-turn lies inside it; its distance to the centre is returned.
    """
    if L <= 0.0:
        return 0.0
    px = np.empty(n_angles + 1)
    py = np.empty(n_angles + 1)
    for i in range(n_angles + 1):
        th = 0.5 * math.pi * i / n_angles
        t = _ray_extent(L, th, alpha, h)
        px[i] = t * math.cos(th)
        py[i] = t * math.sin(th)
    best = np.inf
    for i in range(n_angles):
        ax, ay, bx, by = px[i], py[i], px[i + 1], py[i + 1]
        dx = bx - ax
        dy = by - ay
        ll = dx * dx + dy * dy
        if ll == 0.0:
            dd = math.sqrt(ax * ax + ay * ay)
        else:
            s = -(ax * dx + ay * dy) / ll
            if s < 0.0:
                s = 0.0
            elif s > 1.0:
                s = 1.0
            qx = ax + s * dx
            qy = ay + s * dy
            dd = math.sqrt(qx * qx + qy * qy)
        if dd < best:
            best = dd
    return best


@njit(cache=True)
def pruning_radius(delta, alpha, h, l_max):
    """Smallest L (capped at ``l_max``) beyond which every segment of length
    > L has a ball of radius > ``delta`` inside its improvement region."""
    if not delta < np.inf:
        return l_max
    if inscribed_radius(l_max, alpha, h) <= delta:
        return l_max
    lo = 0.0
    hi = l_max
    for _ in range(44):
        mid = 0.5 * (lo + hi)
        if inscribed_radius(mid, alpha, h) > delta:
            hi = mid
        else:
            lo = mid
    # the radius grows with L; confirm on a coarse ladder above the root
    L = hi
    while L < l_max:
        L = min(l_max, 1.25 * L + 1e-9)
        if inscribed_radius(L, alpha, h) <= delta:
            return l_max
    return hi


@njit(cache=True)
def update_nearest(samples, nd, centre, pts, lo, shape, ptr, offsets):
    """Recompute entries of ``nd`` whose nearest point may lie in the unit box
    at ``centre`` (points there were added or removed)."""
    d = samples.shape[1]
    c = np.empty(d, dtype=np.int64)
    for s in range(samples.shape[0]):
        g2 = 0.0
        for k in range(d):
            g = abs(samples[s, k] - centre[k]) - 0.5
            if g > 0.0:
                g2 += g * g
        if g2 > nd[s] * nd[s] * (1.0 + 1e-12) + 1e-300:
            continue
        x = samples[s]
        _box_of(x, lo, shape, c)
        best2 = np.inf
        for oi in range(offsets.shape[0]):
            o = offsets[oi]
            cheb = 0
            for k in range(d):
                if abs(o[k]) > cheb:
                    cheb = abs(o[k])
            if cheb >= 1 and (cheb - 1.0) ** 2 > best2:
                break
            bid = _box_lin(c, o, shape)
            if bid < 0:
                continue
            if _box_min_dist2(x, c, o, lo) > best2:
                continue
            for w in range(ptr[bid], ptr[bid + 1]):
                q = _dist2(pts, w, x)
                if q < best2:
                    best2 = q
        nd[s] = math.sqrt(best2)


@njit(cache=True)
def seg_cost(x, y, alpha, h):
    s = 0.0
    for k in range(x.shape[0]):
        dx = x[k] - y[k]
        s += dx * dx
    return phi(math.sqrt(s), alpha, h)


@njit(cache=True)
def path_cost(seq, alpha, h):
    """Cost of the polygonal path through the rows of ``seq``, summed in path
    order exactly as a shortest-path run accumulates it."""
    c = 0.0
    for i in range(seq.shape[0] - 1):
        c += seg_cost(seq[i], seq[i + 1], alpha, h)
    return c


@njit(cache=True)
def dijkstra_bounded(indptr, indices, weights, src_nodes, src_w, tgt_w, direct_w, lb, ub):
    """Shortest source-target cost if it is below ``ub``, else ``ub``.

    ``lb[u]`` is a lower bound on the remaining cost from ``u`` to the
    target; nodes that cannot beat the incumbent are not expanded.
    """
    n = indptr.shape[0] - 1
    dist = np.full(n, np.inf)
    done = np.zeros(n, dtype=np.bool_)
    cap = indices.shape[0] + src_nodes.shape[0] + 1
    hk = np.empty(cap)
    hv = np.empty(cap, dtype=np.int64)
    size = 0
    best = ub
    if direct_w < best:
        best = direct_w
    for i in range(src_nodes.shape[0]):
        v = src_nodes[i]
        w = src_w[i]
        if w < dist[v] and w + lb[v] < best:
            dist[v] = w
            size = _heap_push(hk, hv, size, w, v)
    while size > 0:
        du, u, size = _heap_pop(hk, hv, size)
        if done[u] or du > dist[u]:
            continue
        if du >= best:
            break
        done[u] = True
        if du + tgt_w[u] < best:
            best = du + tgt_w[u]
        for i in range(indptr[u], indptr[u + 1]):
            v = indices[i]
            if done[v]:
                continue
            nd = du + weights[i]
            if nd < dist[v] and nd + lb[v] < best:
                dist[v] = nd
                size = _heap_push(hk, hv, size, nd, v)
    return best
