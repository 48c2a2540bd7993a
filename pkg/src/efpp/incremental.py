"""Re-evaluating passage times after one box changes.

For a fixed graph and a set of endpoint pairs (the translates behind
``F_n``), :class:`TranslateSet` keeps, per pair, the passage time, the
geodesic and the full distance fields from both endpoints.  A box change
then needs a shortest-path run only when it can matter:

* if the geodesic does not use the box and every path through the new
  points costs at least the old optimum (a lower bound assembled from the
  distance fields), the passage time is unchanged, bit for bit;
* otherwise a Dijkstra run on the locally rebuilt graph, bounded above by a
  feasible path and pruned below by the old distances to the target,
  gives the new value.
"""
from __future__ import annotations

import math

import numpy as np

from . import _kernels as K
from .geodesic import PointGraph

SCREEN_RTOL = 1e-9


class TranslateSet:
    def __init__(self, graph: PointGraph, starts, ends):
        self.g = graph
        self.starts = np.ascontiguousarray(starts, dtype=float)
        self.ends = np.ascontiguousarray(ends, dtype=float)
        nz = self.starts.shape[0]
        n = graph.n
        indptr, indices, weights = graph.csr()
        self.T = np.empty(nz)
        self.Ds = np.empty((nz, n))
        self.Dt = np.empty((nz, n))
        self.paths: list[np.ndarray] = []
        self.used_boxes: list[set] = []
        self._src = []
        for z in range(nz):
            s, t = self.starts[z], self.ends[z]
            sn, sw = graph.endpoint(s)
            tn, tw = graph.endpoint(t)
            tgt = np.full(n, np.inf)
            tgt[tn] = tw
            src = np.full(n, np.inf)
            src[sn] = sw
            direct = graph.direct(s, t)
            best, last, ds, pred = K.dijkstra(indptr, indices, weights, sn, sw, tgt, direct, False)
            _, _, dt, _ = K.dijkstra(indptr, indices, weights, tn, tw, src, direct, False)
            if not best < math.inf:
                raise RuntimeError("target unreachable")
            self.T[z] = best
            self.Ds[z] = ds
            self.Dt[z] = dt
            path = []
            u = last
            while u >= 0:
                path.append(u)
                u = pred[u]
            path = np.array(path[::-1], dtype=np.int64)
            self.paths.append(path)
            self.used_boxes.append(set(self.node_boxes(path).tolist()))
            self._src.append((sn, sw, tgt, direct))

    @property
    def n_translates(self) -> int:
        return self.starts.shape[0]

    def node_boxes(self, nodes) -> np.ndarray:
        return np.searchsorted(self.g.cloud.ptr, nodes, side="right") - 1

    def mean(self, values=None) -> float:
        v = self.T if values is None else values
        return float(np.mean(v))

    # -- screening ---------------------------------------------------------
    def entry_bounds(self, new_pts: np.ndarray, radius: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Lower bounds (points x translates) on reaching each new point from
        the start, respectively on leaving it for the end, over paths whose
        hops into the point are at most ``radius`` long."""
        g = self.g
        c = g.cloud
        new_pts = np.ascontiguousarray(new_pts, dtype=float).reshape(-1, c.dim)
        radius = np.ascontiguousarray(radius, dtype=float)
        As = K.entry_lower_bounds(new_pts, radius, c.points, c.lo, c.shape, c.ptr, g.offsets,
                                  self.Ds, g.alpha, g.h)
        At = K.entry_lower_bounds(new_pts, radius, c.points, c.lo, c.shape, c.ptr, g.offsets,
                                  self.Dt, g.alpha, g.h)
        for z in range(self.n_translates):
            ds = np.sqrt(((new_pts - self.starts[z]) ** 2).sum(axis=1))
            dt = np.sqrt(((new_pts - self.ends[z]) ** 2).sum(axis=1))
            As[:, z] = np.minimum(As[:, z], _phi_vec(ds, g.alpha, g.h))
            At[:, z] = np.minimum(At[:, z], _phi_vec(dt, g.alpha, g.h))
        return As, At

    def screen(self, bids: np.ndarray, ptr: np.ndarray, new_pts: np.ndarray):
        """For box changes ``bids[i]`` -> ``new_pts[ptr[i]:ptr[i+1]]``, which
        translates may change, and the per-change bounds used later.

        After a change some optimal path has all hops within the new pruning
        radius, so the first new point it visits is entered from an old point
        (or the start) within that radius; the old distance fields then bound
        every path through new points from below.
        """
        bids = np.asarray(bids, dtype=np.int64)
        nb = len(bids)
        nz = self.n_translates
        As_min = np.full((nb, nz), np.inf)
        At_min = np.full((nb, nz), np.inf)
        if new_pts.shape[0]:
            counts = np.diff(ptr)
            radius = np.repeat(self.g.radius_after_change(bids), counts)
            As, At = self.entry_bounds(new_pts, radius)
            has = counts > 0
            starts = ptr[:-1][has]
            As_min[has] = np.minimum.reduceat(As, starts, axis=0)
            At_min[has] = np.minimum.reduceat(At, starts, axis=0)
        need = As_min + At_min <= self.T[None, :] * (1.0 + SCREEN_RTOL)
        for z in range(nz):
            used = self.used_boxes[z]
            if used:
                need[:, z] |= np.isin(bids, np.fromiter(used, dtype=np.int64))
        return need, As_min, At_min

    # -- exact re-evaluation -------------------------------------------------
    def bypass_cost(self, z: int, bid: int) -> float:
        """Cost of the old geodesic with vertices in box ``bid`` skipped."""
        g = self.g
        path = self.paths[z]
        keep = path[self.node_boxes(path) != bid]
        seq = np.vstack([self.starts[z][None, :], g.cloud.points[keep], self.ends[z][None, :]])
        return K.path_cost(seq, g.alpha, g.h)

    def reevaluate(self, bid: int, new_pts: np.ndarray, zs, At_min: np.ndarray,
                   graph: PointGraph | None = None) -> np.ndarray:
        """Passage times of translates ``zs`` after box ``bid`` is given ``new_pts``."""
        g = self.g
        gB = graph if graph is not None else g.replace_box(bid, new_pts)
        a, b = g.cloud.box_slice(bid)
        k_new = gB.cloud.box_slice(bid)[1] - a
        indptr, indices, weights = gB.csr()
        out = self.T.copy()
        for z in zs:
            z = int(z)
            s, t = self.starts[z], self.ends[z]
            sn, sw = gB.endpoint(s)
            tn, tw = gB.endpoint(t)
            tgt = np.full(gB.n, np.inf)
            tgt[tn] = tw
            cap = At_min[z]
            old_lb = np.minimum(self.Dt[z], cap)
            lb = np.concatenate([old_lb[:a], np.full(k_new, cap), old_lb[b:]])
            ub = self.T[z] if bid not in self.used_boxes[z] else self.bypass_cost(z, bid)
            out[z] = K.dijkstra_bounded(indptr, indices, weights, sn, sw, tgt, gB.direct(s, t), lb, ub)
        return out


def _phi_vec(t: np.ndarray, alpha: float, h: float) -> np.ndarray:
    if math.isinf(h):
        return t**alpha
    return np.where(t <= h, np.minimum(t, h) ** alpha, h**alpha + alpha * h ** (alpha - 1.0) * (t - h))
