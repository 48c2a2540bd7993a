"""Passage times and geodesics over a Poisson environment.

Paths run over the points of a window; a hop of length ``t`` costs
``t**alpha`` (``T``, ``T'``) or the linearised ``phi_n(t)`` (``T''``).  The
engine runs Dijkstra on a pruned graph: a hop (u, v) is dropped when some
point w makes u -> w -> v strictly cheaper, and hops longer than a radius
``R`` are never built.  ``R`` is certified from the largest nearest-point
distance in the window: every segment longer than ``R`` has a ball around
its midpoint inside its improvement region large enough to hold a point.
"""
from __future__ import annotations

import enum
import functools
import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from types import SimpleNamespace

import numpy as np

from . import _kernels as K
from . import geometry
from .geometry import GridSpec, PhiParams, box_indices, cost_slope, traverse_segment
from .point_process import Environment, ThinningSpec, Window

SAMPLE_SPACING = 0.25
TIE_RTOL = 1e-12
BRUTE_FORCE_LIMIT = 8
SOURCE = -1
TARGET = -2


class CostMode(enum.Enum):
    EUCLID_POWER = "euclid_power"
    PHI = "phi"


class Modification(enum.Enum):
    EMPTY = "empty"
    FREE = "free"


@functools.lru_cache(maxsize=32)
def _offsets(dim: int, radius: int) -> np.ndarray:
    """Box offsets within Chebyshev ``radius`` sorted by Chebyshev then Euclidean norm."""
    axis = np.arange(-radius, radius + 1)
    mesh = np.meshgrid(*([axis] * dim), indexing="ij")
    off = np.stack([m.ravel() for m in mesh], axis=1).astype(np.int64)
    cheb = np.abs(off).max(axis=1)
    e2 = (off**2).sum(axis=1)
    keys = [off[:, i] for i in range(dim - 1, -1, -1)] + [e2, cheb]
    off = off[np.lexsort(keys)]
    off.setflags(write=False)
    return off


@functools.lru_cache(maxsize=32)
def _samples(window: Window, spacing: float) -> np.ndarray:
    """Cell centres of a ``spacing`` grid covering the window region."""
    lo, hi = window.bounds()
    axes = [lo[i] + spacing * (np.arange(int(round((hi[i] - lo[i]) / spacing))) + 0.5)
            for i in range(window.dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    s = np.ascontiguousarray(np.stack([m.ravel() for m in mesh], axis=1))
    s.setflags(write=False)
    return s


@functools.lru_cache(maxsize=4096)
def _pruning_radius(delta: float, alpha: float, h: float, l_max: float) -> float:
    return float(K.pruning_radius(delta, alpha, h, l_max))


class Cloud:
    """Points of a window sorted by unit box; ``ptr`` delimits the boxes."""

    def __init__(self, window: Window, points: np.ndarray, ptr: np.ndarray):
        self.window = window
        self.points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, window.dim)
        self.ptr = np.ascontiguousarray(ptr, dtype=np.int64)
        self.lo = np.array(window.lo, dtype=np.int64)
        self.shape = np.array(window.shape, dtype=np.int64)
        if self.ptr.shape[0] != window.n_boxes + 1 or self.ptr[-1] != self.points.shape[0]:
            raise ValueError("box pointer array does not match the points")

    @classmethod
    def from_points(cls, window: Window, points) -> tuple["Cloud", np.ndarray]:
        """Sort arbitrary points of the window by box; also returns the permutation."""
        points = np.asarray(points, dtype=float).reshape(-1, window.dim)
        boxes = box_indices(points)
        if len(points) and not all(window.contains_box(b) for b in np.unique(boxes, axis=0)):
            raise ValueError("points outside the window")
        ids = window.box_ids(boxes)
        order = np.argsort(ids, kind="stable")
        ptr = np.concatenate([[0], np.cumsum(np.bincount(ids, minlength=window.n_boxes))])
        return cls(window, points[order], ptr), order

    @classmethod
    def of_env(cls, env: Environment) -> "Cloud":
        return cls(env.window, env.points, env.ptr)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.window.dim

    def box_slice(self, bid: int) -> tuple[int, int]:
        return int(self.ptr[bid]), int(self.ptr[bid + 1])

    def replace_box(self, bid: int, new_pts) -> "Cloud":
        a, b = self.box_slice(bid)
        new_pts = np.asarray(new_pts, dtype=float).reshape(-1, self.dim)
        pts = np.concatenate([self.points[:a], new_pts, self.points[b:]])
        ptr = self.ptr.copy()
        ptr[bid + 1:] += new_pts.shape[0] - (b - a)
        return Cloud(self.window, pts, ptr)


def _box_dist(x, box) -> float:
    g = np.maximum(np.abs(np.asarray(x, dtype=float) - np.asarray(box, dtype=float)) - 0.5, 0.0)
    return float(np.sqrt((g * g).sum()))


class PointGraph:
    """Pruned hop graph over a :class:`Cloud` for one cost function."""

    def __init__(self, cloud: Cloud, alpha: float, h: float = math.inf, prune: bool = True,
                 _state=None):
        self.cloud = cloud
        self.alpha = float(alpha)
        self.h = float(h)
        self.prune = bool(prune)
        self.offsets = _offsets(cloud.dim, int(cloud.shape.max()) + 1)
        self.l_max = float(np.sqrt((cloud.shape.astype(float) ** 2).sum()))
        self._csr = None
        self._change_radius = None
        if _state is not None:
            self.nd, self.R, (self.eu, self.ev, self.ew) = _state
            return
        self.nd = K.nearest_distances(_samples(cloud.window, SAMPLE_SPACING), cloud.points,
                                      cloud.lo, cloud.shape, cloud.ptr, self.offsets)
        self.R = self._radius(self.nd)
        todo = np.ones(cloud.n, dtype=np.bool_)
        self.eu, self.ev, self.ew = K.build_point_edges(
            cloud.points, cloud.lo, cloud.shape, cloud.ptr, todo, self.alpha, self.h, self.R,
            self.offsets, self.prune)

    def _radius(self, nd: np.ndarray) -> float:
        if not self.prune:
            return self.l_max
        delta = float(nd.max()) + SAMPLE_SPACING * math.sqrt(self.cloud.dim) / 2 if len(nd) else math.inf
        return _pruning_radius(delta, self.alpha, self.h, self.l_max)

    def radius_after_change(self, bids) -> np.ndarray:
        """Upper bounds on the pruning radius once box ``bids[i]`` gets any
        new contents.  Adding points only shrinks nearest distances, so the
        worst case is the box emptied; the bound rounds the resulting
        coverage distance up to a 1/64 grid (the radius grows with it)."""
        bids = np.asarray(bids, dtype=np.int64)
        if not self.prune:
            return np.full(bids.shape[0], self.l_max)
        if self._change_radius is None:
            c = self.cloud
            lo, _ = c.window.bounds()
            s_lo = np.asarray(lo, dtype=float) + SAMPLE_SPACING / 2
            s_shape = np.round(c.shape / SAMPLE_SPACING).astype(np.int64)
            top = float(self.nd.max())
            worst = K.removal_delta(s_lo, SAMPLE_SPACING, s_shape, self.nd, top, c.points, c.lo,
                                    c.shape, c.ptr, self.offsets, np.arange(c.window.n_boxes))
            margin = SAMPLE_SPACING * math.sqrt(c.dim) / 2
            delta = np.ceil((np.maximum(worst, top) + margin) * 64.0) / 64.0
            uniq, inv = np.unique(delta, return_inverse=True)
            rad = np.array([_pruning_radius(float(dl), self.alpha, self.h, self.l_max) for dl in uniq])
            self._change_radius = np.maximum(rad[inv], self.R)
        return self._change_radius[bids]

    @property
    def n(self) -> int:
        return self.cloud.n

    @property
    def n_edges(self) -> int:
        return int(self.eu.shape[0])

    def csr(self, extra_u=None, extra_w=None):
        """Adjacency; optional edges from an extra node numbered ``n``."""
        if extra_u is None:
            if self._csr is None:
                self._csr = K.build_csr(self.n, self.eu, self.ev, self.ew)
            return self._csr
        m = len(extra_u)
        return K.build_csr(self.n + 1, np.concatenate([self.eu, np.asarray(extra_u, dtype=np.int64)]),
                           np.concatenate([self.ev, np.full(m, self.n, dtype=np.int64)]),
                           np.concatenate([self.ew, np.asarray(extra_w, dtype=float)]))

    def endpoint(self, e) -> tuple[np.ndarray, np.ndarray]:
        """Hops from an extra endpoint to the points."""
        c = self.cloud
        e = np.ascontiguousarray(e, dtype=float)
        return K.endpoint_edges(e, c.points, c.lo, c.shape, c.ptr, self.alpha, self.h, self.R,
                                self.offsets, self.prune, 0, 0)

    def direct(self, a, b) -> float:
        """Cost of the a-b hop, or inf when it is certified or witnessed dominated."""
        a = np.ascontiguousarray(a, dtype=float)
        b = np.ascontiguousarray(b, dtype=float)
        L = float(np.sqrt(((a - b) ** 2).sum()))
        if L == 0.0:
            return 0.0
        if L > self.R:
            return math.inf
        cL = K.phi(L, self.alpha, self.h)
        c = self.cloud
        if self.prune and K.dominated(a, b, L, cL, c.points, c.lo, c.shape, c.ptr, self.offsets,
                                      self.alpha, self.h):
            return math.inf
        return cL

    def replace_box(self, bid: int, new_pts) -> "PointGraph":
        """Graph of the cloud with box ``bid`` holding ``new_pts``, rebuilt locally.

        Only hops with an endpoint near the box can change status: a
        witness in the box lies within ``region_radius`` of the hop's midpoint.
        """
        old = self.cloud
        a, b = old.box_slice(bid)
        new_pts = np.asarray(new_pts, dtype=float).reshape(-1, old.dim)
        cloud = old.replace_box(bid, new_pts)
        shift = new_pts.shape[0] - (b - a)
        centre = _box_centre(old.window, bid)
        nd = self.nd.copy()
        K.update_nearest(_samples(old.window, SAMPLE_SPACING), nd, centre, cloud.points, cloud.lo,
                         cloud.shape, cloud.ptr, self.offsets)
        R = self._radius(nd)
        top = max(R, self.R)
        reach = 0.5 * top + K.region_radius(top, self.alpha, self.h) + 1e-9
        pts = cloud.points
        g = np.maximum(np.abs(pts - centre) - 0.5, 0.0)
        todo = (g * g).sum(axis=1) <= reach * reach
        # hops touching the box go; the rest keep their status unless their
        # improvement region reaches the box
        gone = ((self.eu >= a) & (self.eu < b)) | ((self.ev >= a) & (self.ev < b))
        eu, ev, ew = self.eu[~gone], self.ev[~gone], self.ew[~gone]
        eu = np.where(eu >= b, eu + shift, eu)
        ev = np.where(ev >= b, ev + shift, ev)
        # a hop longer than R has no edge; one whose improvement region meets
        # the box has both endpoints within ``reach`` of it
        cand = np.flatnonzero(todo[eu] & todo[ev])
        near = cand[K.affected_edges(pts, eu[cand], ev[cand], centre, self.alpha, self.h)]
        keep = np.ones(eu.shape[0], dtype=bool)
        # an old hop had no witness among the old points, and dropping the
        # box's old points adds none: only the new points can remove it
        if self.prune and len(near):
            keep[near] = ~K.witnessed_by(pts, eu[near], ev[near], a, a + new_pts.shape[0],
                                         self.alpha, self.h)
        skip = np.sort(np.minimum(eu[near], ev[near]) * cloud.n + np.maximum(eu[near], ev[near]))
        nu, nv, nw = K.build_point_edges(
            pts, cloud.lo, cloud.shape, cloud.ptr, todo, self.alpha, self.h, R, self.offsets,
            self.prune, True, centre, a, a + new_pts.shape[0], skip.astype(np.int64))
        edges = (np.concatenate([eu[keep], nu]), np.concatenate([ev[keep], nv]),
                 np.concatenate([ew[keep], nw]))
        return PointGraph(cloud, self.alpha, self.h, self.prune, _state=(nd, R, edges))

    def supernode_edges(self, box, box_pts) -> tuple[np.ndarray, np.ndarray]:
        """Hops from the points to a contracted box holding ``box_pts``.

        A point reaches the box at the cost of its cheapest hop to a point
        inside, or of its distance to the closed box when the box is empty.
        Hops longer than ``R`` are dominated and omitted.
        """
        pts = self.cloud.points
        box = np.asarray(box, dtype=float)
        box_pts = np.asarray(box_pts, dtype=float).reshape(-1, self.cloud.dim)
        g = np.maximum(np.abs(pts - box) - 0.5, 0.0)
        near = np.flatnonzero((g * g).sum(axis=1) <= self.R * self.R)
        w = np.array([_supernode_weight(pts[i], box, box_pts, self.alpha, self.h, False)
                      for i in near])
        return near.astype(np.int64), w.reshape(-1)


def _box_centre(window: Window, bid: int) -> np.ndarray:
    c = []
    for s, l in zip(reversed(window.shape), reversed(window.lo)):
        c.append(bid % s + l)
        bid //= s
    return np.array(c[::-1], dtype=float)


def _supernode_weight(x, box, box_pts, alpha, h, endpoint: bool) -> float:
    x = np.ascontiguousarray(x, dtype=float)
    if endpoint and tuple(box_indices(x[None, :])[0]) == tuple(int(v) for v in box):
        return 0.0
    if len(box_pts):
        return float(min(K.seg_cost(x, np.ascontiguousarray(p), alpha, h) for p in box_pts))
    return float(K.phi(_box_dist(x, box), alpha, h))


def _entry_point(x, box, box_pts, alpha, h, endpoint: bool) -> np.ndarray:
    """The box location a hop from ``x`` into the contracted box lands on."""
    x = np.asarray(x, dtype=float)
    if endpoint and tuple(box_indices(x[None, :])[0]) == tuple(int(v) for v in box):
        return x.copy()
    if len(box_pts):
        costs = [K.seg_cost(np.ascontiguousarray(x), np.ascontiguousarray(p), alpha, h) for p in box_pts]
        return np.asarray(box_pts[int(np.argmin(costs))], dtype=float)
    return np.clip(x, np.asarray(box, float) - 0.5, np.asarray(box, float) + 0.5)


# -- views and results ----------------------------------------------------

@dataclass(frozen=True)
class EnvironmentView:
    """An environment seen through a cost mode and optional box surgery.

    With ``PHI`` cost, or when ``extra_endpoints`` is non-empty, the two
    query points are added as path endpoints (``T''``/``T'``); otherwise
    queries start and end at the nearest process points (``T``).
    """

    base: Environment
    cost_mode: CostMode = CostMode.EUCLID_POWER
    params: PhiParams = field(default_factory=lambda: PhiParams(2.0))
    extra_endpoints: tuple = ()
    emptied_box: tuple | None = None
    free_box: tuple | None = None
    prune: bool = True

    def __post_init__(self):
        for name in ("emptied_box", "free_box"):
            box = getattr(self, name)
            if box is not None:
                box = tuple(int(v) for v in box)
                object.__setattr__(self, name, box)
                if not self.base.window.contains_box(box):
                    raise ValueError(f"{name} {box} lies outside the window")
        if self.emptied_box is not None and self.emptied_box == self.free_box:
            raise ValueError("a box cannot be both emptied and free")
        object.__setattr__(self, "extra_endpoints",
                           tuple(tuple(float(v) for v in p) for p in self.extra_endpoints))

    @property
    def alpha(self) -> float:
        return self.params.alpha

    @property
    def h(self) -> float:
        return self.params.h_n if self.cost_mode is CostMode.PHI else math.inf

    @property
    def virtual_endpoints(self) -> bool:
        return self.cost_mode is CostMode.PHI or len(self.extra_endpoints) > 0

    @cached_property
    def graph(self) -> PointGraph:
        g = base_graph(self.base, self.alpha, self.h, self.prune)
        win = self.base.window
        if self.emptied_box is not None:
            g = g.replace_box(win.box_id(self.emptied_box), np.zeros((0, self.base.dim)))
        if self.free_box is not None:
            g = g.replace_box(win.box_id(self.free_box), np.zeros((0, self.base.dim)))
        return g

    @cached_property
    def free_points(self) -> np.ndarray:
        if self.free_box is None:
            return np.zeros((0, self.base.dim))
        return self.base.box_points(self.free_box)

    def usable_mask(self) -> np.ndarray:
        """Base points that remain ordinary vertices in this view."""
        m = np.ones(self.base.n_points, dtype=bool)
        for box in (self.emptied_box, self.free_box):
            if box is not None:
                bid = self.base.window.box_id(box)
                m[self.base.ptr[bid]:self.base.ptr[bid + 1]] = False
        return m


def base_graph(env: Environment, alpha: float, h: float = math.inf, prune: bool = True) -> PointGraph:
    """Graph over all points of ``env``, cached on the environment."""
    cache = env.__dict__.setdefault("_graph_cache", {})
    key = (float(alpha), float(h), bool(prune))
    if key not in cache:
        cache[key] = PointGraph(Cloud.of_env(env), alpha, h, prune)
    return cache[key]


@dataclass
class PathResult:
    """A geodesic ``r_0, ..., r_k``; a free-box transit contributes no cost."""

    vertices: np.ndarray
    passage_time: float
    segment_lengths: np.ndarray
    l_max: float
    vertex_refs: list = field(default_factory=list)

    @property
    def n_segments(self) -> int:
        return len(self.segment_lengths)


@dataclass
class GeodesicStats:
    boxes_touched: list
    boxes_used: set
    count: int
    entry_exit: dict


def nearest_point(env: Environment, x) -> np.ndarray:
    """Closest process point to ``x``; ties go to the lexicographically smaller point."""
    i = _nearest_index(env.window, env.points, env.ptr, x)
    return env.points[i].copy()


def _nearest_index(window: Window, points: np.ndarray, ptr: np.ndarray, x) -> int:
    x = np.ascontiguousarray(x, dtype=float)
    if points.shape[0] == 0:
        raise ValueError("nearest_point of an empty environment")
    if window.contains_point(x):
        off = _offsets(window.dim, int(max(window.shape)) + 1)
        i = int(K.nearest_point(x, points, np.array(window.lo, dtype=np.int64),
                                np.array(window.shape, dtype=np.int64), ptr, off))
        if i >= 0:
            return i
    d2 = ((points - x) ** 2).sum(axis=1)
    cand = np.flatnonzero(d2 == d2.min())
    return int(min(cand, key=lambda i: tuple(points[i])))


# -- problem assembly -------------------------------------------------------

@dataclass
class _Problem:
    graph: PointGraph
    csr: tuple
    n_nodes: int
    src_nodes: np.ndarray
    src_w: np.ndarray
    tgt_w: np.ndarray
    direct: float
    keys: np.ndarray          # per node, for the lexicographic tie rule
    src_xy: np.ndarray | None  # virtual endpoint coordinates
    tgt_xy: np.ndarray | None
    super_box: tuple | None = None


def _check_inside(view: EnvironmentView, *pts):
    for p in pts:
        if not view.base.window.contains_point(p):
            raise ValueError(f"point {tuple(p)} lies outside the window")


def _assemble(view: EnvironmentView, a, b) -> _Problem:
    a = np.ascontiguousarray(a, dtype=float)
    b = np.ascontiguousarray(b, dtype=float)
    if a.shape != (view.base.dim,) or b.shape != (view.base.dim,):
        raise ValueError("query points have the wrong dimension")
    _check_inside(view, a, b)
    g = view.graph
    n = g.n
    alpha, h = view.alpha, view.h
    free = view.free_box is not None
    n_nodes = n + 1 if free else n
    keys = np.zeros((n_nodes, view.base.dim))
    keys[:n] = g.cloud.points
    if free:
        keys[n] = view.free_box
        su, sw = g.supernode_edges(view.free_box, view.free_points)
        csr = g.csr(su, sw)
    else:
        csr = g.csr()
    tgt_w = np.full(n_nodes, np.inf)
    if view.virtual_endpoints:
        sn, sw_ = g.endpoint(a)
        tn, tw = g.endpoint(b)
        tgt_w[tn] = tw
        direct = g.direct(a, b)
        if free:
            sn = np.append(sn, n)
            sw_ = np.append(sw_, _supernode_weight(a, view.free_box, view.free_points, alpha, h, True))
            tgt_w[n] = _supernode_weight(b, view.free_box, view.free_points, alpha, h, True)
        return _Problem(g, csr, n_nodes, sn.astype(np.int64), sw_.astype(float), tgt_w, direct,
                        keys, a, b, view.free_box)
    s = _t_mode_node(view, g, a)
    t = _t_mode_node(view, g, b)
    tgt_w[t] = 0.0
    return _Problem(g, csr, n_nodes, np.array([s], dtype=np.int64), np.zeros(1), tgt_w, math.inf,
                    keys, None, None, view.free_box)


def _t_mode_node(view: EnvironmentView, g: PointGraph, x) -> int:
    """Node of q(x): the nearest base point, or the free box if it lies there."""
    env = view.base
    if view.emptied_box is None and view.free_box is None:
        return _nearest_index(env.window, env.points, env.ptr, x)
    usable = env.points[view.usable_mask()]
    cand = np.concatenate([usable, view.free_points]) if view.free_box is not None else usable
    if cand.shape[0] == 0:
        raise ValueError("nearest_point of an empty environment")
    d2 = ((cand - x) ** 2).sum(axis=1)
    idx = np.flatnonzero(d2 == d2.min())
    j = int(min(idx, key=lambda i: tuple(cand[i])))
    if j >= usable.shape[0]:
        return g.n
    return _nearest_index(env.window, g.cloud.points, g.cloud.ptr, usable[j])


def _solve(p: _Problem):
    indptr, indices, weights = p.csr
    best, _, _, _ = K.dijkstra(indptr, indices, weights, p.src_nodes, p.src_w, p.tgt_w, p.direct, True)
    if not best < math.inf:
        raise RuntimeError("target unreachable")
    # distances to the target, for the tie-breaking walk
    t_nodes = np.flatnonzero(p.tgt_w < math.inf).astype(np.int64)
    s_w = np.full(p.n_nodes, np.inf)
    s_w[p.src_nodes] = np.minimum(s_w[p.src_nodes], p.src_w)
    _, _, dist_t, _ = K.dijkstra(indptr, indices, weights, t_nodes, p.tgt_w[t_nodes], s_w, p.direct, False)
    return _tie_walk(p, best, dist_t)


def _tie_walk(p: _Problem, T: float, dist_t: np.ndarray) -> tuple[list[int], float]:
    """Lexicographically least vertex sequence among paths within the tie tolerance."""
    indptr, indices, weights = p.csr
    limit = T + abs(T) * TIE_RTOL
    tgt_key = tuple(p.tgt_xy) if p.tgt_xy is not None else None
    u = SOURCE
    g = 0.0
    seq: list[int] = []
    seen = set()
    while True:
        if u == SOURCE:
            nbrs, ws, wt = p.src_nodes, p.src_w, p.direct
        else:
            nbrs = indices[indptr[u]:indptr[u + 1]]
            ws = weights[indptr[u]:indptr[u + 1]]
            wt = p.tgt_w[u]
        best = None
        # steps along an optimal path strictly shorten the remaining distance;
        # requiring it keeps near-zero hops within the tolerance from cycling
        here = dist_t[u] if u != SOURCE else math.inf
        for v, w in zip(nbrs.tolist(), ws.tolist()):
            if v in seen or not g + w + dist_t[v] <= limit or not dist_t[v] < here:
                continue
            cand = (tuple(p.keys[v]), 1, v, w)
            if best is None or cand < best:
                best = cand
        if g + wt <= limit and tgt_key is not None:
            cand = (tgt_key, 0, TARGET, wt)
            if best is None or cand < best:
                best = cand
        if tgt_key is None and g + wt <= limit and u != SOURCE:
            # T mode: the target is a process node already reached
            return seq, g
        if best is None:  # pragma: no cover - only on inconsistent distances
            raise RuntimeError("tie walk lost the geodesic")
        _, _, v, w = best
        g += w
        if v == TARGET:
            return seq, g
        seq.append(v)
        seen.add(v)
        u = v


def _path_result(view: EnvironmentView, p: _Problem, seq: list[int], cost: float) -> PathResult:
    g = p.graph
    n = g.n
    verts = []
    refs = []
    if p.src_xy is not None:
        verts.append(p.src_xy.copy())
        refs.append(("endpoint", 0))
    node_ref = _node_refs(view, g)
    for i, v in enumerate(seq):
        if v == n:  # contracted box: expand to its entry and exit locations
            prev = verts[-1] if verts else None
            if i + 1 < len(seq):
                nxt, nxt_end = g.cloud.points[seq[i + 1]], False
            elif p.tgt_xy is not None:
                nxt, nxt_end = p.tgt_xy, True
            else:
                nxt = None
            bp = view.free_points
            ent = _entry_point(prev, view.free_box, bp, view.alpha, view.h, i == 0) if prev is not None else None
            ext = _entry_point(nxt, view.free_box, bp, view.alpha, view.h, nxt_end) if nxt is not None else None
            for q in (ent, ext):
                if q is not None and (not verts or not np.array_equal(verts[-1], q)):
                    verts.append(q)
                    refs.append(("free", view.free_box))
            if ent is None and ext is None:
                verts.append(np.asarray(view.free_box, dtype=float))
                refs.append(("free", view.free_box))
        else:
            verts.append(g.cloud.points[v].copy())
            refs.append(node_ref(v))
    if p.tgt_xy is not None:
        verts.append(p.tgt_xy.copy())
        refs.append(("endpoint", 1))
    V = np.array(verts).reshape(-1, view.base.dim)
    seg = np.sqrt(((V[1:] - V[:-1]) ** 2).sum(axis=1)) if len(V) > 1 else np.zeros(0)
    return PathResult(V, float(cost), seg, float(seg.max()) if len(seg) else 0.0, refs)


def _node_refs(view: EnvironmentView, g: PointGraph):
    """Maps graph node -> ("point", box, tape index) via the base environment."""
    env = view.base
    usable = np.flatnonzero(view.usable_mask())
    # graph nodes are the usable base points in base order
    def ref(v: int):
        i = int(usable[v])
        return ("point", tuple(int(c) for c in env.boxes[env.point_box[i]]), int(env.local_index[i]))
    return ref


def passage_time(view: EnvironmentView, a, b) -> PathResult:
    """Optimal path between ``a`` and ``b`` in the view."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if view.virtual_endpoints and np.array_equal(a, b):
        _check_inside(view, a, b)
        return PathResult(np.array([a, b]), 0.0, np.zeros(1), 0.0, [("endpoint", 0), ("endpoint", 1)])
    p = _assemble(view, a, b)
    seq, cost = _solve(p)
    return _path_result(view, p, seq, cost)


# -- exhaustive oracle ------------------------------------------------------

@functools.lru_cache(maxsize=64)
def _perms(m: int, k: int) -> np.ndarray:
    if k == 0:
        return np.zeros((1, 0), dtype=np.int64)
    return np.array(list(itertools.permutations(range(m), k)), dtype=np.int64).reshape(-1, k)


def brute_force_passage_time(view: EnvironmentView, a, b) -> PathResult:
    """Exact optimum by enumerating every ordered vertex subset (complete graph)."""
    a = np.ascontiguousarray(a, dtype=float)
    b = np.ascontiguousarray(b, dtype=float)
    _check_inside(view, a, b)
    env = view.base
    alpha, h = view.alpha, view.h
    usable_idx = np.flatnonzero(view.usable_mask())
    pts = env.points[usable_idx]
    free = view.free_box is not None
    m_pts = len(pts)
    if m_pts + free > BRUTE_FORCE_LIMIT:
        raise ValueError(f"brute force is limited to {BRUTE_FORCE_LIMIT} usable points")
    # node list: usable points, optional supernode
    m = m_pts + free
    keys = [tuple(p) for p in pts] + ([tuple(float(c) for c in view.free_box)] if free else [])
    W = np.full((m, m), np.inf)
    for i in range(m_pts):
        for j in range(m_pts):
            W[i, j] = 0.0 if i == j else K.seg_cost(pts[i], pts[j], alpha, h)
    bp = view.free_points
    if free:
        for i in range(m_pts):
            W[i, m_pts] = W[m_pts, i] = _supernode_weight(pts[i], view.free_box, bp, alpha, h, False)
        W[m_pts, m_pts] = 0.0
    if view.virtual_endpoints:
        if np.array_equal(a, b):
            return PathResult(np.array([a, b]), 0.0, np.zeros(1), 0.0, [("endpoint", 0), ("endpoint", 1)])
        ws = np.array([K.seg_cost(a, pts[i], alpha, h) for i in range(m_pts)]
                      + ([_supernode_weight(a, view.free_box, bp, alpha, h, True)] if free else []))
        wt = np.array([K.seg_cost(pts[i], b, alpha, h) for i in range(m_pts)]
                      + ([_supernode_weight(b, view.free_box, bp, alpha, h, True)] if free else []))
        groups = [(np.array([K.seg_cost(a, b, alpha, h)]), np.zeros((1, 0), dtype=np.int64))]
        for k in range(1, m + 1):
            P = _perms(m, k)
            c = ws[P[:, 0]]
            for j in range(1, k):
                c = c + W[P[:, j - 1], P[:, j]]
            groups.append((c + wt[P[:, -1]], P))
        tgt_key = (tuple(b),)
    else:
        s = _brute_t_node(view, pts, a)
        t = _brute_t_node(view, pts, b)
        if s == t:
            groups = [(np.zeros(1), np.array([[s]], dtype=np.int64))]
        else:
            inner = np.array([i for i in range(m) if i not in (s, t)], dtype=np.int64)
            groups = []
            for k in range(0, len(inner) + 1):
                P = inner[_perms(len(inner), k)]
                full = np.concatenate([np.full((len(P), 1), s), P, np.full((len(P), 1), t)], axis=1)
                c = W[full[:, 0], full[:, 1]]
                for j in range(2, full.shape[1]):
                    c = c + W[full[:, j - 1], full[:, j]]
                groups.append((c, full))
        tgt_key = ()
    c_star = min(float(c.min()) for c, _ in groups)
    limit = c_star + abs(c_star) * TIE_RTOL
    tied = [(tuple(keys[i] for i in P[r]) + tgt_key, float(c[r]), tuple(P[r]))
            for c, P in groups for r in np.flatnonzero(c <= limit)]
    _, cost, seq = min(tied, key=lambda t: t[0])
    # nodes are numbered like the engine's: usable points in base order, then the box
    shell = SimpleNamespace(n=m_pts, cloud=SimpleNamespace(points=pts))
    p = _Problem(shell, None, 0, None, None, None, 0.0, None,
                 a if view.virtual_endpoints else None, b if view.virtual_endpoints else None,
                 view.free_box)
    return _path_result(view, p, list(seq), cost)


def _brute_t_node(view: EnvironmentView, pts: np.ndarray, x) -> int:
    m_pts = len(pts)
    bp = view.free_points
    cand = np.concatenate([pts, bp]) if view.free_box is not None else pts
    if cand.shape[0] == 0:
        raise ValueError("nearest_point of an empty environment")
    d2 = ((cand - x) ** 2).sum(axis=1)
    idx = np.flatnonzero(d2 == d2.min())
    j = int(min(idx, key=lambda i: tuple(cand[i])))
    return j if j < m_pts else m_pts


# -- modified environments and statistics ---------------------------------

def t_double_prime_view(env: Environment, params: PhiParams, spec: ThinningSpec | None = None,
                        emptied_box=None, free_box=None, prune: bool = True) -> EnvironmentView:
    base = env if spec is None or env.thinning == spec else env.thinned(spec)
    return EnvironmentView(base, CostMode.PHI, params, (), emptied_box, free_box, prune)


def modified_passage_time(env: Environment, n_params: PhiParams, spec: ThinningSpec, box,
                          mode: Modification | str) -> float:
    """``T''(0, n e1)`` with ``box`` emptied or made free."""
    mode = Modification(mode) if not isinstance(mode, Modification) else mode
    box = tuple(int(v) for v in box)
    if not env.window.contains_box(box):
        raise ValueError(f"box {box} lies outside the window")
    view = t_double_prime_view(env, n_params, spec,
                               emptied_box=box if mode is Modification.EMPTY else None,
                               free_box=box if mode is Modification.FREE else None)
    a = np.zeros(env.dim)
    b = np.zeros(env.dim)
    b[0] = n_params.n
    return passage_time(view, a, b).passage_time


def geodesic_stats(view: EnvironmentView, path: PathResult, grid: GridSpec) -> GeodesicStats:
    """Boxes touched by the segments, boxes holding vertices, and per-box
    entry/exit vertices ``(r-, s-, s+, r+)`` (indices into the vertex list)."""
    V = path.vertices
    touched: list = []
    seen = set()
    for i in range(len(V) - 1):
        for bx in traverse_segment(grid, V[i], V[i + 1]):
            if bx not in seen:
                seen.add(bx)
                touched.append(bx)
    if len(V) == 1:
        bx = grid.box_of(V[0])
        touched.append(bx)
    vb = [tuple(int(c) for c in r) for r in box_indices(V)]
    used = set(vb)
    entry_exit = {}
    for bx in used:
        idx = [i for i, c in enumerate(vb) if c == bx]
        s_minus, s_plus = idx[0], idx[-1]
        entry_exit[bx] = (s_minus - 1 if s_minus > 0 else None, s_minus, s_plus,
                          s_plus + 1 if s_plus + 1 < len(V) else None)
    return GeodesicStats(touched, used, len(touched), entry_exit)


def grad_wrt_point(view: EnvironmentView, path: PathResult, box, k: int) -> np.ndarray:
    """Gradient of the path cost in the coordinates of the ``k``-th (0-based)
    point of ``box``; zero when that point is not a vertex of the path."""
    box = tuple(int(v) for v in box)
    env = view.base
    count = int(env.counts[env.window.box_id(box)])
    if not 0 <= k < count:
        raise IndexError(f"box {box} holds {count} points; index {k} is out of range")
    grad = np.zeros(env.dim)
    V = path.vertices
    for i, ref in enumerate(path.vertex_refs):
        if ref[0] != "point" or ref[1] != box or ref[2] != k:
            continue
        for j in (i - 1, i + 1):
            if 0 <= j < len(V):
                refj = path.vertex_refs[j]
                if refj[0] == "free":
                    continue
                diff = V[i] - V[j]
                L = float(np.sqrt((diff**2).sum()))
                if L > 0:
                    grad += _slope(view, L) * diff / L
    return grad


def _slope(view: EnvironmentView, L: float) -> float:
    if view.cost_mode is CostMode.PHI:
        return geometry.phi_derivative(view.params, L)
    return cost_slope(L, view.alpha)


def moved_point_view(view: EnvironmentView, box, k: int, new_xy) -> "MovedView":
    return MovedView(view, tuple(int(v) for v in box), int(k), np.asarray(new_xy, dtype=float))


@dataclass
class MovedView:
    """A view with one process point relocated (used for finite differences)."""

    view: EnvironmentView
    box: tuple
    k: int
    new_xy: np.ndarray

    def passage_time(self, a, b) -> float:
        v = self.view
        env = v.base
        bid = env.window.box_id(self.box)
        sl = np.flatnonzero(env.local_index[env.ptr[bid]:env.ptr[bid + 1]] == self.k)
        if len(sl) == 0:
            raise IndexError("point not present in the view")
        i = int(env.ptr[bid] + sl[0])
        moved = env.points.copy()
        moved[i] = self.new_xy
        keep = v.usable_mask()
        cloud, _ = Cloud.from_points(env.window, moved[keep])
        g = PointGraph(cloud, v.alpha, v.h, v.prune)
        return _solve_graph(g, a, b, v.virtual_endpoints, env.window)


def passage_value(view: EnvironmentView, a, b) -> float:
    """Passage time alone (no geodesic), via one early-exit Dijkstra run."""
    if view.free_box is not None or (view.virtual_endpoints and np.array_equal(a, b)):
        return passage_time(view, a, b).passage_time
    _check_inside(view, a, b)
    return _solve_graph(view.graph, a, b, view.virtual_endpoints, view.base.window)


def _solve_graph(g: PointGraph, a, b, virtual: bool, window: Window) -> float:
    a = np.ascontiguousarray(a, dtype=float)
    b = np.ascontiguousarray(b, dtype=float)
    indptr, indices, weights = g.csr()
    tgt_w = np.full(g.n, np.inf)
    if virtual:
        sn, sw = g.endpoint(a)
        tn, tw = g.endpoint(b)
        tgt_w[tn] = tw
        best, *_ = K.dijkstra(indptr, indices, weights, sn, sw, tgt_w, g.direct(a, b), True)
        return float(best)
    s = _nearest_index(window, g.cloud.points, g.cloud.ptr, a)
    t = _nearest_index(window, g.cloud.points, g.cloud.ptr, b)
    tgt_w[t] = 0.0
    best, *_ = K.dijkstra(indptr, indices, weights, np.array([s], dtype=np.int64), np.zeros(1),
                          tgt_w, math.inf, True)
    return float(best)
