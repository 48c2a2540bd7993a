"""Deterministic geometry: the linearised power cost, improvement regions and
unit-grid traversal.

Unit boxes are centred at integer lattice points and are half-open, lower
faces inclusive, so the box holding ``x`` is ``floor(x + 1/2)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_H0 = 8.0
DEFAULT_H1 = 8.0


@dataclass(frozen=True)
class PhiParams:
    """Parameters of the cost ``phi``: exponent, cutoff base/slope and scale."""

    alpha: float
    h0: float = DEFAULT_H0
    h1: float = DEFAULT_H1
    n: float = 0.0
    h_n: float = field(init=False)

    def __post_init__(self):
        errors = []
        if not self.alpha > 1:
            errors.append(f"alpha must be > 1 (got {self.alpha})")
        if not self.h0 >= 1:
            errors.append(f"h0 must be >= 1 (got {self.h0})")
        if not self.h1 >= self.h0:
            errors.append(f"h1 must be >= h0 (got h1={self.h1}, h0={self.h0})")
        if not self.n >= 0:
            errors.append(f"n must be >= 0 (got {self.n})")
        if errors:
            raise ValueError("; ".join(errors))
        h_n = max(self.h0, self.h1 * self.n ** (1.0 / (2.0 * self.alpha)))
        object.__setattr__(self, "h_n", float(h_n))


@dataclass(frozen=True)
class GridSpec:
    dim: int = 2

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError(f"dimension must be >= 2 (got {self.dim})")

    def box_of(self, x) -> tuple[int, ...]:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"expected a point of dimension {self.dim}, got shape {x.shape}")
        return tuple(int(v) for v in np.floor(x + 0.5))


def box_indices(points: np.ndarray) -> np.ndarray:
    """Integer box index of every row of ``points``."""
    return np.floor(np.asarray(points, dtype=float) + 0.5).astype(np.int64)


def cost(t: float, alpha: float, h: float = math.inf) -> float:
    """``t**alpha`` below the cutoff ``h``, tangent-line continuation above."""
    if t <= h:
        return t**alpha
    return h**alpha + alpha * h ** (alpha - 1.0) * (t - h)


def cost_array(t, alpha: float, h: float = math.inf) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if math.isinf(h):
        return t**alpha
    lin = h**alpha + alpha * h ** (alpha - 1.0) * (t - h)
    return np.where(t <= h, np.minimum(t, h) ** alpha, lin)


def cost_slope(t: float, alpha: float, h: float = math.inf) -> float:
    if t < h:
        return alpha * t ** (alpha - 1.0)
    return alpha * h ** (alpha - 1.0)


def phi_cost(params: PhiParams, t: float) -> float:
    if t < 0:
        raise ValueError(f"phi_cost is defined for t >= 0 (got {t})")
    return cost(float(t), params.alpha, params.h_n)


def phi_derivative(params: PhiParams, t: float) -> float:
    """Derivative of :func:`phi_cost`; the right-hand slope at the kink."""
    if not t > 0:
        raise ValueError(f"phi_derivative is defined for t > 0 (got {t})")
    return cost_slope(float(t), params.alpha, params.h_n)


def _phi_sq(params: PhiParams, u, v) -> float:
    # the power branch from the squared length, so exact inputs stay exact
    s = float(np.sum((np.asarray(u, dtype=float) - np.asarray(v, dtype=float)) ** 2))
    t = math.sqrt(s)
    if t <= params.h_n:
        return s ** (params.alpha / 2.0)
    return cost(t, params.alpha, params.h_n)


def w_region_contains(params: PhiParams, a, b, c) -> bool:
    """True iff inserting ``c`` does not increase the cost of the direct a-b hop."""
    return _phi_sq(params, a, c) + _phi_sq(params, c, b) <= _phi_sq(params, a, b)


def check_lemma_e_regions(params: PhiParams, E: float, k: float) -> bool:
    return w_region_contains(params, (0.0, 0.0), (k, 0.0), (2.0, E))


def check_lemma_w_dimensions(params: PhiParams, ell: float, c: float) -> bool:
    if ell < 0.5:
        raise ValueError(f"ell must be >= 1/2 (got {ell})")
    side = math.sqrt(ell * ell + c * c * ell)
    return 2.0 * phi_cost(params, side) <= phi_cost(params, 2.0 * ell)


def e_regions_threshold(params: PhiParams, E: float, ks) -> float | None:
    """Smallest tested ``k`` from which the E-region predicate holds for every
    larger tested ``k``; ``None`` if it fails at the largest ``k``."""
    ks = sorted(float(k) for k in ks)
    threshold = None
    for k in reversed(ks):
        if not check_lemma_e_regions(params, E, k):
            break
        threshold = k
    return threshold


def traverse_segment(grid: GridSpec, p, q) -> list[tuple[int, ...]]:
    """Unit boxes crossed by segment ``pq`` in order, consecutive boxes sharing a face.

    Simultaneous crossings (the segment hitting an edge or corner) step the
    lowest axis first, which is the same as nudging the segment off the corner.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    d = grid.dim
    if p.shape != (d,) or q.shape != (d,):
        raise ValueError(f"points must have dimension {d}")
    y0 = p + 0.5
    y1 = q + 0.5
    cur = [int(v) for v in np.floor(y0)]
    end = [int(v) for v in np.floor(y1)]
    out = [tuple(cur)]
    if cur == end:
        return out
    delta = y1 - y0
    step = [0] * d
    t_max = [math.inf] * d
    t_delta = [math.inf] * d
    for i in range(d):
        if delta[i] > 0:
            step[i] = 1
            t_max[i] = (cur[i] + 1 - y0[i]) / delta[i]
            t_delta[i] = 1.0 / delta[i]
        elif delta[i] < 0:
            step[i] = -1
            t_max[i] = (cur[i] - y0[i]) / delta[i]
            t_delta[i] = -1.0 / delta[i]
    n_steps = sum(abs(e - c) for e, c in zip(end, cur))
    for _ in range(n_steps):
        axis = -1
        best = math.inf
        for i in range(d):
            if cur[i] != end[i] and t_max[i] < best:
                best = t_max[i]
                axis = i
        if axis < 0:  # pragma: no cover - guarded by the step count
            break
        cur[axis] += step[axis]
        t_max[axis] += t_delta[axis]
        out.append(tuple(cur))
    return out
