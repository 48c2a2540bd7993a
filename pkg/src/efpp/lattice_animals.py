"""Greedy lattice animals: face-connected sets of unit boxes containing the
origin, their exact maximum weight for small sizes and a greedy lower bound.

Boxes are integer tuples; an animal is stored canonically as the sorted
tuple of its boxes.
"""
from __future__ import annotations

import heapq
from typing import Callable, Iterable, Mapping

import numpy as np

from . import rng
from .point_process import decode_many

MAX_EXACT_SIZE = 8

Animal = tuple  # sorted tuple of box tuples


def neighbours(box: tuple) -> list[tuple]:
    """The 2d face neighbours of ``box``, in lexicographic order."""
    out = []
    for k in range(len(box)):
        for s in (-1, 1):
            nb = list(box)
            nb[k] += s
            out.append(tuple(nb))
    return sorted(out)


def is_animal(boxes: Iterable[tuple], dim: int = 2) -> bool:
    """Face-connected and containing the origin box."""
    cells = {tuple(int(v) for v in b) for b in boxes}
    origin = (0,) * dim
    if origin not in cells or any(len(c) != dim for c in cells):
        return False
    seen = {origin}
    stack = [origin]
    while stack:
        for nb in neighbours(stack.pop()):
            if nb in cells and nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return len(seen) == len(cells)


def _check_exact(m: int, dim: int):
    if dim != 2:
        raise ValueError("exact animal enumeration supports d = 2 only")
    if not 1 <= m <= MAX_EXACT_SIZE:
        raise ValueError(f"exact animal enumeration supports 1 <= m <= {MAX_EXACT_SIZE} (got {m})")


def _redelmeier(m: int, dim: int, visit: Callable[[list], None]):
    """Visit every connected set of ``m`` boxes containing the origin once.

    Each set is grown from the origin by adding boxes from an untried list;
    a box enters the list only the first time it neighbours the current set,
    so every set has exactly one growth history.
    """
    origin = (0,) * dim
    current: list = []
    seen = {origin}

    def grow(untried: list):
        while untried:
            box = untried.pop()
            current.append(box)
            if len(current) == m:
                visit(current)
            else:
                fresh = [nb for nb in neighbours(box) if nb not in seen]
                seen.update(fresh)
                grow(untried + fresh)
                seen.difference_update(fresh)
            current.pop()

    grow([origin])


def enumerate_animals(m: int, dim: int = 2) -> list[Animal]:
    """All origin-containing face-connected sets of ``m`` boxes, sorted."""
    _check_exact(m, dim)
    out: list[Animal] = []
    _redelmeier(m, dim, lambda cur: out.append(tuple(sorted(cur))))
    out.sort()
    return out


def enumerate_animals_bfs(m: int, dim: int = 2) -> list[Animal]:
    """Same sets by level-wise extension with deduplication (an independent path)."""
    _check_exact(m, dim)
    level = {frozenset([(0,) * dim])}
    for _ in range(m - 1):
        nxt = set()
        for a in level:
            for box in a:
                for nb in neighbours(box):
                    if nb not in a:
                        nxt.add(a | {nb})
        level = nxt
    return sorted(tuple(sorted(a)) for a in level)


def _weight_fn(weights) -> Callable[[tuple], float]:
    if callable(weights) and not isinstance(weights, Mapping):
        return weights
    return lambda b: float(weights.get(b, 0.0))


def animal_max_exact(weights, m: int, dim: int = 2) -> tuple[float, Animal]:
    """Maximum total weight over animals of size ``m`` and the lexicographically
    least animal attaining it (boxes missing from ``weights`` weigh 0)."""
    _check_exact(m, dim)
    w = _weight_fn(weights)
    cache: dict = {}

    def wt(b):
        if b not in cache:
            v = float(w(b))
            if v < 0:
                raise ValueError(f"negative weight at box {b}")
            cache[b] = v
        return cache[b]

    best = [-1.0, None]

    def visit(cur):
        s = sum(wt(b) for b in cur)
        if s > best[0]:
            best[0], best[1] = s, tuple(sorted(cur))
        elif s == best[0]:
            a = tuple(sorted(cur))
            if a < best[1]:
                best[1] = a

    _redelmeier(m, dim, visit)
    return best[0], best[1]


def animal_max_bruteforce(weights, m: int, dim: int = 2) -> tuple[float, Animal]:
    """Exact maximum over the level-wise enumeration, summing in sorted box order."""
    w = _weight_fn(weights)
    animals = enumerate_animals_bfs(m, dim)
    sums = np.array([sum(float(w(b)) for b in a) for a in animals])
    j = int(np.flatnonzero(sums == sums.max())[0])
    return float(sums[j]), animals[j]


def animal_max_greedy(weights, m: int, dim: int = 2) -> tuple[float, Animal]:
    """Grow from the origin, always absorbing the heaviest frontier box
    (ties to the smallest box); a feasible animal, hence a lower bound."""
    if m < 1:
        raise ValueError(f"animal size must be >= 1 (got {m})")
    w = _weight_fn(weights)
    prefetch = getattr(weights, "prefetch", None)
    origin = (0,) * dim
    chosen = {origin}
    total = float(w(origin))
    if total < 0:
        raise ValueError(f"negative weight at box {origin}")
    heap: list = []
    queued = {origin}

    def enqueue(box):
        fresh = [nb for nb in neighbours(box) if nb not in queued]
        if prefetch is not None:
            prefetch(fresh)
        for nb in fresh:
            queued.add(nb)
            heapq.heappush(heap, (-float(w(nb)), nb))

    enqueue(origin)
    while len(chosen) < m:
        negw, box = heapq.heappop(heap)
        if negw > 0:
            raise ValueError(f"negative weight at box {box}")
        chosen.add(box)
        total += -negw
        enqueue(box)
    return total, tuple(sorted(chosen))


class PoissonWeights:
    """Independent Poisson(1) weights per box, drawn lazily from the weight
    stream of ``(seed, replicate)`` with the same exact decoding as counts."""

    def __init__(self, seed: int, replicate: int = 0, dim: int = 2):
        self.seed = int(seed)
        self.replicate = int(replicate)
        self.dim = int(dim)
        self._cache: dict = {}

    def __call__(self, box) -> float:
        box = tuple(int(v) for v in box)
        v = self._cache.get(box)
        if v is None:
            self.prefetch([box])
            v = self._cache[box]
        return v

    def prefetch(self, boxes):
        boxes = [tuple(int(v) for v in b) for b in boxes if tuple(int(v) for v in b) not in self._cache]
        if not boxes:
            return
        bits = rng.bit_tapes(self.seed, self.replicate, np.array(boxes), tag=0, kind=rng.KIND_WEIGHT)
        counts, _ = decode_many(bits)
        self._cache.update(zip(boxes, counts.astype(float).tolist()))

    def ball(self, radius: int) -> "PoissonWeights":
        """Prefetch every box within L1 ``radius`` of the origin (all an animal
        of ``radius + 1`` boxes can reach)."""
        axes = [np.arange(-radius, radius + 1)] * self.dim
        grid = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
        self.prefetch(grid[np.abs(grid).sum(axis=1) <= radius])
        return self


def greedy_profile(sizes, replicates: int, seed: int, dim: int = 2) -> np.ndarray:
    """Mean of ``M_m / m`` over replicates for each size ``m`` (greedy values)."""
    sizes = [int(m) for m in sizes]
    out = np.zeros((replicates, len(sizes)))
    for r in range(replicates):
        w = PoissonWeights(seed, r, dim)
        for j, m in enumerate(sizes):
            out[r, j] = animal_max_greedy(w, m, dim)[0] / m
    return out.mean(axis=0)
