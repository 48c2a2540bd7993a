"""Rate-one Poisson environment encoded box by box.

Each unit box owns a fair-bit tape whose binary fraction is pushed through
the generalised inverse of the Poisson(1) CDF to give the count, and a
uniform tape giving point locations.  Environments are immutable; surgeries
return new environments sharing nothing mutable with the original.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from . import rng
from .geometry import GridSpec, box_indices

TAPE_CAP = rng.BITS_PER_BLOCK
_N_THRESH = 64
_EXACT_SCALE = 192
_FAST_BITS = 40
_AMBIGUITY = 1e-12
CELL_FLOOR = 2.0**-30


def _poisson_cdf_exact_scaled() -> list[int]:
    """floor(D(k) * 2**192) for k < 64, D the Poisson(1) CDF."""
    inv_e = Fraction(0)
    term = Fraction(1)
    for j in range(80):
        if j:
            term /= j
        inv_e += term if j % 2 == 0 else -term
    out = []
    partial = Fraction(0)
    term = Fraction(1)
    for k in range(_N_THRESH):
        if k:
            term /= k
        partial += term
        out.append(math.floor(inv_e * partial * 2**_EXACT_SCALE))
    return out


_CDF_SCALED = _poisson_cdf_exact_scaled()
_CDF_FLOAT = np.array([n / 2.0**_EXACT_SCALE for n in _CDF_SCALED])


class TapeExhausted(RuntimeError):
    """The count did not stabilise within the tape cap."""


def _count_below_exact(num: int, length: int) -> int:
    # number of k with D(k) < num / 2**length
    scaled = num << (_EXACT_SCALE - length)
    return sum(1 for c in _CDF_SCALED if scaled > c)


def decode_with_depth(bits: Sequence[int]) -> tuple[int, int]:
    """Decoded count and the number of bits needed for it to stabilise."""
    num = 0
    for length, b in enumerate(bits, start=1):
        if length > TAPE_CAP:
            break
        num = 2 * num + (1 if b else 0)
        hi = num + 1
        if hi == 1 << length:
            continue
        k_lo = _count_below_exact(num, length)
        if k_lo == _count_below_exact(hi, length):
            return k_lo, length
    if len(bits) >= TAPE_CAP:
        raise TapeExhausted("Poisson count did not stabilise within 128 bits")
    raise ValueError(f"bit prefix of length {len(bits)} is too short to fix the count")


def decode_poisson_count(omega_prefix) -> int:
    """Poisson(1) count encoded by a bit tape (sequence or :class:`BoxTape`)."""
    if isinstance(omega_prefix, BoxTape):
        return omega_prefix.realized_count
    return decode_with_depth(list(omega_prefix))[0]


def decode_many(bits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised decode of (n, 128) bit rows; returns counts and depths."""
    bits = np.asarray(bits, dtype=np.int64)
    n = bits.shape[0]
    counts = np.zeros(n, dtype=np.int64)
    depths = np.zeros(n, dtype=np.int64)
    if n == 0:
        return counts, depths
    weights = 2.0 ** -np.arange(1, _FAST_BITS + 1)
    t_lo = np.cumsum(bits[:, :_FAST_BITS] * weights, axis=1)
    t_hi = t_lo + weights[None, :]
    k_lo = np.searchsorted(_CDF_FLOAT, t_lo, side="left")
    k_hi = np.searchsorted(_CDF_FLOAT, t_hi, side="left")

    def near(t):
        idx = np.clip(np.searchsorted(_CDF_FLOAT, t), 1, len(_CDF_FLOAT) - 1)
        gap = np.minimum(np.abs(t - _CDF_FLOAT[idx]), np.abs(t - _CDF_FLOAT[idx - 1]))
        return gap < _AMBIGUITY

    top = t_hi >= 1.0  # all-ones prefix: D^-1(1) is infinite, never stable
    ambiguous = near(t_lo) | (near(t_hi) & ~top)
    stable = (k_lo == k_hi) & ~ambiguous & ~top
    found = stable.any(axis=1)
    first = np.argmax(stable, axis=1)
    amb_before = np.cumsum(ambiguous, axis=1)[np.arange(n), first] > 0
    fast = found & ~amb_before
    counts[fast] = k_lo[fast, first[fast]]
    depths[fast] = first[fast] + 1
    for i in np.flatnonzero(~fast):
        counts[i], depths[i] = decode_with_depth(bits[i].tolist())
    return counts, depths


def leading_ones(tape) -> int:
    bits = tape.bits if isinstance(tape, BoxTape) else tape
    m = 0
    for b in bits:
        if not b:
            return m
        m += 1
    return m


@dataclass(frozen=True)
class Window:
    """Axis-aligned block of unit boxes, box indices ``lo..hi`` inclusive."""

    lo: tuple[int, ...]
    hi: tuple[int, ...]

    def __post_init__(self):
        if len(self.lo) != len(self.hi):
            raise ValueError("window bounds have different dimensions")
        if any(h < l for l, h in zip(self.lo, self.hi)):
            raise ValueError(f"empty window {self.lo}..{self.hi}")

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(h - l + 1 for l, h in zip(self.lo, self.hi))

    @property
    def n_boxes(self) -> int:
        return int(np.prod(self.shape))

    def boxes(self) -> np.ndarray:
        axes = [np.arange(l, h + 1) for l, h in zip(self.lo, self.hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1).astype(np.int64)

    def box_id(self, box) -> int:
        box = tuple(int(b) for b in box)
        if not self.contains_box(box):
            raise KeyError(f"box {box} outside window")
        idx = 0
        for b, l, s in zip(box, self.lo, self.shape):
            idx = idx * s + (b - l)
        return idx

    def box_ids(self, boxes: np.ndarray) -> np.ndarray:
        boxes = np.asarray(boxes, dtype=np.int64)
        idx = np.zeros(boxes.shape[0], dtype=np.int64)
        for i, (l, s) in enumerate(zip(self.lo, self.shape)):
            idx = idx * s + (boxes[:, i] - l)
        return idx

    def contains_box(self, box) -> bool:
        return all(l <= b <= h for b, l, h in zip(box, self.lo, self.hi))

    def contains_point(self, x) -> bool:
        return self.contains_box(box_indices(np.asarray(x, dtype=float)[None, :])[0])

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Lower and upper corners of the covered region."""
        return np.array(self.lo, dtype=float) - 0.5, np.array(self.hi, dtype=float) + 0.5

    @classmethod
    def around_segment(cls, n: float, dim: int = 2, margin: float | None = None, width: float | None = None):
        """Default geodesic window ``[-m, n+m] x [-w, w]^(d-1)``."""
        m = max(10.0, n / 4.0) if margin is None else margin
        w = max(10.0, n / 2.0) if width is None else width
        m, w = int(math.ceil(m)), int(math.ceil(w))
        lo = (-m,) + (-w,) * (dim - 1)
        hi = (int(math.ceil(n)) + m,) + (w,) * (dim - 1)
        return cls(lo, hi)


@dataclass(frozen=True)
class ThinningSpec:
    """Keep the left-most point of every ``epsilon/3**n`` cell."""

    epsilon: float = 1.0 / 33.0
    n: float = 0.0
    floor: float = CELL_FLOOR
    inverse_cell: int = field(init=False)

    def __post_init__(self):
        k = round(1.0 / self.epsilon)
        if k < 1 or k % 2 == 0 or not math.isclose(1.0 / k, self.epsilon, rel_tol=1e-12):
            raise ValueError(f"epsilon must be 1/k with k odd (got {self.epsilon})")
        m = max(0, int(math.ceil(self.n)))
        # coarsen to the finest nesting grid above the floor
        while m > 0 and 1.0 / (k * 3**m) < self.floor:
            m -= 1
        object.__setattr__(self, "inverse_cell", k * 3**m)

    @property
    def cell(self) -> float:
        return 1.0 / self.inverse_cell


def thin_indices(points: np.ndarray, spec: ThinningSpec) -> np.ndarray:
    """Sorted indices of the points surviving thinning."""
    points = np.asarray(points, dtype=float)
    if points.shape[0] <= 1:
        return np.arange(points.shape[0])
    cells = np.floor(points * spec.inverse_cell + 0.5).astype(np.int64)
    d = points.shape[1]
    # primary keys: cell; secondary: coordinates lexicographic (x first)
    keys = [points[:, i] for i in range(d - 1, -1, -1)] + [cells[:, i] for i in range(d - 1, -1, -1)]
    order = np.lexsort(keys)
    sc = cells[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = np.any(sc[1:] != sc[:-1], axis=1)
    return np.sort(order[first])


class BoxTape:
    """The count and location tapes of one box (a read-only view)."""

    def __init__(self, env: "Environment", box):
        self._env = env
        self.box = tuple(int(b) for b in box)
        self._bid = env.window.box_id(self.box)

    @property
    def bits(self) -> np.ndarray:
        return self._env.bits[self._bid]

    @property
    def omega(self) -> np.ndarray:
        return self.bits

    @property
    def realized_count(self) -> int:
        return int(self._env.counts[self._bid])

    @property
    def depth(self) -> int:
        return int(self._env.depths[self._bid])

    def uniforms(self, n: int) -> np.ndarray:
        e = self._env
        return rng.uniform_tapes(e.seed, e.replicate, np.array([self.box]), n, e.dim, int(e.tags[self._bid]))[0]


class Environment:
    """Realised configuration of the boxes in a window.

    ``points`` holds, in box order, the locations of the (possibly thinned)
    process; ``local_index[i]`` is the tape position (0-based) of point ``i``
    within its box and ``ptr`` delimits boxes.
    """

    def __init__(self, grid: GridSpec, window: Window, seed: int, replicate: int,
                 bits: np.ndarray, tags: np.ndarray, thinning: ThinningSpec | None = None,
                 uniform_cache: dict | None = None):
        if window.dim != grid.dim:
            raise ValueError("window and grid dimensions differ")
        self.grid = grid
        self.window = window
        self.seed = int(seed)
        self.replicate = int(replicate)
        self.boxes = window.boxes()
        self.bits = np.asarray(bits, dtype=np.uint8)
        self.bits.setflags(write=False)
        self.tags = np.asarray(tags, dtype=np.int64)
        self.tags.setflags(write=False)
        self.thinning = thinning
        self.counts, self.depths = decode_many(self.bits)
        self._uniform_cache = dict(uniform_cache or {})
        self._build_points()

    @property
    def dim(self) -> int:
        return self.grid.dim

    def _box_uniforms(self, bids: np.ndarray) -> list[np.ndarray]:
        out = [None] * len(bids)
        missing = []
        for j, b in enumerate(bids):
            u = self._uniform_cache.get(int(b))
            if u is not None and u.shape[0] >= self.counts[b]:
                out[j] = u[: self.counts[b]]
            else:
                missing.append(j)
        if missing:
            miss = bids[missing]
            by_tag: dict[int, list[int]] = {}
            for j, b in zip(missing, miss):
                by_tag.setdefault(int(self.tags[b]), []).append(j)
            for tag, js in by_tag.items():
                bb = bids[js]
                kmax = int(self.counts[bb].max()) if len(bb) else 0
                u = rng.uniform_tapes(self.seed, self.replicate, self.boxes[bb], kmax, self.dim, tag)
                for j, row, b in zip(js, u, bb):
                    out[j] = row[: self.counts[b]]
        return out

    def _build_points(self):
        nb = self.window.n_boxes
        counts = self.counts
        kmax = int(counts.max()) if nb else 0
        tags = np.unique(self.tags)
        d = self.dim
        corner = self.boxes.astype(float) - 0.5
        if len(tags) == 1 and not self._uniform_cache:
            u = rng.uniform_tapes(self.seed, self.replicate, self.boxes, kmax, d, int(tags[0]))
            mask = np.arange(kmax)[None, :] < counts[:, None]
            pts = (corner[:, None, :] + u)[mask]
            local = np.broadcast_to(np.arange(kmax), (nb, kmax))[mask]
        else:
            rows = self._box_uniforms(np.arange(nb))
            pts = np.concatenate([corner[b] + rows[b] for b in range(nb)]) if nb else np.zeros((0, d))
            local = np.concatenate([np.arange(counts[b]) for b in range(nb)]).astype(np.int64)
        box_of_point = np.repeat(np.arange(nb), counts)
        if self.thinning is not None and len(pts):
            keep = self._thin_keep(pts, box_of_point)
            pts, local, box_of_point = pts[keep], local[keep], box_of_point[keep]
        self.points = np.ascontiguousarray(pts.reshape(-1, d))
        self.local_index = np.asarray(local, dtype=np.int64)
        self.point_box = box_of_point.astype(np.int64)
        self.ptr = np.concatenate([[0], np.cumsum(np.bincount(box_of_point, minlength=nb))]).astype(np.int64)
        for a in (self.points, self.local_index, self.point_box, self.ptr):
            a.setflags(write=False)

    def _thin_keep(self, pts, box_of_point):
        spec = self.thinning
        cells = np.floor(pts * spec.inverse_cell + 0.5).astype(np.int64)
        # fast path: every cell distinct
        _, uniq_counts = np.unique(cells, axis=0, return_counts=True)
        if uniq_counts.max() == 1:
            return np.arange(len(pts))
        return thin_indices(pts, spec)

    # -- accessors -------------------------------------------------------
    @property
    def n_points(self) -> int:
        return int(self.points.shape[0])

    def box_points(self, box) -> np.ndarray:
        b = self.window.box_id(box)
        return self.points[self.ptr[b]: self.ptr[b + 1]]

    def tape(self, box) -> BoxTape:
        return BoxTape(self, box)

    def p(self, box) -> int:
        return int(self.counts[self.window.box_id(box)])

    def total_count(self) -> int:
        return int(self.counts.sum())

    # -- surgeries -------------------------------------------------------
    def _replace(self, bits=None, tags=None, thinning="keep", drop_cache_for=()):
        cache = {k: v for k, v in self._uniform_cache.items() if k not in set(drop_cache_for)}
        return Environment(self.grid, self.window, self.seed, self.replicate,
                           self.bits if bits is None else bits,
                           self.tags if tags is None else tags,
                           self.thinning if thinning == "keep" else thinning,
                           cache)

    def thinned(self, spec: ThinningSpec) -> "Environment":
        return self._replace(thinning=spec)

    def __eq__(self, other):
        if not isinstance(other, Environment):
            return NotImplemented
        return (self.grid == other.grid and self.window == other.window and self.seed == other.seed
                and self.replicate == other.replicate and self.thinning == other.thinning
                and np.array_equal(self.counts, other.counts) and np.array_equal(self.points, other.points)
                and np.array_equal(self.bits, other.bits))

    __hash__ = None


def sample_environment(grid: GridSpec, window: Window, seed: int, replicate: int = 0) -> Environment:
    if window.n_boxes == 0:
        raise ValueError("empty window")
    boxes = window.boxes()
    bits = rng.bit_tapes(seed, replicate, boxes, tag=0)
    return Environment(grid, window, seed, replicate, bits, np.zeros(window.n_boxes, dtype=np.int64))


def thin_to_Qn(env: Environment, spec: ThinningSpec) -> Environment:
    return env.thinned(spec)


def flip_bit(env: Environment, box, j: int, value: int) -> Environment:
    """Set bit ``j`` (1-based) of a box's count tape; locations are unchanged."""
    if not 1 <= j <= TAPE_CAP:
        raise ValueError(f"bit position must lie in 1..{TAPE_CAP} (got {j})")
    b = env.window.box_id(box)
    value = 1 if value else 0
    if env.bits[b, j - 1] == value:
        return env
    bits = env.bits.copy()
    bits[b, j - 1] = value
    return env._replace(bits=bits)


def resample_box(env: Environment, box, seed: int | None = None, tag: int = 1) -> Environment:
    """Replace one box's whole tape by the independent copy numbered ``tag``.

    ``seed`` defaults to the environment's own seed; a different seed is only
    honoured through ``tag`` since tapes of one environment share a key.
    """
    if tag <= 0:
        raise ValueError("resampling tags must be positive (tag 0 is the original tape)")
    if seed is not None and seed != env.seed:
        raise ValueError("resampled tapes must come from the environment's master seed")
    b = env.window.box_id(box)
    bits = env.bits.copy()
    bits[b] = rng.bit_tapes(env.seed, env.replicate, env.boxes[b:b + 1], tag=tag)[0]
    tags = env.tags.copy()
    tags[b] = tag
    return env._replace(bits=bits, tags=tags, drop_cache_for=(b,))


def tape_points(env: Environment, boxes: np.ndarray, tag: int, bits: np.ndarray | None = None
                ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Points that ``boxes`` would hold under tape ``tag`` (or explicit ``bits``).

    Returns ``(ptr, points, counts, depths)`` in CSR layout, thinned with the
    environment's thinning spec.
    """
    boxes = np.atleast_2d(np.asarray(boxes, dtype=np.int64))
    if bits is None:
        bits = rng.bit_tapes(env.seed, env.replicate, boxes, tag=tag)
    counts, depths = decode_many(bits)
    nb = len(boxes)
    kmax = int(counts.max()) if nb else 0
    u = rng.uniform_tapes(env.seed, env.replicate, boxes, kmax, env.dim, tag)
    mask = np.arange(kmax)[None, :] < counts[:, None]
    pts = (boxes.astype(float)[:, None, :] - 0.5 + u)[mask].reshape(-1, env.dim)
    row = np.repeat(np.arange(nb), counts)
    if env.thinning is not None and len(pts) > 1:
        # cells nest inside unit boxes, so thinning acts within each row
        cells = np.floor(pts * env.thinning.inverse_cell + 0.5).astype(np.int64)
        key = np.concatenate([row[:, None], cells], axis=1)
        _, first, inv = np.unique(key, axis=0, return_index=True, return_inverse=True)
        clash = np.flatnonzero(np.bincount(inv.ravel()) > 1)
        if len(clash):
            keep = np.ones(len(pts), dtype=bool)
            for r in np.unique(row[first[clash]]):
                idx = np.flatnonzero(row == r)
                keep[idx] = False
                keep[idx[thin_indices(pts[idx], env.thinning)]] = True
            pts, row = pts[keep], row[keep]
    ptr = np.concatenate([[0], np.cumsum(np.bincount(row, minlength=nb))]).astype(np.int64)
    return ptr, np.ascontiguousarray(pts), counts, depths


def bits_for_count(k: int) -> np.ndarray:
    """A 128-bit tape whose decoded count is ``k`` (the binary expansion of the
    midpoint of the CDF interval of ``k``)."""
    if not 0 <= k < _N_THRESH - 1:
        raise ValueError(f"count {k} out of range")
    lo = 0 if k == 0 else _CDF_SCALED[k - 1]
    mid = (lo + _CDF_SCALED[k]) // 2
    num = mid >> (_EXACT_SCALE - TAPE_CAP)
    return np.array([(num >> (TAPE_CAP - 1 - i)) & 1 for i in range(TAPE_CAP)], dtype=np.uint8)


def environment_from_points(window: Window, points, seed: int = 0, replicate: int = 0) -> Environment:
    """Environment holding ``points`` (tapes are synthesised to match); each
    point is stored as its box corner plus an offset, so coordinates may move
    by one rounding."""
    points = np.asarray(points, dtype=float).reshape(-1, window.dim)
    boxes = box_indices(points)
    for b in boxes:
        if not window.contains_box(b):
            raise ValueError(f"point in box {tuple(b)} lies outside the window")
    ids = window.box_ids(boxes) if len(points) else np.zeros(0, dtype=np.int64)
    nb = window.n_boxes
    counts = np.bincount(ids, minlength=nb)
    table = {k: bits_for_count(k) for k in np.unique(counts)}
    bits = np.stack([table[c] for c in counts])
    corner = window.boxes().astype(float) - 0.5
    cache = {int(b): points[ids == b] - corner[b] for b in range(nb)}
    return Environment(GridSpec(window.dim), window, seed, replicate, bits,
                       np.zeros(nb, dtype=np.int64), None, cache)


# -- snapshots -----------------------------------------------------------

SNAPSHOT_HEADER = "# efpp environment snapshot v1"


def _bits_to_hex(bits: np.ndarray) -> str:
    return np.packbits(bits.astype(np.uint8)).tobytes().hex()


def _hex_to_bits(s: str) -> np.ndarray:
    return np.unpackbits(np.frombuffer(bytes.fromhex(s), dtype=np.uint8))[:TAPE_CAP]


def export_snapshot(env: Environment) -> str:
    """Line-oriented text: a header, then one ``box`` record per unit box."""
    lines = [SNAPSHOT_HEADER,
             f"dim {env.dim}",
             f"seed {env.seed}",
             f"replicate {env.replicate}",
             "window " + " ".join(map(str, env.window.lo + env.window.hi))]
    if env.thinning is not None:
        lines.append(f"thinning {env.thinning.epsilon!r} {env.thinning.n!r} {env.thinning.floor!r}")
    all_u = env._box_uniforms(np.arange(env.window.n_boxes))
    for b in range(env.window.n_boxes):
        box = " ".join(str(int(v)) for v in env.boxes[b])
        u = " ".join(repr(float(x)) for x in all_u[b].ravel())
        lines.append(f"box {box} tag {int(env.tags[b])} count {int(env.counts[b])} "
                     f"bits {_bits_to_hex(env.bits[b])} uniforms {u}".rstrip())
    return "\n".join(lines) + "\n"


def import_snapshot(text: str) -> Environment:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != SNAPSHOT_HEADER:
        raise ValueError("not an environment snapshot")
    meta = {}
    records = []
    for ln in lines[1:]:
        key, _, rest = ln.partition(" ")
        if key == "box":
            records.append(rest)
        else:
            meta[key] = rest
    d = int(meta["dim"])
    w = [int(v) for v in meta["window"].split()]
    window = Window(tuple(w[:d]), tuple(w[d:]))
    thinning = None
    if "thinning" in meta:
        eps, n, fl = (float(v) for v in meta["thinning"].split())
        thinning = ThinningSpec(eps, n, fl)
    nb = window.n_boxes
    if len(records) != nb:
        raise ValueError(f"expected {nb} box records, found {len(records)}")
    bits = np.zeros((nb, TAPE_CAP), dtype=np.uint8)
    tags = np.zeros(nb, dtype=np.int64)
    cache = {}
    for rec in records:
        tok = rec.split()
        box = tuple(int(v) for v in tok[:d])
        fields = tok[d:]
        i = window.box_id(box)
        tags[i] = int(fields[fields.index("tag") + 1])
        bits[i] = _hex_to_bits(fields[fields.index("bits") + 1])
        u = np.array([float(v) for v in fields[fields.index("uniforms") + 1:]]).reshape(-1, d)
        cache[i] = u
    return Environment(GridSpec(d), window, int(meta["seed"]), int(meta["replicate"]), bits, tags,
                       thinning, cache)
