"""Monte Carlo estimators over replicated environments and exact checks of
the two discrete functional inequalities on small spaces.

Every Monte Carlo estimator is split into a per-replicate function (a pure
function of ``(config, n, replicate)``) and a reduction over replicates in
index order, so the harness can farm replicates out to workers and still
produce bit-identical results.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from enum import Enum

import numpy as np

from . import geodesic as G
from .geometry import GridSpec, PhiParams
from .incremental import TranslateSet
from .point_process import Environment, ThinningSpec, Window, sample_environment, tape_points


class Target(str, Enum):
    T = "T"
    T_PRIME = "T_PRIME"
    T_PP = "T_PP"
    F_N = "F_N"


ESTIMATORS = ("variance", "influence", "derivatives", "equality", "tail", "animals")
TAIL_MIN_SAMPLES = 1000


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: model parameters, the n-grid, windows and replicates.

    ``margin``/``width`` override the default window ``[-m, n+m] x [-w, w]^(d-1)``
    with ``m = max(10, n/4)`` and ``w = max(10, n/2)``; ``window_factor``
    scales whichever margins are in force.
    """

    dim: int = 2
    n_values: tuple = (8.0, 16.0, 32.0)
    alpha: float = 2.0
    h0: float = 8.0
    h1: float = 8.0
    epsilon: float = 1.0 / 33.0
    margin: float | None = None
    width: float | None = None
    window_factor: float = 1.0
    replicates: int = 100
    seed: int = 0
    targets: tuple = ("T_PP",)
    estimators: tuple = ("variance",)
    tail_c1: float | None = None
    animal_sizes: tuple = (4, 8, 16, 32, 64)

    def __post_init__(self):
        object.__setattr__(self, "n_values", tuple(float(v) for v in self.n_values))
        object.__setattr__(self, "targets", tuple(Target(t).value for t in self.targets))
        object.__setattr__(self, "estimators", tuple(self.estimators))
        object.__setattr__(self, "animal_sizes", tuple(int(m) for m in self.animal_sizes))
        errors = self.violations()
        if errors:
            raise ConfigError(errors)

    def violations(self) -> list[str]:
        """Every violated constraint, as ``field: reason`` strings."""
        out = []
        if self.dim not in (2, 3):
            out.append(f"dim: must be 2 or 3 (got {self.dim})")
        if not self.alpha > 1:
            out.append(f"alpha: must exceed 1 (got {self.alpha})")
        if not self.h0 >= 1:
            out.append(f"h0: must be >= 1 (got {self.h0})")
        if not self.h1 >= self.h0:
            out.append(f"h1: must be >= h0 (got {self.h1})")
        if not 0 < self.epsilon < 1:
            out.append(f"epsilon: must lie in (0, 1) (got {self.epsilon})")
        if self.replicates < 2:
            out.append(f"replicates: at least 2 are needed (got {self.replicates})")
        if not 0 <= self.seed < 2**64:
            out.append(f"seed: must be an unsigned 64-bit integer (got {self.seed})")
        if not self.n_values:
            out.append("n_values: at least one n is needed")
        for n in self.n_values:
            if not n >= 1:
                out.append(f"n_values: every n must be >= 1 (got {n})")
        if not self.window_factor >= 1:
            out.append(f"window_factor: must be >= 1 (got {self.window_factor})")
        for name in ("margin", "width"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                out.append(f"{name}: must be positive (got {v})")
        bad = [e for e in self.estimators if e not in ESTIMATORS]
        if bad:
            out.append(f"estimators: unknown {bad}; choose from {list(ESTIMATORS)}")
        if "tail" in self.estimators and self.replicates < TAIL_MIN_SAMPLES:
            out.append(f"replicates: tail fits need at least {TAIL_MIN_SAMPLES} (got {self.replicates})")
        if self.tail_c1 is not None and not self.tail_c1 > 0:
            out.append(f"tail_c1: must be positive (got {self.tail_c1})")
        if "animals" in self.estimators and (not self.animal_sizes or min(self.animal_sizes) < 1):
            out.append("animal_sizes: sizes must be positive integers")
        if not out:
            for n in self.n_values:
                r = self.gamma_radius(n)
                m, w = self._margins(n)
                if m < r + 1 or w < r + 1:
                    out.append(f"window: margins ({m}, {w}) do not cover the translates at n={n}")
        return out

    # -- derived quantities -------------------------------------------------
    def phi_params(self, n: float) -> PhiParams:
        return PhiParams(self.alpha, self.h0, self.h1, n)

    def thinning(self, n: float) -> ThinningSpec:
        return ThinningSpec(self.epsilon, n)

    def _margins(self, n: float) -> tuple[float, float]:
        m = self.margin if self.margin is not None else max(10.0, n / 4)
        w = self.width if self.width is not None else max(10.0, n / 2)
        return m * self.window_factor, w * self.window_factor

    def window(self, n: float) -> Window:
        m, w = self._margins(n)
        return Window.around_segment(n, self.dim, m, w)

    def gamma_radius(self, n: float) -> int:
        return int(math.floor(n ** (1.0 / (4.0 * self.alpha)) + 1e-12))

    def gamma(self, n: float) -> np.ndarray:
        """Integer translates ``z`` with ``|z|_inf <= n^(1/(4 alpha))``, lexicographic."""
        r = self.gamma_radius(n)
        axes = [np.arange(-r, r + 1)] * self.dim
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1).astype(float)

    def endpoints(self, n: float) -> tuple[np.ndarray, np.ndarray]:
        a = np.zeros(self.dim)
        b = np.zeros(self.dim)
        b[0] = n
        return a, b

    def environment(self, n: float, replicate: int, thinned: bool = True) -> Environment:
        env = sample_environment(GridSpec(self.dim), self.window(n), self.seed, replicate)
        return env.thinned(self.thinning(n)) if thinned else env

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


# -- variance ------------------------------------------------------------------

@dataclass
class VarianceEstimate:
    mean: float
    variance: float
    stderr: float
    count: int


def variance_estimate(samples) -> VarianceEstimate:
    """Unbiased sample variance with a jackknife standard error."""
    x = np.asarray(samples, dtype=float)
    m = x.shape[0]
    if m < 2:
        raise ValueError(f"a variance needs at least 2 samples (got {m})")
    mean = float(x.mean())
    var = float(((x - mean) ** 2).sum() / (m - 1))
    if m == 2:
        # leave-one-out variances need two remaining samples
        return VarianceEstimate(mean, var, math.inf if var else 0.0, m)
    dev = x - mean
    loo = np.maximum((dev**2).sum() - dev**2 * m / (m - 1), 0.0) / (m - 2)
    se = math.sqrt((m - 1) / m * float(((loo - loo.mean()) ** 2).sum()))
    return VarianceEstimate(mean, var, se, m)


def variance_sample(config: ExperimentConfig, target: Target | str, n: float, replicate: int) -> float:
    """One replicate of ``T``, ``T'``, ``T''`` (from 0 to ``n e1``) or ``F_n``."""
    target = Target(target)
    a, b = config.endpoints(n)
    params = config.phi_params(n)
    if target in (Target.T, Target.T_PRIME):
        env = config.environment(n, replicate, thinned=False)
        extra = (tuple(a), tuple(b)) if target is Target.T_PRIME else ()
        view = G.EnvironmentView(env, G.CostMode.EUCLID_POWER, params, extra)
        return G.passage_value(view, a, b)
    env = config.environment(n, replicate)
    view = G.t_double_prime_view(env, params)
    if target is Target.T_PP:
        return G.passage_value(view, a, b)
    return float(np.mean([G.passage_value(view, a + z, b + z) for z in config.gamma(n)]))


def estimate_variance(config: ExperimentConfig, target: Target | str, n: float) -> VarianceEstimate:
    samples = [variance_sample(config, target, n, r) for r in range(config.replicates)]
    return variance_estimate(samples)


# -- influences ---------------------------------------------------------------

@dataclass
class InfluenceReport:
    """Per-box means of ``|F~ - F|`` over replicates (box order of the window)."""

    boxes: np.ndarray
    per_box: np.ndarray
    per_box_stderr: np.ndarray
    counts: np.ndarray
    total: float
    total_stderr: float
    max: float
    max_stderr: float
    argmax: tuple

    def __post_init__(self):
        assert self.total >= self.max >= 0.0


def translate_set(config: ExperimentConfig, env: Environment, n: float, translates=None) -> TranslateSet:
    params = config.phi_params(n)
    g = G.base_graph(env, params.alpha, params.h_n)
    z = config.gamma(n) if translates is None else np.asarray(translates, dtype=float)
    a, b = config.endpoints(n)
    return TranslateSet(g, z + a, z + b)


def influence_sample(config: ExperimentConfig, n: float, replicate: int) -> np.ndarray:
    """``|F~_i - F|`` for every box ``i`` of the window, where ``F~_i``
    resamples box ``i`` from its first independent tape copy."""
    env = config.environment(n, replicate)
    ts = translate_set(config, env, n)
    nb = env.window.n_boxes
    ptr, pts, _, _ = tape_points(env, env.boxes, tag=1)
    need, _, at_min = ts.screen(np.arange(nb), ptr, pts)
    out = np.zeros(nb)
    F = ts.mean()
    for bid in np.flatnonzero(need.any(axis=1)):
        vals = ts.reevaluate(int(bid), pts[ptr[bid]:ptr[bid + 1]], np.flatnonzero(need[bid]), at_min[bid])
        out[bid] = abs(ts.mean(vals) - F)
    return out


def influence_report(boxes: np.ndarray, samples) -> InfluenceReport:
    S = np.asarray(samples, dtype=float)
    m = S.shape[0]
    per_box = S.mean(axis=0)
    per_se = S.std(axis=0, ddof=1) / math.sqrt(m) if m > 1 else np.zeros_like(per_box)
    sums = S.sum(axis=1)
    total = float(sums.mean())
    total_se = float(sums.std(ddof=1) / math.sqrt(m)) if m > 1 else 0.0
    j = int(np.argmax(per_box))
    return InfluenceReport(np.asarray(boxes), per_box, per_se, np.full(per_box.shape, m), total, total_se,
                           float(per_box[j]), float(per_se[j]), tuple(int(v) for v in boxes[j]))


def estimate_influences(config: ExperimentConfig, n: float) -> InfluenceReport:
    samples = [influence_sample(config, n, r) for r in range(config.replicates)]
    return influence_report(config.window(n).boxes(), samples)


# -- entropy and the two discrete inequalities --------------------------------

def _xlogx(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.where(x > 0, x * np.log(np.where(x > 0, x, 1.0)), 0.0)


def _ent(values: np.ndarray, weights: np.ndarray) -> float:
    mean = float((weights * values).sum())
    return float((weights * _xlogx(values)).sum()) - float(_xlogx(np.array(mean)))


def entropy_plugin(samples) -> float:
    """Plug-in ``E[X log X] - E[X] log E[X]`` with ``0 log 0 = 0``."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("no samples")
    if np.any(x < 0) or np.any(np.isnan(x)):
        raise ValueError("entropy needs nonnegative samples")
    return _ent(x, np.full(x.size, 1.0 / x.size))


@dataclass
class FSReport:
    var_z: float
    sum_abs_sq: float
    sum_ent: float
    lhs: float
    slack: float
    vacuous: bool


def fs_check_exact(Z, probs=None) -> FSReport:
    """Both sides of ``Var Z log(Var Z / sum (E|V_i|)^2) <= sum Ent V_i^2`` for
    ``Z`` tabulated on a product of at most 4 factors of size at most 4.

    ``probs`` gives each factor's law (uniform when omitted); ``V_i`` are the
    martingale differences along the coordinate filtration.
    """
    Z = np.asarray(Z, dtype=float)
    if Z.ndim < 1 or Z.ndim > 4 or any(s < 1 or s > 4 for s in Z.shape):
        raise ValueError(f"table shape {Z.shape} is not a product of <= 4 factors of size <= 4")
    if not np.all(np.isfinite(Z)):
        raise ValueError("table holds non-finite values")
    k = Z.ndim
    if probs is None:
        probs = [np.full(s, 1.0 / s) for s in Z.shape]
    probs = [np.asarray(p, dtype=float) for p in probs]
    if len(probs) != k or any(p.shape != (s,) for p, s in zip(probs, Z.shape)):
        raise ValueError("one probability vector per factor, matching the table shape")
    if any(np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12 for p in probs):
        raise ValueError("factor laws must be probability vectors")
    W = probs[0]
    for p in probs[1:]:
        W = np.multiply.outer(W, p)
    support = Z[W > 0]
    if support.size == 0 or np.all(support == support[0]):
        # constant on the support: every term vanishes exactly
        return FSReport(0.0, 0.0, 0.0, 0.0, 0.0, True)
    # conditional expectations E[Z | first i coordinates], broadcast to the full table
    conds = [np.full(Z.shape, float((W * Z).sum()))]
    for i in range(1, k + 1):
        axes = tuple(range(i, k))
        if axes:
            wt = W.sum(axis=axes, keepdims=True)
            ce = (W * Z).sum(axis=axes, keepdims=True) / np.where(wt > 0, wt, 1.0)
        else:
            ce = Z
        conds.append(np.broadcast_to(ce, Z.shape))
    V = [conds[i] - conds[i - 1] for i in range(1, k + 1)]
    mean = conds[0][(0,) * k]
    var = float((W * (Z - mean) ** 2).sum())
    sum_abs_sq = float(sum(float((W * np.abs(v)).sum()) ** 2 for v in V))
    sum_ent = float(sum(_ent((v**2).ravel(), W.ravel()) for v in V))
    if var <= 0 or sum_abs_sq <= 0:
        return FSReport(var, sum_abs_sq, sum_ent, 0.0, sum_ent, True)
    lhs = var * math.log(var / sum_abs_sq)
    return FSReport(var, sum_abs_sq, sum_ent, lhs, sum_ent - lhs, False)


def logsobolev_sides(m: int, f) -> tuple[float, float]:
    """``(Ent f^2, E sum_i (Delta_i f)^2)`` under the uniform law on ``{-1,1}^m``.

    ``f`` is a table of shape ``(2,)*m`` (or flat, C order); index 0 on an
    axis is the value -1 of that coordinate.
    """
    if not 1 <= m <= 12:
        raise ValueError(f"exact hypercube checks support 1 <= m <= 12 (got {m})")
    f = np.asarray(f, dtype=float)
    if f.size != 2**m:
        raise ValueError(f"table of size {f.size} does not match m={m}")
    f = f.reshape((2,) * m)
    w = np.full(f.size, 2.0**-m)
    ent = _ent((f**2).ravel(), w)
    energy = 0.0
    for i in range(m):
        d = np.take(f, 1, axis=i) - np.take(f, 0, axis=i)
        energy += float((d**2).mean())
    return ent, energy


def logsobolev_hypercube_check(m: int, f, rtol: float = 1e-12) -> bool:
    ent, energy = logsobolev_sides(m, f)
    return ent <= energy + rtol * max(1.0, abs(energy))


# -- derivative sums ------------------------------------------------------------

@dataclass
class DerivativeSample:
    grad_sum: float
    bit_sum: float
    n_flips: int
    n_recomputed: int


def derivative_sample(config: ExperimentConfig, n: float, replicate: int) -> DerivativeSample:
    """Squared analytic gradients over geodesic vertices of ``T''(0, n e1)``
    and squared bit-flip differences over every box and every tape bit up to
    the stabilisation depth."""
    env = config.environment(n, replicate)
    params = config.phi_params(n)
    view = G.t_double_prime_view(env, params)
    a, b = config.endpoints(n)
    path = G.passage_time(view, a, b)
    grad_sum = 0.0
    for ref in path.vertex_refs:
        if ref[0] == "point":
            gvec = G.grad_wrt_point(view, path, ref[1], ref[2])
            grad_sum += float((gvec**2).sum())
    ts = translate_set(config, env, n, translates=np.zeros((1, config.dim)))
    # one row per (box, bit position <= depth) with that bit flipped
    bids = np.repeat(np.arange(env.window.n_boxes), env.depths)
    pos = np.concatenate([np.arange(d) for d in env.depths]) if len(bids) else np.zeros(0, np.int64)
    bits = env.bits[bids].copy()
    bits[np.arange(len(bids)), pos] ^= 1
    ptr, pts, counts, _ = tape_points(env, env.boxes[bids], tag=0, bits=bits)
    changed = np.flatnonzero(counts != env.counts[bids])
    bit_sum = 0.0
    n_re = 0
    if len(changed):
        sub_ptr = np.concatenate([[0], np.cumsum(np.diff(ptr)[changed])]).astype(np.int64)
        sub_pts = np.concatenate([pts[ptr[i]:ptr[i + 1]] for i in changed]) if len(changed) else pts[:0]
        need, _, at_min = ts.screen(bids[changed], sub_ptr, sub_pts)
        T0 = ts.T[0]
        # flips giving a box the same count give it the same points
        seen: dict = {}
        for j in np.flatnonzero(need[:, 0]):
            i = changed[j]
            key = (int(bids[i]), int(counts[i]))
            if key not in seen:
                seen[key] = ts.reevaluate(int(bids[i]), pts[ptr[i]:ptr[i + 1]], [0], at_min[j])[0]
                n_re += 1
            bit_sum += (seen[key] - T0) ** 2
    return DerivativeSample(grad_sum, bit_sum, int(len(bids)), n_re)


@dataclass
class DerivativeReport:
    grad_mean: float
    grad_stderr: float
    bit_mean: float
    bit_stderr: float
    count: int


def derivative_report(samples) -> DerivativeReport:
    g = np.array([s.grad_sum for s in samples])
    b = np.array([s.bit_sum for s in samples])
    m = len(samples)
    se = (lambda x: float(x.std(ddof=1) / math.sqrt(m))) if m > 1 else (lambda x: 0.0)
    return DerivativeReport(float(g.mean()), se(g), float(b.mean()), se(b), m)


def derivative_sums(config: ExperimentConfig, n: float) -> DerivativeReport:
    return derivative_report([derivative_sample(config, n, r) for r in range(config.replicates)])


# -- tails and the T' / T'' agreement ----------------------------------------

@dataclass
class TailReport:
    n: float
    kappa: float
    x: np.ndarray
    survival: np.ndarray
    c2: float
    log_c1_fit: float
    p999: float
    c1: float
    exceeds: bool = field(default=False)


def tail_fit(samples, n: float, dim: int, alpha: float, c1: float | None = None) -> TailReport:
    """Empirical survival of ``samples`` with a fitted ``exp(-c2 x^kappa)``
    reference, ``kappa = min(1, d/alpha)``, and the ``C1 n`` envelope check at
    the 99.9th percentile (``C1`` calibrated on this sample when omitted)."""
    x = np.sort(np.asarray(samples, dtype=float))
    if x.size < TAIL_MIN_SAMPLES:
        raise ValueError(f"tail fits need at least {TAIL_MIN_SAMPLES} samples (got {x.size})")
    kappa = min(1.0, dim / alpha)
    m = x.size
    surv = 1.0 - np.arange(1, m + 1) / (m + 1.0)
    p999 = float(np.quantile(x, 0.999))
    if c1 is None:
        c1 = p999 / n
    # least squares of log S on x^kappa over the upper half
    half = slice(m // 2, m)
    xk = x[half] ** kappa
    ls = np.log(surv[half])
    if np.ptp(xk) > 0:
        slope, icept = np.polyfit(xk, ls, 1)
    else:
        slope, icept = 0.0, float(ls.mean())
    return TailReport(n, kappa, x, surv, float(-slope), float(icept), p999, float(c1),
                      bool(p999 > c1 * n * (1 + 1e-12)))


def equality_sample(config: ExperimentConfig, n: float, replicate: int, rtol: float = 1e-9) -> bool:
    tp = variance_sample(config, Target.T_PRIME, n, replicate)
    tpp = variance_sample(config, Target.T_PP, n, replicate)
    return abs(tp - tpp) <= rtol * max(abs(tp), abs(tpp))


def equality_rate(config: ExperimentConfig, n: float) -> float:
    hits = [equality_sample(config, n, r) for r in range(config.replicates)]
    return float(np.mean(hits))
