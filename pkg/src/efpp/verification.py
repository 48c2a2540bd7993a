"""Deterministic and oracle-backed checks, shared by ``efpp verify`` and the
acceptance tests.  Every check is seeded and returns a :class:`CheckResult`.
"""
from __future__ import annotations

import contextlib
import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import stats

from . import geodesic as G
from . import geometry
from .estimators import fs_check_exact, logsobolev_hypercube_check
from .geometry import GridSpec, PhiParams, check_lemma_e_regions, check_lemma_w_dimensions, phi_cost
from .incremental import TranslateSet
from .lattice_animals import (PoissonWeights, animal_max_exact, animal_max_greedy,
                              enumerate_animals, enumerate_animals_bfs, greedy_profile)
from .point_process import (Window, decode_poisson_count, environment_from_points, leading_ones,
                            sample_environment, tape_points)
from . import rng as R

ALPHAS = (1.5, 2.0, 3.0)


@dataclass
class CheckResult:
    name: str
    passed: bool
    count: int
    violations: int
    detail: str = ""
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f"  {self.detail}" if self.detail else ""
        return f"{status}  {self.name}: {self.count} cases, {self.violations} violations, {self.seconds:.1f}s{extra}"


def _timed(fn: Callable[..., CheckResult]) -> Callable[..., CheckResult]:
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# -- geodesic oracles ------------------------------------------------------------

def _small_instance(gen: np.random.Generator, max_points: int = 7):
    """Random points in a 3 x 2 window, with endpoints anywhere inside it."""
    w = Window((0, 0), (2, 1))
    k = int(gen.integers(1, max_points + 1))
    lo, hi = w.bounds()
    pts = gen.uniform(lo, hi, size=(k, 2))
    env = environment_from_points(w, pts)
    a = gen.uniform(lo, hi)
    b = gen.uniform(lo, hi)
    return env, a, b


def _views(env, alpha: float, box, a, b):
    """One view per query kind: T, T', T'' (short cutoff) and its box surgeries."""
    short = PhiParams(alpha, 1.0, 1.0, 0.0)
    yield G.EnvironmentView(env, G.CostMode.EUCLID_POWER, PhiParams(alpha))
    yield G.EnvironmentView(env, G.CostMode.EUCLID_POWER, PhiParams(alpha), extra_endpoints=(a, b))
    yield G.EnvironmentView(env, G.CostMode.PHI, short)
    yield G.EnvironmentView(env, G.CostMode.PHI, short, emptied_box=box)
    yield G.EnvironmentView(env, G.CostMode.PHI, short, free_box=box)
    yield G.EnvironmentView(env, G.CostMode.EUCLID_POWER, PhiParams(alpha), extra_endpoints=(a, b),
                            free_box=box)


@_timed
def check_oracle_equivalence(n_instances: int = 1000, seed: int = 1) -> CheckResult:
    """Engine against exhaustive enumeration: costs to 1e-12 relative and
    identical vertex sequences."""
    gen = np.random.default_rng(seed)
    done = bad = 0
    first = ""
    while done < n_instances:
        env, a, b = _small_instance(gen)
        alpha = ALPHAS[done % 3]
        box = tuple(env.boxes[gen.integers(env.window.n_boxes)])
        for view in _views(env, alpha, box, a, b):
            if done >= n_instances:
                break
            if not view.virtual_endpoints and view.usable_mask().sum() == 0 and view.free_box is None:
                continue
            r = G.passage_time(view, a, b)
            q = G.brute_force_passage_time(view, a, b)
            done += 1
            ok = (abs(r.passage_time - q.passage_time) <= 1e-12 * max(1.0, abs(q.passage_time))
                  and np.array_equal(r.vertices, q.vertices))
            if not ok:
                bad += 1
                first = first or f"first mismatch: {r.passage_time!r} vs {q.passage_time!r}"
    return CheckResult("oracle equivalence (engine vs brute force)", bad == 0, done, bad, first)


@_timed
def check_pruning_equivalence(n_instances: int = 200, seed: int = 2) -> CheckResult:
    """Pruned and unpruned graphs give the same optimum and geodesic."""
    bad = 0
    for i in range(n_instances):
        alpha = ALPHAS[i % 3]
        w = Window.around_segment(5, margin=2, width=2)
        env = sample_environment(GridSpec(2), w, seed, i)
        a, b = (0.0, 0.0), (5.0, 0.0)
        mode = G.CostMode.PHI if i % 2 else G.CostMode.EUCLID_POWER
        p = PhiParams(alpha, 1.5, 1.5, 0.0)
        r1 = G.passage_time(G.EnvironmentView(env, mode, p, prune=True), a, b)
        r2 = G.passage_time(G.EnvironmentView(env, mode, p, prune=False), a, b)
        if (abs(r1.passage_time - r2.passage_time) > 1e-12 * r2.passage_time
                or not np.array_equal(r1.vertices, r2.vertices)):
            bad += 1
    return CheckResult("pruned graph vs complete graph", bad == 0, n_instances, bad)


@_timed
def check_incremental(n_changes: int = 300, seed: int = 3) -> CheckResult:
    """Screened incremental re-evaluation after single-box resampling against
    rebuilding the graph from scratch (bit-identical values)."""
    gen = np.random.default_rng(seed)
    n = 12.0
    w = Window.around_segment(n, margin=4, width=4)
    p = PhiParams(2.0, 8.0, 8.0, n)
    z = np.array([[i, j] for i in (-1, 0, 1) for j in (-1, 0, 1)], dtype=float)
    done = bad = 0
    rep = 0
    while done < n_changes:
        env = sample_environment(GridSpec(2), w, seed, rep)
        rep += 1
        g = G.PointGraph(G.Cloud.of_env(env), p.alpha, p.h_n)
        ts = TranslateSet(g, z, z + [n, 0.0])
        tag = int(gen.integers(1, 5))
        ptr, pts, _, _ = tape_points(env, env.boxes, tag=tag)
        need, _, at_min = ts.screen(np.arange(w.n_boxes), ptr, pts)
        rows = np.flatnonzero(need.any(axis=1))
        others = np.flatnonzero(~need.any(axis=1))
        pick = list(gen.choice(rows, min(10, len(rows)), replace=False)) + \
            list(gen.choice(others, min(10, len(others)), replace=False))
        for bid in pick:
            new = pts[ptr[bid]:ptr[bid + 1]]
            inc = ts.reevaluate(int(bid), new, np.flatnonzero(need[bid]), at_min[bid])
            scratch_graph = G.PointGraph(g.replace_box(int(bid), new).cloud, p.alpha, p.h_n)
            ref = np.array([G._solve_graph(scratch_graph, s, s + [n, 0.0], True, w) for s in z])
            done += 1
            bad += int(not np.array_equal(inc, ref))
    return CheckResult("incremental re-evaluation vs scratch", bad == 0, done, bad)


def _gradient_instance(gen: np.random.Generator, i: int):
    n = 6.0
    w = Window.around_segment(n, margin=3, width=3)
    env = sample_environment(GridSpec(2), w, 4, i)
    alpha = ALPHAS[i % 3]
    params = PhiParams(alpha, 1.0, 1.0, 0.0) if i % 2 else PhiParams(alpha, 8.0, 8.0, n)
    view = G.t_double_prime_view(env, params)
    a, b = np.zeros(2), np.array([n, 0.0])
    path = G.passage_time(view, a, b)
    refs = [r for r in path.vertex_refs if r[0] == "point"]
    return view, path, a, b, refs


@_timed
def check_gradients(n_vertices: int = 200, step: float = 1e-5, rtol: float = 1e-6, seed: int = 5
                    ) -> CheckResult:
    """Analytic gradients at geodesic vertices against central differences."""
    gen = np.random.default_rng(seed)
    done = bad = 0
    i = 0
    worst = 0.0
    while done < n_vertices:
        view, path, a, b, refs = _gradient_instance(gen, i)
        i += 1
        if not refs:
            continue
        _, box, k = refs[int(gen.integers(len(refs)))]
        g = G.grad_wrt_point(view, path, box, k)
        x = view.base.box_points(box)[int(np.flatnonzero(
            view.base.local_index[view.base.ptr[view.base.window.box_id(box)]:
                                  view.base.ptr[view.base.window.box_id(box) + 1]] == k)[0])]
        fd = np.zeros(2)
        for c in range(2):
            e = np.zeros(2)
            e[c] = step
            up = G.moved_point_view(view, box, k, x + e).passage_time(a, b)
            dn = G.moved_point_view(view, box, k, x - e).passage_time(a, b)
            fd[c] = (up - dn) / (2 * step)
        err = float(np.linalg.norm(g - fd) / max(np.linalg.norm(g), 1e-300))
        worst = max(worst, err)
        done += 1
        bad += int(err > rtol)
    return CheckResult("gradient vs central differences", bad == 0, done, bad, f"worst rel err {worst:.2e}")


@contextlib.contextmanager
def mutated_phi_derivative():
    """Temporarily flip the sign of ``phi_derivative`` (mutation fixture)."""
    orig = geometry.phi_derivative
    geometry.phi_derivative = lambda params, t: -orig(params, t)
    try:
        yield
    finally:
        geometry.phi_derivative = orig


# -- inequalities and geometry ------------------------------------------------------

@_timed
def check_phi_inequalities(n_triples: int = 100_000, seed: int = 6) -> CheckResult:
    """Both parts of the quasi-triangle inequality for the cutoff cost."""
    gen = np.random.default_rng(seed)
    bad = 0
    per = n_triples // len(ALPHAS)
    total = 0
    for j, alpha in enumerate(ALPHAS):
        m = per if j < len(ALPHAS) - 1 else n_triples - total
        total += m
        p = PhiParams(alpha, 8.0, 8.0, float(gen.uniform(0, 100)))
        scale = np.exp(gen.uniform(np.log(0.01), np.log(200.0), size=(m, 1)))
        a, b, c = (gen.normal(size=(m, 2)) * scale for _ in range(3))
        f = np.vectorize(lambda t: phi_cost(p, t))
        ac = f(np.linalg.norm(a - c, axis=1))
        ab = f(np.linalg.norm(a - b, axis=1))
        bc = f(np.linalg.norm(b - c, axis=1))
        part1 = ac**2 <= 2 ** (2 * alpha) * (ab**2 + bc**2)
        part2 = ac - ab - bc <= 2**alpha * p.h_n**alpha
        bad += int((~part1).sum() + (~part2).sum())
    return CheckResult("cost quasi-triangle inequalities (both parts)", bad == 0, n_triples, bad)


@_timed
def check_fs_exact(n_tables: int = 200, seed: int = 7) -> CheckResult:
    gen = np.random.default_rng(seed)
    bad = 0
    worst = math.inf
    for i in range(n_tables):
        k = int(gen.integers(1, 5))
        shape = tuple(int(s) for s in gen.integers(2, 5, size=k)) if i % 2 else (3, 3, 3)
        Z = gen.normal(size=shape) if i % 3 else gen.exponential(size=shape)
        probs = None if i % 4 else [gen.dirichlet(np.ones(s)) for s in shape]
        rep = fs_check_exact(Z, probs)
        worst = min(worst, rep.slack)
        bad += int(rep.slack < -1e-12)
    return CheckResult("variance-influence entropy inequality (exact)", bad == 0, n_tables, bad,
                       f"min slack {worst:.3e}")


@_timed
def check_logsobolev(n_functions: int = 1000, m: int = 6, seed: int = 8) -> CheckResult:
    gen = np.random.default_rng(seed)
    bad = 0
    for i in range(n_functions):
        f = gen.normal(size=2**m) if i % 2 else gen.exponential(size=2**m) * (gen.random(2**m) < 0.5)
        bad += int(not logsobolev_hypercube_check(m, f))
    return CheckResult(f"hypercube log-Sobolev inequality (m={m})", bad == 0, n_functions, bad)


@_timed
def check_geometry_lemmas() -> CheckResult:
    ells = [0.5] + [2.0**j for j in range(0, 11)]
    cases = bad = 0
    for alpha in ALPHAS:
        p = PhiParams(alpha, 8.0, 8.0, 0.0)
        for ell in ells:
            cases += 1
            bad += int(not check_lemma_w_dimensions(p, ell, 0.05))
    ks = np.round(np.arange(2.0, 60.0, 0.05), 10)
    thresholds = []
    for E in (1.0, 2.0, 4.0):
        p = PhiParams(2.0, 1000.0, 1000.0, 0.0)
        vals = [check_lemma_e_regions(p, E, float(k)) for k in ks]
        cases += len(ks)
        if not any(vals):
            bad += 1
            thresholds.append(None)
            continue
        first = vals.index(True)
        bad += sum(1 for v in vals[first:] if not v)
        thresholds.append(float(ks[first]))
    return CheckResult("improvement-region geometry", bad == 0, cases, bad,
                       f"E-region thresholds in k: {thresholds}")


# -- order and monotonicity ------------------------------------------------------------

@_timed
def check_order_monotonicity(n_trials: int = 10_000, seed: int = 9, rtol: float = 1e-12) -> CheckResult:
    """``T''_{B,inf} <= T'' <= T''_{B,0}`` for a random box, and adding a point
    never raises ``T''``."""
    gen = np.random.default_rng(seed)
    n = 6.0
    w = Window.around_segment(n, margin=2, width=2)
    a, b = np.zeros(2), np.array([n, 0.0])
    lo, hi = w.bounds()
    bad = done = 0
    rep = 0
    while done < n_trials:
        env = sample_environment(GridSpec(2), w, seed, rep)
        alpha = ALPHAS[rep % 3]
        p = PhiParams(alpha, 2.0, 2.0, 0.0) if rep % 2 else PhiParams(alpha, 8.0, 8.0, n)
        rep += 1
        base = G.passage_value(G.t_double_prime_view(env, p), a, b)
        for _ in range(5):
            box = tuple(env.boxes[gen.integers(w.n_boxes)])
            t0 = G.passage_value(G.t_double_prime_view(env, p, emptied_box=box), a, b)
            tinf = G.passage_value(G.t_double_prime_view(env, p, free_box=box), a, b)
            tol = rtol * base
            bad += int(not (tinf <= base + tol and base <= t0 + tol))
            done += 1
        extra = gen.uniform(lo, hi)
        added = environment_from_points(w, np.vstack([env.points, extra]))
        t_add = G.passage_value(G.t_double_prime_view(added, p), a, b)
        bad += int(t_add > base * (1 + rtol))
        done += 1
    return CheckResult("box surgery order and point-addition monotonicity", bad == 0, done, bad)


# -- encodings ---------------------------------------------------------------------------------

@_timed
def check_encoding(n_tapes: int = 100_000, seed: int = 10, alpha_level: float = 1e-3) -> CheckResult:
    boxes = np.stack(np.meshgrid(np.arange(-159, 159), np.arange(-159, 159), indexing="ij"),
                     axis=-1).reshape(-1, 2)[:n_tapes]
    bits = R.bit_tapes(seed, 0, boxes, tag=0)
    counts = np.array([decode_poisson_count(row) for row in bits])
    pmf = np.array([math.exp(-1) / math.factorial(k) for k in range(6)])
    probs = np.append(pmf, 1 - pmf.sum())
    obs = np.append(np.bincount(np.minimum(counts, 6), minlength=7)[:6], (counts >= 6).sum())
    chi2, pval = stats.chisquare(obs, probs * len(counts))
    lead = np.array([leading_ones(row) for row in bits])
    z = (lead.mean() - 1.0) / math.sqrt(2.0 / len(lead))
    ok_chi = pval >= alpha_level
    ok_lead = abs(z) <= 3.0
    return CheckResult("count encoding distribution", ok_chi and ok_lead, len(counts),
                       int(not ok_chi) + int(not ok_lead),
                       f"chi2={chi2:.2f} p={pval:.3g}; leading-ones mean {lead.mean():.4f} (z={z:.2f})")


# -- lattice animals ---------------------------------------------------------------------------

@_timed
def check_animals(n_instances: int = 100, seed: int = 11, profile_reps: int = 200) -> CheckResult:
    bad = cases = 0
    for m in range(1, 7):
        cases += 1
        bad += int(len(enumerate_animals(m)) != len(enumerate_animals_bfs(m)))
    for i in range(n_instances):
        w = PoissonWeights(seed, i)
        for m in range(1, 7):
            cases += 1
            ex, animal = animal_max_exact(w, m)
            gr, _ = animal_max_greedy(w, m)
            bad += int(gr > ex)
            if i < 10:
                cases += 1
                bad += int(ex != sum(w(b) for b in animal))
    sizes = [4, 8, 16, 24, 32, 48, 64]
    prof = greedy_profile(sizes, profile_reps, seed)
    ref = prof[-1]
    far = [abs(v / ref - 1) for m, v in zip(sizes, prof) if m >= 16]
    cases += len(far)
    bad += sum(1 for f in far if f > 0.2)
    return CheckResult("lattice animals (greedy <= exact, per-size stability)", bad == 0, cases, bad,
                       "M_m/m: " + ", ".join(f"{m}:{v:.3f}" for m, v in zip(sizes, prof)))


# -- suite --------------------------------------------------------------------------------------

def verify_suite(out=print, mutate_phi_derivative: bool = False) -> list[CheckResult]:
    """Run every check, printing one line each; returns the results."""
    checks = [
        check_oracle_equivalence,
        check_pruning_equivalence,
        check_incremental,
        check_gradients,
        check_phi_inequalities,
        check_fs_exact,
        check_logsobolev,
        check_geometry_lemmas,
        check_order_monotonicity,
        check_encoding,
        check_animals,
    ]
    results = []
    ctx = mutated_phi_derivative() if mutate_phi_derivative else contextlib.nullcontext()
    with ctx:
        for check in checks:
            res = check()
            results.append(res)
            out(res.line())
    return results
