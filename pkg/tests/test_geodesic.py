from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from efpp import geodesic as G
from efpp.geometry import GridSpec, PhiParams
from efpp.point_process import ThinningSpec, Window, environment_from_points, sample_environment

A2 = PhiParams(2.0)
LINE = Window((0, -1), (4, 1))


def tprime(env, a, b, **kw):
    return G.EnvironmentView(env, G.CostMode.EUCLID_POWER, A2, extra_endpoints=(a, b), **kw)


def _random_env(seed, k, window=Window((0, 0), (2, 1))):
    gen = np.random.default_rng(seed)
    lo, hi = window.bounds()
    return environment_from_points(window, gen.uniform(lo, hi, size=(k, 2))), gen.uniform(lo, hi), \
        gen.uniform(lo, hi)


def test_single_intermediate_point():
    env = environment_from_points(LINE, [[1.0, 0.0]])
    a, b = (0.0, 0.0), (2.0, 0.0)
    r = G.passage_time(tprime(env, a, b), a, b)
    assert r.passage_time == 2.0
    assert r.vertices.tolist() == [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]


def test_no_points_single_segment():
    env = environment_from_points(LINE, np.zeros((0, 2)))
    r = G.passage_time(tprime(env, (0, 0), (1, 0)), (0, 0), (1, 0))
    assert r.passage_time == 1.0 and r.n_segments == 1


@pytest.mark.parametrize("mode", ["T", "T_PRIME", "T_PP"])
def test_equal_endpoints_cost_zero(mode):
    env, a, _ = _random_env(3, 5)
    if mode == "T":
        view = G.EnvironmentView(env)
    elif mode == "T_PRIME":
        view = tprime(env, a, a)
    else:
        view = G.t_double_prime_view(env, PhiParams(2.0, 1.0, 1.0))
    assert G.passage_time(view, a, a).passage_time == 0.0
    assert G.passage_value(view, a, a) == 0.0


@pytest.mark.parametrize("m", [3, 4, 5])
def test_collinear_points_all_used(m):
    pts = np.array([[float(i), 0.0] for i in range(m)])
    env = environment_from_points(LINE, pts)
    view = G.EnvironmentView(env)
    for solve in (G.passage_time, G.brute_force_passage_time):
        r = solve(view, pts[0], pts[-1])
        assert r.passage_time == m - 1
        assert len(r.vertices) == m


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 6), st.sampled_from([1.5, 2.0, 3.0]))
def test_engine_matches_brute_force(seed, k, alpha):
    env, a, b = _random_env(seed, k)
    box = tuple(env.boxes[seed % env.window.n_boxes])
    views = [G.EnvironmentView(env, G.CostMode.EUCLID_POWER, PhiParams(alpha)),
             G.EnvironmentView(env, G.CostMode.PHI, PhiParams(alpha, 1.0, 1.0)),
             G.EnvironmentView(env, G.CostMode.PHI, PhiParams(alpha, 1.0, 1.0), emptied_box=box),
             G.EnvironmentView(env, G.CostMode.PHI, PhiParams(alpha, 1.0, 1.0), free_box=box)]
    for view in views:
        r = G.passage_time(view, a, b)
        q = G.brute_force_passage_time(view, a, b)
        assert math.isclose(r.passage_time, q.passage_time, rel_tol=1e-12, abs_tol=1e-300)
        assert np.array_equal(r.vertices, q.vertices)
        if view.free_box is None:
            assert G.passage_value(view, a, b) == pytest.approx(r.passage_time, rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 6))
def test_adding_a_point_never_increases_cost(seed, k):
    env, a, b = _random_env(seed, k + 1)
    fewer = environment_from_points(env.window, env.points[:-1])
    params = PhiParams(2.0, 1.0, 1.0)
    for mk in (lambda e: tprime(e, a, b), lambda e: G.t_double_prime_view(e, params)):
        assert G.passage_time(mk(env), a, b).passage_time <= \
            G.passage_time(mk(fewer), a, b).passage_time * (1 + 1e-12)


def test_pruned_matches_complete_graph():
    w = Window.around_segment(10.0, margin=3, width=3)
    for rep in range(5):
        env = sample_environment(GridSpec(2), w, 8, rep)
        p = PhiParams(2.0, 8.0, 8.0, 10.0)
        a, b = np.zeros(2), np.array([10.0, 0.0])
        full = G.t_double_prime_view(env, p, prune=False)
        pruned = G.t_double_prime_view(env, p)
        r, q = G.passage_time(pruned, a, b), G.passage_time(full, a, b)
        assert r.passage_time == pytest.approx(q.passage_time, rel=1e-12)
        assert np.array_equal(r.vertices, q.vertices)


def test_modified_passage_time_ordering_and_empty_far_box():
    n = 10.0
    w = Window.around_segment(n, margin=3, width=3)
    p = PhiParams(2.0, 8.0, 8.0, n)
    spec = ThinningSpec(1 / 33, n)
    for rep in range(4):
        env = sample_environment(GridSpec(2), w, 1, rep).thinned(spec)
        plain = G.passage_time(G.t_double_prime_view(env, p), np.zeros(2), np.array([n, 0.0])).passage_time
        for box in [(0, 0), (5, 0), (5, 1), (-3, 3)]:
            lo = G.modified_passage_time(env, p, spec, box, G.Modification.FREE)
            hi = G.modified_passage_time(env, p, spec, box, G.Modification.EMPTY)
            assert lo <= plain * (1 + 1e-12) and plain <= hi * (1 + 1e-12)
        # a corner box far from the geodesic: emptying it changes nothing
        corner = tuple(int(v) for v in w.hi)
        assert G.modified_passage_time(env, p, spec, corner, "empty") == plain


def test_empty_and_free_box_validation():
    env, _, _ = _random_env(0, 3)
    with pytest.raises(ValueError):
        G.EnvironmentView(env, emptied_box=(9, 9))
    with pytest.raises(ValueError):
        G.EnvironmentView(env, emptied_box=(0, 0), free_box=(0, 0))


def test_query_outside_window_rejected():
    env, _, _ = _random_env(0, 3)
    with pytest.raises(ValueError):
        G.passage_time(tprime(env, (0, 0), (50, 0)), (0, 0), (50, 0))


def test_geodesic_stats_straight_segment():
    w = Window((0, -1), (3, 1))
    env = environment_from_points(w, np.zeros((0, 2)))
    view = tprime(env, (0, 0), (3, 0))
    path = G.passage_time(view, (0, 0), (3, 0))
    st_ = G.geodesic_stats(view, path, GridSpec(2))
    assert st_.count == 4 and st_.boxes_used == {(0, 0), (3, 0)}
    assert st_.entry_exit[(0, 0)] == (None, 0, 0, 1)


def test_geodesic_stats_single_box():
    w = Window((0, -1), (3, 1))
    pts = [[0.1, 0.1], [0.2, -0.1]]
    env = environment_from_points(w, pts)
    view = G.EnvironmentView(env)
    path = G.passage_time(view, (0.1, 0.1), (0.2, -0.1))
    assert G.geodesic_stats(view, path, GridSpec(2)).boxes_used == {(0, 0)}


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32))
def test_touched_boxes_lower_bound(seed):
    env, a, b = _random_env(seed, 6, Window((0, 0), (5, 3)))
    view = G.t_double_prime_view(env, PhiParams(2.0, 1.0, 1.0))
    path = G.passage_time(view, a, b)
    count = G.geodesic_stats(view, path, GridSpec(2)).count
    assert count >= math.ceil(np.linalg.norm(a - b) / math.sqrt(2))


def test_gradient_zero_off_geodesic_and_on_symmetric_line():
    pts = [[1.0, 0.0], [2.0, 0.0], [2.0, 1.0]]
    env = environment_from_points(LINE, pts)
    view = tprime(env, (0, 0), (3, 0))
    path = G.passage_time(view, (0, 0), (3, 0))
    assert path.vertices.tolist() == [[0, 0], [1, 0], [2, 0], [3, 0]]
    refs = {tuple(env.box_points(r[1])[0]): r for r in path.vertex_refs if r[0] == "point"}
    # interior vertices of equal collinear segments: balanced pulls
    for xy in [(1.0, 0.0), (2.0, 0.0)]:
        _, box, k = refs[xy]
        assert np.allclose(G.grad_wrt_point(view, path, box, k), 0.0, atol=1e-12)
    assert np.array_equal(G.grad_wrt_point(view, path, (2, 1), 0), np.zeros(2))


def test_gradient_matches_finite_differences():
    w = Window.around_segment(6.0, margin=3, width=3)
    checked = 0
    for rep in range(10):
        env = sample_environment(GridSpec(2), w, 12, rep)
        view = G.t_double_prime_view(env, PhiParams(2.0, 8.0, 8.0, 6.0))
        a, b = np.zeros(2), np.array([6.0, 0.0])
        path = G.passage_time(view, a, b)
        for _, box, k in [r for r in path.vertex_refs if r[0] == "point"][:3]:
            g = G.grad_wrt_point(view, path, box, k)
            bid = env.window.box_id(box)
            x = env.points[env.ptr[bid] + int(np.flatnonzero(env.local_index[env.ptr[bid]:env.ptr[bid + 1]] == k)[0])]
            fd = np.zeros(2)
            for c in range(2):
                e = np.zeros(2)
                e[c] = 1e-5
                fd[c] = (G.moved_point_view(view, box, k, x + e).passage_time(a, b)
                         - G.moved_point_view(view, box, k, x - e).passage_time(a, b)) / 2e-5
            assert np.linalg.norm(g - fd) <= 1e-6 * np.linalg.norm(g)
            checked += 1
    assert checked >= 20


def test_nearest_point_rules():
    pts = np.array([[1.0, 0.0], [-1.0, 0.0], [0.3, 0.9]])
    env = environment_from_points(Window((-2, -2), (2, 2)), pts)
    assert nearest(env, env.points[2]).tolist() == env.points[2].tolist()
    # (1,0) and (-1,0) are equidistant from the origin; (0.3, 0.9) is closer, so move off it
    assert nearest(env, (0.0, -0.5)).tolist() == [-1.0, 0.0]


def nearest(env, x):
    return G.nearest_point(env, np.asarray(x, float))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32))
def test_nearest_point_matches_linear_scan(seed):
    gen = np.random.default_rng(seed)
    env = sample_environment(GridSpec(2), Window((-4, -4), (4, 4)), seed % 1000, 0)
    if env.n_points == 0:
        return
    lo, hi = env.window.bounds()
    for x in gen.uniform(lo - 2, hi + 2, size=(10, 2)):
        d2 = ((env.points - x) ** 2).sum(axis=1)
        cand = sorted(tuple(p) for p in env.points[d2 == d2.min()])
        assert tuple(nearest(env, x)) == cand[0]


@settings(max_examples=200, deadline=None)
@given(st.floats(1.05, 6.0), st.floats(0.01, 20.0), st.floats(1.0, 30.0), st.integers(0, 2**32))
def test_region_radius_contains_every_witness(alpha, L, h, seed):
    from efpp import _kernels as K
    from efpp.geometry import phi_cost
    p = PhiParams(alpha, h, h, 0.0)
    gen = np.random.default_rng(seed)
    # sample the lens around the midpoint of (-L/2, 0)-(L/2, 0)
    w = gen.uniform(-1, 1, size=(4000, 2)) * np.array([0.5 * L, 0.87 * L])
    da = np.hypot(w[:, 0] + L / 2, w[:, 1])
    db = np.hypot(w[:, 0] - L / 2, w[:, 1])
    f = np.vectorize(lambda t: phi_cost(p, t))
    inside = f(da) + f(db) < phi_cost(p, L)
    r = K.region_radius(L, alpha, p.h_n)
    assert np.all(np.hypot(w[inside, 0], w[inside, 1]) <= r)
    if alpha == 2.0 and L <= h:
        assert r == pytest.approx(L / 2)
