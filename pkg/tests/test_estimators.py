from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from efpp import estimators as E
from efpp import geodesic as G
from efpp.point_process import flip_bit

SMALL = E.ExperimentConfig(n_values=(4.0,), margin=2.0, width=2.0, replicates=2, seed=3)


# -- variance -----------------------------------------------------------------

def test_variance_examples():
    assert E.variance_estimate([3.0] * 10).variance == 0.0
    est = E.variance_estimate([0.0, 2.0])
    assert est.variance == 2.0 and est.mean == 1.0 and est.count == 2
    with pytest.raises(ValueError):
        E.variance_estimate([1.0])


@settings(max_examples=50)
@given(st.lists(st.floats(-100, 100), min_size=3, max_size=30))
def test_jackknife_matches_leave_one_out(xs):
    x = np.array(xs)
    est = E.variance_estimate(x)
    m = len(x)
    loo = np.array([np.var(np.delete(x, i), ddof=1) for i in range(m)])
    se = math.sqrt((m - 1) / m * ((loo - loo.mean()) ** 2).sum())
    assert est.variance == pytest.approx(np.var(x, ddof=1), rel=1e-9, abs=1e-9)
    assert est.stderr == pytest.approx(se, rel=1e-6, abs=1e-9)


def test_f_n_is_the_translate_average():
    cfg = E.ExperimentConfig(n_values=(8.0,), replicates=2)
    env = cfg.environment(8.0, 1)
    view = G.t_double_prime_view(env, cfg.phi_params(8.0))
    a, b = cfg.endpoints(8.0)
    vals = [G.passage_value(view, a + z, b + z) for z in cfg.gamma(8.0)]
    assert len(vals) == 9
    assert E.variance_sample(cfg, "F_N", 8.0, 1) == pytest.approx(np.mean(vals), rel=1e-15)
    # the central translate is T''
    assert vals[4] == E.variance_sample(cfg, "T_PP", 8.0, 1)


def test_var_f_n_not_above_var_t_pp():
    for n in (8.0, 16.0):
        cfg = E.ExperimentConfig(n_values=(n,), replicates=60, seed=5)
        f = E.estimate_variance(cfg, "F_N", n)
        t = E.estimate_variance(cfg, "T_PP", n)
        assert f.variance <= t.variance + 3 * math.hypot(f.stderr, t.stderr)


def test_gamma_and_window_defaults():
    cfg = E.ExperimentConfig()
    assert cfg.gamma_radius(8.0) == 1 and cfg.gamma_radius(64.0) == 1 and cfg.gamma_radius(256.0) == 2
    w = cfg.window(32.0)
    assert w.lo == (-10, -16) and w.hi == (42, 16)
    assert E.ExperimentConfig(window_factor=2.0).window(16.0).lo == (-20, -20)


def test_config_reports_every_violation():
    with pytest.raises(E.ConfigError) as exc:
        E.ExperimentConfig(alpha=1.0, replicates=1, h0=0.5, estimators=("nope",))
    text = "\n".join(exc.value.errors)
    for key in ("alpha", "replicates", "h0", "estimators"):
        assert key in text
    with pytest.raises(E.ConfigError, match="translates"):
        E.ExperimentConfig(margin=1.0, n_values=(16.0,))


# -- influences ---------------------------------------------------------------------

def test_influence_zero_far_from_geodesics():
    cfg = E.ExperimentConfig(n_values=(8.0,), replicates=3)
    rep = E.estimate_influences(cfg, 8.0)
    w = cfg.window(8.0)
    corner = w.box_id(w.hi)
    assert rep.per_box[corner] == 0.0
    assert rep.total >= rep.max > 0
    assert rep.argmax == tuple(int(v) for v in rep.boxes[int(np.argmax(rep.per_box))])


def test_influence_matches_direct_resampling():
    cfg = SMALL
    n = 4.0
    env = cfg.environment(n, 0)
    s = E.influence_sample(cfg, n, 0)
    from efpp.point_process import resample_box
    a, b = cfg.endpoints(n)
    params = cfg.phi_params(n)
    base = np.mean([G.passage_value(G.t_double_prime_view(env, params), a + z, b + z) for z in cfg.gamma(n)])
    for bid in range(0, env.window.n_boxes, 3):
        new = resample_box(env, env.boxes[bid], tag=1)
        view = G.t_double_prime_view(new, params)
        f = np.mean([G.passage_value(view, a + z, b + z) for z in cfg.gamma(n)])
        assert s[bid] == pytest.approx(abs(f - base), rel=1e-12, abs=1e-12)


# -- entropy and inequalities -----------------------------------------------------------

def test_entropy_examples():
    assert E.entropy_plugin([2.5] * 4) == pytest.approx(0.0, abs=1e-15)
    want = math.e / 2 - (1 + math.e) / 2 * math.log((1 + math.e) / 2)
    assert E.entropy_plugin([1.0, math.e]) == pytest.approx(want, rel=1e-12)
    assert want == pytest.approx(0.206, abs=5e-4)
    assert E.entropy_plugin([0.0, 0.0]) == 0.0
    with pytest.raises(ValueError):
        E.entropy_plugin([-1.0, 1.0])


@given(st.lists(st.floats(0, 1e6), min_size=1, max_size=50))
def test_entropy_nonnegative(xs):
    assert E.entropy_plugin(xs) >= -1e-9 * max(1.0, max(xs) * math.log(max(xs) + 2))


def test_fs_two_fair_bits():
    Z = np.array([[0.0, 1.0], [1.0, 2.0]])
    r = E.fs_check_exact(Z)
    assert r.var_z == 0.5 and r.sum_abs_sq == 0.5 and r.sum_ent == 0.0
    assert r.lhs == 0.0 and r.slack == 0.0 and not r.vacuous


def test_fs_constant_is_vacuous():
    r = E.fs_check_exact(np.full((3, 3), 7.0))
    assert r.vacuous and r.var_z == 0.0 and r.slack == 0.0


@settings(max_examples=200)
@given(st.integers(0, 2**32))
def test_fs_inequality_on_random_tables(seed):
    gen = np.random.default_rng(seed)
    Z = gen.normal(size=(3, 3, 3)) * gen.exponential()
    assert E.fs_check_exact(Z).slack >= -1e-12


def test_fs_matches_brute_force_martingale():
    gen = np.random.default_rng(1)
    Z = gen.normal(size=(2, 3, 4))
    probs = [gen.dirichlet(np.ones(s)) for s in Z.shape]
    r = E.fs_check_exact(Z, probs)
    outcomes = list(itertools.product(*[range(s) for s in Z.shape]))
    pw = {o: np.prod([probs[i][o[i]] for i in range(3)]) for o in outcomes}

    def cond(o, i):
        # E[Z | first i coordinates equal those of o]
        match = [q for q in outcomes if q[:i] == o[:i]]
        tot = sum(pw[q] for q in match)
        return sum(pw[q] * Z[q] for q in match) / tot

    V = [{o: cond(o, i + 1) - cond(o, i) for o in outcomes} for i in range(3)]
    mean = cond(outcomes[0], 0)
    assert r.var_z == pytest.approx(sum(pw[o] * (Z[o] - mean) ** 2 for o in outcomes), rel=1e-12)
    assert r.sum_abs_sq == pytest.approx(sum(sum(pw[o] * abs(v[o]) for o in outcomes) ** 2 for v in V),
                                         rel=1e-12)
    ent = 0.0
    for v in V:
        m = sum(pw[o] * v[o] ** 2 for o in outcomes)
        ent += sum(pw[o] * v[o] ** 2 * math.log(v[o] ** 2) for o in outcomes if v[o] != 0) - m * math.log(m)
    assert r.sum_ent == pytest.approx(ent, rel=1e-10)


def test_fs_rejects_bad_tables():
    with pytest.raises(ValueError):
        E.fs_check_exact(np.zeros((5, 2)))
    with pytest.raises(ValueError):
        E.fs_check_exact(np.zeros((2, 2)), [np.array([0.5, 0.6]), np.array([0.5, 0.5])])


def test_logsobolev_examples():
    ent, energy = E.logsobolev_sides(1, [-1.0, 1.0])
    assert ent == 0.0 and energy == 4.0
    assert E.logsobolev_sides(3, np.full(8, 2.0)) == (0.0, 0.0)
    assert E.logsobolev_hypercube_check(3, np.full(8, 2.0))


@settings(max_examples=200)
@given(st.integers(1, 8), st.integers(0, 2**32))
def test_logsobolev_random(m, seed):
    f = np.random.default_rng(seed).normal(size=2**m)
    assert E.logsobolev_hypercube_check(m, f)


def test_logsobolev_rejects_bad_size():
    with pytest.raises(ValueError):
        E.logsobolev_sides(3, np.zeros(7))
    with pytest.raises(ValueError):
        E.logsobolev_sides(13, np.zeros(2**13))


# -- derivative sums ------------------------------------------------------------------

def _point_xy(env, box, k):
    bid = env.window.box_id(box)
    loc = env.local_index[env.ptr[bid]:env.ptr[bid + 1]]
    return env.points[env.ptr[bid] + int(np.flatnonzero(loc == k)[0])]


def test_gradient_sum_matches_finite_differences():
    n = SMALL.n_values[0]
    a, b = SMALL.endpoints(n)
    for rep in range(20):
        s = E.derivative_sample(SMALL, n, rep)
        env = SMALL.environment(n, rep)
        view = G.t_double_prime_view(env, SMALL.phi_params(n))
        path = G.passage_time(view, a, b)
        fd_sum = 0.0
        for _, box, k in (r for r in path.vertex_refs if r[0] == "point"):
            x = _point_xy(env, box, k)
            for c in range(2):
                e = np.zeros(2)
                e[c] = 1e-5
                d = (G.moved_point_view(view, box, k, x + e).passage_time(a, b)
                     - G.moved_point_view(view, box, k, x - e).passage_time(a, b)) / 2e-5
                fd_sum += d * d
        assert s.grad_sum == pytest.approx(fd_sum, rel=1e-4, abs=1e-12)


def test_bit_sum_matches_scratch_flips():
    n = SMALL.n_values[0]
    a, b = SMALL.endpoints(n)
    params = SMALL.phi_params(n)
    for rep in range(2):
        s = E.derivative_sample(SMALL, n, rep)
        env = SMALL.environment(n, rep)
        t0 = G.passage_value(G.t_double_prime_view(env, params), a, b)
        total = 0.0
        flips = 0
        for bid, box in enumerate(env.boxes):
            for j in range(1, int(env.depths[bid]) + 1):
                new = flip_bit(env, box, j, 1 - int(env.bits[bid, j - 1]))
                total += (G.passage_value(G.t_double_prime_view(new, params), a, b) - t0) ** 2
                flips += 1
        assert s.n_flips == flips
        assert s.bit_sum == pytest.approx(total, rel=1e-12, abs=1e-15)


def test_derivative_report():
    samples = [E.DerivativeSample(1.0, 2.0, 3, 0), E.DerivativeSample(3.0, 2.0, 3, 0)]
    r = E.derivative_report(samples)
    assert (r.grad_mean, r.bit_mean, r.bit_stderr, r.count) == (2.0, 2.0, 0.0, 2)


# -- tails and equality -----------------------------------------------------------------

def test_tail_fit_constant_and_kappa():
    r = E.tail_fit(np.full(1000, 5.0), 8.0, 2, 1.5, c1=1.0)
    assert r.kappa == 1.0 and r.p999 == 5.0 and not r.exceeds and r.c2 == 0.0
    assert E.tail_fit(np.full(1000, 5.0), 8.0, 2, 3.0).kappa == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        E.tail_fit(np.ones(10), 8.0, 2, 2.0)


def test_tail_fit_recovers_exponential_rate():
    x = np.random.default_rng(0).exponential(0.5, size=20_000)
    r = E.tail_fit(x, 8.0, 2, 2.0)
    assert r.c2 == pytest.approx(2.0, rel=0.05)


def test_tail_envelope_calibrated_at_smallest_n_covers_larger_n():
    cfg = E.ExperimentConfig(replicates=1000, seed=2)
    c1 = None
    for n in (8.0, 16.0, 32.0):
        xs = [E.variance_sample(cfg, "T_PP", n, r) for r in range(cfg.replicates)]
        rep = E.tail_fit(xs, n, 2, 2.0, c1)
        c1 = rep.c1
        assert not rep.exceeds


def test_equality_when_thinning_and_cutoff_inactive():
    # a far finer cell than any point spacing and a cutoff above every hop
    cfg = E.ExperimentConfig(n_values=(8.0,), replicates=20, epsilon=1 / 3**15, h0=1e6, h1=1e6)
    assert E.equality_rate(cfg, 8.0) == 1.0
