from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from efpp import rng
from efpp.geometry import GridSpec
from efpp.point_process import (TAPE_CAP, Environment, ThinningSpec, Window, bits_for_count,
                                decode_many, decode_poisson_count, decode_with_depth,
                                environment_from_points, export_snapshot, flip_bit, import_snapshot,
                                leading_ones, resample_box, sample_environment, tape_points,
                                thin_indices, thin_to_Qn)

G2 = GridSpec(2)
POISSON_CDF = np.cumsum([math.exp(-1) / math.factorial(k) for k in range(64)])


def _pad(prefix, n=16):
    return list(prefix) + [0] * (n - len(prefix))


@pytest.mark.parametrize("prefix, want", [((0, 0), 0), ((1, 0, 0), 1), ((1, 1, 1, 0, 0), 2)])
def test_decode_examples(prefix, want):
    assert decode_poisson_count(_pad(prefix)) == want


def test_decode_needs_enough_bits():
    with pytest.raises(ValueError):
        decode_poisson_count([1])


def _float_decode(bits):
    # count k with D(k-1) < t <= D(k) for every t in the dyadic interval of the prefix
    t = sum(b * 2.0 ** -(i + 1) for i, b in enumerate(bits))
    return int(np.searchsorted(POISSON_CDF, t, side="left"))


@settings(max_examples=300)
@given(st.lists(st.integers(0, 1), min_size=TAPE_CAP, max_size=TAPE_CAP))
def test_decode_matches_cdf_inversion(bits):
    k, depth = decode_with_depth(bits)
    assert k == _float_decode(bits[:60])
    # the count is already fixed by the first ``depth`` bits
    for tail in (0, 1):
        assert decode_with_depth(bits[:depth] + [tail] * (TAPE_CAP - depth))[0] == k


def test_decode_many_matches_scalar_decoder():
    gen = np.random.default_rng(0)
    bits = gen.integers(0, 2, size=(3000, TAPE_CAP)).astype(np.uint8)
    # rows sharing a long prefix with a CDF value exercise the exact fallback
    for k in range(8):
        bits[k] = bits_for_count(k)
        num = int(POISSON_CDF[k] * 2**50)
        bits[8 + k, :50] = [(num >> (49 - i)) & 1 for i in range(50)]
    counts, depths = decode_many(bits)
    for i in range(len(bits)):
        assert (counts[i], depths[i]) == decode_with_depth(bits[i].tolist())


@pytest.mark.parametrize("k", range(12))
def test_bits_for_count_roundtrip(k):
    assert decode_poisson_count(bits_for_count(k)) == k


@pytest.mark.parametrize("bits, want", [((0, 0, 0), 0), ((1, 1, 0, 1), 2), ((1, 1, 1), 3)])
def test_leading_ones(bits, want):
    assert leading_ones(bits) == want


def test_sample_environment_mean_count():
    w = Window((0, 0), (19, 19))
    totals = np.array([sample_environment(G2, w, 7, r).total_count() for r in range(1000)])
    # rate one: mean 400, per-window sd 20
    assert abs(totals.mean() - 400) <= 3 * 20 / math.sqrt(1000)


def test_sample_environment_deterministic():
    w = Window((-3, -2), (4, 2))
    assert sample_environment(G2, w, 11, 5) == sample_environment(G2, w, 11, 5)
    assert sample_environment(G2, w, 11, 5) != sample_environment(G2, w, 11, 6)


def test_disjoint_box_counts_uncorrelated():
    boxes = np.array([[0, 0], [3, 1]])
    c = np.array([decode_many(rng.bit_tapes(3, r, boxes))[0] for r in range(20_000)])
    r = np.corrcoef(c[:, 0], c[:, 1])[0, 1]
    assert abs(r) <= 3 / math.sqrt(len(c))


def test_points_lie_in_their_boxes():
    env = sample_environment(G2, Window((-4, -4), (4, 4)), 1, 0)
    for b, box in enumerate(env.boxes):
        pts = env.points[env.ptr[b]:env.ptr[b + 1]]
        assert len(pts) == env.counts[b]
        assert np.all(np.abs(pts - box) <= 0.5)


def test_thinning_keeps_leftmost_in_cell():
    spec = ThinningSpec(1.0, 0.0)
    pts = np.array([[0.2, 0.01], [0.1, 0.02], [0.9, 0.9]])
    assert list(thin_indices(pts, spec)) == [1, 2]


def test_thinning_distinct_cells_is_identity():
    spec = ThinningSpec(1.0 / 33.0, 0.0)
    pts = np.array([[0.0, 0.0], [0.5, 0.5], [1.0, -1.0]])
    assert list(thin_indices(pts, spec)) == [0, 1, 2]


@settings(max_examples=100)
@given(st.integers(0, 2**32), st.integers(2, 40))
def test_thinning_identity_when_points_far_apart(seed, m):
    gen = np.random.default_rng(seed)
    pts = gen.uniform(-3, 3, size=(m, 2))
    spec = ThinningSpec(1.0 / 33.0, 1.0)
    dmin = min(np.linalg.norm(p - q) for i, p in enumerate(pts) for q in pts[i + 1:])
    kept = thin_indices(pts, spec)
    if dmin > spec.cell * math.sqrt(2):
        assert len(kept) == m
    # survivors always occupy distinct cells and every cell keeps its left-most point
    cells = np.floor(pts * spec.inverse_cell + 0.5).astype(int)
    assert len({tuple(c) for c in cells[kept]}) == len(kept) == len({tuple(c) for c in cells})
    for i in kept:
        same = np.all(cells == cells[i], axis=1)
        assert pts[i, 0] == pts[same, 0].min()


def test_thinning_spec_validation():
    with pytest.raises(ValueError):
        ThinningSpec(1.0 / 32.0, 0.0)
    assert ThinningSpec(1.0 / 33.0, 2.0).inverse_cell == 33 * 9
    assert ThinningSpec(1.0 / 33.0, 1.5).inverse_cell == 33 * 9


def test_thin_to_qn_environment():
    env = sample_environment(G2, Window((-5, -5), (5, 5)), 2, 0)
    thin = thin_to_Qn(env, ThinningSpec(1.0 / 3.0, 0.0))
    assert thin.n_points <= env.n_points
    kept = {tuple(p) for p in thin.points}
    assert kept <= {tuple(p) for p in env.points}


def _env_with_bits(rows):
    w = Window((0, 0), (len(rows) - 1, 0))
    bits = np.zeros((len(rows), TAPE_CAP), dtype=np.uint8)
    for i, r in enumerate(rows):
        bits[i, :len(r)] = r
    return Environment(G2, w, 0, 0, bits, np.zeros(len(rows), dtype=np.int64))


def test_flip_bit_examples():
    env = _env_with_bits([(0, 1)])
    assert env.p((0, 0)) == 0
    assert flip_bit(env, (0, 0), 2, 1) is env
    assert flip_bit(env, (0, 0), 1, 1).p((0, 0)) == 2
    with pytest.raises(ValueError):
        flip_bit(env, (0, 0), 0, 1)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=12, max_size=12), st.integers(1, 12))
def test_flip_bit_to_one_never_decreases_count(prefix, j):
    env = _env_with_bits([prefix])
    up = flip_bit(env, (0, 0), j, 1)
    assert up.p((0, 0)) >= env.p((0, 0))
    # flipping back restores the tape
    assert flip_bit(up, (0, 0), j, prefix[j - 1]) == env


def test_resample_box_is_local():
    env = sample_environment(G2, Window((-3, -3), (3, 3)), 4, 2)
    new = resample_box(env, (1, -2), tag=1)
    b = env.window.box_id((1, -2))
    for c in range(env.window.n_boxes):
        if c != b:
            assert np.array_equal(env.bits[c], new.bits[c])
            assert np.array_equal(env.points[env.ptr[c]:env.ptr[c + 1]], new.points[new.ptr[c]:new.ptr[c + 1]])
    with pytest.raises(ValueError):
        resample_box(env, (0, 0), tag=0)


def test_resample_matches_tape_points():
    env = sample_environment(G2, Window((-3, -3), (3, 3)), 4, 2).thinned(ThinningSpec(1 / 3, 0.0))
    boxes = env.boxes[::5]
    ptr, pts, _, _ = tape_points(env, boxes, tag=3)
    for i, box in enumerate(boxes):
        new = resample_box(env, box, tag=3)
        assert np.array_equal(new.box_points(box), pts[ptr[i]:ptr[i + 1]])


def _many_boxes(side):
    g = np.arange(-(side // 2), side - side // 2)
    return np.stack([np.repeat(g, side), np.tile(g, side)], axis=1)


def test_resampled_counts_are_poisson():
    boxes = _many_boxes(317)[:100_000]
    counts, _ = decode_many(rng.bit_tapes(9, 0, boxes, tag=1))
    observed = np.bincount(np.minimum(counts, 6), minlength=7)
    pmf = np.array([math.exp(-1) / math.factorial(k) for k in range(6)])
    expected = np.append(pmf, 1 - pmf.sum()) * len(counts)
    assert stats.chisquare(observed, expected).pvalue > 1e-3


def test_resample_tags_independent():
    boxes = _many_boxes(224)
    c1, _ = decode_many(rng.bit_tapes(9, 0, boxes, tag=1))
    c2, _ = decode_many(rng.bit_tapes(9, 0, boxes, tag=2))
    assert abs(np.corrcoef(c1, c2)[0, 1]) <= 3 / math.sqrt(len(boxes))


def test_environment_from_points():
    w = Window((0, 0), (3, 2))
    pts = np.array([[0.1, 0.2], [2.3, 1.1], [2.4, 0.9]])
    env = environment_from_points(w, pts)
    # points are stored as box corner plus offset, exact up to one rounding
    assert np.allclose(np.sort(env.points, axis=0), np.sort(pts, axis=0), rtol=0, atol=1e-15)
    assert env.p((2, 1)) == 2
    with pytest.raises(ValueError):
        environment_from_points(w, [[9.0, 0.0]])


def test_snapshot_roundtrip():
    env = sample_environment(G2, Window((-2, -1), (3, 1)), 5, 1)
    env = resample_box(env, (0, 0), tag=2).thinned(ThinningSpec(1 / 3, 0.0))
    back = import_snapshot(export_snapshot(env))
    assert back == env
    assert np.array_equal(back.tags, env.tags)
    assert export_snapshot(back) == export_snapshot(env)
    with pytest.raises(ValueError):
        import_snapshot("garbage\n")
