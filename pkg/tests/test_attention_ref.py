import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from extrapattn.attention_ref import (
    AttentionProblem,
    InterventionMask,
    attend_reference,
    build_intervention_mask,
    row_dispersion_stats,
    window_region,
)
from extrapattn.decay import TEMPORAL_FRAME, TOKEN_INDEX, Constant, DecayPolicy
from extrapattn.errors import InvalidInputError, NumericError, ResourceError, ShapeError
from extrapattn.rope import GridShape
from extrapattn.synth import random_problem


def naive(Q, K, V, scale):
    S = Q @ K.T * scale
    E = np.exp(S - S.max(axis=1, keepdims=True))
    return (E / E.sum(axis=1, keepdims=True)) @ V


def test_vanilla_matches_three_matrix_formula(rng):
    prob = random_problem(rng, 50, 8)
    out = attend_reference(prob)
    np.testing.assert_allclose(out.O, naive(prob.Q, prob.K, prob.V, 1 / math.sqrt(8)), atol=1e-12, rtol=0)


def test_unit_constant_policy_is_identity(rng):
    prob = random_problem(rng, 40, 8)
    pol = DecayPolicy(Constant(1.0), 4, 40, position_mode=TOKEN_INDEX)
    np.testing.assert_array_equal(attend_reference(prob, pol).O, attend_reference(prob).O)


def test_hand_table_four_tokens():
    S = np.array([[2.0, -1.0, 3.0, 0.5], [1.0, 0.0, -2.0, 4.0], [-0.5, 2.0, 1.0, 1.0], [3.0, 1.5, -1.0, 2.0]])
    V = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [2.0, -1.0]])
    prob = AttentionProblem(np.eye(4), S.T.copy(), V, GridShape(4), scale=1.0)
    pol = DecayPolicy(Constant(0.5), 2, 4, position_mode=TOKEN_INDEX)
    out = attend_reference(prob, pol, keep_map=True)
    # independent: halve positive logits with |i - j| > 1
    expect = np.empty((4, 4))
    for i in range(4):
        row = [S[i, j] * (0.5 if abs(i - j) > 1 and S[i, j] >= 0 else 1.0) for j in range(4)]
        z = sum(math.exp(v) for v in row)
        expect[i] = [math.exp(v) / z for v in row]
    np.testing.assert_allclose(out.P, expect, atol=1e-15)
    np.testing.assert_allclose(out.O, expect @ V, atol=1e-14)
    # spot value: row 0 has logits (2, -1, 1.5, 0.25)
    z0 = math.exp(2) + math.exp(-1) + math.exp(1.5) + math.exp(0.25)
    assert out.P[0, 2] == pytest.approx(math.exp(1.5) / z0, abs=1e-15)


def test_rows_sum_to_one(rng):
    prob = random_problem(rng, 64, 16, logit_scale=3.0)
    out = attend_reference(prob, DecayPolicy(Constant(0.7), 10, 64, position_mode=TOKEN_INDEX), keep_map=True)
    assert np.all(out.P >= 0)
    np.testing.assert_allclose(out.P.sum(axis=1), 1.0, atol=1e-9)


def test_cap_and_numeric_errors(rng):
    prob = random_problem(rng, 20, 4)
    with pytest.raises(ResourceError):
        attend_reference(prob, cap=10)
    bad = random_problem(rng, 5, 4)
    bad.K[2, 1] = np.nan
    with pytest.raises(NumericError):
        attend_reference(bad)


def test_problem_validation():
    with pytest.raises(ShapeError):
        AttentionProblem(np.ones((3, 2)), np.ones((3, 2)), np.ones((2, 2)), GridShape(3))
    with pytest.raises(ShapeError):
        AttentionProblem(np.ones((3, 2)), np.ones((3, 3)), np.ones((3, 2)), GridShape(3))
    with pytest.raises(InvalidInputError):
        AttentionProblem(np.ones((3, 2)), np.ones((3, 2)), np.ones((3, 2)), GridShape(3), scale=-1.0)


def test_decay_no_effect_when_all_logits_negative(rng):
    n = 30
    Q = np.abs(rng.standard_normal((n, 4)))
    K = -np.abs(rng.standard_normal((n, 4)))
    prob = AttentionProblem(Q, K, rng.standard_normal((n, 3)), GridShape(n))
    pol = DecayPolicy(Constant(0.5), 2, n, position_mode=TOKEN_INDEX)
    np.testing.assert_array_equal(attend_reference(prob, pol).O, attend_reference(prob).O)


def test_decay_no_effect_when_all_in_window(rng):
    prob = random_problem(rng, 10, 4)
    pol = DecayPolicy(Constant(0.5), 20, 10, position_mode=TOKEN_INDEX)
    np.testing.assert_array_equal(attend_reference(prob, pol).O, attend_reference(prob).O)


def test_mask_p_zero_is_noop(rng):
    prob = random_problem(rng, 30, 4)
    m = InterventionMask("out-of-window-proportion", {"p": 0.0})
    out = attend_reference(prob, mask=m, train_window=6)
    np.testing.assert_array_equal(out.O, attend_reference(prob).O)


def test_window_only_keeps_exactly_window():
    g = GridShape(12, 2, 1)
    m = build_intervention_mask(InterventionMask("window-only"), g, train_window=6, mode=TEMPORAL_FRAME)
    ft = g.frame_of(np.arange(g.n_tokens))
    np.testing.assert_array_equal(~m, np.abs(ft[:, None] - ft[None, :]) <= 3)


def test_full_out_of_window_masking_gives_unit_mass(rng):
    prob = random_problem(rng, 20, 4)
    out = attend_reference(prob, mask=InterventionMask("out-of-window-proportion", {"p": 1.0}), train_window=6)
    assert np.all(out.row_stats.in_window_mass == 1.0)


def test_top_fraction_keeps_largest(rng):
    g = GridShape(10)
    scores = rng.standard_normal((10, 10))
    m = build_intervention_mask(InterventionMask("top-fraction", {"fraction": 1 / 3}), g, raw_scores=scores)
    k = math.ceil(10 / 3)
    for i in range(10):
        kept = set(np.flatnonzero(~m[i]))
        assert kept == set(np.argsort(scores[i])[::-1][:k])


def test_leading_and_trailing_fraction():
    g = GridShape(10)
    lead = build_intervention_mask(InterventionMask("leading-fraction", {"fraction": 0.25}), g)
    trail = build_intervention_mask(InterventionMask("trailing-fraction", {"fraction": 0.25}), g)
    np.testing.assert_array_equal(~lead[0], np.arange(10) < 3)
    np.testing.assert_array_equal(~trail[5], np.arange(10) >= 7)


def test_out_of_window_proportion_ranks_by_score():
    g = GridShape(6)
    scores = np.tile([5.0, 0.0, 0.0, 0.0, 1.0, 3.0], (6, 1))
    m = build_intervention_mask(InterventionMask("out-of-window-proportion", {"p": 0.5}), g, 2, TOKEN_INDEX, scores)
    # row 2: outside keys 0, 4, 5 (|d| > 1); round(0.5 * 3) = 2 largest are keys 0 and 5
    assert set(np.flatnonzero(m[2])) == {0, 5}
    pos = build_intervention_mask(
        InterventionMask("out-of-window-proportion", {"p": 0.5, "rank_by": "position"}), g, 2, TOKEN_INDEX, scores
    )
    # farthest keys from index 2 are 5 (d=3) then 0 (d=2) / 4 (d=2, tie to lower index)
    assert set(np.flatnonzero(pos[2])) == {5, 0}


def test_harmonic_positions_mask():
    g = GridShape(40)
    m = build_intervention_mask(InterventionMask("harmonic-positions", {"period": 11}), g)
    assert set(np.flatnonzero(m[0])) == {11, 22, 33}
    assert set(np.flatnonzero(m[20])) == {9, 31}


def test_invalid_fraction():
    with pytest.raises(InvalidInputError):
        InterventionMask("top-fraction", {"fraction": 1.5})
    with pytest.raises(InvalidInputError):
        InterventionMask("nonsense")


def test_all_masked_rows_are_flagged(rng):
    prob = random_problem(rng, 8, 4)
    out = attend_reference(prob, mask=InterventionMask("leading-fraction", {"fraction": 0.0}))
    assert np.all(out.masked_rows)
    assert np.all(out.O == 0)


def test_row_dispersion_examples(rng):
    mass, ent = row_dispersion_stats(np.full(100, 0.01), np.arange(100) < 50)
    assert mass == pytest.approx(0.5, abs=1e-12) and ent == pytest.approx(math.log(100), abs=1e-12)
    assert row_dispersion_stats(np.eye(5)[2], np.ones(5, bool))[1] == 0.0
    row = rng.dirichlet(np.ones(30))
    region = rng.random(30) < 0.5
    mass, ent = row_dispersion_stats(row, region)
    assert mass == pytest.approx(math.fsum(row[region]), abs=1e-12)
    assert ent == pytest.approx(-math.fsum(p * math.log(p) for p in row), abs=1e-12)


def test_row_stats_match_helper(rng):
    prob = random_problem(rng, 30, 4, logit_scale=2.0)
    out = attend_reference(prob, keep_map=True, train_window=10)
    region = window_region(np.arange(30), np.arange(30), prob.grid, 10)
    for i in (0, 13, 29):
        m, e = row_dispersion_stats(out.P[i], region[i])
        assert out.row_stats.in_window_mass[i] == pytest.approx(m, abs=1e-12)
        assert out.row_stats.entropy[i] == pytest.approx(e, abs=1e-12)


ALPHAS = [1.0, 0.95, 0.9, 0.8, 0.5]


@given(st.integers(0, 2**31))
def test_concentration_monotone_in_alpha(seed):
    rng = np.random.default_rng(seed)
    n = 24
    prob = random_problem(rng, n, 4, logit_scale=1.5)
    masses = []
    for a in ALPHAS:
        pol = DecayPolicy(Constant(a), 8, n, position_mode=TOKEN_INDEX)
        masses.append(attend_reference(prob, pol).row_stats.in_window_mass)
    masses = np.array(masses)
    S = prob.Q @ prob.K.T
    outside = np.abs(np.arange(n)[:, None] - np.arange(n)[None, :]) > 4
    rows = np.any(outside & (S > 0), axis=1)
    assert np.all(np.diff(masses[:, rows], axis=0) >= -1e-15)
    assert np.all(masses[-1, rows] > masses[0, rows])
