import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from extrapattn.errors import InvalidSpecError, ShapeError
from extrapattn.rope import (
    GridShape,
    RopeSpec,
    apply_rope,
    fundamental_period,
    logit_closed_form,
    make_rope_spec,
    rotate_grid,
)

SPEC = make_rope_spec(256, 10000, 10000, 8, 4, 4)


def test_theta_10000_d4():
    spec = make_rope_spec(10000, 10000, 10000, 4, 0, 0)
    assert spec.freq_t == pytest.approx((1.0, 0.01), abs=1e-15)


def test_theta_256_ratios_are_powers_of_two():
    spec = make_rope_spec(256, 10000, 10000, 16, 0, 0)
    f = np.array(spec.freq_t)
    for i in range(8):
        assert f[i] / f[7] == pytest.approx(2.0 ** (7 - i), rel=1e-13)


def test_theta_256_period_near_804():
    spec = make_rope_spec(256, 10000, 10000, 16, 0, 0)
    # 2 pi * 256**(7/8)
    expected = 2 * math.pi * 256 ** (14 / 16)
    assert fundamental_period(spec) == pytest.approx(expected, rel=1e-13)
    assert abs(fundamental_period(spec) - 804.25) <= 0.5


@pytest.mark.parametrize("args", [(256, 1e4, 1e4, 3, 0, 0), (256, 1e4, 1e4, 4, 1, 0), (1.0, 1e4, 1e4, 4, 0, 0),
                                  (256, 0.5, 1e4, 4, 2, 0), (256, 1e4, 1e4, 0, 0, 0)])
def test_make_rope_spec_rejects(args):
    with pytest.raises(InvalidSpecError):
        make_rope_spec(*args)


def test_spec_rejects_bad_frequencies():
    with pytest.raises(InvalidSpecError):
        RopeSpec(2, 0, 0, (0.0,))
    with pytest.raises(InvalidSpecError):
        RopeSpec(2, 0, 0, (float("inf"),))
    with pytest.raises(InvalidSpecError):
        RopeSpec(4, 0, 0, (1.0,))


def test_spec_json_round_trip(tmp_path):
    again = RopeSpec.from_json(SPEC.to_json())
    assert again == SPEC
    assert set(json.loads(SPEC.to_json())) == {"d_t", "d_h", "d_w", "freq_t", "freq_h", "freq_w"}
    SPEC.save(tmp_path / "s.json")
    assert RopeSpec.load(tmp_path / "s.json") == SPEC


def test_spec_json_rejects_unknown_key():
    d = SPEC.to_dict()
    d["theta"] = 3
    with pytest.raises(InvalidSpecError):
        RopeSpec.from_dict(d)


def test_identity_at_origin(rng):
    x = rng.standard_normal(SPEC.head_dim)
    np.testing.assert_array_equal(apply_rope(x, (0, 0, 0), SPEC), x)


def test_quarter_rotation():
    spec = RopeSpec(2, 0, 0, (math.pi / 2,))
    np.testing.assert_allclose(apply_rope([1.0, 0.0], (1, 0, 0), spec), [0.0, 1.0], atol=1e-15)


def test_apply_rope_shape_error():
    with pytest.raises(ShapeError):
        apply_rope(np.ones(5), (0, 0, 0), SPEC)


def test_axes_use_their_own_coordinate():
    spec = RopeSpec(2, 2, 2, (1.0,), (0.5,), (0.25,))
    out = apply_rope([1, 0, 1, 0, 1, 0], (1, 2, 4), spec)
    np.testing.assert_allclose(out, [math.cos(1), math.sin(1)] * 3, atol=1e-15)


def test_closed_form_zero_displacement_is_dot(rng):
    q, k = rng.standard_normal((2, SPEC.head_dim))
    assert logit_closed_form(q, k, 0, 0, 0, SPEC) == pytest.approx(q @ k, abs=1e-12)


def test_closed_form_single_plane_cosine():
    spec = RopeSpec(2, 0, 0, (0.3,))
    for dt in range(-5, 6):
        assert logit_closed_form([1, 0], [1, 0], dt, 0, 0, spec) == pytest.approx(math.cos(0.3 * dt), abs=1e-15)


def test_closed_form_matches_rotation_1000_cases(rng):
    for _ in range(1000):
        q, k = rng.standard_normal((2, SPEC.head_dim))
        p = rng.integers(-50, 50, size=3)
        d = rng.integers(-50, 50, size=3)
        brute = apply_rope(q, tuple(p), SPEC) @ apply_rope(k, tuple(p + d), SPEC)
        assert abs(logit_closed_form(q, k, *d, SPEC) - brute) <= 1e-10


def test_closed_form_shape_error():
    with pytest.raises(ShapeError):
        logit_closed_form(np.ones(3), np.ones(3), 1, 0, 0, SPEC)


def test_grid_flatten_is_t_major():
    g = GridShape(4, 2, 3)
    assert g.flat(0, 0, 1) == 1
    assert g.flat(0, 1, 0) == 3
    assert g.flat(1, 0, 0) == 6
    for idx in range(g.n_tokens):
        assert g.flat(*g.unflatten(idx)) == idx
    with pytest.raises(IndexError):
        g.unflatten(g.n_tokens)


def test_rotate_grid_matches_per_token(rng):
    g = GridShape(3, 2, 2)
    X = rng.standard_normal((g.n_tokens, SPEC.head_dim))
    R = rotate_grid(X, g, SPEC)
    for idx in range(g.n_tokens):
        np.testing.assert_allclose(R[idx], apply_rope(X[idx], g.unflatten(idx), SPEC), atol=1e-14)


vec = st.lists(st.floats(-10, 10), min_size=16, max_size=16).map(np.array)
pos = st.tuples(*[st.integers(-1000, 1000)] * 3)


@given(vec, pos)
def test_rotation_is_isometry(x, p):
    assert abs(np.linalg.norm(apply_rope(x, p, SPEC)) - np.linalg.norm(x)) <= 1e-12 * max(1.0, np.linalg.norm(x))


@given(vec, vec, pos, pos, pos)
def test_relative_position_property(q, k, p1, p2, shift):
    a = apply_rope(q, p1, SPEC) @ apply_rope(k, p2, SPEC)
    s1 = tuple(np.add(p1, shift))
    s2 = tuple(np.add(p2, shift))
    b = apply_rope(q, s1, SPEC) @ apply_rope(k, s2, SPEC)
    assert abs(a - b) <= 1e-10 * max(1.0, np.linalg.norm(q) * np.linalg.norm(k))
