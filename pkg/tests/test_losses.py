import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from attrloss.core import DegenerateInputError, DimensionError
from attrloss.losses import BatchFeatures, angular_softmax_loss, center_loss, chebyshev, softmax_loss

from oracles import angular_loss_loop, central_diff, rel_err, softmax_loss_loop


def batch(f, y, H=3):
    f = np.atleast_2d(np.asarray(f, float))
    return BatchFeatures(f, y, np.zeros((len(f), H)))


def random_problem(rng, M=6, K=4, C=5):
    f = rng.normal(size=(M, K))
    y = rng.integers(0, C, size=M)
    return BatchFeatures(f, y, rng.uniform(-1, 1, (M, 3))), rng.normal(size=(K, C)), rng.normal(size=C)


# --- softmax -------------------------------------------------------------------


def test_softmax_uniform_logits():
    out = softmax_loss(batch([[0.0, 0.0]], [0]), np.zeros((2, 2)), np.zeros(2))
    assert out.value == pytest.approx(math.log(2), abs=1e-15)


def test_softmax_logits_two_zero():
    oracle = math.log1p(math.exp(-2.0))
    assert oracle == pytest.approx(0.126928, abs=1e-6)
    # feature (1, 0) with W = diag(2, 0) gives logits (2, 0)
    out = softmax_loss(batch([[1.0, 0.0]], [0]), np.diag([2.0, 0.0]), np.zeros(2))
    assert out.value == pytest.approx(oracle, abs=1e-15)


def test_softmax_additive_over_samples(rng):
    b1, W, b = random_problem(rng, M=1)
    b2 = BatchFeatures(np.vstack([b1.features] * 2), np.repeat(b1.labels, 2), np.vstack([b1.attributes] * 2))
    assert softmax_loss(b2, W, b).value == pytest.approx(2 * softmax_loss(b1, W, b).value, rel=1e-15)


def test_softmax_matches_loop_oracle(rng):
    bt, W, b = random_problem(rng)
    assert softmax_loss(bt, W, b).value == pytest.approx(softmax_loss_loop(bt.features, bt.labels, W, b), rel=1e-13)


def test_softmax_translation_invariance(rng):
    bt, W, b = random_problem(rng)
    base = softmax_loss(bt, W, b)
    shifted = softmax_loss(bt, W, b + 3.7)
    assert shifted.value == pytest.approx(base.value, abs=1e-12)
    np.testing.assert_allclose(shifted.grad_features, base.grad_features, atol=1e-12, rtol=0)


def test_softmax_stable_for_huge_logits():
    out = softmax_loss(batch([[1000.0, 0.0]], [1]), np.eye(2), np.zeros(2))
    assert out.value == pytest.approx(1000.0)


def test_softmax_gradients_fd(rng):
    bt, W, b = random_problem(rng)
    out = softmax_loss(bt, W, b)
    assert rel_err(out.grad_features, central_diff(lambda f: softmax_loss(bt.with_features(f), W, b).value, bt.features)) < 1e-5
    assert rel_err(out.grad_params["W"], central_diff(lambda w: softmax_loss(bt, w, b).value, W)) < 1e-5
    assert rel_err(out.grad_params["b"], central_diff(lambda v: softmax_loss(bt, W, v).value, b)) < 1e-5


def test_softmax_shape_errors(rng):
    bt, W, b = random_problem(rng)
    with pytest.raises(DimensionError):
        softmax_loss(bt, W[:-1], b)
    with pytest.raises(DimensionError):
        softmax_loss(bt, W[:, :2], b[:2])  # labels exceed C


# --- center ------------------------------------------------------------------------


def test_center_zero_at_centers(rng):
    centers = rng.normal(size=(3, 2))
    y = np.array([0, 2, 1, 2])
    out = center_loss(batch(centers[y], y), centers)
    assert out.value == 0.0
    assert not out.grad_features.any()


def test_center_unit_vector():
    assert center_loss(batch([[1.0, 0.0]], [0]), np.zeros((1, 2))).value == 0.5


def test_center_brute_force_sum(rng):
    f = rng.normal(size=(2, 3))
    c = rng.normal(size=(2, 3))
    y = np.array([1, 0])
    oracle = sum(0.5 * sum((f[i, k] - c[y[i], k]) ** 2 for k in range(3)) for i in range(2))
    assert center_loss(batch(f, y), c).value == pytest.approx(oracle, rel=1e-14)


def test_center_update_direction(rng):
    f = rng.normal(size=(5, 2))
    y = np.array([0, 0, 2, 0, 2])
    c = rng.normal(size=(3, 2))
    delta = center_loss(batch(f, y), c).info["center_delta"]
    for j in range(3):
        members = [i for i in range(5) if y[i] == j]
        expected = sum((c[j] - f[i] for i in members), np.zeros(2)) / (1 + len(members))
        np.testing.assert_allclose(delta[j], expected, atol=1e-15)


def test_center_gradients_fd(rng):
    f = rng.normal(size=(6, 3))
    y = rng.integers(0, 4, 6)
    c = rng.normal(size=(4, 3))
    out = center_loss(batch(f, y), c)
    assert rel_err(out.grad_features, central_diff(lambda v: center_loss(batch(v, y), c).value, f)) < 1e-5
    assert rel_err(out.grad_params["centers"], central_diff(lambda v: center_loss(batch(f, y), v).value, c)) < 1e-5


@given(st.integers(0, 2**31))
@settings(max_examples=30)
def test_center_nonnegative(seed):
    r = np.random.default_rng(seed)
    f = r.normal(size=(4, 2))
    assert center_loss(batch(f, [0, 1, 0, 1]), r.normal(size=(2, 2))).value >= 0


# --- angular -----------------------------------------------------------------------


def test_chebyshev_is_cos_multiple_angle():
    theta = np.linspace(0, np.pi, 41)
    for m in range(1, 6):
        t, dt = chebyshev(m, np.cos(theta))
        np.testing.assert_allclose(t, np.cos(m * theta), atol=1e-12)
        c = np.cos(theta[1:-1])
        np.testing.assert_allclose(dt[1:-1], m * np.sin(m * theta[1:-1]) / np.sin(theta[1:-1]), atol=1e-9)


def test_angular_margin_one_equals_softmax_unit_columns(rng):
    bt, W, _ = random_problem(rng)
    Wn = W / np.linalg.norm(W, axis=0)
    a = angular_softmax_loss(bt, W, 1)
    s = softmax_loss(bt, Wn, np.zeros(W.shape[1]))
    assert a.value == pytest.approx(s.value, abs=1e-12)
    np.testing.assert_allclose(a.grad_features, s.grad_features, atol=1e-12)


def test_angular_two_class_example():
    oracle = math.log1p(math.exp(-1.0))
    assert oracle == pytest.approx(0.313262, abs=1e-6)
    for m in (1, 2, 4):
        out = angular_softmax_loss(batch([[1.0, 0.0]], [0]), np.eye(2), m)
        assert out.value == pytest.approx(oracle, abs=1e-12)


def test_angular_matches_arccos_oracle(rng):
    for m in (1, 2, 3, 4):
        bt, W, _ = random_problem(rng)
        assert angular_softmax_loss(bt, W, m).value == pytest.approx(
            angular_loss_loop(bt.features, bt.labels, W, m), rel=1e-12
        )


def test_angular_invariant_to_column_scaling(rng):
    bt, W, _ = random_problem(rng)
    scaled = W * np.array([0.3, 2.0, 7.0, 1.0, 0.01])
    assert angular_softmax_loss(bt, scaled, 3).value == pytest.approx(angular_softmax_loss(bt, W, 3).value, rel=1e-13)


def test_angular_gradients_fd(rng):
    for m in (1, 2, 4):
        bt, W, _ = random_problem(rng)
        out = angular_softmax_loss(bt, W, m)
        gf = central_diff(lambda f: angular_softmax_loss(bt.with_features(f), W, m).value, bt.features)
        gw = central_diff(lambda w: angular_softmax_loss(bt, w, m).value, W)
        assert rel_err(out.grad_features, gf) < 1e-5
        assert rel_err(out.grad_params["W"], gw) < 1e-5


def test_angular_flags_nonmonotone_region():
    # target angle 120 degrees, margin 2 -> 240 degrees > pi
    f = [[math.cos(2 * math.pi / 3), math.sin(2 * math.pi / 3)]]
    out = angular_softmax_loss(batch(f, [0]), np.eye(2), 2)
    assert out.info["beyond_pi"] == 1
    assert angular_softmax_loss(batch(f, [0]), np.eye(2), 1).info["beyond_pi"] == 0


def test_angular_degenerate_inputs():
    with pytest.raises(DegenerateInputError):
        angular_softmax_loss(batch([[0.0, 0.0]], [0]), np.eye(2), 2)
    with pytest.raises(DegenerateInputError):
        angular_softmax_loss(batch([[1.0, 0.0]], [0]), np.array([[1.0, 0.0], [0.0, 0.0]]), 2)
    with pytest.raises(ValueError):
        angular_softmax_loss(batch([[1.0, 0.0]], [0]), np.eye(2), 0)
