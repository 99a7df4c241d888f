import numpy as np

from attrloss.gradcheck import CHECKS, format_table, numerical_gradient, relative_error, run_gradcheck, summarize


def test_numerical_gradient_of_quadratic():
    A = np.array([[2.0, 1.0], [1.0, 3.0]])
    x = np.array([0.5, -1.0])
    g = numerical_gradient(lambda v: 0.5 * v @ A @ v, x)
    np.testing.assert_allclose(g, A @ x, atol=1e-9)


def test_relative_error_definition():
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.5])) == 0.2


def test_all_checks_pass_small_run():
    results = run_gradcheck(seed=3, instances=10)
    rows = summarize(results)
    assert [r[0] for r in rows] == list(CHECKS)
    assert all(ok for *_, ok in rows)
    assert "FAIL" not in format_table(results)


def test_corruption_is_detected():
    rows = dict((name, ok) for name, _, _, ok in summarize(run_gradcheck(seed=0, instances=3, corrupt="attribute")))
    assert not rows["attribute"]
    assert rows["softmax"]
