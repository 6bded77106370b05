import numpy as np
import pytest

from mgi import ops
from mgi.autodiff import Tensor, make_node
from mgi.gradcheck import finite_diff_check


def test_quadratic_exactness():
    theta = Tensor(np.array([2.0]), requires_grad=True)
    report = finite_diff_check(lambda: ops.tsum(ops.mul(theta, theta)), {"theta": theta})
    assert report.max_rel["theta"] < 1e-9


def test_constant_function_gives_zero_error():
    theta = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    report = finite_diff_check(lambda: ops.tsum(ops.mul(theta, 0.0)), {"theta": theta})
    assert report.max_rel["theta"] == 0.0


def test_eps_range_enforced():
    theta = Tensor(np.array([1.0]), requires_grad=True)
    with pytest.raises(ValueError):
        finite_diff_check(lambda: ops.tsum(theta), {"theta": theta}, eps=1e-2)


def test_nondeterministic_function_detected():
    theta = Tensor(np.array([1.0]), requires_grad=True)
    rng = np.random.default_rng(0)

    def f():
        return ops.tsum(ops.mul(theta, float(rng.random())))

    with pytest.raises(RuntimeError, match="not deterministic"):
        finite_diff_check(f, {"theta": theta})


def test_corrupted_backward_rule_is_flagged():
    """Negative control: a wrong derivative must exceed the tolerance."""
    x = Tensor(np.array([0.5, 1.5]), requires_grad=True)

    def broken_square(t):
        return make_node(t.data * t.data, (t,), lambda g: (g * t.data,))

    report = finite_diff_check(lambda: ops.tsum(broken_square(x)), {"x": x})
    assert report.max_rel["x"] > 1e-4


def test_coordinate_subsampling_is_deterministic():
    x = Tensor(np.arange(20.0), requires_grad=True)
    f = lambda: ops.tsum(ops.mul(x, x))
    r1 = finite_diff_check(f, {"x": x}, max_coords_per_tensor=5,
                           rng=np.random.default_rng(3))
    r2 = finite_diff_check(f, {"x": x}, max_coords_per_tensor=5,
                           rng=np.random.default_rng(3))
    assert r1.max_rel == r2.max_rel
    assert r1.checked_coords["x"] == 5
