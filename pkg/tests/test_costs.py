import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from netshield.costs import (BprCost, LinearCost, beckmann_potential, cost_from_dict, eval_cost,
                             linearize)


def test_linear_values():
    c = LinearCost([2.0, 3.0], [1.0, 0.5])
    assert eval_cost(c, [1.0, 2.0]).tolist() == [3.0, 6.5]
    assert beckmann_potential(c, [1.0, 2.0]) == pytest.approx(0.5 * 2 + 1 + 0.5 * 3 * 4 + 1.0)


def test_bpr_at_capacity():
    c = BprCost([10.0], [8.0], [0.15])
    assert eval_cost(c, [8.0])[0] == pytest.approx(11.5)
    assert eval_cost(c, [0.0])[0] == pytest.approx(10.0)


def test_validation():
    with pytest.raises(ValueError):
        LinearCost([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        BprCost([0.0], [1.0], [0.1])
    with pytest.raises(ValueError):
        LinearCost([1.0], [1.0]).evaluate([-1.0])
    with pytest.raises(ValueError):
        LinearCost([1.0], [1.0]).evaluate([1.0, 2.0])


@pytest.mark.parametrize("cost", [LinearCost([2.0, 7.5], [1.0, 3.0]), BprCost([3.0, 9.0], [8.0, 4.0], [0.15, 0.2])])
def test_round_trip(cost):
    back = cost_from_dict(cost.to_dict())
    x = np.array([1.5, 4.0])
    assert np.allclose(back.evaluate(x), cost.evaluate(x))


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 20.0), st.floats(1.0, 30.0), st.floats(1.0, 10.0), st.floats(0.0, 0.5))
def test_potential_integrates_cost_and_derivative_matches(x, t0, cap, alpha):
    for c in (BprCost([t0], [cap], [alpha]), LinearCost([alpha * 10], [t0])):
        ref, _ = quad(lambda s: c.evaluate([s])[0], 0.0, x)
        assert beckmann_potential(c, [x]) == pytest.approx(ref, rel=1e-9, abs=1e-9)
        h = 1e-6
        fd = (c.evaluate([x + h])[0] - c.evaluate([x])[0]) / h
        assert c.derivative(np.array([x]))[0] == pytest.approx(fd, rel=1e-4, abs=1e-4)


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.floats(0.0, 1.0))
def test_piecewise_interpolant(segments, frac):
    cost = BprCost([4.0, 9.0], [8.0, 6.0], [0.15, 0.2])
    pwl = linearize(cost, segments)
    x = frac * cost.capacity
    # interpolant of a convex increasing function lies above it, within one segment rise
    diff = pwl.evaluate(x) - cost.evaluate(x)
    assert np.all(diff >= -1e-12)
    assert np.all(diff <= pwl.error_bound + 1e-12)
    # exact at breakpoints
    for k in range(segments + 1):
        assert np.allclose(pwl.evaluate(pwl.breakpoints[:, k]), cost.evaluate(pwl.breakpoints[:, k]))
    ref = []
    for a in range(2):
        kinks = [b for b in pwl.breakpoints[a] if 0 < b < x[a]]
        f = lambda s, a=a: pwl.evaluate(np.where(np.arange(2) == a, s, 0.0))[a]  # noqa: E731
        ref.append(quad(f, 0, x[a], points=kinks or None)[0] if x[a] > 0 else 0.0)
    assert np.allclose(pwl.integral(x), ref, rtol=1e-8, atol=1e-10)
