import math

import numpy as np
import pytest

from gridform.integrate import NumericalDivergence, check_divergence, rk4_step


def test_fixed_point_stays_fixed():
    def f(t, y):
        return np.array([y[1] - 1.0, 1.0 - y[1]]) * 0.0

    y0 = np.array([0.3, 1.0])
    y1 = rk4_step(f, 0.0, y0, 1e-4)
    assert np.allclose(y1, y0, atol=1e-9, rtol=0)


def test_first_order_filter_local_error_order():
    # x' = (u - x)/tau against the analytic exponential
    tau, u, x0 = 0.01, 1.0, 0.0

    def f(t, y):
        return (u - y) / tau

    def exact(dt):
        return u + (x0 - u) * math.exp(-dt / tau)

    for dt in (1e-3, 5e-4, 2.5e-4):
        num = rk4_step(lambda t, y: f(t, y), 0.0, np.array([x0]), dt)[0]
        err = abs(num - exact(dt))
        # local error of RK4 is (dt/tau)^5/120 * |u - x0| to leading order
        assert err < (dt / tau) ** 5 / 60.0


def test_rk4_global_convergence_order():
    tau, u = 0.02, 1.0

    def f(t, y):
        return (u - y) / tau

    def run(dt):
        y = np.array([0.0])
        t = 0.0
        while t < 0.1 - 1e-12:
            y = rk4_step(f, t, y, dt)
            t += dt
        return y[0]

    exact = u * (1 - math.exp(-0.1 / tau))
    e1 = abs(run(1e-3) - exact)
    e2 = abs(run(5e-4) - exact)
    ratio = e1 / e2
    assert 10.0 < ratio < 40.0  # ~16 for a 4th-order method


def test_divergence_guard():
    check_divergence(np.array([1e5, -2.0]), 0.0)
    with pytest.raises(NumericalDivergence):
        check_divergence(np.array([2e6]), 1.5)
    with pytest.raises(NumericalDivergence):
        check_divergence(np.array([np.nan]), 0.1)


def test_bit_identical_repeatability():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((4, 4))

    def f(t, y):
        return a @ y - y * y

    y0 = rng.standard_normal(4)
    r1 = rk4_step(f, 0.0, y0.copy(), 1e-3)
    r2 = rk4_step(f, 0.0, y0.copy(), 1e-3)
    assert (r1 == r2).all()
