import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nudgefit import l96
from nudgefit.core import NudgeConfig, ObservationOperator
from nudgefit.errors import ConfigurationError, IntegrationBlowup, NotReady, StiffnessError
from nudgefit.integrate import (
    IntegratorConfig,
    ObservationHistory,
    advance_coupled,
    backward_fd,
    rk4_step,
    rk45_step,
)


def _history(f, t_end, dt, n=4):
    h = ObservationHistory(dt)
    for i in range(n - 1, -1, -1):
        t = t_end - i * dt
        h.push(t, np.array([f(t)]))
    return h


# -- rk4 -----------------------------------------------------------------------

def test_rk4_zero_rhs():
    y = np.array([1.0, -2.0])
    assert np.array_equal(rk4_step(lambda t, u: np.zeros_like(u), 0.0, y, 0.1), y)


def test_rk4_exponential():
    y = rk4_step(lambda t, u: u, 0.0, np.array([1.0]), 0.1)
    assert y[0] == pytest.approx(1.10517083, abs=1e-8)
    assert abs(y[0] - math.exp(0.1)) < 1e-7


def test_rk4_skew_norm():
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    y0 = np.array([1.0, 0.0])
    y = rk4_step(lambda t, u: A @ u, 0.0, y0, 0.01)
    assert abs(np.linalg.norm(y) - 1.0) < 1e-11


def _rk4_global_error(dt):
    y, t = np.array([1.0]), 0.0
    for _ in range(int(round(1.0 / dt))):
        y = rk4_step(lambda s, u: u, t, y, dt)
        t += dt
    return abs(y[0] - math.e)


def test_rk4_order():
    ratio = _rk4_global_error(0.1) / _rk4_global_error(0.05)
    assert 16 * 0.7 <= ratio <= 16 * 1.3


def test_rk4_nan_raises():
    with pytest.raises(IntegrationBlowup) as info:
        rk4_step(lambda t, u: u * np.nan, 2.5, np.array([1.0]), 0.1)
    assert info.value.t == 2.5


# -- rk45 ----------------------------------------------------------------------

def test_rk45_zero_rhs_grows_step():
    y, dt_next, t_next = rk45_step(lambda t, u: np.zeros_like(u), 0.0, np.array([1.0]), 0.1)
    assert t_next == pytest.approx(0.1)
    assert dt_next == pytest.approx(1.0)


def test_rk45_rejects_stiff_step():
    y, dt_next, t_next = rk45_step(lambda t, u: -1000.0 * u, 0.0, np.array([1.0]), 1.0)
    assert t_next < 1.0
    assert abs(y[0]) <= 1.0


def test_rk45_exponential_global_error():
    y, t, h = np.array([1.0]), 0.0, 0.1
    while t < 1.0 - 1e-15:
        y, h, t = rk45_step(lambda s, u: u, t, y, min(h, 1.0 - t), rel_tol=1e-9, abs_tol=1e-11)
    assert abs(y[0] - math.e) < 1e-7


def test_rk45_underflow():
    def rhs(t, u):
        return np.array([1e300 * u[0] ** 2])

    with np.errstate(all="ignore"), pytest.raises((StiffnessError, IntegrationBlowup)):
        rk45_step(rhs, 0.0, np.array([1e10]), 1.0)


# -- backward differences ------------------------------------------------------

def test_fd_linear_exact():
    assert backward_fd(_history(lambda t: t, 1.3, 0.07), 1)[0] == pytest.approx(1.0, abs=1e-12)


def test_fd_quadratic_example():
    h = ObservationHistory(0.1)
    for t in (0.8, 0.9, 1.0):
        h.push(t, np.array([t * t]))
    assert backward_fd(h, 2)[0] == pytest.approx(2.0, abs=1e-12)


def test_fd_cubic_example():
    h = ObservationHistory(1.0)
    for t in (0.0, 1.0, 2.0, 3.0):
        h.push(t, np.array([t ** 3]))
    assert backward_fd(h, 3)[0] == pytest.approx(27.0, abs=1e-12)


@pytest.mark.parametrize("order", [1, 2, 3])
@settings(max_examples=40, deadline=None)
@given(coef=st.lists(st.floats(-10, 10), min_size=4, max_size=4),
       t_end=st.floats(-5, 5), dt=st.floats(0.01, 0.5))
def test_fd_exact_on_polynomials(order, coef, t_end, dt):
    c = coef[: order + 1]
    p = np.polynomial.Polynomial(c)
    got = backward_fd(_history(p, t_end, dt), order)[0]
    assert got == pytest.approx(p.deriv()(t_end), abs=1e-12 * max(1.0, sum(abs(x) for x in c)) / dt * 100)


@pytest.mark.parametrize("order", [1, 2, 3])
def test_fd_convergence_order(order):
    errs = []
    for dt in (0.02, 0.01):
        errs.append(abs(backward_fd(_history(np.sin, 1.0, dt), order)[0] - math.cos(1.0)))
    ratio = errs[0] / errs[1]
    assert 2 ** order * 0.7 <= ratio <= 2 ** order * 1.3


def test_fd_not_ready():
    h = ObservationHistory(0.1)
    h.push(0.0, np.zeros(2))
    h.push(0.1, np.zeros(2))
    with pytest.raises(NotReady):
        backward_fd(h, 2)


def test_history_rejects_uneven_spacing():
    h = ObservationHistory(0.1)
    h.push(0.0, [1.0])
    with pytest.raises(ConfigurationError):
        h.push(0.25, [1.0])


# -- coupled integration --------------------------------------------------------

def test_scalar_nudged_steady_state(scalar):
    model, obs, nudge = scalar
    truth, nudged, _ = advance_coupled(model, model, [2.0], [1.0], ([0.5], [0.0]), nudge, obs, (0.0, 5.0),
                                       IntegratorConfig(dt=1e-2))
    assert abs(nudged[0] - 6.0 / 11.0) < 1e-10
    assert truth[0] == pytest.approx(0.5, abs=1e-15)


@pytest.mark.parametrize("use_kernel", [True, False])
def test_exact_twin_l96(use_kernel):
    params = l96.default_params()
    model, lam = l96.build_model(params, "slow:0-19")
    obs = l96.observation_operator(params)
    u0 = l96.random_init(3)
    truth, nudged, _ = advance_coupled(model, model, lam, lam, (u0, u0.copy()), NudgeConfig.uniform(50.0, obs), obs,
                                       (0.0, 1.0), IntegratorConfig(dt=1e-3, use_kernel=use_kernel))
    assert np.array_equal(truth, nudged)


def test_exact_twin_l96_ten_time_units():
    params = l96.default_params()
    model, lam = l96.build_model(params, "slow:0-19")
    obs = l96.observation_operator(params)
    u0 = l96.random_init(4)
    truth, nudged, _ = advance_coupled(model, model, lam, lam, (u0, u0.copy()), NudgeConfig.uniform(50.0, obs), obs,
                                       (0.0, 10.0), IntegratorConfig(dt=1e-3))
    assert np.linalg.norm(truth - nudged) < 1e-12


def test_kernel_matches_generic_path():
    params = l96.default_params()
    model, lam = l96.build_model(params, "slow:0-19")
    obs = l96.observation_operator(params)
    nudge = NudgeConfig.uniform(50.0, obs)
    states = (l96.random_init(0), l96.random_init(1))
    a = advance_coupled(model, model, lam, 0.9 * lam, states, nudge, obs, (0.0, 0.5), IntegratorConfig(dt=1e-3))
    b = advance_coupled(model, model, lam, 0.9 * lam, states, nudge, obs, (0.0, 0.5),
                        IntegratorConfig(dt=1e-3, use_kernel=False))
    np.testing.assert_allclose(a[0], b[0], rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(a[1], b[1], rtol=1e-12, atol=1e-12)


def test_no_sync_without_nudging():
    # start both copies on the attractor so the initial transient does not shrink the gap
    params = l96.default_params()
    model, lam = l96.build_model(params, "slow:0-19")
    obs = l96.observation_operator(params)
    off = NudgeConfig.uniform(0.0, obs)
    cfg = IntegratorConfig(dt=1e-3)
    u, v, _ = advance_coupled(model, model, lam, lam, (l96.random_init(0), l96.random_init(1)), off, obs,
                              (0.0, 20.0), cfg)
    e0 = np.linalg.norm(u - v)
    for k in range(5):
        u, v, _ = advance_coupled(model, model, lam, lam, (u, v), off, obs, (k, k + 1.0), cfg)
        assert np.linalg.norm(u - v) > 0.5 * e0


def test_adaptive_history_uniform(scalar):
    model, obs, nudge = scalar
    cfg = IntegratorConfig(scheme="rk45-adaptive", dt=0.05, dt_obs=0.01)
    _, _, hist = advance_coupled(model, model, [2.0], [1.0], ([1.0], [0.0]), nudge, obs, (0.0, 1.0), cfg)
    times = np.array(hist.times)
    np.testing.assert_allclose(np.diff(times), 0.01, rtol=0, atol=1e-12)
    assert times[-1] == pytest.approx(1.0)
    # samples follow the exact truth u = 1/2 + e^{-2t}/2
    t, val = hist.latest
    assert val[0] == pytest.approx(0.5 + 0.5 * math.exp(-2 * t), rel=1e-8)


def test_bad_span():
    model = l96.build_model(l96.default_params(), "slow:0")[0]
    obs = ObservationOperator.full(model.dim)
    with pytest.raises(ConfigurationError):
        advance_coupled(model, model, [1.0], [1.0], (np.zeros(240), np.zeros(240)),
                        NudgeConfig.uniform(1.0, obs), obs, (1.0, 0.0))
