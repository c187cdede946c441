import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nudgefit import l96
from nudgefit.core import (
    NudgeConfig,
    ObservationOperator,
    SystemModel,
    check_linearity,
    elementary_operator,
    matrix_operator,
    observe,
    rhs_nudged,
    rhs_reference,
    state_error,
)
from nudgefit.errors import ConfigurationError

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def vectors(n):
    return arrays(np.float64, n, elements=finite)


def masks(n):
    return arrays(np.bool_, n)


# -- rhs_reference ----------------------------------------------------------

def test_scalar_steady_state(scalar):
    model, _, _ = scalar
    assert rhs_reference(model, [2.0], [0.5]) == pytest.approx([0.0], abs=0)


def test_null_dynamics():
    model = SystemModel(3, (matrix_operator(np.eye(3)),), lambda u: np.zeros(3))
    assert np.array_equal(rhs_reference(model, [0.0], np.arange(3.0)), np.zeros(3))


def test_l96_uniform_slow_state():
    params = l96.default_params()
    model, lam = l96.build_model(params, "slow:0-19")
    c = 0.7
    u = np.zeros(params.dim)
    u[: params.K] = c
    out = rhs_reference(model, lam, u)
    np.testing.assert_allclose(out[: params.K], -params.d_slow * c + params.F, rtol=0, atol=1e-14)


def test_dimension_mismatch(scalar):
    model, _, _ = scalar
    with pytest.raises(ConfigurationError):
        rhs_reference(model, [1.0, 2.0], [0.5])
    with pytest.raises(ConfigurationError):
        rhs_reference(model, [1.0], [0.5, 0.1])


# -- rhs_nudged --------------------------------------------------------------

def test_nudged_zero_innovation(scalar):
    model, obs, nudge = scalar
    u = np.array([0.3])
    assert np.array_equal(rhs_nudged(model, [1.0], u, u, nudge, obs), rhs_reference(model, [1.0], u))


def test_nudged_no_gain(scalar):
    model, obs, _ = scalar
    off = NudgeConfig.uniform(0.0, obs)
    out = rhs_nudged(model, [1.0], [0.9], [0.5], off, obs)
    assert np.array_equal(out, rhs_reference(model, [1.0], [0.9]))


def test_nudged_steady_state(scalar):
    model, obs, nudge = scalar
    # nudged steady state (1 + mu/2) / (lambda~ + mu) = 6/11
    out = rhs_nudged(model, [1.0], [6.0 / 11.0], [0.5], nudge, obs)
    assert abs(out[0]) < 1e-15


def test_negative_gain_rejected():
    obs = ObservationOperator.full(2)
    with pytest.raises(ConfigurationError):
        NudgeConfig(np.array([1.0, -1.0]), obs)


@settings(max_examples=60, deadline=None)
@given(u=vectors(240), lam=arrays(np.float64, 20, elements=st.floats(0.1, 5)))
def test_zero_innovation_identity_l96(u, lam):
    params = l96.default_params()
    model, _ = l96.build_model(params, "slow:0-19")
    obs = l96.observation_operator(params)
    nudge = NudgeConfig.uniform(50.0, obs)
    a = rhs_nudged(model, lam, u, observe(obs, u), nudge, obs)
    b = rhs_reference(model, lam, u)
    assert np.array_equal(a, b)


@settings(max_examples=30, deadline=None)
@given(u=vectors(240))
def test_rhs_deterministic(u):
    params = l96.default_params()
    model, lam = l96.build_model(params, "slow:0-19")
    assert rhs_reference(model, lam, u).tobytes() == rhs_reference(model, lam, u).tobytes()


# -- observation -------------------------------------------------------------

def test_observe_full_and_empty(rng):
    u = rng.standard_normal(7)
    assert np.array_equal(observe(ObservationOperator.full(7), u), u)
    assert np.array_equal(observe(ObservationOperator(np.zeros(7, bool)), u), np.zeros(7))


@given(m=masks(12), u=vectors(12))
def test_observe_idempotent(m, u):
    obs = ObservationOperator(m)
    once = observe(obs, u)
    assert np.array_equal(observe(obs, once), once)


@given(m=masks(12), u=vectors(12), v=vectors(12), a=finite, b=finite)
def test_observe_linear(m, u, v, a, b):
    obs = ObservationOperator(m)
    lhs = observe(obs, a * u + b * v)
    rhs = a * observe(obs, u) + b * observe(obs, v)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-9)


def test_spectral_truncation_rank():
    obs = ObservationOperator.spectral(np.arange(-5, 6), 2)
    assert obs.rank == 5 and obs.kind == "spectral-truncation"
    assert obs.rank <= obs.dim


def test_mu_min_tracks_observed_entries():
    obs = ObservationOperator.from_indices(4, [1, 3])
    nudge = NudgeConfig(np.array([0.5, 3.0, 9.0, 2.0]), obs)
    assert nudge.mu_min == 2.0
    assert nudge.gains[0] == 0.0 and nudge.gains[2] == 0.0


# -- state error --------------------------------------------------------------

def test_state_error_examples(rng):
    obs = ObservationOperator.from_indices(5, [0, 2])
    u = rng.standard_normal(5)
    assert state_error(u, u, obs).norm == 0.0
    e = state_error(u, np.zeros(5), obs)
    assert np.array_equal(e.w, u)
    assert np.array_equal(e.observed_part, observe(obs, u))


@given(m=masks(10), a=vectors(10), b=vectors(10))
def test_observed_error_contracts(m, a, b):
    e = state_error(a, b, ObservationOperator(m))
    assert e.observed_norm <= e.norm * (1 + 1e-15)


# -- linear operators ---------------------------------------------------------

@pytest.mark.parametrize("op", [elementary_operator(6, 2), matrix_operator(np.arange(36.0).reshape(6, 6))])
def test_linearity_probe(op):
    assert check_linearity(op, rng=0, trials=20) <= 1e-12 * max(1.0, np.abs(op.matrix).max() if op.matrix is not None else 1.0)


def test_l96_operators_linear():
    params = l96.default_params()
    model, _ = l96.build_model(params, "slow:0-19")
    for op in model.linear_ops:
        assert check_linearity(op, rng=1) <= 1e-12


def test_model_validation():
    with pytest.raises(ConfigurationError):
        SystemModel(2, (), lambda u: u)
    with pytest.raises(ConfigurationError):
        SystemModel(2, (elementary_operator(3, 0),), lambda u: u)
