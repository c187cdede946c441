import logging

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nudgefit.core import NudgeConfig, ObservationOperator, SystemModel, elementary_operator, matrix_operator
from nudgefit.errors import ConfigurationError, DegenerateUpdate, PermanentDegeneracy
from nudgefit.estimators import (
    EstimatorState,
    RLSNormalSystem,
    UpdateContext,
    UpdateRecord,
    contraction_report,
    rls_assemble,
    rls_solve,
    rni_plus_update,
    rni_solvable,
    rni_update,
    rni_workspace,
    schedule_and_apply,
)
from nudgefit.integrate import ObservationHistory
from nudgefit.toy import steady_states

ELEVEN_SIXTHS = 11.0 / 6.0

# exact zeros or magnitudes whose squares stay normal
entries = st.one_of(st.just(0.0), st.floats(1e-6, 10), st.floats(-10, -1e-6))


def _system(Lmat, f):
    Lmat = np.asarray(Lmat, dtype=float)
    f = np.asarray(f, dtype=float)
    K = Lmat.T @ Lmat
    ev = np.linalg.eigvalsh(K)
    cond = np.inf if ev[0] <= 4 * np.finfo(float).eps * len(ev) * ev[-1] else float(np.sqrt(ev[-1] / ev[0]))
    return RLSNormalSystem(Lmat, f, K, cond, max(ev[0], 0.0))


def _diag_model(d, F=None):
    ops = tuple(elementary_operator(d, k) for k in range(d))
    return SystemModel(d, ops, F or (lambda u: np.zeros_like(u, dtype=float)))


# -- RNI -----------------------------------------------------------------------

def test_rni_scalar_first_iterate(scalar):
    model, obs, nudge = scalar
    u, ut = steady_states(2.0, 1.0, 10.0)
    assert ut == pytest.approx(6.0 / 11.0, abs=1e-16)
    lam = rni_update(model, obs, nudge, [ut], [ut - u], [1.0])
    assert lam[0] == pytest.approx(ELEVEN_SIXTHS, abs=1e-12)


def test_rni_synchronized_is_degenerate(scalar):
    model, obs, nudge = scalar
    with pytest.raises(DegenerateUpdate):
        rni_update(model, obs, nudge, [0.5], [0.0], [1.0])


def test_rni_disjoint_operators_decouple(rng):
    model = _diag_model(2)
    obs = ObservationOperator.full(2)
    nudge = NudgeConfig(np.array([3.0, 7.0]), obs)
    ut = rng.uniform(0.5, 2.0, 2)
    w = rng.uniform(0.1, 0.3, 2)
    lam = np.array([1.0, 2.0])
    new = rni_update(model, obs, nudge, ut, w, lam)
    for k in range(2):
        scalar = lam[k] - nudge.gains[k] * w[k] ** 2 / (-ut[k] * w[k])
        assert new[k] == pytest.approx(scalar, rel=1e-14)


def test_rni_workspace_energy(rng):
    model = _diag_model(3)
    obs = ObservationOperator.full(3)
    nudge = NudgeConfig.uniform(5.0, obs)
    ws = rni_workspace(model, nudge, rng.standard_normal(3), np.zeros(3), localize=False)
    assert np.all(ws.E == 0)
    ws = rni_workspace(model, nudge, rng.standard_normal(3), rng.standard_normal(3), localize=False)
    assert np.all(ws.E > 0) and np.ptp(ws.E) == 0


def test_rni_solvable_examples():
    model = _diag_model(2)
    nudge = NudgeConfig.uniform(1.0, ObservationOperator.full(2))
    ws = rni_workspace(model, nudge, np.array([1.0, 0.0]), np.array([1.0, 1.0]))
    assert not rni_solvable(ws)
    ws = rni_workspace(model, nudge, np.array([2.0, -2.0]), np.array([1.0, 1.0]))
    assert np.allclose(np.abs(ws.Ldiag), 1.0)
    assert rni_solvable(ws)


@settings(max_examples=100, deadline=None)
@given(ut=arrays(np.float64, 4, elements=entries), w=arrays(np.float64, 4, elements=entries))
def test_rni_solvable_matches_elementwise(ut, w):
    model = _diag_model(4)
    nudge = NudgeConfig.uniform(2.0, ObservationOperator.full(4))
    ws = rni_workspace(model, nudge, ut, w)
    brute = True
    for k in range(4):
        slope = 0.5 * (-ut[k] * w[k])
        scale = 0.5 * abs(ut[k]) * abs(w[k])
        brute &= scale > 0 and abs(slope) > 1e-14 * scale
    assert rni_solvable(ws) == brute


@settings(max_examples=60, deadline=None)
@given(ut=arrays(np.float64, 3, elements=st.floats(0.5, 5)), w=arrays(np.float64, 3, elements=st.floats(0.1, 2)),
       c=st.floats(0.1, 10), mu=st.floats(0.5, 50))
def test_rni_scale_equivariance(ut, w, c, mu):
    model = _diag_model(3)
    obs = ObservationOperator.full(3)
    lam = np.ones(3)
    a = rni_workspace(model, NudgeConfig.uniform(mu, obs), ut, w)
    b = rni_workspace(model, NudgeConfig.uniform(c * mu, obs), ut, w)
    np.testing.assert_allclose(b.E, c * a.E, rtol=1e-13)
    assert np.array_equal(a.Ldiag, b.Ldiag)
    da = rni_update(model, obs, NudgeConfig.uniform(mu, obs), ut, w, lam) - lam
    db = rni_update(model, obs, NudgeConfig.uniform(c * mu, obs), ut, w, lam) - lam
    np.testing.assert_allclose(db, c * da, rtol=1e-12)


def test_rni_guard_precedes_formula():
    model = _diag_model(2)
    obs = ObservationOperator.full(2)
    with np.errstate(all="raise"), pytest.raises(DegenerateUpdate):
        rni_update(model, obs, NudgeConfig.uniform(1.0, obs), np.zeros(2), np.zeros(2), np.ones(2))


# -- RNI+ ----------------------------------------------------------------------

def test_rni_plus_reduces_when_corrections_vanish(scalar):
    # proxy lambda = 0 and a constant nonlinearity: every dropped term is zero
    model, obs, nudge = scalar
    ut, u = 0.8, 0.5
    a = rni_plus_update(model, obs, nudge, [ut], [u], [0.0])
    b = rni_update(model, obs, nudge, [ut], [ut - u], [0.0])
    assert a[0] == b[0]


def test_rni_plus_degenerate(scalar):
    model, obs, nudge = scalar
    with pytest.raises(DegenerateUpdate):
        rni_plus_update(model, obs, nudge, [0.5], [0.5], [1.0])


def test_rni_plus_symbolic_linear_system(rng):
    """Exact error dynamics on u' = -diag(lam) u: the update error is dLam * w_k / u~_k."""
    u1, u2, v1, v2, l1, l2, p1, p2, m = sp.symbols("u1 u2 v1 v2 l1 l2 p1 p2 m", real=True)
    u, ut = sp.Matrix([u1, u2]), sp.Matrix([v1, v2])
    lam, prox = [l1, l2], [p1, p2]
    du = sp.Matrix([-lam[k] * u[k] for k in range(2)])
    dut = sp.Matrix([-prox[k] * ut[k] - m * (ut[k] - u[k]) for k in range(2)])
    w = ut - u
    wdot = dut - du
    expected = []
    for k in range(2):
        # first-order relation dw_k/dt + m w_k + p_k w_k = -(p_k - l_k) u_k, solved for l_k with u ~ u~
        num = w[k] * (wdot[k] + m * w[k] + prox[k] * w[k])
        new = prox[k] - num / (-ut[k] * w[k])
        expected.append(sp.simplify(new - lam[k] - (prox[k] - lam[k]) * w[k] / ut[k]))
    assert expected == [0, 0]

    model = _diag_model(2)
    obs = ObservationOperator.full(2)
    for _ in range(5):
        vals = {u1: rng.uniform(0.5, 2), u2: rng.uniform(0.5, 2), v1: rng.uniform(0.5, 2), v2: rng.uniform(0.5, 2),
                l1: rng.uniform(0.5, 2), l2: rng.uniform(0.5, 2), p1: rng.uniform(0.5, 2), p2: rng.uniform(0.5, 2),
                m: rng.uniform(1, 20)}
        tru = np.array([vals[u1], vals[u2]])
        nud = np.array([vals[v1], vals[v2]])
        lt = np.array([vals[l1], vals[l2]])
        lp = np.array([vals[p1], vals[p2]])
        wd = np.array([float(wdot[k].subs(vals)) for k in range(2)])
        got = rni_plus_update(model, obs, NudgeConfig.uniform(vals[m], obs), nud, tru, lp, dw_obs_dt=wd)
        want = lt + (lp - lt) * (nud - tru) / nud
        np.testing.assert_allclose(got, want, rtol=1e-12)


# -- RLS -----------------------------------------------------------------------

def test_rls_scalar_first_iterate(scalar):
    model, obs, _ = scalar
    u, ut = steady_states(2.0, 1.0, 10.0)
    sys_ = rls_assemble(model, obs, [ut], [0.0])
    assert sys_.Lmat[0, 0] == pytest.approx(-6.0 / 11.0, abs=1e-16)
    assert sys_.f[0] == pytest.approx(-1.0, abs=1e-16)
    assert sys_.K[0, 0] == pytest.approx(36.0 / 121.0, abs=1e-16)
    assert rls_solve(sys_)[0] == pytest.approx(ELEVEN_SIXTHS, abs=1e-12)


def test_rls_zero_state_infinite_condition(scalar):
    model, obs, _ = scalar
    sys_ = rls_assemble(model, obs, [0.0], [0.0])
    assert np.all(sys_.Lmat == 0) and sys_.cond_estimate == np.inf
    with pytest.raises(DegenerateUpdate):
        rls_solve(sys_)


def test_rls_orthogonal_columns(rng):
    Q, _ = np.linalg.qr(rng.standard_normal((10, 3)))
    f = rng.standard_normal(10)
    sys_ = _system(Q * np.array([1.0, 2.0, 3.0]), f)
    assert np.allclose(sys_.K - np.diag(np.diag(sys_.K)), 0, atol=1e-14)
    np.testing.assert_allclose(rls_solve(_system(Q, f)), Q.T @ f, rtol=1e-12, atol=1e-14)


def test_rls_oracle_equivalence():
    rng = np.random.default_rng(7)
    for _ in range(100):
        L = rng.uniform(-1, 1, (10, 3))
        f = rng.uniform(-1, 1, 10)
        U, s, Vt = np.linalg.svd(L, full_matrices=True)
        pinv = Vt.T @ np.diag(1.0 / s) @ U[:, :3].T
        ref = pinv @ f
        got = rls_solve(_system(L, f))
        assert np.linalg.norm(got - ref) <= 1e-10 * np.linalg.norm(ref)


def test_rls_duplicate_column_degenerate():
    rng = np.random.default_rng(8)
    for _ in range(100):
        c = rng.uniform(-1, 1, 10)
        L = np.column_stack([c, c, rng.uniform(-1, 1, 10)])
        with pytest.raises(DegenerateUpdate):
            rls_solve(_system(L, rng.uniform(-1, 1, 10)))


def test_rls_duplicate_operators_via_model(rng):
    A = np.diag([1.0, 2.0, 3.0])
    model = SystemModel(3, (matrix_operator(A), matrix_operator(A)), lambda u: np.zeros(3))
    sys_ = rls_assemble(model, ObservationOperator.full(3), rng.standard_normal(3), rng.standard_normal(3))
    with pytest.raises(DegenerateUpdate):
        rls_solve(sys_)


@settings(max_examples=100, deadline=None)
@given(L=arrays(np.float64, (10, 3), elements=st.floats(-1, 1)), f=arrays(np.float64, 10, elements=st.floats(-1, 1)))
def test_rls_optimality(L, f):
    sys_ = _system(L, f)
    if not sys_.cond_estimate <= 1e4:
        return
    lam = rls_solve(sys_, cond_threshold=1e4)
    assert np.allclose(sys_.K, sys_.K.T)
    assert np.linalg.eigvalsh(sys_.K)[0] >= -1e-10 * np.linalg.norm(sys_.K)
    assert np.allclose(sys_.K, L.T @ L, rtol=1e-12, atol=1e-15)
    rhs = L.T @ f
    assert np.linalg.norm(sys_.K @ lam - rhs) <= 1e-10 * max(np.linalg.norm(rhs), 1e-300) + 1e-14
    base = np.sum((L @ lam - f) ** 2)
    for k in range(3):
        for h in (1e-6, -1e-6):
            pert = lam.copy()
            pert[k] += h
            assert np.sum((L @ pert - f) ** 2) >= base - 1e-15


# -- scheduling ------------------------------------------------------------------

def _toy_context(scalar, exact=False):
    model, obs, nudge = scalar
    u, ut = steady_states(2.0, 1.0, 10.0)
    if exact:
        ut = u
    hist = ObservationHistory(0.01)
    for i in range(4):
        hist.push(i * 0.01, [u])
    return UpdateContext(t=1.0, model=model, obs=obs, nudge=nudge, u_tilde=np.array([ut]), truth_obs=np.array([u]),
                         history=hist)


@pytest.mark.parametrize("algorithm", ["rni", "rls"])
def test_schedule_first_iterate(scalar, algorithm):
    est = EstimatorState(algorithm, [1.0], 1.0)
    schedule_and_apply(est, _toy_context(scalar))
    assert est.lambda_current[0] == pytest.approx(ELEVEN_SIXTHS, abs=1e-12)
    assert est.skip_count == 0 and len(est.history) == 1
    assert est.next_update == pytest.approx(2.0)


def test_schedule_exact_twin_never_updates(scalar):
    est = EstimatorState("rni", [2.0], 1.0)
    ctx = _toy_context(scalar, exact=True)
    for i in range(5):
        ctx.t = float(i + 1)
        schedule_and_apply(est, ctx)
    assert est.lambda_current[0] == 2.0
    assert est.skip_count == 5 and not est.history


def test_schedule_permanent_degeneracy(scalar, caplog):
    est = EstimatorState("rni", [2.0], 1.0)
    ctx = _toy_context(scalar, exact=True)
    with caplog.at_level(logging.WARNING):
        for i in range(100):
            ctx.t = float(i + 1)
            schedule_and_apply(est, ctx)
    assert any("consecutive" in r.message for r in caplog.records)
    ctx.t = 101.0
    with pytest.raises(PermanentDegeneracy) as info:
        schedule_and_apply(est, ctx)
    assert info.value.exit_code == 4
    assert info.value.dump["lambda"] == [2.0]


def test_estimator_validation():
    with pytest.raises(ConfigurationError):
        EstimatorState("newton", [1.0], 1.0)
    with pytest.raises(ConfigurationError):
        EstimatorState("rls", [1.0], 0.0)
    with pytest.raises(ConfigurationError):
        EstimatorState("rls", [1.0], 1.0, cond_threshold=0.5)


# -- diagnostics -----------------------------------------------------------------

def _records(lams):
    return [UpdateRecord(float(i + 1), np.array([v]), 1.0, 2.0) for i, v in enumerate(lams)]


def test_contraction_constant_history():
    rows = contraction_report(_records([1.5, 1.5, 1.5]), lambda_true=np.array([2.0]))
    assert all(r.ratio == 1.0 and r.delta_hat == 0.0 for r in rows[1:])


def test_contraction_geometric():
    lams = [2.0 - 0.5 ** k for k in range(1, 6)]
    rows = contraction_report(_records(lams), lambda_true=np.array([2.0]), lambda_initial=np.array([1.0]))
    assert [r.delta_hat for r in rows] == [0.5] * 5
    assert all(r.obs_error_norm >= 0 and r.inverse_norm >= 0 for r in rows)


def test_contraction_without_truth():
    rows = contraction_report(_records([1.0, 1.2]), mu_star=10.0)
    assert all(np.isnan(r.ratio) for r in rows) and rows[0].mu_star == 10.0
