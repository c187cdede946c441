import importlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nudgefit import _l96_kernels_py as py
from nudgefit import kernels, l96

cy = kernels.compiled_backend
needs_compiled = pytest.mark.skipif(cy is None, reason="compiled extension not built")


@pytest.fixture(scope="module")
def params():
    return l96.default_params()


def test_backend_selection():
    assert kernels.BACKEND_NAME in ("cython", "python")
    assert (kernels.backend is cy) == (kernels.BACKEND_NAME == "cython")


def test_pure_python_switch(monkeypatch):
    monkeypatch.setenv("NUDGEFIT_PURE_PYTHON", "1")
    mod = importlib.reload(kernels)
    try:
        assert mod.BACKEND_NAME == "python" and mod.backend is py
    finally:
        monkeypatch.delenv("NUDGEFIT_PURE_PYTHON")
        importlib.reload(kernels)


@needs_compiled
@settings(max_examples=50, deadline=None)
@given(x=arrays(np.float64, 240, elements=st.floats(-20, 20)))
def test_tendency_backends_agree(x):
    p = l96.default_params()
    a = py.l96_tendency(x, p.d_slow, p.d_fast, p.gamma, p.F)
    b = cy.l96_tendency(x, p.d_slow, p.d_fast, p.gamma, p.F)
    np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-12)


@needs_compiled
def test_coupled_rk4_backends_agree(params):
    K, J = params.K, params.J
    gains = np.zeros(params.dim)
    gains[:K] = 50.0
    out = []
    for be in (py, cy):
        t, n = l96.random_init(0), l96.random_init(1)
        rec = np.empty((100, params.dim))
        bad = be.l96_coupled_rk4(t, n, params.d_slow, params.d_fast, 0.9 * params.d_slow, params.d_fast,
                                 params.gamma, params.F, gains, 1e-3, 100, rec)
        assert bad < 0
        out.append((t, n, rec))
    for a, b in zip(out[0], out[1]):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("backend", [py] + ([cy] if cy is not None else []))
def test_coupled_rk4_reports_blowup(params, backend):
    t = np.full(params.dim, 1e200)
    n = t.copy()
    rec = np.empty((5, params.dim))
    with np.errstate(all="ignore"):
        bad = backend.l96_coupled_rk4(t, n, params.d_slow, params.d_fast, params.d_slow, params.d_fast,
                                      params.gamma, params.F, np.zeros(params.dim), 1.0, 5, rec)
    assert 0 <= bad < 5


def test_tendency_shape_check(params):
    with pytest.raises(ValueError):
        kernels.l96_tendency(np.zeros(10), params.d_slow, params.d_fast, params.gamma, params.F)
