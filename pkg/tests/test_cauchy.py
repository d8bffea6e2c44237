import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pmp_horizon.cauchy import (
    CERTIFIED, KAPPA_FAIL, NON_CERTIFIED, build_certificate, compare_truncation, truncated_adjoint,
)
from pmp_horizon.catalog import catalog_get, catalog_names
from pmp_horizon.improper import accumulate
from pmp_horizon.ode import integrate_fundamental, integrate_state
from pmp_horizon.problem import validate

from conftest import core


def test_zero_gradient_certificate():
    cert = core("zero-gradient").cert
    assert cert.status == CERTIFIED
    assert cert.lambda0 == 1.0
    assert np.all(cert.psi.values == 0.0)


def test_decay_certificate_closed_form():
    cert = core("decay-discount").cert
    assert cert.lambda0 == pytest.approx(2 / 3, rel=1e-8)
    assert cert.psi(0.0)[0] == pytest.approx(1 / 3, rel=1e-8)
    assert cert.psi(1.0)[0] == pytest.approx(0.1226265, abs=1e-6)
    t = np.linspace(0, 20, 201)
    assert np.allclose(cert.psi(t)[:, 0], (2 / 3) * np.exp(-t) / 2, rtol=1e-6, atol=0)


def test_ss_cubic_against_tail_quadrature():
    a = core("ss-cubic")
    cert = a.cert
    c = a.spec.params["c"]
    # A = 1, x(s) = 1 - c s; oracle: lambda0 * int_t^40 3 exp(-s) x(s)^2 ds by fine Simpson
    for t in (0.0, 1.0, 5.0, 15.0):
        s = np.linspace(t, 40.0, 20_001)
        y = 3 * np.exp(-s) * (1 - c * s) ** 2
        h = s[1] - s[0]
        simpson = h / 3 * (y[0] + y[-1] + 4 * y[1:-1:2].sum() + 2 * y[2:-1:2].sum())
        assert cert.psi(t)[0] == pytest.approx(cert.lambda0 * simpson, abs=1e-5)


@pytest.mark.parametrize("name", catalog_names())
def test_certificate_invariants(name):
    a = core(name)
    cert, fund = a.cert, a.fund
    assert cert.certified
    assert 0 < cert.lambda0 <= 1
    assert abs(np.linalg.norm(cert.psi.values[0]) + cert.lambda0 - 1) <= 1e-9
    assert abs(cert.lambda0 - 1 / (1 + np.linalg.norm(cert.Lambda0))) <= 1e-9
    psiA = np.einsum("ni,nij->nj", cert.psi.values, fund.A.values)
    assert np.max(np.linalg.norm(psiA + cert.lambda0 * (cert.trace.values - cert.Lambda0), axis=-1)) <= 1e-6
    assert cert.form_gap < 1e-9
    mid = cert.psi.midpoints()
    x, u = fund.state(mid), a.spec.control_batch(mid)
    res = (cert.psi.derivative(mid) + np.einsum("ni,nij->nj", cert.psi(mid), a.spec.jacobian_batch(mid, x, u))
           + cert.lambda0 * a.spec.cost_gradient_batch(mid, x, u))
    assert np.max(np.linalg.norm(res, axis=-1)) <= 1e-4


def test_non_converged_is_non_certified():
    raw = {"state_dim": 1, "control_dim": 1, "f": ["0*x0"], "g": "x0", "control_set": [{"lo": "0", "hi": "1"}],
           "candidate": ["0"], "x0": [1.0]}
    spec = validate(raw)
    fund = integrate_fundamental(spec, integrate_state(spec, spec.x0, 40.0))
    cert = build_certificate(accumulate(spec, fund.state, fund), fund)
    assert cert.status == NON_CERTIFIED and cert.psi is None
    assert "not settled" in cert.reason


def test_ill_conditioned_is_non_certified():
    # kappa = exp(2t) exceeds the failure threshold before T = 40
    raw = {"state_dim": 2, "control_dim": 1, "f": ["x0", "-x1"], "g": "exp(-3*t)*x0",
           "control_set": [{"lo": "0", "hi": "0"}], "candidate": ["0"], "x0": [1.0, 1.0]}
    spec = validate(raw)
    with pytest.warns(RuntimeWarning):
        fund = integrate_fundamental(spec, integrate_state(spec, spec.x0, 20.0))
    assert np.max(fund.kappa) > KAPPA_FAIL
    cert = build_certificate(accumulate(spec, fund.state, fund), fund)
    assert cert.status == NON_CERTIFIED and cert.reason == "ill-conditioned fundamental matrix"


# --- truncated adjoints -----------------------------------------------------

def test_truncated_lambda_zero_vanishes():
    a = core("decay-discount")
    pt = truncated_adjoint(a.spec, a.fund.state, 10.0, 0.0)
    assert np.all(pt.values == 0.0)


def test_truncated_decay_value():
    a = core("decay-discount")
    pt = truncated_adjoint(a.spec, a.fund.state, 10.0, 2 / 3)
    assert pt(0.0)[0] == pytest.approx((2 / 3) * (1 - np.exp(-20)) / 2, abs=1e-6)
    assert pt.mesh[-1] == 10.0 and np.all(pt.values[-1] == 0.0)


def test_truncated_zero_gradient():
    a = core("zero-gradient")
    pt = truncated_adjoint(a.spec, a.fund.state, 7.0, 0.6)
    assert np.all(pt.values == 0.0)


def test_truncated_domain_errors():
    a = core("decay-discount")
    with pytest.raises(ValueError):
        truncated_adjoint(a.spec, a.fund.state, 50.0, 0.5)
    with pytest.raises(ValueError):
        truncated_adjoint(a.spec, a.fund.state, 10.0, 1.5)


@settings(max_examples=12, deadline=None)
@given(st.sampled_from(["decay-discount", "ss-cubic", "planar-rotation", "lq-riccati"]),
       st.floats(1.0, 40.0), st.floats(0.0, 1.0))
def test_truncation_identity(name, tau, lam):
    a = core(name)
    pt = truncated_adjoint(a.spec, a.fund.state, tau, lam)
    t = pt.mesh
    I = a.trace.trajectory()
    lhs = np.einsum("ni,nij->nj", pt(t), a.fund.A(t))
    rhs = lam * (I(tau) - I(t))
    assert np.max(np.linalg.norm(lhs - rhs, axis=-1)) <= 1e-6


def test_compare_truncation_zero_gradient():
    a = core("zero-gradient")
    rows, ok = compare_truncation(a.cert, a.spec, a.fund.state)
    assert ok and [r.deviation for r in rows] == [0.0] * 4


def test_compare_truncation_decay_schedule():
    a = core("decay-discount")
    rows, ok = compare_truncation(a.cert, a.spec, a.fund.state, (5.0, 10.0, 20.0))
    d = [r.deviation for r in rows]
    assert ok and d[0] > d[1] > d[2] and d[2] < 1e-8
    # sup over [0, tau/2] of lambda0 exp(t - 2 tau) / 2
    assert d[0] == pytest.approx((2 / 3) * np.exp(-7.5) / 2, rel=1e-3)


def test_compare_truncation_ss_cubic_schedule():
    a = core("ss-cubic")
    rows, ok = compare_truncation(a.cert, a.spec, a.fund.state, (5.0, 10.0, 20.0))
    d = [r.deviation for r in rows]
    assert ok and d[0] > d[1] > d[2] and d[2] <= 1e-5


def test_compare_truncation_preconditions():
    a = core("decay-discount")
    with pytest.raises(ValueError, match="increasing"):
        compare_truncation(a.cert, a.spec, a.fund.state, (10.0, 5.0))
