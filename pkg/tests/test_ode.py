import warnings

import numpy as np
import pytest
from scipy.linalg import expm

from pmp_horizon.catalog import catalog_get, catalog_raw
from pmp_horizon.ode import (
    ConditioningWarning, IntegrationError, StepSizeUnderflow, Trajectory, dense_eval, integrate_fundamental,
    integrate_state, solve, mixed_scale,
)
from pmp_horizon.problem import validate


def _with_candidate(name, u0, **params):
    raw = catalog_raw(name, params or None)
    raw["candidate"] = [u0]
    return validate(raw)


@pytest.fixture(scope="module")
def decay0():
    return _with_candidate("decay-discount", "0")


def test_zero_start_stays_zero(decay0):
    tr = integrate_state(decay0, [0.0], 40.0)
    assert np.all(tr.values == 0.0)


def test_decay_closed_form(decay0):
    tr = integrate_state(decay0, [1.0], 40.0)
    assert tr(1.0)[0] == pytest.approx(0.3678794, abs=1e-6)
    t = np.linspace(0, 40, 401)
    assert np.max(np.abs(tr(t)[:, 0] - np.exp(-t))) < 1e-6


def test_ss_cubic_linear_state():
    tr = integrate_state(catalog_get("ss-cubic"), [1.0], 40.0)
    assert tr(5.0)[0] == pytest.approx(0.5, abs=1e-12)


def test_mesh_strictly_increasing_and_covers(decay0):
    tr = integrate_state(decay0, [1.0], 40.0)
    assert tr.mesh[0] == 0.0 and tr.mesh[-1] == 40.0
    assert np.all(np.diff(tr.mesh) > 0)


def test_nodes_exact_and_c1(decay0):
    tr = integrate_state(decay0, [1.0], 10.0)
    assert np.array_equal(tr(tr.mesh), tr.values)
    assert np.array_equal(dense_eval(tr, tr.mesh[5]), tr.values[5])
    # slopes at shared nodes agree (end of one interval = start of the next)
    assert np.array_equal(tr.d_end[:-1], tr.d_start[1:])


def test_midpoints_accurate(decay0):
    tr = integrate_state(decay0, [1.0], 40.0)
    mid = tr.midpoints()
    assert np.max(np.abs(tr(mid)[:, 0] - np.exp(-mid))) < 1e-6
    assert np.max(np.abs(tr.derivative(mid)[:, 0] + np.exp(-mid))) < 1e-5


def test_outside_domain(decay0):
    tr = integrate_state(decay0, [1.0], 40.0)
    with pytest.raises(ValueError, match="outside"):
        tr(41.0)
    with pytest.raises(ValueError):
        tr(-1e-3)


def test_breakpoints_are_nodes():
    raw = catalog_raw("decay-discount")
    raw["candidate"] = {"pieces": [["1"], ["-1"], ["0.5"]], "breakpoints": [1.2345, 7.5]}
    spec = validate(raw)
    tr = integrate_state(spec, [0.0], 20.0)
    assert 1.2345 in tr.mesh and 7.5 in tr.mesh
    # exact piecewise solution: x' = -x + u with piecewise-constant u
    x1 = 1 - np.exp(-1.2345)
    assert tr(1.2345)[0] == pytest.approx(x1, abs=1e-8)
    x2 = -1 + (x1 + 1) * np.exp(-(7.5 - 1.2345))
    assert tr(7.5)[0] == pytest.approx(x2, abs=1e-8)


def test_bad_arguments(decay0):
    with pytest.raises(ValueError):
        integrate_state(decay0, [1.0], 0.0)
    with pytest.raises(ValueError):
        integrate_state(decay0, [1.0], 10.0, tol=0.0)


def test_blow_up_reported_with_time():
    raw = {"state_dim": 1, "control_dim": 1, "f": ["x0^2"], "g": "x0", "control_set": [{"lo": "0", "hi": "0"}],
           "candidate": ["0"], "x0": [1.0]}
    spec = validate(raw)
    with pytest.raises(IntegrationError) as info:
        integrate_state(spec, [1.0], 5.0)
    assert 0.9 < info.value.t <= 1.0


def test_step_size_underflow_is_integration_error():
    assert issubclass(StepSizeUnderflow, IntegrationError)


def test_order_at_least_four(decay0):
    errs, nodes = [], []
    for h in (0.5, 0.25, 0.125):
        tr = integrate_state(decay0, [1.0], 10.0, tol=1e-2, max_step=h)
        errs.append(abs(tr.values[-1, 0] - np.exp(-10.0)))
        nodes.append(len(tr.mesh) - 1)
    orders = [np.log(errs[i] / errs[i + 1]) / np.log(nodes[i + 1] / nodes[i]) for i in range(2)]
    assert min(orders) >= 4.0


@pytest.mark.parametrize("tol", [1e-6, 1e-8])
def test_halving_tol_reduces_error(decay0, tol):
    e = [abs(integrate_state(decay0, [1.0], 10.0, tol=tt).values[-1, 0] - np.exp(-10.0)) for tt in (tol, tol / 2)]
    assert e[1] < e[0]


def test_deterministic(decay0):
    a = integrate_fundamental(decay0, integrate_state(decay0, [1.0], 40.0))
    b = integrate_fundamental(decay0, integrate_state(decay0, [1.0], 40.0))
    assert np.array_equal(a.mesh, b.mesh)
    assert np.array_equal(a.A.values, b.A.values) and np.array_equal(a.B.values, b.B.values)


def test_backward_solve_returns_increasing_mesh():
    tr = solve(lambda t, y, tp: -y, 5.0, 0.0, np.array([1.0]), mixed_scale(1e-10), tol=1e-10)
    assert tr.mesh[0] == 0.0 and tr.mesh[-1] == 5.0 and np.all(np.diff(tr.mesh) > 0)
    assert tr(0.0)[0] == pytest.approx(np.exp(5.0), rel=1e-8)
    mid = tr.midpoints()
    assert np.allclose(tr(mid)[:, 0], np.exp(5.0 - mid), rtol=1e-7)


# --- fundamental pair -------------------------------------------------------

def test_decay_fundamental(decay0):
    fund = integrate_fundamental(decay0, integrate_state(decay0, [0.0], 40.0))
    assert fund.A(1.0)[0, 0] == pytest.approx(0.3678794, abs=1e-6)
    assert fund.inverse(1.0)[0, 0] == pytest.approx(np.e, rel=1e-7)


@pytest.mark.parametrize("name", ["zero-gradient", "decay-discount", "ss-cubic", "lq-riccati", "planar-rotation"])
def test_identity_at_zero_and_consistency(name):
    spec = catalog_get(name)
    fund = integrate_fundamental(spec, integrate_state(spec, spec.x0, 40.0))
    m = spec.state_dim
    assert np.array_equal(fund.A.values[0], np.eye(m))
    assert np.array_equal(fund.B.values[0], np.eye(m))
    assert np.all(fund.consistency() <= 1e-6 * fund.kappa)
    assert np.array_equal(fund.state.mesh, fund.mesh)
    assert fund.state_mismatch < 1e-6


def test_planar_rotation_against_expm():
    spec = catalog_get("planar-rotation")
    mu = spec.params["mu"]
    fund = integrate_fundamental(spec, integrate_state(spec, spec.x0, 40.0))
    J = np.array([[-mu, 1.0], [-1.0, -mu]])
    for t in (0.5, np.pi, 7.0):
        assert np.max(np.abs(fund.A(t) - expm(J * t))) < 1e-6
    Api = fund.A(np.pi)
    assert np.linalg.norm(Api, 2) == pytest.approx(np.exp(-mu * np.pi), abs=1e-6)
    assert np.allclose(Api @ fund.inverse(np.pi), np.eye(2), atol=1e-6)


def test_conditioning_warning():
    # one growing and one decaying mode: kappa(t) = exp(2t)
    raw = {"state_dim": 2, "control_dim": 1, "f": ["x0", "-x1"], "g": "exp(-2*t)*x0",
           "control_set": [{"lo": "0", "hi": "0"}], "candidate": ["0"], "x0": [1.0, 1.0]}
    spec = validate(raw)
    with pytest.warns(ConditioningWarning, match="ill-conditioned"):
        fund = integrate_fundamental(spec, integrate_state(spec, spec.x0, 12.0))
    assert fund.kappa[-1] == pytest.approx(np.exp(24.0), rel=1e-6)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        integrate_fundamental(spec, integrate_state(spec, spec.x0, 5.0))


def test_trajectory_map_and_component():
    mesh = np.array([0.0, 1.0, 2.0])
    vals = np.array([[0.0, 1.0], [1.0, 2.0], [2.0, 3.0]])
    d = np.ones((2, 2))
    tr = Trajectory(mesh, vals, d, d)
    assert tr.component(1)(0.5) == pytest.approx(1.5)
    assert np.allclose(tr.map(lambda v: 2 * v)(1.5), [3.0, 5.0])
