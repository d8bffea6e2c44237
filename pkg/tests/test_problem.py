import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pmp_horizon import expr as ex
from pmp_horizon.catalog import catalog_get, catalog_names, catalog_raw, riccati_gain
from pmp_horizon.problem import ProblemError, check_candidate, hamiltonian, validate


def _raw(**kw):
    raw = {"state_dim": 1, "control_dim": 1, "f": ["-x0"], "g": "x0", "control_set": [{"lo": "0", "hi": "1"}],
           "candidate": ["0.5"]}
    raw.update(kw)
    return raw


@pytest.mark.parametrize("name", catalog_names())
def test_catalog_entries_validate(name):
    spec = catalog_get(name)
    assert spec.name == name
    assert len(spec.f) == spec.state_dim
    assert len(spec.df_dx) == spec.state_dim and all(len(r) == spec.state_dim for r in spec.df_dx)
    assert len(spec.dg_dx) == spec.state_dim


def test_decay_discount_shape():
    spec = catalog_get("decay-discount", {"rho": 1})
    assert (spec.state_dim, spec.control_dim) == (1, 1)
    assert ex.evaluate(spec.g, {"t": 2.0, "x0": 3.0, "u0": 0.0, "rho": 1.0}) == pytest.approx(3 * np.exp(-2.0))


def test_decay_discount_jacobian_is_minus_one():
    spec = catalog_get("decay-discount")
    rng = np.random.default_rng(3)
    for _ in range(20):
        t, x, u = rng.uniform(0, 40), rng.uniform(-5, 5, 1), rng.uniform(-1, 1, 1)
        assert spec.jacobian(t, x, u)[0, 0] == -1.0


def test_ss_cubic_matches_example_definition():
    spec = catalog_get("ss-cubic")
    assert spec.x0.tolist() == [1.0]
    assert spec.control(3.0).tolist() == [0.1]
    assert spec.cost(0.0, [1.0], [0.1]) == pytest.approx(1.1)


def test_unknown_catalog_name():
    with pytest.raises(ProblemError, match="unknown"):
        catalog_get("nope")


def test_unknown_override():
    with pytest.raises(ProblemError, match="unknown parameter"):
        catalog_get("decay-discount", {"sigma": 2.0})


def test_riccati_gain_root():
    for a, rho in [(-0.5, 1.0), (0.3, 0.1), (0.0, 2.0)]:
        p = riccati_gain(a, rho)
        assert p > 0
        assert p * p + (rho - 2 * a) * p - 1 == pytest.approx(0.0, abs=1e-12)


def test_candidate_outside_control_set():
    with pytest.raises(ProblemError, match="candidate outside control set"):
        validate(_raw(candidate=["2"]))


def test_user_jacobian_disagreement():
    with pytest.raises(ProblemError, match="Jacobian disagreement"):
        validate(_raw(df_dx=[["0"]]))


def test_user_jacobian_agreement_accepted():
    spec = validate(_raw(df_dx=[["-1"]], dg_dx=["1"]))
    assert spec.jacobian(0.0, [1.0], [0.0])[0, 0] == -1.0


@pytest.mark.parametrize("bad, msg", [
    ({"f": ["-x0", "x0"]}, "dimension mismatch"),
    ({"control_set": [{"lo": "0", "hi": "1"}, {"lo": "0", "hi": "1"}]}, "dimension mismatch"),
    ({"x0": [0.0, 1.0]}, "dimension mismatch"),
    ({"g": "x0 + y"}, "unknown variable"),
    ({"control_set": [{"lo": "1", "hi": "0"}]}, "lo > hi"),
    ({"control_set": [{"values": []}]}, "non-empty"),
    ({"candidate": ["x0"]}, "t and parameters only"),
    ({"g": "x0 +"}, "g:"),
])
def test_validation_errors(bad, msg):
    with pytest.raises(ProblemError, match=msg):
        validate(_raw(**bad))


def test_abs_without_user_jacobian_rejected():
    with pytest.raises(ProblemError, match="cannot derive"):
        validate(_raw(g="abs(x0)"))


def test_piecewise_candidate_right_continuous():
    spec = validate(_raw(candidate={"pieces": [["0"], ["1"]], "breakpoints": [2.0]}))
    assert spec.control(1.999).tolist() == [0.0]
    assert spec.control(2.0).tolist() == [1.0]
    # piece selection by a separate time (used by integrators on a step ending at 2)
    assert spec.control(2.0, at=1.9).tolist() == [0.0]
    assert spec.control_batch(np.array([1.0, 2.0, 3.0]))[:, 0].tolist() == [0.0, 1.0, 1.0]


def test_finite_control_set():
    spec = validate(_raw(control_set=[{"values": [0, 0.5, 1]}]))
    check_candidate(spec, [0.0, 1.0])
    with pytest.raises(ProblemError):
        validate(_raw(control_set=[{"values": [0, 1]}]))


def test_time_varying_box():
    spec = validate(_raw(control_set=[{"lo": "0", "hi": "1 + t"}], candidate=["t"]))
    assert spec.control_set.bounds(2.0, spec.params) == [(0.0, 3.0)]


@pytest.mark.parametrize("name, args, want", [
    ("zero-gradient", (0.0, [0.0], [0.0], 1.0, [0.0]), 0.0),
    ("decay-discount", (0.0, [1.0], [0.0], 0.5, [2.0]), -1.5),
    ("ss-cubic", (0.0, [1.0], [0.1], 1.0, [0.0]), 1.1),
])
def test_hamiltonian_examples(name, args, want):
    assert hamiltonian(catalog_get(name), *args) == pytest.approx(want, abs=1e-15)


def test_hamiltonian_dimension_mismatch():
    with pytest.raises(ProblemError):
        hamiltonian(catalog_get("planar-rotation"), 0.0, [0.0], [0.0], 1.0, [0.0, 0.0])


_f = st.floats(-5, 5, allow_nan=False)


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(catalog_names()), st.floats(0, 20), _f, _f, _f, _f, _f, _f, _f, _f)
def test_hamiltonian_affine_in_multipliers(name, t, x0, x1, u, l1, l2, p1, p2, p3):
    spec = catalog_get(name)
    m = spec.state_dim
    x = np.array([x0, x1][:m])
    psi1 = np.array([p1, p2][:m])
    psi2 = np.array([p3, p1][:m])
    lhs = hamiltonian(spec, t, x, [u], l1 + l2, psi1 + psi2)
    rhs = hamiltonian(spec, t, x, [u], l1, psi1) + hamiltonian(spec, t, x, [u], l2, psi2)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-9)


def test_batch_evaluators_match_scalar():
    spec = catalog_get("planar-rotation")
    rng = np.random.default_rng(0)
    t = rng.uniform(0, 5, 7)
    x = rng.uniform(-1, 1, (7, 2))
    u = rng.uniform(0, 1, (7, 1))
    for i in range(7):
        assert np.allclose(spec.dynamics_batch(t, x, u)[i], spec.dynamics(t[i], x[i], u[i]), rtol=1e-15)
        assert np.allclose(spec.jacobian_batch(t, x, u)[i], spec.jacobian(t[i], x[i], u[i]), rtol=1e-15)
        assert spec.cost_batch(t, x, u)[i] == pytest.approx(spec.cost(t[i], x[i], u[i]), rel=1e-15)


def test_variational_terms_match_separate_evaluators():
    spec = catalog_get("planar-rotation", {"mu": 0.3})
    f, J, gx = spec.variational_terms(1.1, [0.2, -0.4], [0.5])
    assert np.array_equal(f, spec.dynamics(1.1, [0.2, -0.4], [0.5]))
    assert np.array_equal(J, spec.jacobian(1.1, [0.2, -0.4], [0.5]))
    assert np.array_equal(gx, spec.cost_gradient(1.1, [0.2, -0.4], [0.5]))


def test_spec_is_immutable():
    spec = catalog_get("decay-discount")
    with pytest.raises(Exception):
        spec.name = "other"
    with pytest.raises(ValueError):
        spec.x0[0] = 1.0


def test_overrides_do_not_leak():
    raw = catalog_raw("decay-discount", {"rho": 3.0})
    assert raw["params"]["rho"] == 3.0
    assert catalog_raw("decay-discount")["params"]["rho"] == 1.0
