import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cornerflow import config as cfgmod
from cornerflow import geodesic_flow as gf
from cornerflow import metric_core as mc
from cornerflow import suites
from cornerflow import verification as vf
from cornerflow.errors import ConfigError, DomainError, PreconditionError


# ---------------------------------------------------------------- oracle


def test_oracle_right_angle_circle():
    t = np.linspace(0.0, 20.0, 81)
    out = vf.hyperbolic_oracle(0.0, [1.0, 0.4, 0.0], t)
    assert out["theta0"] == pytest.approx(math.pi / 2)
    np.testing.assert_allclose(out["polar"][:, 0], 2 * np.arctan(np.exp(-t)), rtol=1e-15)
    assert np.all(out["polar"][:, 1] == 0.4)
    np.testing.assert_allclose(out["polar"][:, 2], 1.0, rtol=1e-15)
    # Cartesian samples stay on the circle r^2 + y^2 = 1
    c = out["cartesian"]
    np.testing.assert_allclose(c[:, 0] ** 2 + c[:, 2] ** 2, 1.0, rtol=1e-14)


def test_oracle_tilted_angle():
    out = vf.hyperbolic_oracle(1.0, [0.5, 0.0, 0.5], [0.0])
    assert out["theta0"] == pytest.approx(math.pi / 4, abs=1e-15)


@pytest.mark.parametrize("alpha", [-1.5, 0.0, 0.7])
def test_oracle_start_is_exact(alpha):
    q = [0.8, -0.3, 0.8 * alpha]
    out = vf.hyperbolic_oracle(alpha, q, 0.0)
    np.testing.assert_allclose(out["cartesian"][0], q, atol=1e-15)


def test_oracle_rejects_points_off_the_plane():
    with pytest.raises(PreconditionError):
        vf.hyperbolic_oracle(1.0, [1.0, 0.0, 0.0], [0.0])
    with pytest.raises(PreconditionError):
        vf.hyperbolic_oracle(0.0, [0.0, 0.0, 1.0], [0.0])


@pytest.mark.parametrize("theta0", [math.pi / 4, math.pi / 2, 2 * math.pi / 3])
def test_integrated_model_matches_oracle(hyp2, theta0):
    Q = gf.BoundaryQ.constant(theta0)
    ts = np.linspace(0.0, 20.0, 201)
    tr = gf.integrate(hyp2, gf.initial_states(hyp2, Q, [0.2], 1.5), t_end=20.0, theta_min=1e-12, t_eval=ts)
    r0, y0 = mc.cartesian_from_polar(theta0, 1.5)
    ref = vf.hyperbolic_oracle(y0 / r0, [r0, 0.2, y0], ts)["polar"]
    assert np.max(np.abs(tr.states[:, :3] - ref)) <= 1e-8


@pytest.mark.parametrize("theta0", [0.6, 1.0, 2.4])
def test_geodesic_closed_form_matches_flow(hyp2, theta0):
    # a graph boundary gives normals that also move in x
    Q = gf.BoundaryQ.graph(theta0, 2, angle_amp=0.2, rho_slope=0.1, mixed=0.1)
    q = Q.point([0.3], 0.7)
    v = gf.unit_normal(hyp2, Q, q)
    ts = np.linspace(0.0, 4.0, 17)
    tr = gf.integrate(hyp2, gf.initial_state(hyp2, Q, q), t_end=4.0, t_eval=ts)
    ref = vf.hyperbolic_geodesic(q, v, ts)
    assert np.max(np.abs(tr.states[:, :3] - ref)) <= 1e-7


# ---------------------------------------------------------------- weighted trig


def test_weighted_trig_reduces_to_hyperbolic():
    t = np.linspace(-3, 3, 13)
    c, s = vf.weighted_trig(1.0, t)
    np.testing.assert_allclose(c, np.cosh(t), rtol=1e-15)
    np.testing.assert_allclose(s, np.sinh(t), rtol=1e-13, atol=1e-15)


def test_weighted_trig_eta_zero():
    c, s = vf.weighted_trig(0.0, 1.3)
    assert c == s == pytest.approx(0.5 * math.exp(1.3), rel=1e-15)


def test_weighted_trig_identity_example():
    c, s = vf.weighted_trig(3.0, 2.0)
    assert c * c - s * s == pytest.approx(3.0, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 10.0), st.floats(-5.0, 5.0))
def test_weighted_trig_identity(eta, t):
    c, s = vf.weighted_trig(eta, t)
    assert abs(c * c - s * s - eta) <= 1e-12 * max(1.0, c * c)


# ---------------------------------------------------------------- comparison


def test_jacobi_floor_model_parameters():
    A, B, eta = vf.jacobi_floor(0.0, 1.0)
    assert (A, B, eta) == (0.5, 0.5, 1.0)
    with pytest.raises(DomainError):
        vf.jacobi_floor(1.0, 1.0)


def test_envelope_right_angle_is_sinh():
    env = vf.comparison_envelope(math.pi / 2, -1.0, 0.0)
    t = np.linspace(0.0, 10.0, 21)
    np.testing.assert_allclose(env.f_minus(t), np.sinh(t), rtol=1e-14, atol=1e-15)
    np.testing.assert_allclose(env.f_plus(t), np.sinh(t), rtol=1e-14, atol=1e-15)
    np.testing.assert_allclose(env.fdot_minus(t), np.cosh(t), rtol=1e-14)


def test_envelope_rejects_nonpositive_leading_coefficient():
    with pytest.raises(DomainError):
        vf.comparison_envelope(3.1, -0.5, 0.0)


def test_sandwich_right_angle_equality(hyp2):
    Q = gf.BoundaryQ.constant(math.pi / 2)
    ts = np.linspace(0.0, 20.0, 201)
    tr = gf.integrate(hyp2, gf.initial_state(hyp2, Q, [math.pi / 2, 0.0, 1.0]), t_end=20.0,
                      theta_min=1e-12, t_eval=ts)
    env, rep = vf.sandwich_check(hyp2, tr)
    assert rep["pass"]
    assert rep["delta"] < 1e-5
    cot = 1 / np.tan(tr.theta)
    assert np.max(np.abs(cot - np.sinh(ts)) / np.maximum(1.0, np.sinh(ts))) <= 1e-8
    # growth floor 1 + w^2 >= C^-2 e^{2t}
    C = rep["growth_C"]
    assert np.all((1 + cot**2) >= np.exp(2 * ts) / C**2 * (1 - 1e-8))


def test_sandwich_perturbed_small_rho(pert2):
    Q = gf.BoundaryQ.graph(1.2, 2, angle_amp=0.1, rho_slope=0.2, mixed=0.1)
    tr = gf.integrate(pert2, gf.initial_states(pert2, Q, [0.3], 0.05), t_end=20.0, theta_min=1e-12)
    env, rep = vf.sandwich_check(pert2, tr)
    assert rep["pass"]
    assert env.a_minus > 0 and env.a_plus > 0
    assert rep["delta"] > 0


# ---------------------------------------------------------------- rate fits


@pytest.mark.parametrize("power", [1.0, 2.0])
def test_rate_fit_synthetic_slopes(power):
    s = np.array([0.2, 0.1, 0.05, 0.025])
    fit = vf.rate_fit(s, 3.0 * s**power, power - 0.1)
    assert fit.slope == pytest.approx(power, abs=1e-6)
    assert fit.passed and fit.r2 == pytest.approx(1.0)


def test_rate_fit_exact_branch():
    fit = vf.rate_fit([0.4, 0.2, 0.1, 0.05], [1e-16] * 4, 1.0)
    assert fit.exact and fit.passed


def test_rate_fit_slope_window():
    s = np.array([0.2, 0.1, 0.05, 0.025])
    assert not vf.rate_fit(s, s**3, 1.7, max_slope=2.3).passed


@pytest.mark.parametrize(
    "scales, residuals, err",
    [
        ([0.2, 0.1, 0.05], [1.0, 0.5, 0.25], PreconditionError),
        ([0.1, 0.2, 0.3, 0.4], [1.0, 1.0, 1.0, 1.0], PreconditionError),
        ([0.4, 0.2, 0.1, 0.05], [1.0, -1.0, 0.5, 0.2], DomainError),
    ],
)
def test_rate_fit_errors(scales, residuals, err):
    with pytest.raises(err):
        vf.rate_fit(scales, residuals, 1.0)


# ---------------------------------------------------------------- config


def test_config_defaults_and_presets():
    cfg = cfgmod.load_config()
    assert cfg.metric["family"] == "perturbed" and cfg.seed == 0
    hyp = cfgmod.load_config(preset="hyperbolic-full")
    assert hyp.metric["family"] == "hyperbolic" and hyp.boundary["kind"] == "constant"
    assert cfgmod.load_config(preset="perturbed-rates").suites == ("rates",)


@pytest.mark.parametrize(
    "text, where",
    [
        ("metric: [1,\n", "line 2"),
        ("metric:\n  family: hyperbolic\n  n: 2.5\n", "line 3, column 6"),
        ("tol: 1.0\n", "line 1, column 6"),
        ("windows:\n  x: [1.0, -1.0]\n", "line 2"),
        ("windows:\n  rho: [0.1, 0.5]\n", "line 2"),
        ("suites: [metric, nope]\n", "line 1"),
        ("colour: red\n", "line 1"),
        ("preset: nope\n", "line 1"),
        ("boundary: {kind: graph, theta0: 4.0}\n", "line 1"),
    ],
)
def test_config_errors_carry_positions(text, where):
    with pytest.raises(ConfigError, match=where):
        cfgmod.parse_config(text)


def test_config_overrides():
    cfg = cfgmod.parse_config("seed: 3\ntol: 1.0e-9\n").with_overrides(seed=5, tol=None)
    assert cfg.seed == 5 and cfg.tol == 1e-9


def test_config_builds_objects():
    cfg = cfgmod.parse_config("boundary: {kind: constant, theta0: 1.0}\nmetric: {n: 3}\n")
    m, Q = cfg.build_metric(), cfg.build_boundary()
    assert m.n == 3 and Q.n == 3
    assert float(Q.psi(np.zeros(2), 0.3)) == 1.0


# ---------------------------------------------------------------- suite runner


def test_empty_suite_list():
    rep = vf.run_suite(cfgmod.parse_config("suites: []\n"))
    assert rep["checks"] == [] and rep["pass"]
    assert rep["report_version"] == 1


@pytest.fixture(scope="module")
def hyperbolic_report():
    return vf.run_suite("hyperbolic-full")


def test_hyperbolic_full_passes(hyperbolic_report):
    failed = [c["anchor"] for c in hyperbolic_report["checks"] if not c["pass"]]
    assert failed == []


def test_report_is_complete(hyperbolic_report):
    anchors = [c["anchor"] for c in hyperbolic_report["checks"]]
    registry = [a for items in suites.INVARIANTS.values() for a, _ in items]
    assert anchors == registry
    assert len(set(anchors)) == len(anchors)
    keys = {"suite", "claim", "anchor", "measured", "target", "pass"}
    assert all(keys <= set(c) for c in hyperbolic_report["checks"])


def test_report_is_deterministic(hyperbolic_report, monkeypatch):
    monkeypatch.setenv("CORNERFLOW_THREADS", "3")
    again = vf.run_suite("hyperbolic-full")
    assert vf.report_json(again) == vf.report_json(hyperbolic_report)


def test_report_json_round_trips(hyperbolic_report):
    assert json.loads(vf.report_json(hyperbolic_report)) == json.loads(json.dumps(hyperbolic_report))


def test_perturbed_rates_report_slopes():
    rep = vf.run_suite("perturbed-rates")
    assert rep["pass"]
    assert {c["suite"] for c in rep["checks"]} == {"rates"}
    for c in rep["checks"]:
        assert c["measured"] >= 0.9
        assert all(f["slope"] == f["slope"] for f in c["details"]["fits"])


def test_broken_target_fails_with_anchor():
    cfg = cfgmod.parse_config("preset: hyperbolic-full\nsuites: [metric]\ntargets: {metric.hessian_exact: 0.0}\n")
    rep = vf.run_suite(cfg)
    assert rep["summary"]["failed"] == ["metric.hessian_exact"]
    assert not rep["pass"]


def test_thread_variable_validated(monkeypatch):
    monkeypatch.setenv("CORNERFLOW_THREADS", "zero")
    with pytest.raises(PreconditionError):
        vf.run_suite(cfgmod.parse_config("suites: []\n"))


def test_model_christoffel_matches_library(hyp2):
    p = np.array([0.7, 0.1, 1.3])
    np.testing.assert_allclose(suites._model_christoffel(p), mc.christoffel(hyp2, p).components,
                               rtol=1e-13, atol=1e-15)
