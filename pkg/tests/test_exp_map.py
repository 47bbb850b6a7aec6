import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cornerflow import exp_map as em
from cornerflow import geodesic_flow as gf
from cornerflow import metric_core as mc
from cornerflow.errors import AccuracyError, DomainError, PreconditionError
from cornerflow.verification import hyperbolic_oracle

from conftest import loglog_slope

TILTED = dict(theta0=1.2, angle_amp=0.1, rho_slope=0.2, mixed=0.1)


def fiber_angle(theta0, tau):
    return 2.0 * np.arctan(np.tan(0.5 * theta0) * (1.0 - np.asarray(tau)))


@pytest.fixture(scope="module")
def right_angle():
    return gf.BoundaryQ.constant(math.pi / 2)


@pytest.fixture(scope="module")
def tilted2():
    return gf.BoundaryQ.graph(n=2, **TILTED)


@pytest.fixture(scope="module")
def pert_chart(pert2, tilted2):
    return em.ExpChart(pert2, tilted2, ((-1.0, 1.0),), rho_max=0.5, tol=1e-10)


# ---------------------------------------------------------------- shoot


@settings(max_examples=25, deadline=None)
@given(st.floats(-3.0, 3.0), st.floats(0.0, 0.5))
def test_zero_section_is_identity(x, rho):
    m = mc.perturbed(2, 0.1, 0.2)
    Q = gf.BoundaryQ.graph(n=2, **TILTED)
    q = Q.point([x], rho)
    out = em.shoot(m, Q, q, 0.0)
    np.testing.assert_array_equal(out.coords, q)


def test_chart_zero_section_matches_q(pert_chart):
    ys = np.array([[0.1, 0.0], [-0.4, 0.2], [0.7, 0.45]])
    np.testing.assert_allclose(pert_chart.evaluate(0.0, ys), pert_chart.point(ys), atol=1e-12, rtol=0)


@pytest.mark.parametrize("theta0", [0.6, 1.0, math.pi / 2, 2.2])
@pytest.mark.parametrize("tau", [0.1, 0.5, 0.9, 1.0])
def test_corner_fiber_is_linear_in_v(hyp2, theta0, tau):
    Q = gf.BoundaryQ.constant(theta0)
    out = em.shoot(hyp2, Q, [theta0, 0.3, 0.0], tau)
    assert out.rho == 0.0
    assert out.x == (0.3,)
    assert out.theta == pytest.approx(float(fiber_angle(theta0, tau)), abs=1e-12)


def test_fiber_preserved_for_perturbed_metric(pert_chart, tilted2):
    taus = np.linspace(0.0, 1.0, 11)
    ys = np.array([[x, 0.0] for x in (-0.9, -0.2, 0.4, 1.0)])
    imgs = pert_chart.grid(taus, ys)
    assert np.all(imgs[..., 2] == 0.0)
    np.testing.assert_array_equal(imgs[..., 1], np.broadcast_to(ys[:, 0], imgs[..., 1].shape))
    th_q = tilted2.psi(ys[:, :1], 0.0)
    v = np.tan(0.5 * imgs[..., 0])
    np.testing.assert_allclose(v, np.tan(0.5 * th_q) * (1.0 - taus[:, None]), atol=1e-9, rtol=0)


def test_right_angle_circle_endpoint(hyp2, right_angle):
    # normal geodesic of the vertical plane is the unit semicircle about the corner
    out = em.shoot(hyp2, right_angle, [math.pi / 2, 0.25, 1.0], 1.0)
    np.testing.assert_allclose(out.coords, [0.0, 0.25, 1.0], atol=1e-10)


@pytest.mark.parametrize("theta0", [0.7, 1.3, 2.0])
def test_shoot_matches_circle_oracle(hyp2, theta0):
    Q = gf.BoundaryQ.constant(theta0)
    rho = 0.8
    q_cart = [rho * math.sin(theta0), -0.2, rho * math.cos(theta0)]
    taus = np.array([0.2, 0.6, 0.95])
    ref = hyperbolic_oracle(1.0 / math.tan(theta0), q_cart, -np.log1p(-taus))["polar"]
    for tau, r in zip(taus, ref):
        np.testing.assert_allclose(em.shoot(hyp2, Q, [theta0, -0.2, rho], tau).coords, r, atol=1e-9)


def test_shoot_rejects_bad_input(hyp2, right_angle):
    with pytest.raises(DomainError):
        em.shoot(hyp2, right_angle, [math.pi / 2, 0.0, 0.5], 1.5)
    with pytest.raises(PreconditionError):
        em.shoot(hyp2, right_angle, [1.0, 0.0, 0.5], 0.5)


def test_continuity_under_refinement(pert_chart):
    y = np.array([[0.3, 0.3]])
    jumps = []
    for k in (20, 40, 80):
        taus = np.linspace(0.0, 1.0, k + 1)
        imgs = pert_chart.grid(taus, y)[:, 0]
        jumps.append(np.max(np.linalg.norm(np.diff(imgs, axis=0), axis=-1)))
    assert jumps[1] / jumps[0] == pytest.approx(0.5, abs=0.05)
    assert jumps[2] / jumps[1] == pytest.approx(0.5, abs=0.05)


def test_chart_cache_is_thread_safe(pert2, tilted2):
    ys = np.array([[0.1 * k, 0.05 * k] for k in range(8)])
    serial = em.ExpChart(pert2, tilted2, rho_max=0.5).evaluate(0.7, ys)
    shared = em.ExpChart(pert2, tilted2, rho_max=0.5)
    with ThreadPoolExecutor(4) as pool:
        rows = list(pool.map(lambda y: shared.evaluate(0.7, y[None])[0], ys))
    np.testing.assert_allclose(np.array(rows), serial, atol=1e-9)


# ---------------------------------------------------------------- differential


def _model_det(theta0, tau):
    T = math.tan(0.5 * theta0)
    return -2.0 * T / (1.0 + (T * (1.0 - tau)) ** 2)


def test_det_hyperbolic_closed_form(hyp2, right_angle):
    chart = em.ExpChart(hyp2, right_angle, rho_max=2.0)
    dets = []
    for tau in np.linspace(0.0, 0.99, 12):
        for rho in (0.5, 1.0, 2.0):
            d = em.jacobian_det(hyp2, right_angle, np.array([0.1, rho]), tau, chart=chart)
            assert d == pytest.approx(_model_det(math.pi / 2, tau), rel=1e-8)
            dets.append(d)
    assert len({np.sign(d) for d in dets}) == 1


def test_det_at_zero_section_is_transversal(pert2, tilted2, pert_chart):
    y = np.array([0.2, 0.3])
    D = em.differential(pert_chart, 0.0, y)
    np.testing.assert_allclose(D[1:, 1:], np.eye(2), atol=1e-8)
    np.testing.assert_allclose(D[0, 1:], tilted2.grad(y[:1], y[1]), atol=1e-8)
    assert abs(em.jacobian_det(pert2, tilted2, y, 0.0, chart=pert_chart)) > 0.1


def test_det_gbar_frame_has_nonzero_limit(pert2, tilted2, pert_chart):
    y = np.array([-0.3, 0.25])
    vals = [em.jacobian_det(pert2, tilted2, y, t, chart=pert_chart, frame="gbar")
            for t in (0.9, 0.99, 0.999, 1.0)]
    assert min(abs(v) for v in vals) > 0.1
    assert abs(vals[-1] - vals[-2]) < 1e-2


def test_det_step_too_small(pert2, tilted2, pert_chart):
    with pytest.raises(AccuracyError):
        em.jacobian_det(pert2, tilted2, np.array([0.2, 0.3]), 0.5, h=1e-16, chart=pert_chart)


def test_c_measured_hyperbolic_is_one(hyp2):
    # gbar is Euclidean in the half-space; the normal family is generated by x-translations and dilations
    Q = gf.BoundaryQ.constant(1.0)
    chart = em.ExpChart(hyp2, Q, rho_max=1.0)
    out = em.c_measured(chart, [0.0, 0.5, 0.9, 1.0], [[0.0, 0.3], [0.5, 0.9]])
    np.testing.assert_allclose(out["per_tau"], 1.0, atol=1e-8)


def test_c_measured_positive_for_perturbed(pert_chart):
    out = em.c_measured(pert_chart, [0.0, 0.3, 0.6, 0.9, 0.99, 1.0], [[0.0, 0.1], [0.5, 0.4], [-0.8, 0.02]])
    assert out["c"] > 0.5


# ---------------------------------------------------------------- injectivity


def test_scan_hyperbolic_ten_thousand_pairs(hyp2):
    Q = gf.BoundaryQ.constant(1.0)
    rep = em.injectivity_scan(hyp2, Q, em.ScanSpec(n_points=200, n_pairs=10_000))
    assert rep["pairs"] == 10_000
    assert rep["pairs_eligible"] >= 10_000
    assert rep["pass"]
    assert rep["min_image_distance"] > 1e-3
    assert rep["beta"] == pytest.approx(1.0, abs=1e-8)
    assert rep["kappa"] == pytest.approx(math.cos(1.0), abs=1e-8)
    assert set(rep) >= {"pairs", "min_image_distance", "c_measured", "kappa", "beta", "jacobian_min_abs", "pass"}


def test_scan_perturbed_passes(pert2, tilted2):
    rep = em.injectivity_scan(pert2, tilted2, em.ScanSpec(n_points=120, n_pairs=5_000, seed=3))
    assert rep["pass"]
    assert rep["c_measured"] > 0.0


def test_distinct_fibers_stay_distinct(pert_chart):
    ys = np.array([[-0.5, 0.0], [0.5, 0.0]])
    imgs = pert_chart.grid([0.3, 0.8, 1.0], ys)
    assert np.all(imgs[:, 0, 1] != imgs[:, 1, 1])
    np.testing.assert_array_equal(imgs[:, :, 1], np.broadcast_to(ys[:, 0], (3, 2)))


def test_theta_strictly_decreasing_in_tau(pert_chart):
    taus = np.linspace(0.0, 1.0, 41)
    imgs = pert_chart.grid(taus, np.array([[0.1, 0.3], [-0.6, 0.45]]))
    assert np.all(np.diff(imgs[..., 0], axis=0) < 0)


def test_no_return_to_boundary(pert_chart):
    ys = np.array([[x, r] for x in (-0.9, 0.0, 0.8) for r in (0.0, 0.2, 0.5)])
    assert em.q_return_margin(pert_chart, ys) < -1e-9


# ---------------------------------------------------------------- shape operator


def test_shape_right_angle_is_totally_geodesic(hyp2, right_angle):
    for rho in (1.0, 0.1, 0.01):
        sd = em.shape_operator(hyp2, right_angle, [math.pi / 2, 0.3, rho])
        assert sd.kappa < 1e-8


@pytest.mark.parametrize("theta0", [0.7, 1.0, 2.1])
def test_shape_hyperbolic_umbilic(hyp2, theta0):
    Q = gf.BoundaryQ.constant(theta0)
    for rho in (1.0, 0.1, 0.01):
        sd = em.shape_operator(hyp2, Q, [theta0, 0.0, rho])
        np.testing.assert_allclose(np.abs(sd.eigenvalues), abs(math.cos(theta0)), atol=1e-8)
        assert abs(sd.dr_nubar) == pytest.approx(abs(math.cos(theta0)), abs=1e-12)


def test_shape_weingarten_route_agrees(pert2, tilted2):
    # K(Y_a, Y_b) = -g(nabla_{Y_a} nu, Y_b) with the normal field differentiated numerically
    q = tilted2.point([0.4], 0.3)
    sd = em.shape_operator(pert2, tilted2, q)
    g = mc.eval_metric(pert2, q).components
    Y = np.zeros((3, 2))
    Y[0] = tilted2.grad(q[1:2], q[2])
    Y[1:] = np.eye(2)
    K = np.empty((2, 2))
    for a in range(2):
        w = np.eye(2)[a]
        J0, DJ0 = em.normal_jacobi_data(pert2, tilted2, q, w)
        scale = math.sqrt(Y[:, a] @ g @ Y[:, a])
        K[a] = -(DJ0 * scale) @ g @ Y
    np.testing.assert_allclose(K, sd.K, rtol=1e-7, atol=1e-9 * np.abs(sd.K).max())


def _kbar_direct(m, Q, q, h=1e-5):
    # second fundamental form from differences of the compactified metric
    N = m.N
    gb = mc.compactified(m, q)
    dgb = np.empty((N, N, N))
    for c in range(N):
        e = np.zeros(N)
        e[c] = h
        dgb[c] = (-mc.compactified(m, q + 2 * e) + 8 * mc.compactified(m, q + e)
                  - 8 * mc.compactified(m, q - e) + mc.compactified(m, q - 2 * e)) / (12 * h)
    first = 0.5 * (np.einsum("ilj->lij", dgb) + np.einsum("jli->lij", dgb) - dgb)
    gam = np.einsum("kl,lij->kij", np.linalg.inv(gb), first)
    y = q[1:]
    Z = gf.initial_states(m, Q, y[:-1], y[-1])
    xi = np.empty(N)
    xi[0] = Z[N] / math.sin(q[0])
    xi[1:] = Z[N + 1:] / q[-1]
    xi *= q[-1] * math.sin(q[0])
    Y = np.zeros((N, N - 1))
    Y[0] = Q.grad(y[:-1], y[-1])
    Y[1:] = np.eye(N - 1)
    dd = np.zeros((N, N - 1, N - 1))
    dd[0] = Q.hess(y[:-1], y[-1])
    return np.einsum("k,kab->ab", xi, dd + np.einsum("kij,ia,jb->kab", gam, Y, Y))


def test_compactified_form_matches_direct_route(pert2, tilted2):
    q = tilted2.point([-0.2], 0.2)
    sd = em.shape_operator(pert2, tilted2, q)
    np.testing.assert_allclose(sd.Kbar, _kbar_direct(pert2, tilted2, q), atol=1e-7)


def test_compactified_form_converges_at_corner(pert2, tilted2):
    rhos = 0.1 * 0.5 ** np.arange(6)
    Ks = np.array([em.shape_operator(pert2, tilted2, tilted2.point([0.3], r)).Kbar for r in rhos])
    assert np.all(np.isfinite(Ks)) and np.abs(Ks).max() < 10.0
    steps = np.linalg.norm(np.diff(Ks, axis=0), axis=(1, 2))
    assert np.all(steps[1:] < 0.6 * steps[:-1])


def test_kappa_rate_towards_corner_angle(pert2):
    theta0 = 1.0
    Q = gf.BoundaryQ.constant(theta0)
    rhos = 0.2 * 0.5 ** np.arange(6)
    err = [abs(em.shape_operator(pert2, Q, [theta0, 0.2, r]).kappa - math.cos(theta0)) for r in rhos]
    assert loglog_slope(rhos, err) >= 0.9


def test_shape_needs_interior(hyp2, right_angle):
    with pytest.raises(PreconditionError):
        em.shape_operator(hyp2, right_angle, [math.pi / 2, 0.0, 0.0])


# ---------------------------------------------------------------- Jacobi fields


def _jacobi(m, Q, q, w, t_end=6.0):
    traj = gf.integrate(m, gf.initial_state(m, Q, q), t_end=t_end, tol=1e-11)
    J0, DJ0 = em.normal_jacobi_data(m, Q, q, w)
    return em.jacobi_transport(m, traj, J0, DJ0, t_eval=np.linspace(0.0, t_end, 13), tol=1e-11), J0, DJ0


@pytest.mark.parametrize("w", [(1.0, 0.0), (0.0, 1.0)])
def test_jacobi_right_angle_is_cosh(hyp2, right_angle, w):
    jac, _, _ = _jacobi(hyp2, right_angle, np.array([math.pi / 2, 0.3, 0.5]), w)
    np.testing.assert_allclose(jac.norm, np.cosh(jac.t), rtol=1e-6)


@pytest.mark.parametrize("theta0", [0.8, 2.0])
def test_jacobi_hyperbolic_closed_form(hyp2, theta0):
    # constant curvature -1: |J| = cosh t + <DJ0, J0> sinh t
    Q = gf.BoundaryQ.constant(theta0)
    q = np.array([theta0, 0.0, 0.7])
    jac, J0, DJ0 = _jacobi(hyp2, Q, q, (1.0, 0.0))
    g = mc.eval_metric(hyp2, q).components
    s = J0 @ g @ DJ0
    assert abs(s) == pytest.approx(abs(math.cos(theta0)), abs=1e-8)
    np.testing.assert_allclose(jac.norm, np.cosh(jac.t) + s * np.sinh(jac.t), rtol=1e-6)


def test_jacobi_initial_data_is_normal(pert2, tilted2):
    q = tilted2.point([0.1], 0.4)
    J0, DJ0 = em.normal_jacobi_data(pert2, tilted2, q, (0.6, 0.8))
    g = mc.eval_metric(pert2, q).components
    nu = gf.unit_normal(pert2, tilted2, q)
    assert J0 @ g @ J0 == pytest.approx(1.0, rel=1e-12)
    assert abs(J0 @ g @ nu) < 1e-12
    assert abs(DJ0 @ g @ nu) < 1e-8


def test_jacobi_stays_normal_and_above_floor(pert2, tilted2):
    q = tilted2.point([0.1], 0.3)
    jac, _, _ = _jacobi(pert2, tilted2, q, (1.0, 0.0))
    assert np.max(np.abs(jac.inner)) < 1e-7
    kappa = em.shape_operator(pert2, tilted2, q).kappa
    beta = em.curvature_bound(pert2, jac.base.states[:, :3])
    assert kappa < math.sqrt(beta)
    rep = em.jacobi_floor_check(jac, kappa, beta)
    assert rep["pass"]
    assert rep["min_f"] >= rep["A"]


def test_jacobi_floor_right_angle_value(hyp2, right_angle):
    jac, _, _ = _jacobi(hyp2, right_angle, np.array([math.pi / 2, 0.0, 1.0]), (0.0, 1.0))
    rep = em.jacobi_floor_check(jac, 0.0, 1.0)
    assert rep["c"] == pytest.approx(0.7071067811865476, abs=1e-15)
    assert np.all(jac.norm >= rep["c"] * jac.norm[0])


def test_jacobi_range_checked(hyp2, right_angle):
    traj = gf.integrate(hyp2, gf.initial_state(hyp2, right_angle, [math.pi / 2, 0.0, 1.0]), t_end=2.0)
    with pytest.raises(DomainError):
        em.jacobi_transport(hyp2, traj, np.zeros(3), np.zeros(3), t_eval=[0.0, 3.0])
