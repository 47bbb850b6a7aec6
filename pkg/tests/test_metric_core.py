import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cornerflow import metric_core as mc
from cornerflow.errors import AccuracyError, DomainError, SingularEvaluationError

from conftest import loglog_slope
from sym_oracle import perturbed_tensors

interior = st.tuples(
    st.floats(0.15, 2.9), st.floats(-math.pi, math.pi), st.floats(0.05, 1.5)
)


# ---------------------------------------------------------------- conversions


@pytest.mark.parametrize(
    "r, y, theta, rho",
    [(1.0, 0.0, math.pi / 2, 1.0), (0.0, 1.0, 0.0, 1.0), (1.0, 1.0, math.pi / 4, math.sqrt(2))],
)
def test_polar_from_cartesian(r, y, theta, rho):
    th, rh = mc.polar_from_cartesian(r, y)
    assert th == pytest.approx(theta, abs=1e-15)
    assert rh == pytest.approx(rho, rel=1e-15)


def test_polar_origin_rejected():
    with pytest.raises(DomainError):
        mc.polar_from_cartesian(0.0, 0.0)
    with pytest.raises(DomainError):
        mc.polar_from_cartesian(-1.0, 0.5)


@given(st.floats(0.0, 50.0), st.floats(-50.0, 50.0))
def test_polar_round_trip(r, y):
    if math.hypot(r, y) < 1e-6:
        return
    if math.atan2(r, y) >= math.pi:
        with pytest.raises(DomainError):
            mc.polar_from_cartesian(r, y)
        return
    th, rh = mc.polar_from_cartesian(r, y)
    assert 0.0 <= th < math.pi
    r2, y2 = mc.cartesian_from_polar(th, rh)
    scale = math.hypot(r, y)
    assert abs(r2 - r) <= 1e-12 * scale
    assert abs(y2 - y) <= 1e-12 * scale


def test_polar_point_validation():
    p = mc.PolarPoint(0.5, [0.1], 2.0)
    assert p.n == 2
    assert p.r == pytest.approx(2.0 * math.sin(0.5))
    assert p.y == pytest.approx(2.0 * math.cos(0.5))
    np.testing.assert_array_equal(mc.PolarPoint.from_coords(p.coords).coords, p.coords)
    with pytest.raises(DomainError):
        mc.PolarPoint(math.pi, [0.0], 1.0)
    with pytest.raises(DomainError):
        mc.PolarPoint(0.5, [0.0], -1.0)


# ---------------------------------------------------------------- metric


@pytest.mark.parametrize(
    "p, diag",
    [((math.pi / 2, 0.3, 1.0), (1.0, 1.0, 1.0)), ((math.pi / 6, 0.3, 2.0), (4.0, 1.0, 1.0))],
)
def test_hyperbolic_metric_examples(hyp2, p, diag):
    g = mc.eval_metric(hyp2, np.array(p)).components
    np.testing.assert_allclose(g, np.diag(diag), rtol=1e-14, atol=1e-14)
    ginv = mc.eval_inverse_metric(hyp2, np.array(p)).components
    np.testing.assert_allclose(ginv, np.diag(1.0 / np.array(diag)), rtol=1e-14, atol=1e-14)


def test_hyperbolic_matches_cartesian_pullback(hyp2):
    # (dr^2 + dy^2 + dx^2) / r^2 pulled back through r = rho sin, y = rho cos
    th, x, rho = 0.7, 0.2, 1.3
    J = np.array(
        [[rho * math.cos(th), 0.0, math.sin(th)], [-rho * math.sin(th), 0.0, math.cos(th)], [0.0, 1.0, 0.0]]
    )
    r = rho * math.sin(th)
    g_ref = J.T @ J / r**2
    g = mc.eval_metric(hyp2, np.array([th, x, rho])).components
    np.testing.assert_allclose(g, g_ref, rtol=1e-13, atol=1e-14)


def test_identity_perturbation_decays_linearly(hyp2):
    ell = mc.PerturbationField(lambda th, x, rho: np.broadcast_to(np.eye(3), np.shape(th) + (3, 3)))
    m = mc.AdmissibleMetric(2, hyp2.k, ell)
    rhos = np.array([0.2, 0.1, 0.05, 0.025])
    err = []
    for r in rhos:
        p = np.array([math.pi / 2, 0.0, r])
        diff = mc.eval_metric(m, p).components - mc.eval_metric(hyp2, p).components
        err.append(mc.g_norm(diff, hyp2, p))
    assert loglog_slope(rhos, np.array(err)) == pytest.approx(1.0, abs=0.05)


def test_singular_evaluation(hyp2):
    for p in ([0.0, 0.0, 1.0], [0.5, 0.0, 0.0]):
        with pytest.raises(SingularEvaluationError):
            mc.eval_metric(hyp2, np.array(p))
        with pytest.raises(SingularEvaluationError):
            mc.christoffel(hyp2, np.array(p))


def test_lambda_min_checked():
    m = mc.metric_from_family("warped-k", n=2, warp=-5.0, lambda_min=0.5)
    with pytest.raises(DomainError):
        mc.eval_metric(m, np.array([1.0, 0.0, 1.0]))


@settings(max_examples=60, deadline=None)
@given(interior)
def test_metric_symmetric_pd_and_inverse(p):
    m = mc.perturbed(2, amplitude=0.1, warp=0.2)
    p = np.array(p)
    g = mc.eval_metric(m, p).components
    assert np.array_equal(g, g.T)
    assert np.linalg.eigvalsh(g).min() > 0
    ginv = mc.eval_inverse_metric(m, p).components
    assert np.max(np.abs(g @ ginv - np.eye(3))) <= 1e-10


@settings(max_examples=40, deadline=None)
@given(interior)
def test_conformal_consistency(p):
    m = mc.perturbed(2, amplitude=0.1, warp=0.2)
    p = np.array(p)
    gb = mc.eval_compactified(m, p).components
    g = mc.eval_metric(m, p).components
    r2 = (p[2] * math.sin(p[0])) ** 2
    np.testing.assert_allclose(gb, r2 * g, rtol=1e-12, atol=1e-14 * np.max(np.abs(gb)))


def test_compactified_examples(hyp2, pert2):
    np.testing.assert_allclose(
        mc.eval_compactified(hyp2, np.array([math.pi / 2, 0.1, 1.0])).components, np.eye(3), atol=1e-15
    )
    for th in (0.0, 0.4, 1.9):
        gb = mc.eval_compactified(pert2, np.array([th, 0.7, 0.0])).components
        assert gb[0, 0] == 0.0
        assert np.all(gb[0, :] == 0.0)
    gb = mc.eval_compactified(hyp2, np.array([0.0, 0.7, 0.0])).components
    assert gb[1, 1] == 1.0


# ---------------------------------------------------------------- christoffel


@pytest.mark.parametrize("p", [(math.pi / 3, 0.2, 1.0), (0.3, -1.0, 0.2), (2.5, 2.0, 3.0)])
def test_hyperbolic_christoffel_closed_form(hyp2, p):
    th, _, rho = p
    gam = mc.christoffel(hyp2, np.array(p)).components
    cot = math.cos(th) / math.sin(th)
    assert gam[0, 0, 0] == pytest.approx(-cot, rel=1e-13)
    assert gam[0, 2, 2] == pytest.approx(cot / rho**2, rel=1e-13)
    assert gam[0, 1, 1] == pytest.approx(cot / rho**2, rel=1e-13)


def test_christoffel_fd_matches_analytic(hyp2):
    p = np.array([math.pi / 3, 0.2, 1.0])
    a = mc.christoffel(hyp2, p).components
    b = mc.christoffel(hyp2.with_fd(), p).components
    assert np.max(np.abs(a - b)) <= 1e-7


@pytest.mark.parametrize("n", [2, 3])
def test_christoffel_against_symbolic(n):
    m = mc.perturbed(n, amplitude=0.1, warp=0.2)
    g_ref, gam_ref = perturbed_tensors(n, 0.1, 0.2)[:2]
    for p in ([0.7, 0.4, 0.3], [1.9, -2.0, 0.8])[: 2]:
        p = np.array(p[:1] + [0.4] * (n - 1) + p[-1:]) if n == 3 else np.array(p)
        np.testing.assert_allclose(mc.eval_metric(m, p).components, g_ref(p), rtol=1e-12)
        np.testing.assert_allclose(
            mc.christoffel(m, p).components, gam_ref(p), rtol=1e-9, atol=1e-11 * np.max(np.abs(gam_ref(p)))
        )


def test_fd_path_matches_analytic_jets(pert3):
    p = np.array([[0.7, 0.4, -0.2, 0.3], [1.2, 2.0, 1.0, 0.6]])
    a = mc.metric_jet(pert3, p, 2)
    b = mc.metric_jet(pert3.with_fd(), p, 2)
    for u, v in zip(a, b):
        assert np.max(np.abs(u - v) / (1 + np.abs(u))) < 1e-7


def test_fd_step_underflow(hyp2):
    with pytest.raises(AccuracyError):
        mc.christoffel(hyp2.with_fd(), np.array([1.0, 0.0, 1e-6]))
    with pytest.raises(AccuracyError):
        mc.riemann(hyp2.with_fd(), np.array([1.0, 0.0, 5e-4]))


# ---------------------------------------------------------------- curvature


@pytest.mark.parametrize("n", [2, 3])
def test_hyperbolic_sectional_and_pinch(n):
    m = mc.hyperbolic(n)
    p = np.array([0.8] + [0.3] * (n - 1) + [0.7])
    for i in range(n + 1):
        for j in range(i + 1, n + 1):
            assert mc.sectional_curvature(m, p, i, j) == pytest.approx(-1.0, abs=1e-8)
    T, nT = mc.pinch_residual(m, p)
    assert nT <= 1e-8
    assert mc.max_sectional_curvature(m, p) == pytest.approx(-1.0, abs=1e-8)


def test_riemann_against_symbolic():
    m = mc.perturbed(2, amplitude=0.1, warp=0.2)
    R_ref = perturbed_tensors(2, 0.1, 0.2)[2]
    p = np.array([0.9, 0.5, 0.4])
    R = mc.riemann(m, p).components
    ref = R_ref(p)
    np.testing.assert_allclose(R, ref, atol=1e-9 * np.max(np.abs(ref)))


@pytest.mark.parametrize("n", [2, 3])
def test_riemann_symmetries(n):
    m = mc.perturbed(n, amplitude=0.1, warp=0.2)
    p = np.array([0.9] + [0.5] * (n - 1) + [0.4])
    R = mc.riemann(m, p).components
    assert np.array_equal(R, -np.swapaxes(R, 0, 1))
    assert np.array_equal(R, -np.swapaxes(R, 2, 3))
    assert np.array_equal(R, np.transpose(R, (2, 3, 0, 1)))
    scale = np.max(np.abs(R))
    bianchi = R + np.transpose(R, (0, 2, 3, 1)) + np.transpose(R, (0, 3, 1, 2))
    assert np.max(np.abs(bianchi)) <= 1e-8 * scale
    raw = mc.riemann(m, p, symmetrize=False).components
    assert np.max(np.abs(raw - R)) <= 1e-8 * scale


@pytest.mark.parametrize("theta", [0.5, 1.0, 2.0])
def test_decay_rates_in_rho(pert2, theta):
    rhos = np.array([0.2, 0.1, 0.05, 0.025])
    P = np.stack([[theta, 0.4, r] for r in rhos])
    _, nE = mc.hessian_cot_residual(pert2, P)
    _, nT = mc.pinch_residual(pert2, P)
    assert loglog_slope(rhos, nE) >= 0.9
    assert loglog_slope(rhos, nT) >= 0.9


def test_pinch_decay_in_sin_theta(pert2):
    ths = np.array([0.4, 0.2, 0.1, 0.05])
    P = np.stack([[t, 0.4, 0.5] for t in ths])
    _, nT = mc.pinch_residual(pert2, P)
    assert loglog_slope(np.sin(ths), nT) >= 0.9


def test_hessian_residual_halving_ratio(pert2):
    _, a = mc.hessian_cot_residual(pert2, np.array([0.8, 0.4, 0.1]))
    _, b = mc.hessian_cot_residual(pert2, np.array([0.8, 0.4, 0.05]))
    assert a / b == pytest.approx(2.0, rel=0.25)


def test_hyperbolic_hessian_exact(hyp2):
    E, nE = mc.hessian_cot_residual(hyp2, np.array([math.pi / 4, 0.3, 0.5]))
    assert nE <= 1e-8
    assert mc.g_norm(E, hyp2, np.array([math.pi / 4, 0.3, 0.5])) <= 1e-8


# ---------------------------------------------------------------- norms


@pytest.mark.parametrize("n", [2, 3])
def test_g_norm_of_metric(n):
    m = mc.perturbed(n, amplitude=0.1)
    p = np.array([1.1] + [0.2] * (n - 1) + [0.6])
    g = mc.eval_metric(m, p)
    assert mc.g_norm(g, m, p) == pytest.approx(math.sqrt(n + 1), rel=1e-12)
    assert mc.g_norm(np.zeros((n + 1, n + 1)), m, p) == 0.0


@settings(max_examples=30, deadline=None)
@given(interior, st.lists(st.floats(-3, 3), min_size=9, max_size=9))
def test_g_norm_matches_index_contraction(p, entries):
    m = mc.perturbed(2, amplitude=0.1, warp=0.2)
    p = np.array(p)
    T = np.array(entries).reshape(3, 3)
    ginv = mc.eval_inverse_metric(m, p).components
    ref = math.sqrt(max(np.einsum("ij,kl,ik,jl->", T, T, ginv, ginv), 0.0))
    assert mc.g_norm(T, m, p) == pytest.approx(ref, rel=1e-9, abs=1e-12)
