"""Compactified normal exponential map, its differential and Jacobi fields.

The map is parametrized by ``(tau, y)`` where ``y = (x^1..x^{n-1}, rho)``
labels the point ``q = (psi(y), y)`` of the finite boundary and
``tau = 1 - e^{-t}`` is the compactified arclength, so that ``tau = 1``
lands on the corner face ``theta = 0``.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import eigh

from .errors import AccuracyError, DomainError, PreconditionError
from .geodesic_flow import (
    BoundaryQ,
    Trajectory,
    _check_on_q,
    _check_tol,
    _solver_failure,
    _velocity,
    _w_to_z,
    compactified_start,
    initial_states,
    integrate_compactified,
    tau_velocity,
)
from .metric_core import (
    AdmissibleMetric,
    PolarPoint,
    _riemann_from_jet,
    compactified,
    max_sectional_curvature,
    metric_jet,
)

__all__ = [
    "ExpChart",
    "JacobiState",
    "ShapeData",
    "ScanSpec",
    "shoot",
    "differential",
    "jacobian_det",
    "jacobian_det_grid",
    "c_measured",
    "injectivity_scan",
    "q_return_margin",
    "shape_operator",
    "normal_jacobi_data",
    "jacobi_transport",
    "jacobi_floor_check",
    "curvature_bound",
]

# 4th-order stencils for first derivatives
_CENTRAL = (np.array([-2.0, -1.0, 1.0, 2.0]), np.array([1.0, -8.0, 8.0, -1.0]) / 12.0)
_FORWARD = (np.array([0.0, 1.0, 2.0, 3.0, 4.0]), np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0)


def _params_of(p, n) -> np.ndarray:
    p = p.coords if isinstance(p, PolarPoint) else np.asarray(p, dtype=float)
    return p[..., 1 : n + 1]


# --------------------------------------------------------------------------
# chart
# --------------------------------------------------------------------------


@dataclass
class ExpChart:
    """Evaluator ``(tau, y) -> exp(tau, q(y))`` with a per-``y`` trajectory cache.

    Attributes:
        m: Metric.
        Q: Finite boundary.
        x_window: ``(lo, hi)`` pairs for each ``x`` coordinate.
        rho_max: Upper end ``a`` of the ``rho`` window.
        tol: Per-trajectory integration tolerance.
    """

    m: AdmissibleMetric
    Q: BoundaryQ
    x_window: tuple = ((-1.0, 1.0),)
    rho_max: float = 1.0
    tol: float = 1e-10
    chunk: int = 256
    _cache: dict = field(default_factory=dict, repr=False)
    _flows: list = field(default_factory=list, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        _check_tol(self.tol)
        xw = tuple(tuple(float(v) for v in w) for w in self.x_window)
        if len(xw) == 1 and self.m.n > 2:
            xw = xw * (self.m.n - 1)
        if len(xw) != self.m.n - 1:
            raise PreconditionError("x_window needs one (lo, hi) pair per x coordinate")
        self.x_window = xw
        if self.Q.n != self.m.n:
            raise PreconditionError("boundary and metric dimensions differ")

    @property
    def widths(self) -> np.ndarray:
        """Window widths of the ``y`` parameters."""
        return np.array([hi - lo for lo, hi in self.x_window] + [self.rho_max])

    def point(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return self.Q.point(y[..., :-1], y[..., -1])

    def prefetch(self, y) -> None:
        """Integrate and cache every row of ``y`` not seen before (in batches of ``chunk``)."""
        Y = np.atleast_2d(np.asarray(y, dtype=float))
        keys = [tuple(row.tolist()) for row in Y]
        missing = [k for k in dict.fromkeys(keys) if k not in self._cache]
        for start in range(0, len(missing), self.chunk):
            part = missing[start : start + self.chunk]
            Ym = np.array(part)
            Z0 = initial_states(self.m, self.Q, Ym[:, :-1], Ym[:, -1])
            flow = integrate_compactified(self.m, Z0, [1.0], tol=self.tol)
            with self._lock:
                self._flows.append(flow.dense)
                fid = len(self._flows) - 1
                for i, k in enumerate(part):
                    self._cache.setdefault(k, (fid, i, Z0[i]))

    def raw(self, tau, y) -> np.ndarray:
        """Compactified states ``W`` for each ``(tau_i, y_i)`` pair (broadcast over ``y`` rows)."""
        Y = np.atleast_2d(np.asarray(y, dtype=float))
        tau = np.broadcast_to(np.asarray(tau, dtype=float), (len(Y),))
        self.prefetch(Y)
        entries = [self._cache[tuple(row.tolist())] for row in Y]
        out = np.empty((len(Y), 2 * self.m.N))
        groups: dict = {}
        for i, (fid, j, Z0) in enumerate(entries):
            if tau[i] == 0.0:
                out[i] = compactified_start(Z0)
            else:
                groups.setdefault((fid, float(tau[i])), []).append((i, j))
        for (fid, t), members in groups.items():
            block = self._flows[fid](t)
            rows, cols = zip(*members)
            out[list(rows)] = block[list(cols)]
        return out

    def states(self, tau, y) -> np.ndarray:
        """Packed phase-space states at ``(tau_i, y_i)``."""
        Y = np.atleast_2d(np.asarray(y, dtype=float))
        tau = np.broadcast_to(np.asarray(tau, dtype=float), (len(Y),))
        Z = _w_to_z(self.raw(tau, Y), tau)
        at0 = tau == 0.0
        if np.any(at0):
            Z[at0] = initial_states(self.m, self.Q, Y[at0, :-1], Y[at0, -1])
        return Z

    def evaluate(self, tau, y) -> np.ndarray:
        """Images ``exp(tau_i, q(y_i))`` as packed coordinates ``(B, N)``."""
        return self.states(tau, y)[:, : self.m.N]

    def grid(self, taus, y) -> np.ndarray:
        """Images on the product of ``taus`` and rows of ``y``: ``(T, B, N)``."""
        taus = np.asarray(taus, dtype=float)
        Y = np.atleast_2d(np.asarray(y, dtype=float))
        return np.stack([self.evaluate(np.full(len(Y), t), Y) for t in taus])

    def __call__(self, tau: float, q) -> PolarPoint:
        y = _params_of(q, self.m.n)
        return PolarPoint.from_coords(self.evaluate(tau, y[None])[0])


def shoot(m: AdmissibleMetric, Q: BoundaryQ, q, tau: float, tol: float = 1e-10) -> PolarPoint:
    """``exp(tau, q)`` for a point ``q`` of the finite boundary.

    ``tau = 0`` returns ``q`` unchanged; ``tau = 1`` lands on ``theta = 0``.
    """
    p = q.coords if isinstance(q, PolarPoint) else np.asarray(q, dtype=float)
    _check_on_q(Q, p)
    if not (0.0 <= tau <= 1.0):
        raise DomainError("tau must lie in [0, 1]")
    if tau == 0.0:
        return PolarPoint.from_coords(p)
    Z0 = initial_states(m, Q, p[1 : m.n], p[m.n])
    flow = integrate_compactified(m, Z0[None], [tau], tol=tol)
    return PolarPoint.from_coords(flow.states[0, 0, : m.N])


# --------------------------------------------------------------------------
# differential
# --------------------------------------------------------------------------


def _stencil_rows(y, steps):
    """Parameter rows for 4th-order derivatives in every ``y`` direction."""
    n = len(y)
    rows, plan = [], []
    for a in range(n):
        h = steps[a]
        offs, wts = _FORWARD if (a == n - 1 and y[a] - 2.0 * h < 0.0) else _CENTRAL
        idx = []
        for o in offs:
            r = y.copy()
            r[a] += o * h
            idx.append(len(rows))
            rows.append(r)
        plan.append((idx, wts, h))
    return np.array(rows), plan


class _Stencils:
    """Stencil rows for many base points, integrated in blocks that never split a stencil.

    Rows of one stencil share the adaptive step sequence, so the difference
    quotients do not pick up step-selection noise of order ``tol / h``.
    """

    def __init__(self, chart, ys, h):
        self.chart = chart
        m = chart.m
        steps = h * chart.widths
        rows, self.plans = [], []
        for y in np.atleast_2d(ys):
            r, plan = _stencil_rows(y, steps)
            off = sum(len(x) for x in rows)
            rows.append(r)
            self.plans.append([([off + i for i in idx], w, hh) for idx, w, hh in plan])
        self.rows = np.vstack(rows)
        per = max(1, chart.chunk // max(len(r) for r in rows))
        self.blocks = []
        start = 0
        for b in range(0, len(rows), per):
            block = np.vstack(rows[b : b + per])
            Z0 = initial_states(m, chart.Q, block[:, :-1], block[:, -1])
            flow = integrate_compactified(m, Z0, [1.0], tol=chart.tol)
            self.blocks.append((start, start + len(block), flow.dense, Z0))
            start += len(block)

    def images(self, tau) -> np.ndarray:
        out = np.empty((len(self.rows), self.chart.m.N))
        for a, b, dense, Z0 in self.blocks:
            out[a:b] = Z0[:, : self.chart.m.N] if tau == 0.0 else _w_to_z(dense(tau), tau)[:, : self.chart.m.N]
        return out

    def jacobians(self, tau) -> np.ndarray:
        """``(B, N, n)`` parameter derivatives of the images at ``tau``."""
        imgs = self.images(float(tau))
        out = np.empty((len(self.plans), self.chart.m.N, self.chart.m.n))
        for b, plan in enumerate(self.plans):
            for a, (idx, w, hh) in enumerate(plan):
                out[b, :, a] = w @ imgs[idx] / hh
        return out


def _fd_columns(chart, tau, y, h):
    return _Stencils(chart, np.asarray(y, dtype=float)[None], h).jacobians(tau)[0]


def differential(chart: ExpChart, tau: float, y, h: float = 1e-4) -> np.ndarray:
    """``(N, N)`` differential of ``(tau, y) -> exp`` in polar coordinates.

    The ``tau`` column is the exact flow velocity; the ``y`` columns use
    4th-order differences with steps ``h`` times the window widths (one-sided
    in ``rho`` near the corner face).
    """
    y = np.asarray(y, dtype=float)
    W = chart.raw(tau, y[None])
    dtau = tau_velocity(chart.m, W, tau)[0]
    return np.column_stack([dtau, _fd_columns(chart, tau, y, h)])


def _tangent_frame(Q, y):
    n = Q.n
    Y = np.zeros((n + 1, n))
    Y[0] = Q.grad(y[:-1], y[-1])
    Y[1:] = np.eye(n)
    return Y


def jacobian_det(
    m: AdmissibleMetric,
    Q: BoundaryQ,
    q,
    tau: float,
    h: float = 1e-4,
    chart: Optional[ExpChart] = None,
    frame: str = "coordinate",
) -> float:
    """Signed determinant of the differential of ``(tau, y) -> exp(tau, q(y))``.

    Args:
        m: Metric.
        Q: Finite boundary.
        q: Base point on Q (or its ``y`` parameters when ``chart`` is given).
        tau: Compactified parameter in ``[0, 1]``.
        h: Relative difference step.
        chart: Optional chart to reuse cached trajectories.
        frame: ``"coordinate"`` or ``"gbar"``; the latter orthonormalizes the
            image with ``gbar`` and the parameters with the unit ``tau``
            column and ``gbar`` on the tangent space of Q.

    Raises:
        AccuracyError: The determinants at ``h`` and ``h/2`` differ by more than 10%.
    """
    if chart is None:
        chart = ExpChart(m, Q, rho_max=1.0)
    arr = q.coords if isinstance(q, PolarPoint) else np.asarray(q, dtype=float)
    y = arr[1:] if arr.shape[-1] == m.N else arr
    if not (0.0 <= tau <= 1.0):
        raise DomainError("tau must lie in [0, 1]")
    dets = []
    for hh in (h, 0.5 * h):
        D = differential(chart, tau, y, hh)
        dets.append(_framed_det(chart, tau, y, D) if frame == "gbar" else float(np.linalg.det(D)))
    d1, d2 = dets
    if abs(d1 - d2) > 0.1 * abs(d2):
        raise AccuracyError(f"differential not resolved: det {d1:.3e} at h vs {d2:.3e} at h/2")
    return d2


def jacobian_det_grid(chart: ExpChart, taus: Sequence[float], ys, h: float = 1e-4) -> np.ndarray:
    """Coordinate determinants on the product of ``taus`` and rows of ``ys``, shape ``(T, B)``.

    Same construction and step-halving check as :func:`jacobian_det`, with
    every stencil trajectory integrated in shared batches.
    """
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    coarse, fine = _Stencils(chart, ys, h), _Stencils(chart, ys, 0.5 * h)
    out = np.empty((len(taus), len(ys)))
    for k, tau in enumerate(taus):
        tau = float(tau)
        W = chart.raw(np.full(len(ys), tau), ys)
        dtau = tau_velocity(chart.m, W, tau)
        d = []
        for st in (coarse, fine):
            D = np.concatenate([dtau[:, :, None], st.jacobians(tau)], axis=-1)
            d.append(np.linalg.det(D))
        bad = np.abs(d[0] - d[1]) > 0.1 * np.abs(d[1])
        if np.any(bad):
            i = int(np.argmax(bad))
            raise AccuracyError(f"differential not resolved at tau={tau}, y={ys[i].tolist()}")
        out[k] = d[1]
    return out


def _framed_det(chart, tau, y, D):
    m = chart.m
    if y[-1] <= 0.0:
        raise PreconditionError("gbar frame needs rho > 0")
    img = chart.evaluate(tau, y[None])[0]
    gi = compactified(m, img)
    gq = compactified(m, chart.point(y))
    Yq = _tangent_frame(chart.Q, y)
    H = Yq.T @ gq @ Yq
    ptt = D[:, 0] @ gi @ D[:, 0]
    return float(np.linalg.det(D) * math.sqrt(np.linalg.det(gi) / (ptt * np.linalg.det(H))))


def c_measured(chart: ExpChart, taus: Sequence[float], ys, h: float = 1e-4) -> dict:
    """Smallest ratio ``|d exp(Y)|_gbar / |Y|_gbar`` over tangent directions of Q.

    Returns:
        ``{"c": min, "per_tau": [...]}`` where ``per_tau`` holds the minimum
        over ``ys`` at each ``tau``.
    """
    m, Q = chart.m, chart.Q
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    if np.any(ys[:, -1] <= 0.0):
        raise PreconditionError("c_measured needs rho > 0")
    st = _Stencils(chart, ys, h)
    H = []
    for y in ys:
        Yq = _tangent_frame(Q, y)
        H.append(Yq.T @ compactified(m, chart.point(y)) @ Yq)
    per_tau = []
    for tau in taus:
        Jq = st.jacobians(tau)
        gi = compactified(m, chart.evaluate(np.full(len(ys), float(tau)), ys))
        lam = [eigh(J.T @ g @ J, Hb, eigvals_only=True)[0] for J, g, Hb in zip(Jq, gi, H)]
        per_tau.append(math.sqrt(max(min(lam), 0.0)))
    return {"c": float(min(per_tau)), "per_tau": [float(c) for c in per_tau]}


# --------------------------------------------------------------------------
# injectivity
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ScanSpec:
    """Sampling plan for :func:`injectivity_scan`.

    Attributes:
        n_points: Number of sampled ``(tau, y)`` parameters.
        n_pairs: Number of distinct pairs compared (all eligible pairs if fewer).
        separation: Minimum normalized parameter distance of a compared pair.
        tau_window: Sampled ``tau`` range.
        x_window: Sampled range of each ``x`` coordinate.
        rho_window: Sampled ``rho`` range.
        margin: Required lower bound on the minimum image distance.
        differential_taus: ``tau`` grid for the differential checks (empty to skip).
        differential_points: Number of base points for the differential checks.
        periodic: Wrap ``x`` differences into ``[-pi, pi]``.
        seed: RNG seed.
        tol: Integration tolerance.
    """

    n_points: int = 200
    n_pairs: int = 10_000
    separation: float = 0.05
    tau_window: tuple = (0.0, 1.0)
    x_window: tuple = (-1.0, 1.0)
    rho_window: tuple = (0.0, 0.5)
    margin: float = 1e-6
    differential_taus: tuple = (0.0, 0.5, 0.9, 1.0)
    differential_points: int = 3
    periodic: bool = True
    seed: int = 0
    tol: float = 1e-10


def _image_distance(m, a, b, periodic):
    """``gbar``-distance on ``(x, rho)`` at the midpoint plus the ``v = tan(theta/2)`` gap."""
    d = b - a
    if periodic:
        d[..., 1 : m.n] = (d[..., 1 : m.n] + math.pi) % (2.0 * math.pi) - math.pi
    mid = a + 0.5 * d
    gb = compactified(m, mid)[..., 1:, 1:]
    dy = d[..., 1:]
    dv = np.tan(0.5 * b[..., 0]) - np.tan(0.5 * a[..., 0])
    return np.sqrt(dv * dv + np.einsum("...i,...ij,...j->...", dy, gb, dy))


def _sample_params(spec: ScanSpec, n, rng):
    lo = np.array([spec.tau_window[0]] + [spec.x_window[0]] * (n - 1) + [spec.rho_window[0]])
    hi = np.array([spec.tau_window[1]] + [spec.x_window[1]] * (n - 1) + [spec.rho_window[1]])
    U = lo + (hi - lo) * rng.random((spec.n_points, n + 1))
    return U, np.where(hi > lo, hi - lo, 1.0)


def injectivity_scan(m: AdmissibleMetric, Q: BoundaryQ, spec: ScanSpec = ScanSpec(),
                     chart: Optional[ExpChart] = None) -> dict:
    """Sampled injectivity and nondegeneracy report for the exponential map.

    Returns:
        ``{pairs, min_image_distance, c_measured, kappa, beta, jacobian_min_abs, pass}``
        plus the jacobian sign count and the scan parameters.
    """
    n = m.n
    rng = np.random.default_rng(spec.seed)
    if chart is None:
        chart = ExpChart(m, Q, ((spec.x_window[0], spec.x_window[1]),), max(spec.rho_window[1], 1e-3), spec.tol)
    U, widths = _sample_params(spec, n, rng)
    imgs = chart.evaluate(U[:, 0], U[:, 1:])
    I, J = np.triu_indices(spec.n_points, 1)
    # near-diagonal pairs are covered by the differential bound, not compared here
    far = np.linalg.norm((U[J] - U[I]) / widths, axis=-1) > spec.separation
    I, J = I[far], J[far]
    eligible = len(I)
    if spec.n_pairs < eligible:
        pick = np.sort(rng.choice(eligible, size=spec.n_pairs, replace=False))
        I, J = I[pick], J[pick]
    dist = _image_distance(m, imgs[I], imgs[J], spec.periodic)
    k = int(np.argmin(dist))
    report = {
        "pairs": int(len(I)),
        "pairs_eligible": int(eligible),
        "min_image_distance": float(dist[k]),
        "closest_pair": [U[I][k].tolist(), U[J][k].tolist()],
    }

    interior = (imgs[:, 0] > 1e-6) & (imgs[:, n] > 1e-6)
    report["beta"] = curvature_bound(m, imgs[interior]) if interior.any() else None
    rho_lo = max(spec.rho_window[0], 0.05 * spec.rho_window[1])
    lo = np.array([spec.x_window[0]] * (n - 1) + [rho_lo])
    hi = np.array([spec.x_window[1]] * (n - 1) + [spec.rho_window[1]])
    base = lo + (hi - lo) * rng.random((spec.differential_points, n))
    kappas = [shape_operator(m, Q, chart.point(y)).kappa for y in base]
    report["kappa"] = float(max(kappas))
    if spec.differential_taus:
        dets = jacobian_det_grid(chart, spec.differential_taus, base).ravel()
        report["jacobian_min_abs"] = float(min(abs(d) for d in dets))
        report["jacobian_signs"] = sorted({int(np.sign(d)) for d in dets})
        report["c_measured"] = c_measured(chart, spec.differential_taus, base)["c"]
    else:
        report["jacobian_min_abs"] = None
        report["jacobian_signs"] = []
        report["c_measured"] = None
    ok = report["min_image_distance"] > spec.margin
    if spec.differential_taus:
        ok = ok and report["jacobian_min_abs"] > 0.0 and len(report["jacobian_signs"]) == 1
    report["pass"] = bool(ok)
    return report


def q_return_margin(chart: ExpChart, ys, taus=None) -> float:
    """Largest ``theta - psi(x, rho)`` along the sampled images for ``tau > 0``.

    Negative values mean no sampled trajectory returns to Q.
    """
    if taus is None:
        taus = np.linspace(0.01, 1.0, 100)
    imgs = chart.grid(taus, ys)
    n = chart.m.n
    psi = chart.Q.psi(imgs[..., 1:n], imgs[..., n])
    return float(np.max(imgs[..., 0] - psi))


# --------------------------------------------------------------------------
# second fundamental form
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ShapeData:
    """Second fundamental form of Q at one point in the frame ``Y_a = d_a + psi_a d_theta``.

    Attributes:
        K: ``K(Y_a, Y_b) = <nabla_{Y_a} Y_b, nu>_g``.
        h: Induced metric ``g(Y_a, Y_b)``.
        eigenvalues: Principal curvatures (eigenvalues of ``h^-1 K``).
        kappa: ``max |eigenvalue|``.
        Kbar: Second fundamental form with respect to ``gbar``.
        hbar: Induced ``gbar``.
        dr_nubar: ``dr(nubar)`` with ``r = rho sin(theta)``.
        nu: Inward unit normal (coordinate components).
    """

    K: np.ndarray
    h: np.ndarray
    eigenvalues: np.ndarray
    kappa: float
    Kbar: np.ndarray
    hbar: np.ndarray
    dr_nubar: float
    nu: np.ndarray


def _conormal(m, Z):
    n, N = m.n, m.N
    xi = np.empty(Z.shape[:-1] + (N,))
    xi[..., 0] = Z[..., N] / np.sin(Z[..., 0])
    xi[..., 1:] = Z[..., N + 1 :] / Z[..., n, None]
    return xi


def shape_operator(m: AdmissibleMetric, Q: BoundaryQ, q) -> ShapeData:
    """Second fundamental form of Q, its principal curvatures and the compactified form."""
    p = q.coords if isinstance(q, PolarPoint) else np.asarray(q, dtype=float)
    _check_on_q(Q, p)
    n = m.n
    th, rho = p[0], p[n]
    if rho <= 0.0:
        raise PreconditionError("shape_operator needs rho > 0")
    y = p[1:]
    Z = initial_states(m, Q, y[:-1], y[-1])
    xi = _conormal(m, Z)
    nu = _velocity(m, Z)
    g, dg, _ = metric_jet(m, p, 1)
    ginv = np.linalg.inv(g)
    first = 0.5 * (np.einsum("ilj->lij", dg) + np.einsum("jli->lij", dg) - dg)
    gam = np.einsum("kl,lij->kij", ginv, first)
    Y = _tangent_frame(Q, y)
    dd = np.zeros((n + 1, n, n))
    dd[0] = Q.hess(y[:-1], y[-1])
    K = np.einsum("k,kab->ab", xi, dd + np.einsum("kij,ia,jb->kab", gam, Y, Y))
    K = 0.5 * (K + K.T)
    h = Y.T @ g @ Y
    lam = eigh(K, h, eigvals_only=True)
    r = rho * math.sin(th)
    dr_nu = nu[0] * math.cos(th) / math.sin(th) + nu[n] / rho  # nu(log r) = dr(nubar)
    Kbar = r * (K - dr_nu * h)
    return ShapeData(K, h, lam, float(np.max(np.abs(lam))), Kbar, r * r * h, float(dr_nu), nu)


# --------------------------------------------------------------------------
# Jacobi fields
# --------------------------------------------------------------------------


def _normal_field(m, Q, y):
    Z = initial_states(m, Q, y[..., :-1], y[..., -1])
    return _velocity(m, Z)


def normal_jacobi_data(m: AdmissibleMetric, Q: BoundaryQ, q, w, h: float = 1e-4) -> tuple[np.ndarray, np.ndarray]:
    """Initial data of the Jacobi field of the normal geodesic family along ``w``.

    Args:
        m: Metric.
        Q: Finite boundary.
        q: Base point on Q with ``rho > 0``.
        w: Direction in the ``y`` parameters.
        h: Relative difference step (scaled by ``rho``).

    Returns:
        ``(J0, DJ0)`` with ``J0`` the ``g``-unit tangent vector and
        ``DJ0 = nabla_{J0} nu``.
    """
    p = q.coords if isinstance(q, PolarPoint) else np.asarray(q, dtype=float)
    _check_on_q(Q, p)
    n = m.n
    if p[n] <= 0.0:
        raise PreconditionError("normal_jacobi_data needs rho > 0")
    y = p[1:]
    w = np.asarray(w, dtype=float)
    J0 = _tangent_frame(Q, y) @ w
    g, dg, _ = metric_jet(m, p, 1)
    scale = math.sqrt(J0 @ g @ J0)
    J0, w = J0 / scale, w / scale
    step = h * p[n] / max(np.linalg.norm(w), 1e-300)
    offs, wts = _CENTRAL
    dnu = sum(c * _normal_field(m, Q, y + o * step * w) for o, c in zip(offs, wts)) / step
    ginv = np.linalg.inv(g)
    first = 0.5 * (np.einsum("ilj->lij", dg) + np.einsum("jli->lij", dg) - dg)
    gam = np.einsum("kl,lij->kij", ginv, first)
    nu = _normal_field(m, Q, y)
    DJ0 = dnu + np.einsum("kij,i,j->k", gam, J0, nu)
    return J0, DJ0


@dataclass(frozen=True)
class JacobiState:
    """Sampled Jacobi field along a trajectory.

    Attributes:
        t: Sample times.
        J: Field components ``(K, N)``.
        DJ: Covariant derivative components ``(K, N)``.
        norm: ``|J|_g``.
        inner: ``<J, gamma'>_g``.
        base: Underlying trajectory.
    """

    t: np.ndarray
    J: np.ndarray
    DJ: np.ndarray
    norm: np.ndarray
    inner: np.ndarray
    base: Trajectory


def _geometry(m, Z):
    p = Z[: m.N]
    g, dg, ddg = metric_jet(m, p, 2)
    R, gam = _riemann_from_jet(g, dg, ddg)
    return g, gam, R, _velocity(m, Z)


def jacobi_transport(
    m: AdmissibleMetric,
    traj: Trajectory,
    J0,
    DJ0,
    t_eval: Optional[Sequence[float]] = None,
    tol: float = 1e-10,
) -> JacobiState:
    """Solve ``D_t^2 J = -R(J, gamma') gamma'`` along ``traj``.

    Coordinates obey ``J' = P - Gamma(gamma', J)`` and
    ``P' = -Gamma(gamma', P) - g^-1 R(J, gamma', ., gamma')`` with ``P = D_t J``.
    The range is limited to the dense part of ``traj``.
    """
    _check_tol(tol)
    if traj.dense is None:
        raise PreconditionError("trajectory needs dense output")
    N = m.N
    t1 = traj.t_dense_max
    if t_eval is None:
        t_eval = traj.t[traj.t <= t1]
    t_eval = np.asarray(t_eval, dtype=float)
    if t_eval.max() > t1 or t_eval.min() < 0.0:
        raise DomainError(f"t_eval must lie in [0, {t1}]")

    def rhs(t, y):
        g, gam, R, v = _geometry(m, traj.at(t))
        J, P = y[:N], y[N:]
        dJ = P - np.einsum("kij,i,j->k", gam, v, J)
        b = np.einsum("ijkl,i,j,l->k", R, J, v, v)
        dP = -np.einsum("kij,i,j->k", gam, v, P) - np.linalg.solve(g, b)
        return np.concatenate([dJ, dP])

    y0 = np.concatenate([np.asarray(J0, dtype=float), np.asarray(DJ0, dtype=float)])
    res = solve_ivp(rhs, (0.0, float(t_eval.max())), y0, method="RK45", rtol=tol, atol=1e-2 * tol,
                    t_eval=t_eval)
    if res.status < 0:
        _solver_failure(res, lambda y: y)
    J, P = res.y[:N].T, res.y[N:].T
    norm = np.empty(len(res.t))
    inner = np.empty(len(res.t))
    for i, t in enumerate(res.t):
        Z = traj.at(t)
        g, _, _ = metric_jet(m, Z[:N], 0)
        v = _velocity(m, Z)
        norm[i] = math.sqrt(J[i] @ g @ J[i])
        inner[i] = J[i] @ g @ v
    return JacobiState(res.t, J, P, norm, inner, traj)


def jacobi_floor_check(jac: JacobiState, kappa: float, beta: float, rel_slack: float = 1e-8) -> dict:
    """Compare ``|J|^2`` with ``A + B cosh_eta(2 sqrt(beta) t)`` and with the floor ``A``.

    ``|J(0)|`` is normalized to one before comparing.
    """
    from .verification import jacobi_floor, weighted_trig

    A, B, eta = jacobi_floor(kappa, beta)
    f = (jac.norm / jac.norm[0]) ** 2
    ch, _ = weighted_trig(eta, 2.0 * math.sqrt(beta) * jac.t)
    h = A + B * ch
    slack = rel_slack * np.maximum(1.0, f)
    return {
        "A": A,
        "B": B,
        "eta": eta,
        "c": math.sqrt(A),
        "min_f": float(f.min()),
        "min_margin_floor": float(np.min(f - A)),
        "min_margin_comparison": float(np.min(f - h + slack)),
        "pass": bool(np.all(f - A >= -slack) and np.all(f - h + slack >= 0)),
    }


def curvature_bound(m: AdmissibleMetric, pts) -> float:
    """``beta = -max`` of the curvature-operator eigenvalues over interior points."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    return float(-np.max(max_sectional_curvature(m, pts)))
