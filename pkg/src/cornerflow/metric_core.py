"""Admissible metrics in polar blowup coordinates and pointwise tensor calculus.

Points are packed as coordinate arrays ``p = (theta, x^1, ..., x^{n-1}, rho)``
of length ``N = n + 1`` (index 0 is theta, index n is rho).  Every evaluator
accepts either a :class:`PolarPoint` or an array of packed coordinates with
arbitrary leading batch dimensions.

An admissible metric is assembled from its 0-edge matrix

    G = blockdiag(1, k_rho(x), 1) + rho sin(theta) L,

where ``L`` holds the coefficients of the perturbation in the coframe
``(dtheta/sin, dx^s/(rho sin), drho/(rho sin))``.  In coordinates
``g_ij = e_i e_j G_ij`` with ``e = (1/sin theta, 1/(rho sin theta), ...)``, and
the compactified metric is ``gbar = (rho sin theta)^2 g = D G D`` with
``D = diag(rho, 1, ..., 1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Union

import numpy as np

from .errors import AccuracyError, DomainError, SingularEvaluationError

__all__ = [
    "PolarPoint",
    "SymTensor",
    "FDConfig",
    "KFamily",
    "ThetaKFamily",
    "PerturbationField",
    "AdmissibleMetric",
    "EdgeParts",
    "polar_from_cartesian",
    "cartesian_from_polar",
    "hyperbolic",
    "warped_k",
    "perturbed",
    "metric_from_family",
    "edge_parts",
    "metric_jet",
    "eval_metric",
    "eval_inverse_metric",
    "eval_compactified",
    "christoffel",
    "riemann",
    "pinch_residual",
    "hessian_cot_residual",
    "g_norm",
    "sectional_curvature",
    "max_sectional_curvature",
    "fd_jet",
]

ArrayLike = Union[np.ndarray, float]


# --------------------------------------------------------------------------
# points and tensors
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PolarPoint:
    """Point of the blowup in polar coordinates.

    Attributes:
        theta: Angle in ``[0, pi)``.
        x: Chart coordinates on the corner, length ``n - 1``.
        rho: Radial blowup coordinate, ``rho >= 0``.
    """

    theta: float
    x: tuple
    rho: float

    def __post_init__(self):
        x = tuple(float(v) for v in np.atleast_1d(np.asarray(self.x, dtype=float)))
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "theta", float(self.theta))
        object.__setattr__(self, "rho", float(self.rho))
        if len(x) < 1:
            raise DomainError("x must have length n - 1 >= 1")
        if not (0.0 <= self.theta < math.pi):
            raise DomainError(f"theta={self.theta!r} outside [0, pi)")
        if not self.rho >= 0.0:
            raise DomainError(f"rho={self.rho!r} must be nonnegative")

    @property
    def n(self) -> int:
        return len(self.x) + 1

    @property
    def r(self) -> float:
        return self.rho * math.sin(self.theta)

    @property
    def y(self) -> float:
        return self.rho * math.cos(self.theta)

    @property
    def coords(self) -> np.ndarray:
        return np.array([self.theta, *self.x, self.rho])

    @classmethod
    def from_coords(cls, p) -> "PolarPoint":
        p = np.asarray(p, dtype=float)
        return cls(p[0], p[1:-1], p[-1])


@dataclass(frozen=True)
class SymTensor:
    """Dense coordinate components with a symmetry tag.

    ``symmetry`` is one of ``"sym"`` (rank 2), ``"lower-sym"`` (rank 3,
    symmetric in the last two indices) or ``"curvature"`` (rank 4).
    """

    components: np.ndarray
    symmetry: str

    @property
    def rank(self) -> int:
        return self.components.ndim

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.components, dtype=dtype)


def polar_from_cartesian(r: float, y: float) -> tuple[float, float]:
    """Convert ``(r, y) = (rho sin theta, rho cos theta)`` to ``(theta, rho)``."""
    if r < 0:
        raise DomainError("r must be nonnegative")
    if r == 0 and y == 0:
        raise DomainError("the origin is blown up and has no single polar preimage")
    if r == 0 and y < 0:
        raise DomainError("theta = pi lies outside the polar chart")
    theta = math.atan2(r, y)
    if theta >= math.pi:
        raise DomainError("theta rounds to pi; the point lies outside the polar chart")
    return theta, math.hypot(r, y)


def cartesian_from_polar(theta: float, rho: float) -> tuple[float, float]:
    """Inverse of :func:`polar_from_cartesian`."""
    return rho * math.sin(theta), rho * math.cos(theta)


def _coords(p) -> np.ndarray:
    if isinstance(p, PolarPoint):
        return p.coords
    return np.asarray(p, dtype=float)


# --------------------------------------------------------------------------
# finite differences
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FDConfig:
    """Finite-difference scheme.

    Attributes:
        order: Order of the central stencils (2 or 4).
        base_step: First-derivative step relative to ``max(rho, 0.01)``.
        richardson: Number of Richardson levels (0 or 1).
        second_step: Second-derivative step relative to the same scale.
    """

    order: int = 4
    base_step: float = 1e-4
    richardson: int = 1
    second_step: float = 1e-2

    def __post_init__(self):
        if self.order not in (2, 4):
            raise DomainError("FD order must be 2 or 4")
        if self.richardson not in (0, 1):
            raise DomainError("richardson must be 0 or 1")


_STENCIL1 = {
    2: (np.array([-1.0, 1.0]), np.array([-0.5, 0.5])),
    4: (np.array([-2.0, -1.0, 1.0, 2.0]), np.array([1.0, -8.0, 8.0, -1.0]) / 12.0),
}
_STENCIL2 = {
    2: (np.array([-1.0, 0.0, 1.0]), np.array([1.0, -2.0, 1.0])),
    4: (
        np.array([-2.0, -1.0, 0.0, 1.0, 2.0]),
        np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0,
    ),
}


def _bcast(h: np.ndarray, ndim: int) -> np.ndarray:
    return h.reshape(h.shape + (1,) * (ndim - h.ndim))


def _first_derivative(fun, p, c, h, order):
    offs, w = _STENCIL1[order]
    shift = np.zeros((len(offs),) + p.shape)
    shift[..., c] = offs.reshape((-1,) + (1,) * (p.ndim - 1)) * h
    f = fun(p[None] + shift)
    d = np.tensordot(w, f, axes=(0, 0))
    return d / _bcast(h, d.ndim)


def _second_derivative(fun, p, c, d, hc, hd, order):
    if c == d:
        offs, w = _STENCIL2[order]
        shift = np.zeros((len(offs),) + p.shape)
        shift[..., c] = offs.reshape((-1,) + (1,) * (p.ndim - 1)) * hc
        f = fun(p[None] + shift)
        out = np.tensordot(w, f, axes=(0, 0))
        return out / _bcast(hc * hc, out.ndim)
    offs, w = _STENCIL1[order]
    k = len(offs)
    shift = np.zeros((k, k) + p.shape)
    bshape = (1,) * (p.ndim - 1)
    shift[..., c] += offs.reshape((k, 1) + bshape) * hc
    shift[..., d] += offs.reshape((1, k) + bshape) * hd
    f = fun(p[None, None] + shift)
    out = np.tensordot(np.outer(w, w), f, axes=([0, 1], [0, 1]))
    return out / _bcast(hc * hd, out.ndim)


def fd_jet(fun, p, steps1, steps2=None, order=4, richardson=1, second=False):
    """Finite-difference jet of ``fun`` at packed coordinates ``p``.

    Args:
        fun: Vectorized map from ``(..., N)`` coordinates to ``(..., *S)``.
        p: Coordinates, shape ``(..., N)``.
        steps1: First-derivative steps per coordinate, shape ``(..., N)``.
        steps2: Second-derivative steps (required when ``second``).
        order: Central stencil order.
        richardson: Richardson levels (0 or 1).
        second: Whether to return second derivatives.

    Returns:
        ``(f, df, ddf)`` with ``df`` of shape ``(..., N, *S)`` and ``ddf`` of
        shape ``(..., N, N, *S)`` (``None`` unless ``second``).
    """
    p = np.asarray(p, dtype=float)
    N = p.shape[-1]
    f0 = fun(p)
    lead = p.ndim - 1
    factor = 2.0**order

    def rich(est):
        if richardson:
            return (factor * est(0.5) - est(1.0)) / (factor - 1.0)
        return est(1.0)

    d1 = [
        rich(lambda s, c=c: _first_derivative(fun, p, c, s * steps1[..., c], order))
        for c in range(N)
    ]
    df = np.stack(d1, axis=lead)
    ddf = None
    if second:
        ddf = np.empty(p.shape[:-1] + (N, N) + f0.shape[lead:])
        for c in range(N):
            for d in range(c, N):
                val = rich(
                    lambda s, c=c, d=d: _second_derivative(
                        fun, p, c, d, s * steps2[..., c], s * steps2[..., d], order
                    )
                )
                ddf[(Ellipsis, c, d) + (slice(None),) * (f0.ndim - lead)] = val
                ddf[(Ellipsis, d, c) + (slice(None),) * (f0.ndim - lead)] = val
    return f0, df, ddf


# --------------------------------------------------------------------------
# metric data
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class KFamily:
    """One-parameter family of metrics ``k_rho`` on the corner chart.

    Attributes:
        eval: ``(rho, x) -> (..., n-1, n-1)`` symmetric positive definite.
        jet: Optional ``(rho, x) -> (k, dk, ddk)`` with derivatives over the
            coordinates ``(x^1, ..., x^{n-1}, rho)``: ``dk`` has shape
            ``(..., n, n-1, n-1)`` and ``ddk`` ``(..., n, n, n-1, n-1)``.
        lambda_min: Lower eigenvalue bound checked by public evaluators.
    """

    eval: Callable
    jet: Optional[Callable] = None
    lambda_min: float = 1e-6

    theta_dependent = False


@dataclass(frozen=True)
class ThetaKFamily:
    """Extension: ``k_{theta, rho}`` depending on theta with ``k_{theta,0}`` fixed.

    ``eval(theta, x, rho)``; ``jet`` returns derivatives over all packed
    coordinates.  The theta-independence at ``rho = 0`` is checked by
    :func:`check_theta_family`.
    """

    eval: Callable
    jet: Optional[Callable] = None
    lambda_min: float = 1e-6

    theta_dependent = True


@dataclass(frozen=True)
class PerturbationField:
    """Coefficients of the perturbation in the 0-edge coframe.

    Attributes:
        eval: ``(theta, x, rho) -> (..., N, N)`` symmetric, bounded.
        jet: Optional ``(theta, x, rho) -> (L, dL, ddL)`` over packed coordinates.
    """

    eval: Callable
    jet: Optional[Callable] = None


@dataclass(frozen=True)
class AdmissibleMetric:
    """Admissible metric data.

    Attributes:
        n: Dimension parameter (the manifold has dimension ``n + 1``).
        k: Family of corner metrics.
        ell: Perturbation coefficients.
        fd: Finite-difference configuration.
        exact_derivatives: Use analytic jets when the components provide them.
            When ``False`` the tensors are differentiated numerically.
        name: Label used in reports.
    """

    n: int
    k: Union[KFamily, ThetaKFamily]
    ell: PerturbationField
    fd: FDConfig = field(default_factory=FDConfig)
    exact_derivatives: bool = True
    name: str = "custom"

    def __post_init__(self):
        if self.n < 2:
            raise DomainError("n must be >= 2")

    @property
    def N(self) -> int:
        return self.n + 1

    def with_fd(self) -> "AdmissibleMetric":
        """Copy of this metric that differentiates numerically."""
        return AdmissibleMetric(self.n, self.k, self.ell, self.fd, False, self.name + "+fd")


def check_theta_family(m: AdmissibleMetric, xs, thetas) -> float:
    """Max deviation of ``k_{theta,0}`` across ``thetas`` (zero for plain families)."""
    if not m.k.theta_dependent:
        return 0.0
    xs = np.atleast_2d(xs)
    vals = [m.k.eval(np.full(len(xs), t), xs, np.zeros(len(xs))) for t in thetas]
    return float(max(np.max(np.abs(v - vals[0])) for v in vals))


class EdgeParts(NamedTuple):
    """Component jets embedded over the packed coordinates.

    ``k`` has shape ``(..., n-1, n-1)``, ``dk`` ``(..., N, n-1, n-1)``;
    ``L`` has shape ``(..., N, N)``, ``dL`` ``(..., N, N, N)``; second jets
    carry one more coordinate axis (``None`` when not requested).
    """

    k: np.ndarray
    dk: np.ndarray
    ddk: Optional[np.ndarray]
    L: np.ndarray
    dL: np.ndarray
    ddL: Optional[np.ndarray]


def _component_steps(m, p, scale):
    h = scale * np.maximum(p[..., -1], 0.01)
    return np.repeat(h[..., None], p.shape[-1], axis=-1)


def _k_packed(m):
    n = m.n
    if m.k.theta_dependent:
        return lambda q: m.k.eval(q[..., 0], q[..., 1:n], q[..., n])
    return lambda q: m.k.eval(q[..., n], q[..., 1:n])


def _ell_packed(m):
    n = m.n
    return lambda q: m.ell.eval(q[..., 0], q[..., 1:n], q[..., n])


def edge_parts(m: AdmissibleMetric, p, order: int = 1) -> EdgeParts:
    """Jets of ``k`` and ``L`` at packed coordinates ``p`` (orders 0-2)."""
    p = _coords(p)
    n, N = m.n, m.N
    theta, x, rho = p[..., 0], p[..., 1:n], p[..., n]
    use_exact = m.exact_derivatives
    second = order >= 2

    # k
    if order == 0:
        k = _k_packed(m)(p)
        dk = ddk = None
    elif use_exact and m.k.jet is not None:
        if m.k.theta_dependent:
            k, dk, ddk = m.k.jet(theta, x, rho)
        else:
            k, dkm, ddkm = m.k.jet(rho, x)
            dk = np.zeros(p.shape[:-1] + (N, n - 1, n - 1))
            dk[..., 1:, :, :] = dkm
            ddk = np.zeros(p.shape[:-1] + (N, N, n - 1, n - 1))
            ddk[..., 1:, 1:, :, :] = ddkm
    else:
        k, dk, ddk = fd_jet(
            _k_packed(m),
            p,
            _component_steps(m, p, m.fd.base_step),
            _component_steps(m, p, m.fd.second_step),
            m.fd.order,
            m.fd.richardson,
            second,
        )
        if not m.k.theta_dependent:
            dk[..., 0, :, :] = 0.0
            if ddk is not None:
                ddk[..., 0, :, :, :] = 0.0
                ddk[..., :, 0, :, :] = 0.0

    # L
    if order == 0:
        L = _ell_packed(m)(p)
        dL = ddL = None
    elif use_exact and m.ell.jet is not None:
        L, dL, ddL = m.ell.jet(theta, x, rho)
    else:
        L, dL, ddL = fd_jet(
            _ell_packed(m),
            p,
            _component_steps(m, p, m.fd.base_step),
            _component_steps(m, p, m.fd.second_step),
            m.fd.order,
            m.fd.richardson,
            second,
        )
    if not second:
        ddk = ddL = None
    return EdgeParts(k, dk, ddk, L, dL, ddL)


def _block(m, k, shape):
    n = m.n
    B = np.zeros(shape + (m.N, m.N))
    B[..., 0, 0] = 1.0
    B[..., n, n] = 1.0
    B[..., 1:n, 1:n] = k
    return B


def _edge_matrix_jet(m, p, order):
    """0-edge matrix ``G`` and its coordinate derivatives."""
    parts = edge_parts(m, p, order)
    n, N = m.n, m.N
    shape = p.shape[:-1]
    theta, rho = p[..., 0], p[..., n]
    s, c = np.sin(theta), np.cos(theta)
    r = rho * s
    G = _block(m, parts.k, shape) + r[..., None, None] * parts.L
    if order == 0:
        return G, None, None
    dr = np.zeros(shape + (N,))
    dr[..., 0] = rho * c
    dr[..., n] = s
    dB = np.zeros(shape + (N, N, N))
    dB[..., :, 1:n, 1:n] = parts.dk
    dG = dB + dr[..., :, None, None] * parts.L[..., None, :, :] + r[..., None, None, None] * parts.dL
    if order < 2:
        return G, dG, None
    ddr = np.zeros(shape + (N, N))
    ddr[..., 0, 0] = -rho * s
    ddr[..., 0, n] = c
    ddr[..., n, 0] = c
    ddB = np.zeros(shape + (N, N, N, N))
    ddB[..., :, :, 1:n, 1:n] = parts.ddk
    ddG = (
        ddB
        + ddr[..., :, :, None, None] * parts.L[..., None, None, :, :]
        + dr[..., :, None, None, None] * parts.dL[..., None, :, :, :]
        + dr[..., None, :, None, None] * parts.dL[..., :, None, :, :]
        + r[..., None, None, None, None] * parts.ddL
    )
    return G, dG, ddG


def _check_lambda(m, k):
    if m.n - 1 == 1:
        lam = np.min(k[..., 0, 0])
    else:
        lam = np.min(np.linalg.eigvalsh(k))
    if lam < m.k.lambda_min:
        raise DomainError(f"k has eigenvalue {lam:.3e} below lambda_min={m.k.lambda_min}")


def _check_interior(p):
    if np.any(p[..., 0] <= 0.0) or np.any(p[..., -1] <= 0.0):
        raise SingularEvaluationError(
            "theta = 0 or rho = 0: the metric is singular there; use eval_compactified"
        )
    if np.any(p[..., 0] >= math.pi):
        raise DomainError("theta must be < pi")


def _log_scales(m, p, order):
    """Derivatives of ``sigma_ij = l_i + l_j`` with ``e_i = exp(l_i)``."""
    n, N = m.n, m.N
    shape = p.shape[:-1]
    theta, rho = p[..., 0], p[..., n]
    s = np.sin(theta)
    l = np.empty(shape + (N,))
    l[..., 0] = -np.log(s)
    l[..., 1:] = (-np.log(s) - np.log(rho))[..., None]
    sigma = l[..., :, None] + l[..., None, :]
    if order == 0:
        return sigma, None, None
    dl = np.zeros(shape + (N, N))
    dl[..., 0, :] = (-np.cos(theta) / s)[..., None]
    dl[..., n, 1:] = (-1.0 / rho)[..., None]
    dsig = dl[..., :, :, None] + dl[..., :, None, :]
    if order < 2:
        return sigma, dsig, None
    ddl = np.zeros(shape + (N, N, N))
    ddl[..., 0, 0, :] = (1.0 / s**2)[..., None]
    ddl[..., n, n, 1:] = (1.0 / rho**2)[..., None]
    ddsig = ddl[..., :, :, :, None] + ddl[..., :, :, None, :]
    return sigma, dsig, ddsig


def _metric_value(m, p):
    G, _, _ = _edge_matrix_jet(m, p, 0)
    sigma, _, _ = _log_scales(m, p, 0)
    return np.exp(sigma) * G


def metric_jet(m: AdmissibleMetric, p, order: int = 1):
    """Metric components and coordinate derivatives.

    Args:
        m: Metric.
        p: Interior point(s).
        order: Highest derivative order (0, 1 or 2).

    Returns:
        ``(g, dg, ddg)`` with ``dg[..., c, i, j] = d_c g_ij`` and
        ``ddg[..., c, d, i, j] = d_c d_d g_ij`` (``None`` above ``order``).
    """
    p = _coords(p)
    _check_interior(p)
    if order == 0:
        return _metric_value(m, p), None, None
    if m.exact_derivatives:
        G, dG, ddG = _edge_matrix_jet(m, p, order)
        sigma, dsig, ddsig = _log_scales(m, p, order)
        P = np.exp(sigma)
        g = P * G
        dg = P[..., None, :, :] * (dsig * G[..., None, :, :] + dG)
        ddg = None
        if order >= 2:
            ddg = P[..., None, None, :, :] * (
                (ddsig + dsig[..., :, None, :, :] * dsig[..., None, :, :, :]) * G[..., None, None, :, :]
                + dsig[..., :, None, :, :] * dG[..., None, :, :, :]
                + dsig[..., None, :, :, :] * dG[..., :, None, :, :]
                + ddG
            )
        return g, dg, ddg
    n = m.n
    scale = np.maximum(p[..., n], 0.01)
    h = np.repeat((m.fd.base_step * scale)[..., None], m.N, axis=-1)
    h[..., 0] = m.fd.base_step * np.sin(p[..., 0])
    h2 = np.repeat((m.fd.second_step * scale)[..., None], m.N, axis=-1)
    h2[..., 0] = m.fd.second_step * np.sin(p[..., 0])
    if np.any(p[..., n] < 10.0 * (h2 if order >= 2 else h)[..., n]):
        raise AccuracyError("rho is below 10x the finite-difference reach")
    return fd_jet(lambda q: _metric_value(m, q), p, h, h2, m.fd.order, m.fd.richardson, order >= 2)


# --------------------------------------------------------------------------
# builtin families
# --------------------------------------------------------------------------


def _identity_k(n):
    def ev(rho, x):
        rho = np.asarray(rho, dtype=float)
        return np.broadcast_to(np.eye(n - 1), rho.shape + (n - 1, n - 1)).copy()

    def jet(rho, x):
        rho = np.asarray(rho, dtype=float)
        k = ev(rho, x)
        return k, np.zeros(rho.shape + (n, n - 1, n - 1)), np.zeros(rho.shape + (n, n, n - 1, n - 1))

    return KFamily(ev, jet)


def _warped_k(n, warp):
    eye = np.eye(n - 1)

    def ev(rho, x):
        w = np.exp(2.0 * warp * rho * np.cos(x[..., 0]))
        return w[..., None, None] * eye

    def jet(rho, x):
        rho = np.asarray(rho, dtype=float)
        c1, s1 = np.cos(x[..., 0]), np.sin(x[..., 0])
        w = np.exp(2.0 * warp * rho * c1)
        # phi = 2 a rho cos(x1); derivative index 0 is x1, index n-1 is rho
        dphi = np.zeros(rho.shape + (n,))
        dphi[..., 0] = -2.0 * warp * rho * s1
        dphi[..., n - 1] = 2.0 * warp * c1
        ddphi = np.zeros(rho.shape + (n, n))
        ddphi[..., 0, 0] = -2.0 * warp * rho * c1
        ddphi[..., 0, n - 1] = ddphi[..., n - 1, 0] = -2.0 * warp * s1
        dw = w[..., None] * dphi
        ddw = w[..., None, None] * (ddphi + dphi[..., :, None] * dphi[..., None, :])
        return w[..., None, None] * eye, dw[..., None, None] * eye, ddw[..., None, None] * eye

    return KFamily(ev, jet)


def _zero_ell(N):
    def ev(theta, x, rho):
        theta = np.asarray(theta, dtype=float)
        return np.zeros(theta.shape + (N, N))

    def jet(theta, x, rho):
        theta = np.asarray(theta, dtype=float)
        return ev(theta, x, rho), np.zeros(theta.shape + (N, N, N)), np.zeros(theta.shape + (N, N, N, N))

    return PerturbationField(ev, jet)


def _trig_ell(N, amplitude):
    n = N - 1
    I = np.eye(N)
    U = np.ones((N, N)) - I
    V = np.zeros((N, N))
    V[0, n] = V[n, 0] = 1.0
    W = np.zeros((N, N))
    W[0, 1] = W[1, 0] = 1.0

    def ev(theta, x, rho):
        theta = np.asarray(theta, dtype=float)
        c1, s1 = np.cos(x[..., 0]), np.sin(x[..., 0])
        M = (
            I
            + 0.5 * c1[..., None, None] * U
            + 0.3 * np.cos(theta)[..., None, None] * V
            + 0.25 * (rho * s1)[..., None, None] * W
        )
        return amplitude * M

    def jet(theta, x, rho):
        theta = np.asarray(theta, dtype=float)
        rho = np.asarray(rho, dtype=float)
        c1, s1 = np.cos(x[..., 0]), np.sin(x[..., 0])
        ct, st = np.cos(theta), np.sin(theta)
        e = (Ellipsis, None, None)
        dL = np.zeros(theta.shape + (N, N, N))
        dL[..., 0, :, :] = -0.3 * st[e] * V
        dL[..., 1, :, :] = -0.5 * s1[e] * U + 0.25 * (rho * c1)[e] * W
        dL[..., n, :, :] = 0.25 * s1[e] * W
        ddL = np.zeros(theta.shape + (N, N, N, N))
        ddL[..., 0, 0, :, :] = -0.3 * ct[e] * V
        ddL[..., 1, 1, :, :] = -0.5 * c1[e] * U - 0.25 * (rho * s1)[e] * W
        ddL[..., 1, n, :, :] = ddL[..., n, 1, :, :] = 0.25 * c1[e] * W
        return ev(theta, x, rho), amplitude * dL, amplitude * ddL

    return PerturbationField(ev, jet)


def hyperbolic(n: int = 2) -> AdmissibleMetric:
    """The hyperbolic model: ``k = I`` and no perturbation."""
    return AdmissibleMetric(n, _identity_k(n), _zero_ell(n + 1), name="hyperbolic")


def warped_k(n: int = 2, warp: float = 0.2) -> AdmissibleMetric:
    """``k_rho = exp(2 warp rho cos x^1) I`` and no perturbation."""
    return AdmissibleMetric(n, _warped_k(n, warp), _zero_ell(n + 1), name="warped-k")


def perturbed(n: int = 2, amplitude: float = 0.1, warp: float = 0.0) -> AdmissibleMetric:
    """Trigonometric perturbation family with unit coframe amplitude.

    ``L = amplitude (I + cos(x^1)/2 U + 0.3 cos(theta) V + rho sin(x^1)/4 W)``
    where ``U`` is the off-diagonal ones matrix, ``V`` couples theta and rho
    and ``W`` couples theta and ``x^1``.
    """
    k = _warped_k(n, warp) if warp else _identity_k(n)
    return AdmissibleMetric(n, k, _trig_ell(n + 1, amplitude), name="perturbed")


def metric_from_family(family: str, n: int = 2, amplitude: float = 0.0, warp: float = 0.0,
                       lambda_min: float = 1e-6) -> AdmissibleMetric:
    """Construct a builtin metric by family name."""
    if family == "hyperbolic":
        m = hyperbolic(n)
    elif family == "warped-k":
        m = warped_k(n, warp)
    elif family == "perturbed":
        m = perturbed(n, amplitude, warp)
    else:
        raise DomainError(f"unknown metric family {family!r}")
    k = m.k
    return AdmissibleMetric(m.n, KFamily(k.eval, k.jet, lambda_min), m.ell, name=m.name)


# --------------------------------------------------------------------------
# pointwise tensors
# --------------------------------------------------------------------------


def eval_metric(m: AdmissibleMetric, p) -> SymTensor:
    """Coordinate components ``g_ij`` at an interior point."""
    p = _coords(p)
    _check_interior(p)
    k = edge_parts(m, p, 0).k
    _check_lambda(m, k)
    g = _metric_value(m, p)
    g = 0.5 * (g + np.swapaxes(g, -1, -2))
    return SymTensor(g, "sym")


def eval_inverse_metric(m: AdmissibleMetric, p) -> SymTensor:
    """Inverse metric ``g^ij`` via the 0-edge matrix (``g^-1 = E^-1 G^-1 E^-1``)."""
    p = _coords(p)
    _check_interior(p)
    G, _, _ = _edge_matrix_jet(m, p, 0)
    sigma, _, _ = _log_scales(m, p, 0)
    ginv = np.exp(-sigma) * np.linalg.inv(G)
    ginv = 0.5 * (ginv + np.swapaxes(ginv, -1, -2))
    return SymTensor(ginv, "sym")


def compactified(m: AdmissibleMetric, p) -> np.ndarray:
    """Array form of :func:`eval_compactified` (no domain checks)."""
    p = _coords(p)
    G, _, _ = _edge_matrix_jet(m, p, 0)
    d = np.ones(p.shape[:-1] + (m.N,))
    d[..., 0] = p[..., m.n]
    gb = d[..., :, None] * G * d[..., None, :]
    return 0.5 * (gb + np.swapaxes(gb, -1, -2))


def eval_compactified(m: AdmissibleMetric, p) -> SymTensor:
    """Compactified metric ``gbar = (rho sin theta)^2 g``, smooth up to theta = rho = 0."""
    return SymTensor(compactified(m, p), "sym")


def _christoffel_parts(g, dg, ddg=None):
    ginv = np.linalg.inv(g)
    first = 0.5 * (
        np.einsum("...ilj->...lij", dg) + np.einsum("...jli->...lij", dg) - dg
    )
    gam = np.einsum("...kl,...lij->...kij", ginv, first)
    if ddg is None:
        return ginv, gam, None
    dginv = -np.einsum("...ka,...mab,...bl->...mkl", ginv, dg, ginv)
    dfirst = 0.5 * (
        np.einsum("...milj->...mlij", ddg) + np.einsum("...mjli->...mlij", ddg) - ddg
    )
    dgam = np.einsum("...mkl,...lij->...mkij", dginv, first) + np.einsum(
        "...kl,...mlij->...mkij", ginv, dfirst
    )
    return ginv, gam, dgam


def christoffel(m: AdmissibleMetric, p) -> SymTensor:
    """Christoffel symbols ``Gamma^k_ij`` stored as ``[..., k, i, j]``."""
    g, dg, _ = metric_jet(m, p, 1)
    _, gam, _ = _christoffel_parts(g, dg)
    gam = 0.5 * (gam + np.swapaxes(gam, -1, -2))
    return SymTensor(gam, "lower-sym")


def _riemann_from_jet(g, dg, ddg, symmetrize=True):
    _, gam, dgam = _christoffel_parts(g, dg, ddg)
    rup = (
        np.einsum("...cadb->...abcd", dgam)
        - np.einsum("...dacb->...abcd", dgam)
        + np.einsum("...ace,...edb->...abcd", gam, gam)
        - np.einsum("...ade,...ecb->...abcd", gam, gam)
    )
    R = np.einsum("...ae,...ebcd->...abcd", g, rup)
    if symmetrize:
        R = 0.5 * (R - np.swapaxes(R, -4, -3))
        R = 0.5 * (R - np.swapaxes(R, -2, -1))
        R = 0.5 * (R + np.moveaxis(R, (-4, -3), (-2, -1)))
    return R, gam


def riemann(m: AdmissibleMetric, p, symmetrize: bool = True) -> SymTensor:
    """Fully lowered curvature ``R_ijkl``.

    The convention makes the sectional curvature of the plane spanned by
    ``X, Y`` equal to ``R(X, Y, X, Y) / (|X|^2 |Y|^2 - <X, Y>^2)``.
    """
    g, dg, ddg = metric_jet(m, p, 2)
    R, _ = _riemann_from_jet(g, dg, ddg, symmetrize)
    return SymTensor(R, "curvature")


def _kulkarni_identity(g):
    return np.einsum("...ik,...jl->...ijkl", g, g) - np.einsum("...il,...jk->...ijkl", g, g)


def pinch_residual(m: AdmissibleMetric, p) -> tuple[SymTensor, np.ndarray]:
    """``T = R_ijkl + (g_ik g_jl - g_il g_jk)`` and its g-norm."""
    p = _coords(p)
    g, dg, ddg = metric_jet(m, p, 2)
    R, _ = _riemann_from_jet(g, dg, ddg)
    T = R + _kulkarni_identity(g)
    return SymTensor(T, "curvature"), _norm_array(T, g)


def _hessian_residual(g, gam, theta):
    s = np.sin(theta)
    w = np.cos(theta) / s
    dw = -1.0 / s**2
    hess = -gam[..., 0, :, :] * dw[..., None, None]
    hess[..., 0, 0] += 2.0 * w / s**2
    return hess - w[..., None, None] * g


def hessian_cot_residual(m: AdmissibleMetric, p) -> tuple[SymTensor, np.ndarray]:
    """``E = Hess(cot theta) - cot(theta) g`` and ``|E|_g``."""
    p = _coords(p)
    g, dg, _ = metric_jet(m, p, 1)
    _, gam, _ = _christoffel_parts(g, dg)
    E = _hessian_residual(g, gam, p[..., 0])
    E = 0.5 * (E + np.swapaxes(E, -1, -2))
    return SymTensor(E, "sym"), _norm_array(E, g)


def _frame(g):
    """Lower-triangular ``A`` with ``A g A^T = I``."""
    C = np.linalg.cholesky(g)
    eye = np.broadcast_to(np.eye(g.shape[-1]), g.shape)
    return np.linalg.solve(C, eye)


_FRAME_SUBSCRIPTS = {
    1: "...ai,...i->...a",
    2: "...ai,...bj,...ij->...ab",
    3: "...ai,...bj,...ck,...ijk->...abc",
    4: "...ai,...bj,...ck,...dl,...ijkl->...abcd",
}


def _to_frame(T, A, rank):
    return np.einsum(_FRAME_SUBSCRIPTS[rank], *([A] * rank), T)


def _norm_array(T, g, rank=None):
    rank = rank if rank is not None else T.ndim - (g.ndim - 2)
    A = _frame(g)
    Tf = _to_frame(T, A, rank)
    axes = tuple(range(-rank, 0))
    return np.sqrt(np.sum(Tf * Tf, axis=axes))


def g_norm(T, m: AdmissibleMetric, p) -> float:
    """Norm of a covariant tensor with every slot contracted by ``g^-1``."""
    comps = np.asarray(T.components if isinstance(T, SymTensor) else T, dtype=float)
    g = eval_metric(m, p).components
    return _norm_array(comps, g, comps.ndim - (g.ndim - 2))


def sectional_curvature(m: AdmissibleMetric, p, i: int, j: int) -> np.ndarray:
    """Sectional curvature of the coordinate plane spanned by ``d_i, d_j``."""
    g, dg, ddg = metric_jet(m, _coords(p), 2)
    R, _ = _riemann_from_jet(g, dg, ddg)
    num = R[..., i, j, i, j]
    return num / (g[..., i, i] * g[..., j, j] - g[..., i, j] ** 2)


def max_sectional_curvature(m: AdmissibleMetric, p) -> np.ndarray:
    """Upper bound for the sectional curvatures at ``p``.

    Largest eigenvalue of the curvature operator on orthonormal bivectors;
    it equals the maximal sectional curvature in dimension three.
    """
    g, dg, ddg = metric_jet(m, _coords(p), 2)
    R, _ = _riemann_from_jet(g, dg, ddg)
    Rf = _to_frame(R, _frame(g), 4)
    N = g.shape[-1]
    pairs = [(a, b) for a in range(N) for b in range(a + 1, N)]
    ia = [a for a, _ in pairs]
    ib = [b for _, b in pairs]
    M = np.stack([Rf[..., a, b, :, :][..., ia, ib] for a, b in pairs], axis=-2)
    M = 0.5 * (M + np.swapaxes(M, -1, -2))
    return np.linalg.eigvalsh(M)[..., -1]
