"""Regularized normal geodesic flow from the finite boundary to infinity.

Phase-space states are packed as ``Z = (theta, x, rho, xibar0, xibar_1..xibar_n)``
of length ``2N``, with the rescaled covariables ``xibar0 = sin(theta) xi_0`` and
``xibar_mu = rho xi_mu``.  In these variables the Hamiltonian vector field of
``H = |xi|^2_g / 2`` factors as ``sin(theta) * F(Z)`` with ``F`` smooth up to
``rho = 0`` and ``theta = 0``.

Three parametrizations of the same flow are provided:

* arclength ``t`` (:func:`integrate`), carrying ``sigma = log tan(theta/2)``
  internally so that theta keeps full relative accuracy as it decays;
* the angle theta itself near ``theta = 0`` (:func:`theta_parametrized_tail`);
* the compactified parameter ``tau = 1 - exp(-t)`` (:func:`integrate_compactified`),
  which is regular through ``tau = 1`` and is used by the exponential map.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .errors import DomainError, IntegrationError, PreconditionError, RegularityError
from .metric_core import AdmissibleMetric, PolarPoint, _edge_matrix_jet, edge_parts

__all__ = [
    "FlowState",
    "BoundaryQ",
    "Trajectory",
    "CompactifiedFlow",
    "hamiltonian_field",
    "rescaled_norm",
    "unit_normal",
    "initial_state",
    "initial_states",
    "flow_rhs",
    "integrate",
    "boundary_fiber_theta",
    "theta_parametrized_tail",
    "reparam_tau",
    "integrate_compactified",
    "tau_velocity",
    "write_trajectory_csv",
    "write_trajectory_binary",
    "read_trajectory_binary",
]

TAIL_FLOOR = 1e-9  # below this sin(theta) the ratio (1 + zeta0)/sin(theta) is frozen to 0
BINARY_VERSION = 1


# --------------------------------------------------------------------------
# states and boundary data
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FlowState:
    """Rescaled phase-space point.

    Attributes:
        theta: Polar angle.
        x: Corner chart coordinates, length ``n - 1``.
        rho: Radial coordinate.
        xibar0: ``sin(theta) xi_0``.
        xibar: ``rho xi_mu`` for ``mu = 1..n``.
    """

    theta: float
    x: tuple
    rho: float
    xibar0: float
    xibar: tuple

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(v) for v in np.atleast_1d(self.x)))
        object.__setattr__(self, "xibar", tuple(float(v) for v in np.atleast_1d(self.xibar)))
        if len(self.xibar) != len(self.x) + 1:
            raise DomainError("xibar must have length n")

    @property
    def n(self) -> int:
        return len(self.x) + 1

    @property
    def array(self) -> np.ndarray:
        return np.array([self.theta, *self.x, self.rho, self.xibar0, *self.xibar])

    @property
    def point(self) -> PolarPoint:
        return PolarPoint(self.theta, self.x, self.rho)

    @classmethod
    def from_array(cls, Z) -> "FlowState":
        Z = np.asarray(Z, dtype=float)
        N = Z.shape[-1] // 2
        return cls(Z[0], Z[1 : N - 1], Z[N - 1], Z[N], Z[N + 1 :])


@dataclass(frozen=True)
class BoundaryQ:
    """Finite boundary written as a graph ``theta = psi(x, rho)``.

    Attributes:
        n: Dimension parameter.
        psi: ``(x, rho) -> theta`` for ``x`` of shape ``(..., n-1)``.
        grad: ``(x, rho) -> (..., n)`` derivatives over ``(x^1..x^{n-1}, rho)``.
        hess: ``(x, rho) -> (..., n, n)`` second derivatives.
        theta_lo: Lower bound of ``psi`` on the working domain.
        theta_hi: Upper bound of ``psi`` on the working domain.
        constant_angle: Angle at ``rho = 0`` when it is independent of ``x``.
        spec: Plain-data description used in reports.
    """

    n: int
    psi: Callable
    grad: Callable
    hess: Callable
    theta_lo: float
    theta_hi: float
    constant_angle: Optional[float] = None
    spec: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 < self.theta_lo <= self.theta_hi < math.pi):
            raise PreconditionError(
                f"psi range [{self.theta_lo}, {self.theta_hi}] must lie inside (0, pi)"
            )

    @classmethod
    def constant(cls, theta0: float, n: int = 2) -> "BoundaryQ":
        """Constant-angle boundary ``psi = theta0``."""
        return cls.graph(theta0, n)

    @classmethod
    def graph(
        cls,
        theta0: float,
        n: int = 2,
        angle_amp: float = 0.0,
        rho_slope: float = 0.0,
        mixed: float = 0.0,
        rho_max: float = 1.0,
    ) -> "BoundaryQ":
        """``psi = theta0 + angle_amp sin x^1 + rho_slope rho + mixed rho sin x^1``."""

        def psi(x, rho):
            x = np.asarray(x, dtype=float)
            s1 = np.sin(x[..., 0])
            return theta0 + angle_amp * s1 + rho_slope * rho + mixed * rho * s1

        def grad(x, rho):
            x = np.asarray(x, dtype=float)
            rho = np.asarray(rho, dtype=float)
            out = np.zeros(np.broadcast(x[..., 0], rho).shape + (n,))
            c1, s1 = np.cos(x[..., 0]), np.sin(x[..., 0])
            out[..., 0] = angle_amp * c1 + mixed * rho * c1
            out[..., n - 1] = rho_slope + mixed * s1
            return out

        def hess(x, rho):
            x = np.asarray(x, dtype=float)
            rho = np.asarray(rho, dtype=float)
            out = np.zeros(np.broadcast(x[..., 0], rho).shape + (n, n))
            c1, s1 = np.cos(x[..., 0]), np.sin(x[..., 0])
            out[..., 0, 0] = -(angle_amp + mixed * rho) * s1
            out[..., 0, n - 1] = out[..., n - 1, 0] = mixed * c1
            return out

        spread = abs(angle_amp) + (abs(rho_slope) + abs(mixed)) * rho_max
        const = theta0 if angle_amp == 0.0 else None
        spec = dict(kind="graph" if (angle_amp or rho_slope or mixed) else "constant", theta0=theta0,
                    angle_amp=angle_amp, rho_slope=rho_slope, mixed=mixed)
        return cls(n, psi, grad, hess, theta0 - spread, theta0 + spread, const, spec)

    def point(self, x, rho) -> np.ndarray:
        """Packed coordinates of the point of Q over ``(x, rho)``."""
        x = np.asarray(x, dtype=float)
        rho = np.asarray(rho, dtype=float)
        th = np.asarray(self.psi(x, rho), dtype=float)
        shape = np.broadcast(th, rho).shape
        out = np.empty(shape + (self.n + 1,))
        out[..., 0] = th
        out[..., 1 : self.n] = x
        out[..., self.n] = rho
        return out


# --------------------------------------------------------------------------
# vector field
# --------------------------------------------------------------------------


def _regular_solve(m, Z):
    """Solve the regularized 0-edge system for ``(zeta0, chi)``."""
    n, N = m.n, m.N
    p = Z[..., :N]
    th, rho = p[..., 0], p[..., n]
    s = np.sin(th)
    parts = edge_parts(m, p, 1)
    shape = p.shape[:-1]
    Gh = np.zeros(shape + (N, N))
    Gh[..., 0, 0] = 1.0
    Gh[..., n, n] = 1.0
    Gh[..., 1:n, 1:n] = parts.k
    F = np.empty(shape + (N, N))
    F[...] = s[..., None, None]
    F[..., 0, 1:] = (s * s)[..., None]
    F[..., 1:, 0] = 1.0
    Gh = Gh + rho[..., None, None] * F * parts.L
    sol = np.linalg.solve(Gh, Z[..., N:, None])[..., 0]
    return sol, parts


def hamiltonian_field(m: AdmissibleMetric, Z):
    """Regular part ``F`` of the flow, ``dZ/dt = sin(theta) F(Z)``.

    Args:
        m: Metric.
        Z: Packed states ``(..., 2N)``.

    Returns:
        ``(F, zeta0, norm)`` where ``zeta0 = F_theta`` and ``norm`` is the
        rescaled form of ``g^{ij} xi_i xi_j``.
    """
    Z = np.asarray(Z, dtype=float)
    n, N = m.n, m.N
    th, rho = Z[..., 0], Z[..., n]
    xb = Z[..., N:]
    s, c = np.sin(th), np.cos(th)
    sol, parts = _regular_solve(m, Z)
    z0 = sol[..., 0]
    chi = sol[..., 1:]
    zeta = np.concatenate([z0[..., None], s[..., None] * chi], axis=-1)
    chix = chi[..., : n - 1]
    chin = chi[..., n - 1]
    qL = np.einsum("...i,...cij,...j->...c", zeta, parts.dL, zeta)
    qk = np.einsum("...i,...cij,...j->...c", chix, parts.dk, chix)
    L0 = np.einsum("...i,...ij,...j->...", zeta, parts.L, zeta)
    cx = np.sum(chi * xb[..., 1:], axis=-1)

    F = np.empty(Z.shape)
    F[..., 0] = z0
    F[..., 1:n] = (rho * s)[..., None] * chix
    F[..., n] = rho * s * chin
    F[..., N] = -s * c * cx + 0.5 * (s * s * qk[..., 0] + rho * c * L0 + rho * s * qL[..., 0])
    F[..., N + 1 : N + n] = (s * chin)[..., None] * xb[..., 1:n] + 0.5 * rho[..., None] * (
        s[..., None] * qk[..., 1:n] + rho[..., None] * qL[..., 1:n]
    )
    F[..., N + n] = s * chin * xb[..., n] - s * cx + 0.5 * rho * (s * qk[..., n] + L0 + rho * qL[..., n])
    norm = xb[..., 0] * z0 + s * s * cx
    return F, z0, norm


def _as_array(s) -> np.ndarray:
    return s.array if isinstance(s, FlowState) else np.asarray(s, dtype=float)


def rescaled_norm(m: AdmissibleMetric, s) -> np.ndarray:
    """``g^{ij} xi_i xi_j`` expressed in rescaled variables (1 on normal trajectories)."""
    return hamiltonian_field(m, _as_array(s))[2]


def flow_rhs(m: AdmissibleMetric, s) -> np.ndarray:
    """Time derivative of the packed state; requires ``theta > 0``."""
    Z = _as_array(s)
    if np.any(Z[..., 0] <= 0.0):
        raise DomainError("theta <= 0: use theta_parametrized_tail or the compactified flow")
    F, _, _ = hamiltonian_field(m, Z)
    return np.sin(Z[..., 0])[..., None] * F


def _check_on_q(Q, p):
    n = Q.n
    th = Q.psi(p[..., 1:n], p[..., n])
    if np.any(np.abs(p[..., 0] - th) > 1e-8):
        raise PreconditionError("point is not on Q (|theta - psi| > 1e-8)")


def initial_states(m: AdmissibleMetric, Q: BoundaryQ, x, rho) -> np.ndarray:
    """Packed initial states at the points of Q over ``(x, rho)`` (batched)."""
    n, N = m.n, m.N
    p = Q.point(x, rho)
    rho = p[..., n]
    th = p[..., 0]
    grad = Q.grad(p[..., 1:n], rho)
    w = np.concatenate([-np.ones(rho.shape + (1,)), rho[..., None] * grad], axis=-1)
    G, _, _ = _edge_matrix_jet(m, p, 0)
    a2 = np.sum(w * np.linalg.solve(G, w[..., None])[..., 0], axis=-1)
    s = np.sin(th)
    a = np.sqrt(a2)
    Z = np.empty(p.shape[:-1] + (2 * N,))
    Z[..., :N] = p
    Z[..., N] = -1.0 / a
    Z[..., N + 1 :] = rho[..., None] * grad / (s * a)[..., None]
    at_corner = rho == 0.0
    if np.any(at_corner):
        Z[at_corner, N] = -1.0
        Z[at_corner, N + 1 :] = 0.0
    return Z


def initial_state(m: AdmissibleMetric, Q: BoundaryQ, q) -> FlowState:
    """Rescaled inward unit conormal at ``q`` on Q (exact ``(-1, 0)`` at ``rho = 0``)."""
    p = q.coords if isinstance(q, PolarPoint) else np.asarray(q, dtype=float)
    _check_on_q(Q, p)
    return FlowState.from_array(initial_states(m, Q, p[1 : m.n], p[m.n]))


def unit_normal(m: AdmissibleMetric, Q: BoundaryQ, q) -> np.ndarray:
    """Inward unit normal vector ``nu`` of Q at ``q`` in coordinate components."""
    p = q.coords if isinstance(q, PolarPoint) else np.asarray(q, dtype=float)
    _check_on_q(Q, p)
    if np.any(p[..., m.n] <= 0.0):
        raise PreconditionError("unit_normal needs rho > 0")
    Z = initial_states(m, Q, p[..., 1 : m.n], p[..., m.n])
    return _velocity(m, Z)


def _velocity(m, Z):
    """Coordinate velocity ``dq/dt`` of states ``Z``."""
    n, N = m.n, m.N
    sol, _ = _regular_solve(m, Z)
    s = np.sin(Z[..., 0])
    rho = Z[..., n]
    v = np.empty(Z.shape[:-1] + (N,))
    v[..., 0] = s * sol[..., 0]
    v[..., 1:] = (rho * s * s)[..., None] * sol[..., 1:]
    return v


# --------------------------------------------------------------------------
# trajectories
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    """Sampled flow line.

    Attributes:
        n: Dimension parameter.
        t: Sample times, strictly increasing (``inf`` at the tail endpoint).
        states: Packed states ``(K, 2N)``.
        norm_drift: ``|rescaled norm - 1|`` per sample.
        reason: ``"t_end"``, ``"theta_min"`` or ``"tail"``.
        dense: Continuous extension ``t -> (..., 2N)`` over ``[t[0], t_dense_max]``.
        t_dense_max: Upper end of the interval covered by ``dense``.
        param: Parameter used for indexing (``"t"`` or ``"tau"``).
    """

    n: int
    t: np.ndarray
    states: np.ndarray
    norm_drift: np.ndarray
    reason: str
    dense: Optional[Callable] = None
    t_dense_max: float = 0.0
    param: str = "t"

    @property
    def tau(self) -> np.ndarray:
        return -np.expm1(-self.t)

    @property
    def theta(self) -> np.ndarray:
        return self.states[:, 0]

    @property
    def final(self) -> FlowState:
        return FlowState.from_array(self.states[-1])

    def __len__(self):
        return len(self.t)

    def at(self, t) -> np.ndarray:
        """States at arbitrary times within the dense range."""
        if self.dense is None:
            raise DomainError("trajectory has no dense output")
        return self.dense(np.asarray(t, dtype=float))

    def at_tau(self, tau) -> np.ndarray:
        tau = np.asarray(tau, dtype=float)
        return self.at(-np.log1p(-tau))


def _sigma_to_theta(sig):
    return 2.0 * np.arctan(np.exp(sig))


def _sigma_state(Y):
    Z = Y.copy()
    Z[..., 0] = _sigma_to_theta(Y[..., 0])
    return Z


def _check_tol(tol):
    if not (1e-12 <= tol <= 1e-4):
        raise PreconditionError("tol must lie in [1e-12, 1e-4]")


def _solver_failure(res, to_state):
    last = to_state(res.y[:, -1]) if res.y.size else None
    last_t = res.t[-1] if res.t.size else None
    raise IntegrationError(f"integration failed: {res.message}", last_state=last, last_time=last_t)


def integrate(
    m: AdmissibleMetric,
    s0,
    t_end: float = 20.0,
    tol: float = 1e-10,
    theta_min: float = 1e-6,
    with_tail: bool = False,
    t_eval: Optional[Sequence[float]] = None,
) -> Trajectory:
    """Integrate the normal flow in arclength.

    Args:
        m: Metric.
        s0: Initial :class:`FlowState` (or packed array).
        t_end: Final time.
        tol: Relative tolerance; absolute tolerance is ``1e-2 * tol``.
        theta_min: Terminal event on the angle.
        with_tail: Append the theta-parametrized tail down to ``theta = 0``.
        t_eval: Optional sample times (defaults to the accepted steps).

    Returns:
        Trajectory with dense output on the arclength part.

    Raises:
        IntegrationError: Step-size collapse, carrying the last good state.
    """
    _check_tol(tol)
    Z0 = _as_array(s0).astype(float)
    if Z0[0] <= 0.0:
        raise DomainError("initial theta must be positive")
    n = m.n
    Y0 = Z0.copy()
    Y0[0] = math.log(math.tan(0.5 * Z0[0]))
    sig_min = math.log(math.tan(0.5 * theta_min))

    def rhs(_t, Y):
        Z = _sigma_state(Y)
        F, z0, _ = hamiltonian_field(m, Z)
        dY = np.sin(Z[0]) * F
        dY[0] = z0
        return dY

    def hit_floor(_t, Y):
        return Y[0] - sig_min

    hit_floor.terminal = True
    hit_floor.direction = -1

    if t_end <= 0.0 or Z0[0] <= theta_min:
        drift = np.abs(rescaled_norm(m, Z0) - 1.0)
        return Trajectory(n, np.array([0.0]), Z0[None], np.atleast_1d(drift), "t_end",
                          lambda t: np.broadcast_to(Z0, np.shape(t) + Z0.shape).copy(), 0.0)

    res = solve_ivp(
        rhs, (0.0, t_end), Y0, method="RK45", rtol=tol, atol=1e-2 * tol,
        dense_output=True, events=hit_floor,
        t_eval=None if t_eval is None else np.asarray(t_eval, dtype=float),
    )
    if res.status < 0:
        _solver_failure(res, _sigma_state)
    reason = "theta_min" if res.status == 1 else "t_end"
    ts, Ys = res.t, res.y.T
    if reason == "theta_min" and t_eval is None and ts[-1] < res.t_events[0][0]:
        ts = np.append(ts, res.t_events[0][0])
        Ys = np.vstack([Ys, res.y_events[0][0]])
    states = _sigma_state(Ys)
    sol = res.sol
    t_hi = float(ts[-1]) if reason == "t_end" else float(res.t_events[0][0])

    def dense(t):
        t = np.asarray(t, dtype=float)
        Y = np.moveaxis(sol(np.clip(t, 0.0, t_hi).ravel()), 0, -1).reshape(t.shape + (2 * m.N,))
        return _sigma_state(Y)

    drift = np.abs(rescaled_norm(m, states) - 1.0)
    traj = Trajectory(n, ts, states, drift, reason, dense, t_hi)
    if with_tail:
        tail = theta_parametrized_tail(m, states[-1], 0.0, tol=tol, t_start=float(ts[-1]),
                                       threshold=max(0.1, float(states[-1, 0])))
        traj = _join(traj, tail)
    return traj


def _join(head: Trajectory, tail: Trajectory) -> Trajectory:
    keep = tail.t > head.t[-1]
    return Trajectory(
        head.n,
        np.concatenate([head.t, tail.t[keep]]),
        np.vstack([head.states, tail.states[keep]]),
        np.concatenate([head.norm_drift, tail.norm_drift[keep]]),
        "tail",
        head.dense,
        head.t_dense_max,
        head.param,
    )


def boundary_fiber_theta(theta_q, t):
    """Angle along the corner fiber: ``2 atan(tan(theta_q / 2) e^{-t})``."""
    return 2.0 * np.arctan(np.tan(0.5 * np.asarray(theta_q, dtype=float)) * np.exp(-np.asarray(t, dtype=float)))


def _ratio_R(z0, s):
    """``(1 + zeta0) / sin(theta)`` with the value frozen to 0 below ``TAIL_FLOOR``."""
    safe = np.where(s > TAIL_FLOOR, s, 1.0)
    return np.where(s > TAIL_FLOOR, (1.0 + z0) / safe, 0.0)


def theta_parametrized_tail(
    m: AdmissibleMetric,
    s,
    theta_stop: float = 0.0,
    tol: float = 1e-10,
    t_start: float = 0.0,
    threshold: float = 0.1,
) -> Trajectory:
    """Continue a trajectory using theta as the parameter, down to ``theta_stop``.

    The remaining variables obey ``dW/dtheta = F_W / F_theta`` and the time is
    recovered from ``lambda = -t - log tan(theta/2)``, which satisfies
    ``dlambda/dtheta = -(1 + zeta0) / (zeta0 sin theta)``.

    Raises:
        PreconditionError: ``theta`` above ``threshold`` or not decreasing.
        RegularityError: ``|zeta0| < 0.1`` (the theta velocity over ``sin`` must stay near -1).
    """
    _check_tol(tol)
    Z0 = _as_array(s).astype(float)
    N = m.N
    th0 = float(Z0[0])
    if th0 > threshold * (1.0 + 1e-9):
        raise PreconditionError(f"tail requires theta <= {threshold}, got {th0}")
    F0, z00, _ = hamiltonian_field(m, Z0)
    if z00 >= 0.0:
        raise PreconditionError("theta must be decreasing at the tail start")
    lam0 = -t_start - math.log(math.tan(0.5 * th0))
    Y0 = np.concatenate([Z0[1:], [lam0]])

    def rhs(th, Y):
        Z = np.concatenate([[th], Y[:-1]])
        F, z0, _ = hamiltonian_field(m, Z)
        if abs(z0) < 0.1:
            raise RegularityError(f"tail denominator {z0:.3e} too close to 0 at theta={th:.3e}")
        dY = np.empty_like(Y)
        dY[:-1] = F[1:] / z0
        dY[-1] = -_ratio_R(z0, math.sin(th)) / z0
        return dY

    if theta_stop >= th0:
        raise PreconditionError("theta_stop must be below the current angle")
    res = solve_ivp(rhs, (th0, theta_stop), Y0, method="RK45", rtol=tol, atol=1e-2 * tol)
    if res.status < 0:
        _solver_failure(res, lambda Y: np.concatenate([[np.nan], Y[:-1]]))
    ths = res.t
    states = np.column_stack([ths, res.y[:-1].T])
    lam = res.y[-1]
    with np.errstate(divide="ignore"):
        ts = -lam - np.log(np.tan(0.5 * ths))
    drift = np.abs(rescaled_norm(m, states) - 1.0)
    return Trajectory(m.n, ts, states, drift, "tail", None, 0.0, "t")


def reparam_tau(traj: Trajectory) -> Trajectory:
    """Index the same samples by ``tau = 1 - e^{-t}``."""
    dense = traj.dense

    def dense_tau(tau):
        return dense(-np.log1p(-np.asarray(tau, dtype=float)))

    return Trajectory(
        traj.n, traj.tau, traj.states, traj.norm_drift, traj.reason,
        dense_tau if dense is not None else None,
        float(-np.expm1(-traj.t_dense_max)), "tau",
    )


# --------------------------------------------------------------------------
# compactified flow
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CompactifiedFlow:
    """Batched solution of the compactified flow.

    ``W = (lambda, x, rho, xibar0, xibar)`` with ``theta = 2 atan((1 - tau) e^{-lambda})``.

    Attributes:
        n: Dimension parameter.
        taus: Requested output parameters.
        states: Packed states ``(T, B, 2N)`` (theta first).
        lam: ``lambda`` values ``(T, B)``.
        dense: ``tau -> (..., B, 2N + 1)`` raw solver state (``lambda`` first).
        nfev: Right-hand-side evaluations used.
    """

    n: int
    taus: np.ndarray
    states: np.ndarray
    lam: np.ndarray
    dense: Callable
    nfev: int


def _w_to_z(W, tau):
    Z = W.copy()
    v = (1.0 - tau) * np.exp(-W[..., 0])
    Z[..., 0] = 2.0 * np.arctan(v)
    return Z


def _tau_field(m, W, tau):
    Z = _w_to_z(W, tau)
    F, z0, _ = hamiltonian_field(m, Z)
    th = Z[..., 0]
    fac = (1.0 + np.cos(th)) * np.exp(-W[..., 0])
    dW = fac[..., None] * F
    dW[..., 0] = -_ratio_R(z0, np.sin(th)) * fac
    return dW, Z, F, fac


def tau_velocity(m: AdmissibleMetric, W, tau) -> np.ndarray:
    """``d exp / d tau`` in polar coordinates for compactified states ``W``."""
    _, _, F, fac = _tau_field(m, np.asarray(W, dtype=float), tau)
    return fac[..., None] * F[..., : m.N]


def compactified_start(Z0: np.ndarray) -> np.ndarray:
    """Convert packed initial states to compactified variables at ``tau = 0``."""
    W = np.array(Z0, dtype=float, copy=True)
    W[..., 0] = -np.log(np.tan(0.5 * Z0[..., 0]))
    return W


def integrate_compactified(
    m: AdmissibleMetric,
    Z0,
    taus: Sequence[float],
    tol: float = 1e-10,
    tau_end: Optional[float] = None,
) -> CompactifiedFlow:
    """Integrate a batch of trajectories in ``tau`` with shared steps.

    The local error test uses an RMS norm over the batch, so the tolerance is
    divided by the square root of the batch size to bound each member.

    Args:
        m: Metric.
        Z0: Packed initial states ``(B, 2N)``.
        taus: Output parameters in ``[0, 1]``.
        tol: Per-trajectory relative tolerance.
        tau_end: Integration end (defaults to ``max(taus)``).
    """
    _check_tol(tol)
    Z0 = np.atleast_2d(np.asarray(Z0, dtype=float))
    B, D = Z0.shape
    taus = np.asarray(taus, dtype=float)
    if np.any((taus < 0.0) | (taus > 1.0)):
        raise DomainError("tau must lie in [0, 1]")
    t1 = float(taus.max()) if tau_end is None else float(tau_end)
    W0 = compactified_start(Z0)
    rtol = max(tol / math.sqrt(B), 1e-13)

    def rhs(tau, y):
        W = y.reshape(B, D)
        return _tau_field(m, W, tau)[0].ravel()

    if t1 == 0.0:
        states = np.broadcast_to(Z0, (len(taus), B, D)).copy()
        lam = np.broadcast_to(W0[:, 0], (len(taus), B)).copy()
        return CompactifiedFlow(m.n, taus, states, lam, lambda t: W0.copy(), 0)
    res = solve_ivp(rhs, (0.0, t1), W0.ravel(), method="RK45", rtol=rtol, atol=1e-2 * rtol,
                    dense_output=True)
    if res.status < 0:
        _solver_failure(res, lambda y: y.reshape(B, D))
    sol = res.sol

    def dense(tau):
        tau = np.asarray(tau, dtype=float)
        Y = np.moveaxis(sol(np.clip(tau, 0.0, t1).ravel()), 0, -1)
        return Y.reshape(tau.shape + (B, D))

    Ws = dense(taus)
    Ws[taus == 0.0] = W0
    states = _w_to_z(Ws, taus[:, None])
    states[taus == 0.0] = Z0
    return CompactifiedFlow(m.n, taus, states, Ws[..., 0], dense, int(res.nfev))


# --------------------------------------------------------------------------
# export
# --------------------------------------------------------------------------


def _header(n):
    return (["t", "tau", "theta"] + [f"x{s}" for s in range(1, n)] + ["rho", "xibar0"]
            + [f"xibar{mu}" for mu in range(1, n + 1)] + ["norm_drift"])


def trajectory_table(traj: Trajectory) -> np.ndarray:
    t = traj.t if traj.param == "t" else -np.log1p(-traj.t)
    tau = -np.expm1(-t)
    return np.column_stack([t, tau, traj.states, traj.norm_drift])


def write_trajectory_csv(traj: Trajectory, stream: io.TextIOBase) -> None:
    """CSV with header ``t, tau, theta, x.., rho, xibar0, xibar.., norm_drift``."""
    stream.write(",".join(_header(traj.n)) + "\n")
    for row in trajectory_table(traj):
        stream.write(",".join(repr(float(v)) for v in row) + "\n")


def write_trajectory_binary(traj: Trajectory, stream) -> None:
    """Binary layout, all little-endian.

    ``uint8 version | uint32 n | uint32 rows | uint16 len | reason utf-8 |
    float64[rows, 2N + 3]`` with columns as in the CSV export.
    """
    table = trajectory_table(traj)
    reason = traj.reason.encode("utf-8")
    stream.write(struct.pack("<BIIH", BINARY_VERSION, traj.n, table.shape[0], len(reason)))
    stream.write(reason)
    stream.write(table.astype("<f8").tobytes())


def read_trajectory_binary(stream) -> tuple[int, str, np.ndarray]:
    """Inverse of :func:`write_trajectory_binary`: ``(n, reason, table)``."""
    head = stream.read(struct.calcsize("<BIIH"))
    version, n, rows, ln = struct.unpack("<BIIH", head)
    if version != BINARY_VERSION:
        raise DomainError(f"unsupported trajectory format version {version}")
    reason = stream.read(ln).decode("utf-8")
    cols = 2 * (n + 1) + 3
    data = np.frombuffer(stream.read(rows * cols * 8), dtype="<f8").reshape(rows, cols)
    return n, reason, data.astype(float)
