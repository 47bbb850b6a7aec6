"""Exact hyperbolic solutions, comparison envelopes, rate fits and the suite runner."""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DomainError, PreconditionError

__all__ = [
    "hyperbolic_oracle",
    "hyperbolic_geodesic",
    "weighted_trig",
    "ComparisonEnvelope",
    "comparison_envelope",
    "sandwich_check",
    "jacobi_floor",
    "RateFit",
    "rate_fit",
    "REPORT_VERSION",
    "list_suites",
    "run_suite",
    "report_json",
]

REPORT_VERSION = 1

EXACT_FLOOR = 1e-14


# --------------------------------------------------------------------------
# hyperbolic model
# --------------------------------------------------------------------------


def _to_polar(r, y, x):
    theta = np.arctan2(r, y)
    rho = np.hypot(r, y)
    return np.concatenate([theta[..., None], x, rho[..., None]], axis=-1)


def hyperbolic_oracle(alpha: float, q_cartesian, t) -> dict:
    """Exact normal geodesic of the plane ``{y = alpha r}`` in the half-space model.

    Args:
        alpha: Slope of the boundary plane; its polar angle is ``atan2(1, alpha)``.
        q_cartesian: Start point ``(r, x^1, ..., x^{n-1}, y)`` on the plane.
        t: Arclength samples.

    Returns:
        Dict with ``t``, ``theta0``, ``polar`` (``(T, N)`` packed coordinates)
        and ``cartesian`` (``(T, N)`` as ``(r, x, y)``).
    """
    q = np.asarray(q_cartesian, dtype=float)
    r0, y0, x0 = q[0], q[-1], q[1:-1]
    if r0 <= 0:
        raise PreconditionError("start point must have r > 0")
    if abs(y0 - alpha * r0) > 1e-12 * max(1.0, abs(r0), abs(y0)):
        raise PreconditionError("start point is not on the plane y = alpha r")
    t = np.atleast_1d(np.asarray(t, dtype=float))
    a = math.hypot(r0, y0)
    theta0 = math.atan2(1.0, alpha)
    theta = 2.0 * np.arctan(math.tan(0.5 * theta0) * np.exp(-t))
    polar = np.empty(t.shape + (len(q),))
    polar[:, 0] = theta
    polar[:, 1:-1] = x0
    polar[:, -1] = a
    cart = np.empty_like(polar)
    cart[:, 0] = a * np.sin(theta)
    cart[:, 1:-1] = x0
    cart[:, -1] = a * np.cos(theta)
    return {"t": t, "theta0": theta0, "polar": polar, "cartesian": cart}


def hyperbolic_geodesic(p, v, t) -> np.ndarray:
    """Exact unit-speed hyperbolic geodesic in polar coordinates.

    Args:
        p: Start point ``(theta, x, rho)``.
        v: Unit initial velocity in polar coordinate components.
        t: Arclength samples.

    Returns:
        Packed polar coordinates ``(T, N)``.
    """
    p = np.asarray(p, dtype=float)
    v = np.asarray(v, dtype=float)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    th, rho = p[0], p[-1]
    r0, y0 = rho * math.sin(th), rho * math.cos(th)
    vr = rho * math.cos(th) * v[0] + math.sin(th) * v[-1]
    vy = -rho * math.sin(th) * v[0] + math.cos(th) * v[-1]
    w0 = np.concatenate([[y0], p[1:-1]])
    vw = np.concatenate([[vy], v[1:-1]])
    speed = math.sqrt(vr * vr + vw @ vw)
    ur, uw = vr / speed, vw / speed
    nw = math.sqrt(uw @ uw)
    if nw < 1e-14:
        r = r0 * np.exp(math.copysign(1.0, ur) * t)
        w = np.broadcast_to(w0, t.shape + w0.shape)
    else:
        e = uw / nw
        sigma0 = math.atanh(-ur)
        R = r0 / nw
        c = w0 - R * math.tanh(sigma0) * e
        r = R / np.cosh(sigma0 + t)
        w = c + (R * np.tanh(sigma0 + t))[:, None] * e
    return _to_polar(r, w[:, 0], w[:, 1:])


# --------------------------------------------------------------------------
# comparison machinery
# --------------------------------------------------------------------------


def weighted_trig(eta, t):
    """``(cosh_eta, sinh_eta) = ((e^t + eta e^-t)/2, (e^t - eta e^-t)/2)``."""
    t = np.asarray(t, dtype=float)
    ep, em = np.exp(t), np.exp(-t)
    return 0.5 * (ep + eta * em), 0.5 * (ep - eta * em)


@dataclass(frozen=True)
class ComparisonEnvelope:
    """Bounds for ``w = cot(theta)`` along a trajectory and the Jacobi floor data.

    ``f_pm(t) = a_pm e^t + b_pm e^-t -+ delta`` with
    ``a_pm = (w0 + wdot0 +- delta)/2`` and ``b_pm = (w0 - wdot0 +- delta)/2``.
    """

    w0: float
    wdot0: float
    delta: float
    kappa: Optional[float] = None
    beta: Optional[float] = None

    @property
    def a_minus(self) -> float:
        return 0.5 * (self.w0 + self.wdot0 - self.delta)

    @property
    def a_plus(self) -> float:
        return 0.5 * (self.w0 + self.wdot0 + self.delta)

    @property
    def b_minus(self) -> float:
        return 0.5 * (self.w0 - self.wdot0 - self.delta)

    @property
    def b_plus(self) -> float:
        return 0.5 * (self.w0 - self.wdot0 + self.delta)

    def f_minus(self, t):
        t = np.asarray(t, dtype=float)
        return self.a_minus * np.exp(t) + self.b_minus * np.exp(-t) + self.delta

    def f_plus(self, t):
        t = np.asarray(t, dtype=float)
        return self.a_plus * np.exp(t) + self.b_plus * np.exp(-t) - self.delta

    def fdot_minus(self, t):
        t = np.asarray(t, dtype=float)
        return self.a_minus * np.exp(t) - self.b_minus * np.exp(-t)

    def fdot_plus(self, t):
        t = np.asarray(t, dtype=float)
        return self.a_plus * np.exp(t) - self.b_plus * np.exp(-t)

    def growth_constant(self) -> float:
        """``C`` with ``1 + w(t)^2 >= C^-2 e^{2t}`` for all ``t >= 0``.

        ``w >= f_minus`` and ``f_minus >= a e^t / 2`` once
        ``a y^2 / 2 + delta y + b >= 0`` for ``y = e^t``.  Before that time
        ``1 + w^2 >= 1`` covers the bound with ``C = e^T``.
        """
        a, b, d = self.a_minus, self.b_minus, self.delta
        if a <= 0:
            raise DomainError("leading coefficient of the lower envelope is not positive")
        roots = np.roots([0.5 * a, d, b])
        real = [r.real for r in roots if abs(r.imag) < 1e-12 and r.real > 0]
        T = math.log(max(real)) if real else 0.0
        return max(2.0 / a, math.exp(max(T, 0.0)))

    @property
    def jacobi_params(self) -> tuple[float, float, float]:
        """``(A, B, eta)`` of the floor ``A + B cosh_eta(2 sqrt(beta) t)``."""
        return jacobi_floor(self.kappa, self.beta)


def jacobi_floor(kappa: float, beta: float) -> tuple[float, float, float]:
    """Weighted-trig floor parameters for a Jacobi field with ``|J(0)| = 1``."""
    if beta <= 0 or kappa >= math.sqrt(beta):
        raise DomainError("need beta > 0 and kappa < sqrt(beta)")
    sb = math.sqrt(beta)
    A = 0.5 * (1.0 - kappa * kappa / beta)
    B = 0.5 * (1.0 - kappa / sb) ** 2
    eta = (sb + kappa) ** 2 / (sb - kappa) ** 2
    return A, B, eta


def comparison_envelope(theta0: float, zeta0: float, delta: float, kappa=None, beta=None) -> ComparisonEnvelope:
    """Envelope from the initial angle and angular velocity ratio ``zeta0``."""
    w0 = math.cos(theta0) / math.sin(theta0)
    wdot0 = -zeta0 / math.sin(theta0)
    env = ComparisonEnvelope(w0, wdot0, float(delta), kappa, beta)
    if env.a_minus <= 0:
        raise DomainError(
            "leading coefficient (w0 + wdot0 - delta)/2 is not positive: start outside the working domain"
        )
    return env


def sandwich_check(m, traj, residual_sampler: Optional[Callable] = None, rel_slack: float = 1e-8):
    """Check ``f_- <= cot(theta) <= f_+`` and the derivative sandwich along ``traj``.

    Args:
        m: Metric.
        traj: Trajectory from :func:`~cornerflow.geodesic_flow.integrate`.
        residual_sampler: Map from packed points ``(K, N)`` to the Hessian
            residual norms; defaults to the pointwise residual of ``m``.
        rel_slack: Relative slack ``rel_slack * max(1, |f|)`` on each comparison.

    Returns:
        ``(envelope, report)`` where ``report`` holds ``pass``, the worst
        signed margins, the measured ``delta`` and the growth constant.
    """
    from .geodesic_flow import hamiltonian_field
    from .metric_core import hessian_cot_residual

    N = m.N
    fin = np.isfinite(traj.t) & (traj.states[:, 0] > 0)
    t = traj.t[fin]
    Z = traj.states[fin]
    pts = Z[:, :N]
    if residual_sampler is None:
        residual_sampler = lambda P: hessian_cot_residual(m, P)[1]  # noqa: E731
    delta = float(np.max(residual_sampler(pts)))
    _, z0, _ = hamiltonian_field(m, Z)
    th = Z[:, 0]
    w = np.cos(th) / np.sin(th)
    wdot = -z0 / np.sin(th)
    env = comparison_envelope(th[0], z0[0], delta)
    fm, fp = env.f_minus(t), env.f_plus(t)
    dm, dp = env.fdot_minus(t), env.fdot_plus(t)
    slack = rel_slack * np.maximum(1.0, np.abs(w))
    dslack = rel_slack * np.maximum(1.0, np.abs(wdot))
    margins = {
        "lower": float(np.min(w - fm + slack)),
        "upper": float(np.min(fp - w + slack)),
        "dlower": float(np.min(wdot - dm + dslack)),
        "dupper": float(np.min(dp - wdot + dslack)),
    }
    C = env.growth_constant()
    growth = float(np.min((1.0 + w * w) * C * C * np.exp(-2.0 * t)))
    ok = all(v >= 0 for v in margins.values()) and growth >= 1.0 - rel_slack
    return env, {"pass": bool(ok), "delta": delta, "margins": margins, "growth_C": C, "growth_min": growth}


# --------------------------------------------------------------------------
# rate fits
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RateFit:
    """Least-squares log-log regression of residuals against a scale."""

    scales: tuple
    residuals: tuple
    slope: float
    intercept: float
    r2: float
    target_slope: float
    exact: bool
    passed: bool
    max_slope: Optional[float] = None

    def as_dict(self) -> dict:
        return {
            "scales": list(self.scales),
            "residuals": list(self.residuals),
            "slope": self.slope,
            "r2": self.r2,
            "target_slope": self.target_slope,
            "exact": self.exact,
            "pass": self.passed,
        }


def rate_fit(scales, residuals, target_slope: float, max_slope: Optional[float] = None,
             min_r2: float = 0.95) -> RateFit:
    """Fit ``log residual = slope log scale + c``.

    Passes when ``slope >= target_slope`` (and ``<= max_slope`` if given) with
    ``r2 >= min_r2``, or when every residual is below ``1e-14``.

    Raises:
        PreconditionError: Fewer than four scales or scales not decreasing.
        DomainError: A nonpositive residual outside the exact branch.
    """
    s = np.asarray(scales, dtype=float)
    r = np.asarray(residuals, dtype=float)
    if s.size < 4 or s.shape != r.shape:
        raise PreconditionError("rate_fit needs at least four matching samples")
    if np.any(np.diff(s) >= 0):
        raise PreconditionError("scales must be strictly decreasing")
    if np.all(np.abs(r) < EXACT_FLOOR):
        return RateFit(tuple(s), tuple(r), math.nan, math.nan, 1.0, target_slope, True, True, max_slope)
    if np.any(r <= 0):
        raise DomainError("residuals must be positive for a log-log fit")
    X, Y = np.log(s), np.log(r)
    slope, intercept = np.polyfit(X, Y, 1)
    pred = slope * X + intercept
    ss_res = float(np.sum((Y - pred) ** 2))
    ss_tot = float(np.sum((Y - Y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    ok = slope >= target_slope and r2 >= min_r2
    if max_slope is not None:
        ok = ok and slope <= max_slope
    return RateFit(tuple(s), tuple(r), float(slope), float(intercept), float(r2), target_slope, False,
                   bool(ok), max_slope)


# --------------------------------------------------------------------------
# suite runner
# --------------------------------------------------------------------------


def list_suites() -> dict:
    """Suite names mapped to their ``(anchor, claim)`` lists."""
    from .suites import INVARIANTS

    return {k: list(v) for k, v in INVARIANTS.items()}


def _threads() -> int:
    raw = os.environ.get("CORNERFLOW_THREADS")
    if raw is None:
        return 1
    try:
        k = int(raw)
    except ValueError:
        raise PreconditionError("CORNERFLOW_THREADS must be a positive integer") from None
    if k < 1:
        raise PreconditionError("CORNERFLOW_THREADS must be a positive integer")
    return k


def run_suite(config) -> dict:
    """Run the suites named in ``config`` and assemble the report.

    Suites run independently (concurrently when ``CORNERFLOW_THREADS`` > 1),
    each with its own generator seeded from ``(seed, suite)``, so the report
    does not depend on scheduling.

    Args:
        config: A :class:`~cornerflow.config.RunConfig`, a preset name or a mapping.

    Returns:
        ``{"report_version", "config", "checks", "summary", "pass"}``; each
        check holds ``suite, claim, anchor, measured, target, pass`` and
        optional ``details``.
    """
    from .config import RunConfig, config_from_dict, load_config
    from .suites import run_one

    if isinstance(config, str):
        config = load_config(preset=config)
    elif not isinstance(config, RunConfig):
        config = config_from_dict(dict(config))
    suites = list(config.suites)
    workers = min(_threads(), max(1, len(suites)))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda s: run_one(config, s), suites))
    else:
        parts = [run_one(config, s) for s in suites]
    checks = [c for part in parts for c in part]
    failed = [c["anchor"] for c in checks if not c["pass"]]
    described = config.as_dict()
    described.pop("out")  # where the report lands is not part of its content
    return {
        "report_version": REPORT_VERSION,
        "config": described,
        "checks": checks,
        "summary": {"total": len(checks), "passed": len(checks) - len(failed), "failed": failed},
        "pass": not failed,
    }


def report_json(report: dict) -> str:
    """Canonical serialization (sorted keys, shortest round-trip floats)."""
    return json.dumps(report, sort_keys=True, indent=1, allow_nan=True) + "\n"
