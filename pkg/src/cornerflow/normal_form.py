"""Corner normal forms assembled from the compactified exponential map.

With ``u = 1 - tau`` and ``q`` ranging over a window ``V`` of the finite
boundary, the pullback of ``g`` through ``(u, q) -> exp(1 - u, q)`` reads
``(du^2 + h_u) / u^2``.  For a constant corner angle ``theta0`` the substitution
``u = tan(phi/2) / tan(theta0/2)`` gives ``(dphi^2 + h_phi) / sin^2(phi)``.

Slices are stored in compactified form ``hbar = rho^2 h`` (``rho`` the
coordinate of ``q``), which is finite on the ``rho = 0`` row.  The pullback is
evaluated in the 0-edge frame, where the unit flow velocity has components
``zeta`` and the rescaled parameter derivatives ``rho (u / sin theta) E J``
stay bounded up to ``u = 0`` and ``rho = 0``.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import AccuracyError, PreconditionError
from .exp_map import ExpChart, _Stencils
from .geodesic_flow import BoundaryQ, _regular_solve
from .metric_core import AdmissibleMetric, _edge_matrix_jet

__all__ = [
    "GridSpec",
    "NormalFormGrid",
    "cgl_nodes",
    "chebyshev_diff_matrix",
    "build_u_form",
    "build_theta_form",
    "corner_stationarity",
    "induced_boundary_metric",
    "fiber_angle_function",
    "u_of_phi",
    "footpoints",
    "write_normal_form",
    "read_normal_form",
]

FORMAT_VERSION = 1


def cgl_nodes(k: int, a: float, b: float) -> np.ndarray:
    """Chebyshev-Gauss-Lobatto nodes on ``[a, b]``, increasing, endpoints exact."""
    if k < 2:
        raise PreconditionError("need at least two parameter nodes")
    x = 0.5 * (1.0 - np.cos(np.pi * np.arange(k) / (k - 1)))
    out = a + (b - a) * x
    out[0], out[-1] = a, b
    return out


def chebyshev_diff_matrix(nodes: np.ndarray) -> np.ndarray:
    """Spectral differentiation matrix on CGL nodes of an interval."""
    k = len(nodes) - 1
    a, b = nodes[0], nodes[-1]
    x = np.cos(np.pi * np.arange(k + 1) / k)  # decreasing on [-1, 1]
    c = np.ones(k + 1)
    c[0] = c[-1] = 2.0
    c *= (-1.0) ** np.arange(k + 1)
    X = x[:, None] - x[None, :]
    D = np.outer(c, 1.0 / c) / (X + np.eye(k + 1))
    D -= np.diag(D.sum(axis=1))
    # node i is a + (b - a)(1 - x_i)/2, so only the chain-rule factor is needed
    D = D * (-2.0 / (b - a))
    return D


def u_of_phi(phi, theta0: float):
    """``u = (csc phi - cot phi) / (csc theta0 - cot theta0)``."""
    return np.tan(0.5 * np.asarray(phi, dtype=float)) / math.tan(0.5 * theta0)


@dataclass(frozen=True)
class GridSpec:
    """Sampling of a normal form.

    Attributes:
        n_param: Chebyshev nodes in ``u`` (or ``theta``), endpoints included.
        x_window: Range of ``x^1``.
        n_x: Nodes in ``x^1``.
        rho_window: Range of ``rho`` (should start at 0).
        n_rho: Nodes in ``rho``.
        x_rest: Fixed values of ``x^2..x^{n-1}``.
        h: Relative difference step (times the window widths).
        tol: Integration tolerance.
    """

    n_param: int = 17
    x_window: tuple = (-1.0, 1.0)
    n_x: int = 5
    rho_window: tuple = (0.0, 0.25)
    n_rho: int = 33
    x_rest: tuple = ()
    h: float = 1e-4
    tol: float = 1e-10

    def spatial(self, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        xs = np.linspace(*self.x_window, self.n_x)
        rhos = np.linspace(*self.rho_window, self.n_rho)
        rest = np.asarray(self.x_rest, dtype=float)
        if rest.size != n - 2:
            rest = np.zeros(n - 2)
        return xs, rhos, rest


@dataclass(frozen=True)
class NormalFormGrid:
    """Slice metrics of a corner normal form on a ``(param, x^1, rho)`` grid.

    Attributes:
        param: ``"u"`` or ``"theta"``.
        nodes: Parameter nodes ``(P,)``.
        xs: ``x^1`` nodes ``(X,)``.
        rhos: ``rho`` nodes ``(R,)``.
        x_rest: Fixed remaining ``x`` coordinates.
        hbar: ``rho^2 h`` in ``(x, rho)`` components, ``(P, X, R, n, n)``.
        cross: Cosine between the parameter direction and each ``y`` direction, ``(P, X, R, n)``.
        unit: ``|coefficient of dparam^2 (rescaled) - 1|``, ``(P, X, R)``.
        images: Image points, ``(P, X, R, N)``.
        theta0: Corner angle (theta-form).
        meta: Plain-data description.
    """

    param: str
    nodes: np.ndarray
    xs: np.ndarray
    rhos: np.ndarray
    x_rest: np.ndarray
    hbar: np.ndarray
    cross: np.ndarray
    unit: np.ndarray
    images: np.ndarray
    theta0: Optional[float] = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.hbar.shape[-1]

    @property
    def h(self) -> np.ndarray:
        """Slice metrics ``h`` (infinite on the ``rho = 0`` row)."""
        r2 = (self.rhos**2)[None, None, :, None, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            out = self.hbar / r2
        out[:, :, self.rhos == 0.0] = np.inf
        return out

    def eigen_range(self) -> tuple[float, float]:
        lam = np.linalg.eigvalsh(self.hbar)
        return float(lam.min()), float(lam.max())

    def ah_residual(self) -> np.ndarray:
        """``|drho|^2`` under ``hbar`` minus one on the ``rho = 0`` row, ``(P, X)``."""
        row = self.rhos == 0.0
        if not row.any():
            raise PreconditionError("grid has no rho = 0 row")
        hb = self.hbar[:, :, np.argmax(row)]
        return np.linalg.inv(hb)[..., -1, -1] - 1.0

    def interpolate(self, values) -> np.ndarray:
        """Barycentric interpolation of ``hbar`` to other parameter values."""
        flat = self.hbar.reshape(len(self.nodes), -1)
        x = np.atleast_1d(np.asarray(values, dtype=float))
        # closed-form weights for Chebyshev-Lobatto nodes; the sign pattern is
        # invariant under reversing the node order
        w = (-1.0) ** np.arange(len(self.nodes))
        w[0] *= 0.5
        w[-1] *= 0.5
        diff = x[:, None] - self.nodes[None, :]
        hit = diff == 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            c = w / diff
            out = (c @ flat) / c.sum(axis=1)[:, None]
        rows, cols = np.nonzero(hit)
        out[rows] = flat[cols]
        return out.reshape((-1,) + self.hbar.shape[1:])


def _frame_scale(Z):
    """``v = tan(theta/2)`` and ``(1 + v^2)/2``; then ``u / sin(theta) = (1 + v^2) e^lambda / 2``."""
    v = np.tan(0.5 * Z[..., 0])
    return v, 0.5 * (1.0 + v * v)


def _slice(m, chart, stencils, Y, tau):
    """``hbar`` (u-scaled), cross cosines and unit residuals at one ``tau`` for base rows ``Y``."""
    n, N = m.n, m.N
    W = chart.raw(np.full(len(Y), tau), Y)
    Z = chart.states(np.full(len(Y), tau), Y)
    J = stencils.jacobians(tau)  # (B, N, n)
    _, half = _frame_scale(Z)
    scale = half * np.exp(W[:, 0])
    rho_q = Y[:, -1]
    rho_i = Z[:, n]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rho_q > 0.0, rho_q / np.where(rho_i > 0, rho_i, 1.0), 1.0 / J[:, n, n - 1])
    K = np.empty_like(J)
    K[:, 0] = (rho_q * scale)[:, None] * J[:, 0]
    K[:, 1:] = (ratio * scale)[:, None, None] * J[:, 1:]
    G, _, _ = _edge_matrix_jet(m, Z[:, :N], 0)
    hbar = np.einsum("bia,bij,bjc->bac", K, G, K)
    hbar = 0.5 * (hbar + np.swapaxes(hbar, -1, -2))
    sol, _ = _regular_solve(m, Z)
    zeta = sol.copy()
    zeta[:, 1:] *= np.sin(Z[:, 0])[:, None]
    cross = np.einsum("bi,bij,bja->ba", zeta, G, K)
    norms = np.sqrt(np.einsum("baa->ba", hbar))
    with np.errstate(invalid="ignore", divide="ignore"):
        cross = np.where(norms > 0, cross / norms, 0.0)
    unit = np.abs(np.einsum("bi,bij,bj->b", zeta, G, zeta) - 1.0)
    return hbar, cross, unit, Z[:, :N]


def _build(m, Q, spec: GridSpec, taus, param, nodes, post_scale, theta0=None, chart=None):
    n = m.n
    if Q.n != n:
        raise PreconditionError("boundary and metric dimensions differ")
    xs, rhos, rest = spec.spatial(n)
    if chart is None:
        chart = ExpChart(m, Q, ((spec.x_window[0], spec.x_window[1]),) * (n - 1),
                         max(spec.rho_window[1], 1e-3), spec.tol)
    X, R = np.meshgrid(xs, rhos, indexing="ij")
    Y = np.empty((X.size, n))
    Y[:, 0] = X.ravel()
    Y[:, 1 : n - 1] = rest
    Y[:, n - 1] = R.ravel()
    stencils = _Stencils(chart, Y, spec.h)
    P, B = len(taus), len(Y)
    hbar = np.empty((P, B, n, n))
    cross = np.empty((P, B, n))
    unit = np.empty((P, B))
    imgs = np.empty((P, B, n + 1))
    for k, tau in enumerate(taus):
        hb, cr, un, im = _slice(m, chart, stencils, Y, float(tau))
        hbar[k] = post_scale[k] * hb
        cross[k], unit[k], imgs[k] = cr, un, im
    shape = (P, len(xs), len(rhos))
    meta = {"metric": m.name, "boundary": dict(Q.spec), "n": n, "grid": {
        "n_param": spec.n_param, "x_window": list(spec.x_window), "n_x": spec.n_x,
        "rho_window": list(spec.rho_window), "n_rho": spec.n_rho, "h": spec.h, "tol": spec.tol}}
    return NormalFormGrid(
        param, np.asarray(nodes, dtype=float), xs, rhos, rest,
        hbar.reshape(shape + (n, n)), cross.reshape(shape + (n,)), unit.reshape(shape),
        imgs.reshape(shape + (n + 1,)), theta0, meta,
    )


def build_u_form(m: AdmissibleMetric, Q: BoundaryQ, spec: GridSpec = GridSpec(),
                 chart: Optional[ExpChart] = None) -> NormalFormGrid:
    """Slices ``rho^2 h_u`` of ``(du^2 + h_u)/u^2`` on CGL nodes ``u in [0, 1]``."""
    us = cgl_nodes(spec.n_param, 0.0, 1.0)
    return _build(m, Q, spec, 1.0 - us, "u", us, np.ones(len(us)), chart=chart)


def _check_constant_angle(Q: BoundaryQ, xs, rest, tol=1e-10) -> float:
    n = Q.n
    x = np.zeros((len(xs), n - 1))
    x[:, 0] = xs
    x[:, 1:] = rest
    vals = np.asarray(Q.psi(x, 0.0), dtype=float)
    if np.ptp(vals) > tol:
        raise PreconditionError(
            "corner angle varies along the corner; use build_u_form for non-constant angles"
        )
    return float(vals[0])


def build_theta_form(m: AdmissibleMetric, Q: BoundaryQ, spec: GridSpec = GridSpec(),
                     chart: Optional[ExpChart] = None) -> NormalFormGrid:
    """Slices ``rho^2 h_theta`` of ``(dtheta^2 + h_theta)/sin^2(theta)`` on CGL nodes in ``[0, theta0]``.

    Raises:
        PreconditionError: The corner angle ``psi(x, 0)`` is not constant.
    """
    xs, _, rest = spec.spatial(m.n)
    theta0 = _check_constant_angle(Q, xs, rest)
    phis = cgl_nodes(spec.n_param, 0.0, theta0)
    us = u_of_phi(phis, theta0)
    us[-1] = 1.0
    T = math.tan(0.5 * theta0)
    factor = (2.0 * T * np.cos(0.5 * phis) ** 2) ** 2  # (sin(phi) / u)^2
    return _build(m, Q, spec, 1.0 - us, "theta", phis, factor, theta0=theta0, chart=chart)


def corner_stationarity(nf: NormalFormGrid, tol: float = 1e-5) -> float:
    """``max |d_theta hbar_theta|`` on the ``rho = 0`` row by spectral differentiation.

    The value is compared with the same quantity on the embedded half-resolution
    grid; disagreement above 50% while either exceeds ``tol`` raises.

    Raises:
        PreconditionError: Not a theta-form grid or no ``rho = 0`` row.
        AccuracyError: Parameter grid too coarse.
    """
    if nf.param != "theta":
        raise PreconditionError("corner stationarity is defined for theta-form grids")
    row = np.flatnonzero(nf.rhos == 0.0)
    if row.size == 0:
        raise PreconditionError("grid has no rho = 0 row")
    hb = nf.hbar[:, :, row[0]]

    def measure(idx):
        D = chebyshev_diff_matrix(nf.nodes[idx])
        return float(np.max(np.abs(np.einsum("pq,q...->p...", D, hb[idx]))))

    fine = measure(np.arange(len(nf.nodes)))
    if (len(nf.nodes) - 1) % 2 == 0 and len(nf.nodes) >= 5:
        coarse = measure(np.arange(0, len(nf.nodes), 2))
        big = max(fine, coarse)
        if big > tol and abs(fine - coarse) > 0.5 * big:
            raise AccuracyError(f"theta grid too coarse: {coarse:.3e} vs {fine:.3e}")
    return fine


def stationarity_profile(nf: NormalFormGrid) -> np.ndarray:
    """``max |d_param hbar|`` on each ``rho`` row, shape ``(R,)``."""
    D = chebyshev_diff_matrix(nf.nodes)
    d = np.einsum("pq,q...->p...", D, nf.hbar)
    return np.max(np.abs(d), axis=(0, 1, 3, 4))


def induced_boundary_metric(m: AdmissibleMetric, Q: BoundaryQ, spec: GridSpec = GridSpec(),
                            chart: Optional[ExpChart] = None) -> dict:
    """The ``u = 0`` slice of the u-form on the infinite boundary.

    Returns:
        ``{"hbar", "h", "defining_function", "footpoints", "xs", "rhos"}`` where
        ``h = hbar / rho^2`` and ``1 - tau = e^{-t}`` is the defining function
        whose square rescales ``g`` to the slice.
    """
    xs, rhos, rest = spec.spatial(m.n)
    one = GridSpec(2, spec.x_window, spec.n_x, spec.rho_window, spec.n_rho, spec.x_rest, spec.h, spec.tol)
    nf = _build(m, Q, one, np.array([1.0]), "u", np.array([0.0]), np.ones(1), chart=chart)
    return {
        "hbar": nf.hbar[0],
        "h": nf.h[0],
        "defining_function": "1 - tau",
        "footpoints": nf.images[0],
        "xs": xs,
        "rhos": rhos,
    }


def footpoints(nf: NormalFormGrid) -> np.ndarray:
    """Images of the ``u = 0`` (or ``theta = 0``) row, used to re-index columns by the infinite boundary."""
    k = int(np.argmin(nf.nodes))
    return nf.images[k]


def fiber_angle_function(m: AdmissibleMetric, Q: BoundaryQ, x) -> np.ndarray:
    """Corner angle ``Theta(x) = psi(x, 0)`` where Q meets the corner face."""
    x = np.asarray(x, dtype=float)
    if m.n == 2 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    return np.broadcast_to(np.asarray(Q.psi(x, 0.0), dtype=float), x.shape[:-1]).copy()


# --------------------------------------------------------------------------
# export
# --------------------------------------------------------------------------


def _columns(n):
    idx = [(a, b) for a in range(n) for b in range(a, n)]
    names = ["param", "x1", "rho"]
    names += [f"h{a}{b}" for a, b in idx] + [f"hbar{a}{b}" for a, b in idx]
    names += [f"cross{a}" for a in range(n)] + ["unit"]
    names += ["img_theta"] + [f"img_x{s}" for s in range(1, n)] + ["img_rho"]
    return names, idx


def write_normal_form(nf: NormalFormGrid, stream: io.TextIOBase) -> None:
    """JSON header line followed by a CSV body with one row per grid node (``repr`` floats)."""
    n = nf.n
    header = {
        "format": "cornerflow-normal-form",
        "version": FORMAT_VERSION,
        "param": nf.param,
        "theta0": nf.theta0,
        "dims": [len(nf.nodes), len(nf.xs), len(nf.rhos), n],
        "nodes": [repr(float(v)) for v in nf.nodes],
        "xs": [repr(float(v)) for v in nf.xs],
        "rhos": [repr(float(v)) for v in nf.rhos],
        "x_rest": [repr(float(v)) for v in nf.x_rest],
        "meta": nf.meta,
    }
    stream.write(json.dumps(header, sort_keys=True) + "\n")
    names, idx = _columns(n)
    stream.write(",".join(names) + "\n")
    h = nf.h
    for p in range(len(nf.nodes)):
        for i in range(len(nf.xs)):
            for r in range(len(nf.rhos)):
                vals = [nf.nodes[p], nf.xs[i], nf.rhos[r]]
                vals += [h[p, i, r, a, b] for a, b in idx]
                vals += [nf.hbar[p, i, r, a, b] for a, b in idx]
                vals += list(nf.cross[p, i, r]) + [nf.unit[p, i, r]] + list(nf.images[p, i, r])
                stream.write(",".join(repr(float(v)) for v in vals) + "\n")


def read_normal_form(stream: io.TextIOBase) -> NormalFormGrid:
    """Inverse of :func:`write_normal_form` (bit-exact)."""
    header = json.loads(stream.readline())
    if header.get("format") != "cornerflow-normal-form":
        raise PreconditionError("not a normal-form export")
    P, X, R, n = header["dims"]
    names, idx = _columns(n)
    if stream.readline().strip().split(",") != names:
        raise PreconditionError("unexpected column layout")
    body = np.array([[float(v) for v in line.split(",")] for line in stream if line.strip()])
    if body.shape != (P * X * R, len(names)):
        raise PreconditionError("row count does not match the header")
    col = {name: k for k, name in enumerate(names)}
    hbar = np.empty((P * X * R, n, n))
    for a, b in idx:
        hbar[:, a, b] = hbar[:, b, a] = body[:, col[f"hbar{a}{b}"]]
    cross = body[:, [col[f"cross{a}"] for a in range(n)]]
    imgs = body[:, col["img_theta"] :]
    fl = lambda key: np.array([float(v) for v in header[key]])  # noqa: E731
    return NormalFormGrid(
        header["param"], fl("nodes"), fl("xs"), fl("rhos"), fl("x_rest"),
        hbar.reshape(P, X, R, n, n), cross.reshape(P, X, R, n), body[:, col["unit"]].reshape(P, X, R),
        imgs.reshape(P, X, R, n + 1), header["theta0"], header["meta"],
    )
