"""Command-line front end.

Subcommands: ``geodesic``, ``expmap-scan``, ``normal-form``, ``verify`` and
``list-suites``.  Exit codes: 0 success, 1 a check failed, 2 configuration or
precondition error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from typing import Optional, Sequence

import numpy as np

from . import config as cfgmod
from .errors import (
    AccuracyError,
    ConfigError,
    DomainError,
    IntegrationError,
    PreconditionError,
    RegularityError,
)

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def atomic_write(path: str, data) -> None:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=d)
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Out:
    def __init__(self, quiet: bool):
        self.quiet = quiet

    def __call__(self, *args):
        if not self.quiet:
            print(*args)


def _config(args) -> cfgmod.RunConfig:
    cfg = cfgmod.load_config(args.config, getattr(args, "preset", None))
    return cfg.with_overrides(seed=args.seed, tol=args.tol, out=args.out)


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_geodesic(cfg: cfgmod.RunConfig, q: Optional[Sequence[float]], t_end: float, say) -> int:
    from . import geodesic_flow as gf

    m, Q = cfg.build_metric(), cfg.build_boundary()
    if q is None:
        q = Q.point(np.zeros(m.n - 1), 0.5 * cfg.windows["rho"][1])
    q = np.asarray(q, dtype=float)
    if q.shape != (m.N,):
        raise ConfigError(f"q needs {m.N} coordinates (theta, x..., rho)")
    if t_end < 0:
        raise ConfigError("t_end must be nonnegative")
    traj = gf.integrate(m, gf.initial_state(m, Q, q), t_end=t_end, tol=cfg.tol, theta_min=1e-12)
    buf = io.StringIO()
    gf.write_trajectory_csv(traj, buf)
    path = os.path.join(cfg.out, "trajectory.csv")
    atomic_write(path, buf.getvalue())
    A = np.exp(traj.t) * np.sin(traj.theta)
    say(f"termination: {traj.reason}  samples: {len(traj)}  t_final: {float(traj.t[-1])!r}")
    say(f"A1 = {float(A.min())!r}  A2 = {float(A.max())!r}")
    if q[-1] > 0:
        r = traj.states[:, m.n] / q[-1]
        say(f"eps = {float(r.min())!r}  C = {float(r.max())!r}")
    else:
        say("eps, C: not defined on the corner (rho(q) = 0)")
    say(f"max norm drift = {float(traj.norm_drift.max())!r}")
    say(f"wrote {path}")
    return EXIT_OK


def cmd_expmap_scan(cfg: cfgmod.RunConfig, say) -> int:
    from . import exp_map as em

    m, Q = cfg.build_metric(), cfg.build_boundary()
    spec = em.ScanSpec(n_points=cfg.counts["scan_points"], n_pairs=cfg.counts["scan_pairs"],
                       tau_window=tuple(cfg.windows["tau"]), x_window=tuple(cfg.windows["x"]),
                       rho_window=tuple(cfg.windows["rho"]), seed=cfg.seed, tol=cfg.tol)
    rep = em.injectivity_scan(m, Q, spec)
    path = os.path.join(cfg.out, "expmap_scan.json")
    atomic_write(path, json.dumps(rep, sort_keys=True, indent=1) + "\n")
    say(f"pairs compared: {rep['pairs']} of {rep['pairs_eligible']} eligible")
    say(f"min image distance: {rep['min_image_distance']!r}")
    say(f"jacobian min |det|: {rep['jacobian_min_abs']!r}  signs: {rep['jacobian_signs']}")
    say(f"c measured: {rep['c_measured']!r}  kappa: {rep['kappa']!r}  beta: {rep['beta']!r}")
    say(f"{'PASS' if rep['pass'] else 'FAIL'}  wrote {path}")
    return EXIT_OK if rep["pass"] else EXIT_FAIL


def cmd_normal_form(cfg: cfgmod.RunConfig, form: str, say) -> int:
    from . import normal_form as nfm

    m, Q = cfg.build_metric(), cfg.build_boundary()
    c = cfg.counts
    spec = nfm.GridSpec(n_param=c["nf_param"], x_window=tuple(cfg.windows["x"]), n_x=c["nf_x"],
                        rho_window=tuple(cfg.windows["rho"]), n_rho=c["nf_rho"], tol=cfg.tol)
    if form == "auto":
        form = "theta" if cfg.boundary["kind"] == "constant" else "u"
    nf = nfm.build_theta_form(m, Q, spec) if form == "theta" else nfm.build_u_form(m, Q, spec)
    buf = io.StringIO()
    nfm.write_normal_form(nf, buf)
    path = os.path.join(cfg.out, f"normal_form_{form}.csv")
    atomic_write(path, buf.getvalue())
    lo, hi = nf.eigen_range()
    say(f"{form}-form: {len(nf.nodes)} x {len(nf.xs)} x {len(nf.rhos)} nodes")
    say(f"max cross term = {float(np.max(np.abs(nf.cross)))!r}  max unit residual = {float(np.max(nf.unit))!r}")
    say(f"eigenvalues of rho^2 h in [{lo!r}, {hi!r}]")
    if form == "theta":
        say(f"AH residual = {float(np.max(np.abs(nf.ah_residual())))!r}  "
            f"corner stationarity = {nfm.corner_stationarity(nf)!r}")
    say(f"wrote {path}")
    return EXIT_OK


def _summary_csv(checks) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["suite", "anchor", "measured", "target", "pass", "claim"])
    for c in checks:
        w.writerow([c["suite"], c["anchor"], repr(c["measured"]), c["target"], "PASS" if c["pass"] else "FAIL",
                    c["claim"]])
    return buf.getvalue()


def cmd_verify(cfg: cfgmod.RunConfig, say) -> int:
    from .verification import report_json, run_suite

    report = run_suite(cfg)
    path = os.path.join(cfg.out, "report.json")
    atomic_write(path, report_json(report))
    for suite in cfg.suites:
        rows = [c for c in report["checks"] if c["suite"] == suite]
        atomic_write(os.path.join(cfg.out, f"summary_{suite}.csv"), _summary_csv(rows))
    for c in report["checks"]:
        say(f"{'PASS' if c['pass'] else 'FAIL'}  {c['anchor']:<34} measured {c['measured']!r:<24} target {c['target']}")
    s = report["summary"]
    say(f"{s['passed']}/{s['total']} checks passed; wrote {path}")
    if not report["pass"]:
        print("failing anchors: " + ", ".join(s["failed"]), file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_list_suites(say, anchors: bool = False) -> int:
    from .verification import list_suites

    for suite, items in list_suites().items():
        say(suite)
        if anchors:
            for anchor, claim in items:
                say(f"  {anchor:<34} {claim}")
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML run configuration")
    common.add_argument("--preset", choices=sorted(cfgmod.PRESETS), help="start from a named preset")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides 'out')")
    common.add_argument("--seed", type=int, help="random seed (overrides 'seed')")
    common.add_argument("--tol", type=float, help="integration tolerance (overrides 'tol')")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")

    p = argparse.ArgumentParser(prog="cornerflow", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    g = sub.add_parser("geodesic", parents=[common], help="integrate one normal geodesic to CSV")
    g.add_argument("--q", metavar="THETA,X..,RHO", help="start point on Q (default: x = 0, mid rho)")
    g.add_argument("--t-end", type=float, default=20.0, help="final arclength (default 20)")
    sub.add_parser("expmap-scan", parents=[common], help="injectivity and nondegeneracy scan")
    nf = sub.add_parser("normal-form", parents=[common], help="build a normal-form grid")
    nf.add_argument("--form", choices=["auto", "theta", "u"], default="auto",
                    help="parameterization (auto: theta for constant boundaries)")
    v = sub.add_parser("verify", parents=[common], help="run invariant suites and write a report")
    v.add_argument("--list", action="store_true", help="list suites and anchors without running")
    sub.add_parser("list-suites", parents=[common], help="print suite names")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    say = _Out(args.quiet)
    try:
        if args.command == "list-suites":
            return cmd_list_suites(say)
        if args.command == "verify" and args.list:
            return cmd_list_suites(say, anchors=True)
        threads = os.environ.get("CORNERFLOW_THREADS")
        if threads is not None and not (threads.isdigit() and int(threads) > 0):
            raise ConfigError("CORNERFLOW_THREADS must be a positive integer")
        cfg = _config(args)
        if args.command == "geodesic":
            q = None if args.q is None else _floats(args.q)
            return cmd_geodesic(cfg, q, args.t_end, say)
        if args.command == "expmap-scan":
            return cmd_expmap_scan(cfg, say)
        if args.command == "normal-form":
            return cmd_normal_form(cfg, args.form, say)
        return cmd_verify(cfg, say)
    except (ConfigError, PreconditionError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationError, AccuracyError, RegularityError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
