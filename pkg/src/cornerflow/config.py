"""Run configuration: YAML loading, validation, presets and overrides.

A config is a single YAML mapping::

    metric:   {family: perturbed, n: 2, amplitude: 0.1, warp: 0.2}
    boundary: {kind: graph, theta0: 1.2, angle_amp: 0.1, rho_slope: 0.2, mixed: 0.1}
    windows:  {x: [-1.0, 1.0], rho: [0.0, 0.5], tau: [0.0, 1.0]}
    counts:   {scan_points: 200, scan_pairs: 10000, det_grid: 20, nf_param: 17, nf_x: 5, nf_rho: 33}
    tol: 1.0e-10
    seed: 0
    suites: [metric, rates, flow, expmap, normal-form, comparison]
    targets: {flow.sandwich: 0.0}
    out: results

Every key is optional; missing keys take the defaults below.  ``preset: NAME``
starts from a named preset and applies the remaining keys on top.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Optional

import yaml

from .errors import ConfigError

__all__ = ["RunConfig", "PRESETS", "SUITES", "load_config", "parse_config", "config_from_dict"]

SUITES = ("metric", "rates", "flow", "expmap", "normal-form", "comparison")

DEFAULTS: dict = {
    "metric": {"family": "perturbed", "n": 2, "amplitude": 0.1, "warp": 0.2},
    "boundary": {"kind": "graph", "theta0": 1.2, "angle_amp": 0.1, "rho_slope": 0.2, "mixed": 0.1},
    "windows": {"x": [-1.0, 1.0], "rho": [0.0, 0.5], "tau": [0.0, 1.0]},
    "counts": {"scan_points": 200, "scan_pairs": 10000, "det_grid": 20,
               "nf_param": 17, "nf_x": 5, "nf_rho": 33},
    "tol": 1e-10,
    "seed": 0,
    "suites": list(SUITES),
    "targets": {},
    "out": "results",
}

PRESETS: dict = {
    "hyperbolic-full": {
        "metric": {"family": "hyperbolic", "n": 2, "amplitude": 0.0, "warp": 0.0},
        "boundary": {"kind": "constant", "theta0": 1.0},
    },
    "perturbed-full": {},
    "perturbed-rates": {"suites": ["rates"]},
}

_BOUNDARY_KEYS = {"kind", "theta0", "angle_amp", "rho_slope", "mixed"}
_METRIC_KEYS = {"family", "n", "amplitude", "warp"}


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration (see the module docstring for the file layout)."""

    metric: dict
    boundary: dict
    windows: dict
    counts: dict
    tol: float
    seed: int
    suites: tuple
    targets: dict = field(default_factory=dict)
    out: str = "results"
    preset: Optional[str] = None

    def as_dict(self) -> dict:
        return {
            "metric": dict(self.metric), "boundary": dict(self.boundary),
            "windows": {k: list(v) for k, v in self.windows.items()}, "counts": dict(self.counts),
            "tol": self.tol, "seed": self.seed, "suites": list(self.suites),
            "targets": dict(self.targets), "out": self.out, "preset": self.preset,
        }

    def build_metric(self):
        from .metric_core import metric_from_family

        m = self.metric
        return metric_from_family(m["family"], int(m["n"]), float(m.get("amplitude", 0.0)),
                                  float(m.get("warp", 0.0)))

    def build_boundary(self):
        from .geodesic_flow import BoundaryQ

        b = self.boundary
        n = int(self.metric["n"])
        if b["kind"] == "constant":
            return BoundaryQ.constant(float(b["theta0"]), n)
        return BoundaryQ.graph(float(b["theta0"]), n, float(b.get("angle_amp", 0.0)),
                               float(b.get("rho_slope", 0.0)), float(b.get("mixed", 0.0)),
                               rho_max=max(1.0, float(self.windows["rho"][1])))

    def with_overrides(self, **kw) -> "RunConfig":
        """Copy with top-level keys replaced (``None`` values are ignored)."""
        d = self.as_dict()
        d.update({k: v for k, v in kw.items() if v is not None})
        return config_from_dict(d)


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "targets":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _positions(text: str) -> dict:
    """Map dotted key paths to 1-based ``(line, column)`` of their values."""
    pos: dict = {}

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = f"{path}.{k.value}" if path else str(k.value)
                pos[key] = (v.start_mark.line + 1, v.start_mark.column + 1)
                walk(v, key)

    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return pos
    if root is not None:
        walk(root, "")
    return pos


def _fail(msg: str, key: str, pos: dict):
    if key in pos:
        line, col = pos[key]
        raise ConfigError(f"line {line}, column {col}: {key}: {msg}")
    raise ConfigError(f"{key}: {msg}")


def _number(d, key, path, pos, lo=-math.inf, hi=math.inf, integer=False):
    v = d.get(key)
    ok = isinstance(v, (int, float)) and not isinstance(v, bool)
    if ok and integer:
        ok = float(v).is_integer()
    if not ok or not (lo <= v <= hi) or not math.isfinite(v):
        kind = "an integer" if integer else "a number"
        _fail(f"expected {kind} in [{lo}, {hi}], got {v!r}", path, pos)
    return int(v) if integer else float(v)


def _range(d, key, path, pos, lo, hi):
    v = d.get(key)
    if not (isinstance(v, (list, tuple)) and len(v) == 2
            and all(isinstance(a, (int, float)) and not isinstance(a, bool) for a in v)):
        _fail(f"expected a pair [lo, hi], got {v!r}", path, pos)
    a, b = float(v[0]), float(v[1])
    if not (lo <= a < b <= hi):
        _fail(f"range must be nonempty and inside [{lo}, {hi}], got {v!r}", path, pos)
    return (a, b)


def config_from_dict(d: dict, pos: Optional[dict] = None, preset: Optional[str] = None) -> RunConfig:
    """Validate a plain mapping merged over the defaults."""
    pos = pos or {}
    if not isinstance(d, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(d) - set(DEFAULTS) - {"preset"}
    if unknown:
        key = sorted(unknown)[0]
        _fail("unknown key", key, pos)
    preset = d.get("preset", preset)
    base = DEFAULTS
    if preset is not None:
        if preset not in PRESETS:
            _fail(f"unknown preset (choose from {', '.join(PRESETS)})", "preset", pos)
        base = _merge(DEFAULTS, PRESETS[preset])
    cfg = _merge(base, {k: v for k, v in d.items() if k != "preset"})

    for sect in ("metric", "boundary", "windows", "counts", "targets"):
        if not isinstance(cfg[sect], dict):
            _fail("expected a mapping", sect, pos)

    m = cfg["metric"]
    if set(m) - _METRIC_KEYS:
        _fail("unknown key", f"metric.{sorted(set(m) - _METRIC_KEYS)[0]}", pos)
    if m.get("family") not in ("hyperbolic", "warped-k", "perturbed"):
        _fail("expected one of hyperbolic, warped-k, perturbed", "metric.family", pos)
    metric = {
        "family": m["family"],
        "n": _number(m, "n", "metric.n", pos, 2, 6, integer=True),
        "amplitude": _number(m, "amplitude", "metric.amplitude", pos, 0.0, 1.0),
        "warp": _number(m, "warp", "metric.warp", pos, -1.0, 1.0),
    }

    b = cfg["boundary"]
    if set(b) - _BOUNDARY_KEYS:
        _fail("unknown key", f"boundary.{sorted(set(b) - _BOUNDARY_KEYS)[0]}", pos)
    if b.get("kind") not in ("constant", "graph"):
        _fail("expected constant or graph", "boundary.kind", pos)
    boundary = {"kind": b["kind"], "theta0": _number(b, "theta0", "boundary.theta0", pos, 1e-3, math.pi - 1e-3)}
    if b["kind"] == "graph":
        for k in ("angle_amp", "rho_slope", "mixed"):
            b.setdefault(k, 0.0)
            boundary[k] = _number(b, k, f"boundary.{k}", pos, -1.0, 1.0)

    w = cfg["windows"]
    windows = {
        "x": _range(w, "x", "windows.x", pos, -math.inf, math.inf),
        "rho": _range(w, "rho", "windows.rho", pos, 0.0, 5.0),
        "tau": _range(w, "tau", "windows.tau", pos, 0.0, 1.0),
    }
    if windows["rho"][0] != 0.0:
        _fail("the rho window must start at 0", "windows.rho", pos)

    c = cfg["counts"]
    if set(c) - set(DEFAULTS["counts"]):
        _fail("unknown key", f"counts.{sorted(set(c) - set(DEFAULTS['counts']))[0]}", pos)
    counts = {
        "scan_points": _number(c, "scan_points", "counts.scan_points", pos, 10, 10_000, integer=True),
        "scan_pairs": _number(c, "scan_pairs", "counts.scan_pairs", pos, 1, 10**7, integer=True),
        "det_grid": _number(c, "det_grid", "counts.det_grid", pos, 2, 100, integer=True),
        "nf_param": _number(c, "nf_param", "counts.nf_param", pos, 3, 129, integer=True),
        "nf_x": _number(c, "nf_x", "counts.nf_x", pos, 1, 129, integer=True),
        "nf_rho": _number(c, "nf_rho", "counts.nf_rho", pos, 2, 257, integer=True),
    }

    tol = _number(cfg, "tol", "tol", pos, 1e-12, 1e-4)
    seed = _number(cfg, "seed", "seed", pos, 0, 2**63 - 1, integer=True)
    suites = cfg["suites"]
    if suites is None:
        suites = []
    if not isinstance(suites, list) or any(s not in SUITES for s in suites):
        _fail(f"expected a list drawn from {', '.join(SUITES)}", "suites", pos)
    targets = {}
    for k, v in cfg["targets"].items():
        targets[str(k)] = _number(cfg["targets"], k, f"targets.{k}", pos)
    out = cfg["out"]
    if not isinstance(out, str) or not out:
        _fail("expected a directory name", "out", pos)
    return RunConfig(metric, boundary, windows, counts, tol, seed, tuple(dict.fromkeys(suites)),
                     targets, out, preset)


def parse_config(text: str, preset: Optional[str] = None) -> RunConfig:
    """Parse YAML text.

    Raises:
        ConfigError: Syntax errors (with line/column) or invalid values.
    """
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}: " if mark is not None else ""
        raise ConfigError(f"{where}{exc.problem}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(str(exc)) from None
    if data is None:
        data = {}
    return config_from_dict(data, _positions(text), preset)


def load_config(path: Optional[str] = None, preset: Optional[str] = None) -> RunConfig:
    """Read a config file, or return a preset (or the defaults) when ``path`` is ``None``."""
    if path is None:
        return config_from_dict({}, preset=preset)
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text, preset)
