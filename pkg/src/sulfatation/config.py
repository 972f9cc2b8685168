"""JSON run configuration.

See ``docs/config_schema.md`` for the format. Errors carry the line of the
offending key when it can be located in the source text.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .grid import GridError, TwoScaleGrid, build_two_scale_grid
from .model import BoundaryData, KineticSpec, KineticSpecError, Params, validate
from .state import State

MODES = ("evolve", "steady", "verify")
INITIAL_KINDS = ("constant", "cosine", "random", "henry")
SCHEMES = ("coupled", "split")


class ConfigError(ValueError):
    """Malformed or inadmissible configuration; ``line`` is 1-based or ``None``."""

    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        self.line = line
        self.source = source
        where = f"{source or '<config>'}:{line}: " if line else (f"{source}: " if source else "")
        super().__init__(where + message)


@dataclass
class TimePolicy:
    dt: float = 1e-3
    t_end: float = 1.0
    output_every: float | None = None
    steady_tol: float | None = None
    adaptive: bool = False
    scheme: str = "coupled"
    sweeps: int = 1
    max_steps: int | None = None


@dataclass
class RunConfig:
    """Everything needed to reproduce a run.

    ``grid`` holds the raw ``macro``/``micro`` specs, ``params`` the physical
    coefficients and kinetics, ``initial`` the initial-condition spec.
    """

    grid: dict
    params: Params
    initial: dict = field(default_factory=lambda: {"kind": "constant"})
    time: TimePolicy = field(default_factory=TimePolicy)
    mode: str = "evolve"
    seed: int = 0
    threads: int = 1
    stationary_compare: bool = True
    stationary: dict = field(default_factory=dict)

    def build_grid(self) -> TwoScaleGrid:
        return build_two_scale_grid(self.grid["macro"], self.grid["micro"])

    def initial_state(self, grid: TwoScaleGrid | None = None) -> State:
        return make_initial(self.initial, self.params, grid or self.build_grid(), self.seed)

    def to_dict(self) -> dict[str, Any]:
        p = self.params
        params = p.to_dict()
        params.pop("w3D")
        return {
            "mode": self.mode,
            "seed": self.seed,
            "threads": self.threads,
            "stationary_compare": self.stationary_compare,
            "grid": json.loads(json.dumps(self.grid)),
            "params": params,
            "kinetics": {"R": p.R.to_dict(), "Q": p.Q.to_dict(), "psi": p.psi.to_dict()},
            "boundary": p.w3D.to_dict(),
            "initial": dict(self.initial),
            "time": {k: v for k, v in asdict(self.time).items() if v is not None},
            "stationary": dict(self.stationary),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)


def default_threads() -> int:
    """Worker count used when the config leaves ``threads`` unset or 0."""
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1)


# -- parsing -------------------------------------------------------------------

def _line_of(text: str | None, key: str) -> int | None:
    if not text:
        return None
    needle = f'"{key}"'
    for i, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return i
    return None


class _Reader:
    def __init__(self, text: str | None, source: str | None):
        self.text, self.source = text, source

    def fail(self, message: str, key: str | None = None):
        raise ConfigError(message, _line_of(self.text, key) if key else None, self.source)

    def section(self, data: dict, key: str, required: bool = True) -> dict:
        if key not in data:
            if required:
                self.fail(f"missing required section '{key}'")
            return {}
        val = data[key]
        if not isinstance(val, dict):
            self.fail(f"'{key}' must be an object, got {type(val).__name__}", key)
        return val

    def number(self, data: dict, key: str, default=None, positive=False, allow_none=False):
        if key not in data:
            if default is None and not allow_none:
                self.fail(f"missing required key '{key}'")
            return default
        val = data[key]
        if val is None and allow_none:
            return None
        if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
            self.fail(f"'{key}' must be a finite number, got {val!r}", key)
        if positive and not val > 0:
            self.fail(f"'{key}' must be positive, got {val!r}", key)
        return float(val)

    def coefficient(self, data: dict, key: str, default: float):
        val = data.get(key, default)
        if isinstance(val, list):
            try:
                arr = np.asarray(val, dtype=float)
            except (TypeError, ValueError):
                self.fail(f"'{key}' must be a number or an array of numbers", key)
            return arr
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            self.fail(f"'{key}' must be a number or an array of numbers, got {val!r}", key)
        return float(val)

    def unknown(self, data: dict, allowed: set, where: str):
        extra = sorted(set(data) - allowed)
        if extra:
            self.fail(f"unknown key(s) {extra} in {where}", extra[0])


_TOP = {"mode", "seed", "threads", "stationary_compare", "grid", "params", "kinetics", "boundary",
        "initial", "time", "stationary", "$schema", "description"}
_PARAMS = {"d1", "d2", "d3", "alpha", "gamma", "henry", "beta_max", "mu", "p"}
_TIME = {"dt", "t_end", "output_every", "steady_tol", "adaptive", "scheme", "sweeps", "max_steps"}


def config_from_dict(data: dict, text: str | None = None, source: str | None = None,
                     check_assumptions: bool = True) -> RunConfig:
    rd = _Reader(text, source)
    if not isinstance(data, dict):
        rd.fail("top level must be a JSON object")
    rd.unknown(data, _TOP, "top level")

    mode = data.get("mode", "evolve")
    if mode not in MODES:
        rd.fail(f"mode must be one of {MODES}, got {mode!r}", "mode")

    gsec = rd.section(data, "grid")
    rd.unknown(gsec, {"macro", "micro"}, "grid")
    for key in ("macro", "micro"):
        rd.section(gsec, key)

    psec = rd.section(data, "params", required=False)
    rd.unknown(psec, _PARAMS, "params")
    beta = rd.number(psec, "beta_max", 1.0)
    ksec = rd.section(data, "kinetics", required=False)
    rd.unknown(ksec, {"R", "Q", "psi"}, "kinetics")
    kin = {}
    for role in ("R", "Q", "psi"):
        spec = ksec.get(role, {"kind": "clipped_linear"})
        if not isinstance(spec, dict):
            rd.fail(f"kinetics.{role} must be an object", role)
        try:
            kin[role] = KineticSpec.from_dict(role, spec, beta_max=beta)
        except (KineticSpecError, TypeError) as exc:
            rd.fail(f"kinetics.{role}: {exc}", role)
    bsec = rd.section(data, "boundary", required=False)
    rd.unknown(bsec, {"limit", "amplitude", "rate"}, "boundary")
    w3D = BoundaryData(rd.number(bsec, "limit", 1.0), rd.number(bsec, "amplitude", 0.0),
                       rd.number(bsec, "rate", 1.0))
    params = Params(
        d1=rd.coefficient(psec, "d1", 1.0), d2=rd.coefficient(psec, "d2", 1.0), d3=rd.coefficient(psec, "d3", 1.0),
        alpha=rd.number(psec, "alpha", 1.0), gamma=rd.number(psec, "gamma", 1.0),
        henry=rd.number(psec, "henry", 1.0), beta_max=beta, R=kin["R"], Q=kin["Q"], psi=kin["psi"],
        w3D=w3D, mu=rd.number(psec, "mu", allow_none=True), p=rd.number(psec, "p", allow_none=True))

    isec = rd.section(data, "initial", required=False) or {"kind": "constant"}
    kind = isec.get("kind", "constant")
    if kind not in INITIAL_KINDS:
        rd.fail(f"initial.kind must be one of {INITIAL_KINDS}, got {kind!r}", "kind")
    rd.unknown(isec, {"kind", "w1", "w2", "w3", "w4", "amplitude", "dirichlet_compatible"}, "initial")
    for key in ("w1", "w2", "w3", "w4", "amplitude"):
        if key in isec:
            rd.number(isec, key)

    tsec = rd.section(data, "time", required=False)
    rd.unknown(tsec, _TIME, "time")
    scheme = tsec.get("scheme", "coupled")
    if scheme not in SCHEMES:
        rd.fail(f"time.scheme must be one of {SCHEMES}, got {scheme!r}", "scheme")
    sweeps = tsec.get("sweeps", 1)
    if not isinstance(sweeps, int) or isinstance(sweeps, bool) or sweeps < 1:
        rd.fail(f"time.sweeps must be a positive integer, got {sweeps!r}", "sweeps")
    max_steps = tsec.get("max_steps")
    if max_steps is not None and (not isinstance(max_steps, int) or isinstance(max_steps, bool) or max_steps < 0):
        rd.fail(f"time.max_steps must be a nonnegative integer, got {max_steps!r}", "max_steps")
    adaptive = tsec.get("adaptive", False)
    if not isinstance(adaptive, bool):
        rd.fail("time.adaptive must be true or false", "adaptive")
    t_end = rd.number(tsec, "t_end", 1.0)
    if t_end < 0:
        rd.fail("time.t_end must be nonnegative", "t_end")
    policy = TimePolicy(dt=rd.number(tsec, "dt", 1e-3, positive=True), t_end=t_end,
                        output_every=rd.number(tsec, "output_every", allow_none=True, positive=True),
                        steady_tol=rd.number(tsec, "steady_tol", allow_none=True, positive=True),
                        adaptive=adaptive, scheme=scheme, sweeps=sweeps, max_steps=max_steps)

    ssec = rd.section(data, "stationary", required=False)
    rd.unknown(ssec, {"w4inf", "n_starts", "tol"}, "stationary")
    for key in ("w4inf", "tol"):
        if key in ssec:
            rd.number(ssec, key, positive=key == "tol")
    n_starts = ssec.get("n_starts", 5)
    if not isinstance(n_starts, int) or isinstance(n_starts, bool) or n_starts < 1:
        rd.fail(f"stationary.n_starts must be a positive integer, got {n_starts!r}", "n_starts")

    seed = data.get("seed", 0)
    threads = data.get("threads", 0)
    for key, val in (("seed", seed), ("threads", threads)):
        if not isinstance(val, int) or isinstance(val, bool) or val < 0:
            rd.fail(f"'{key}' must be a nonnegative integer, got {val!r}", key)
    cfg = RunConfig(grid=gsec, params=params, initial=isec, time=policy, mode=mode, seed=seed,
                    threads=threads or default_threads(), stationary_compare=bool(data.get("stationary_compare", True)),
                    stationary=dict(ssec))

    try:
        grid = cfg.build_grid()
    except (GridError, TypeError, ValueError) as exc:
        rd.fail(f"grid: {exc}", "grid")
    if check_assumptions:
        try:
            init = cfg.initial_state(grid)
        except ValueError as exc:
            rd.fail(f"initial: {exc}", "initial")
        report = validate(params, initial=init, dirichlet_nodes=grid.dirichlet_nodes)
        if not report.ok:
            msgs = "; ".join(f"{c.label} violated: {c.message}" for c in report.failures)
            key = {"(A1)": "d1", "(A2)": "kinetics", "(A3)": "psi", "(A4)": "boundary", "(A5)": "initial",
                   "(A6)": "boundary", "constants": "params"}.get(report.failures[0].label, "params")
            rd.fail(msgs, key)
    return cfg


def load_config(path, check_assumptions: bool = True) -> RunConfig:
    """Parse and validate a JSON config file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", source=str(path)) from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} (column {exc.colno})", exc.lineno, str(path)) from exc
    return config_from_dict(data, text, str(path), check_assumptions)


# -- initial conditions ----------------------------------------------------------

def make_initial(spec: dict, params: Params, grid: TwoScaleGrid, seed: int = 0) -> State:
    """Initial state from a spec.

    ``constant``: ``w1..w4`` given (default 0). ``henry``: the Henry
    equilibrium at ``w3 = w3D(0)`` with ``w4 = beta_max``. ``cosine``: the
    constants modulated by ``1 + amplitude cos(pi x) cos(pi y)`` on both
    scales. ``random``: uniform in ``[0, value]`` per field. Unless
    ``dirichlet_compatible`` is false, ``w3`` on the Dirichlet nodes is set
    to ``w3D(0)``.
    """
    kind = spec.get("kind", "constant")
    nM, nY, nG = grid.n_macro, grid.n_micro, grid.n_gamma1
    c0 = params.w3D.initial
    if kind == "henry":
        s = State.henry_equilibrium(grid, params, w3=c0, w4=spec.get("w4", params.beta_max))
        return s
    vals = {k: float(spec.get(k, 0.0)) for k in ("w1", "w2", "w3", "w4")}
    if kind == "constant":
        w1, w2 = np.full((nM, nY), vals["w1"]), np.full((nM, nY), vals["w2"])
        w3, w4 = np.full(nM, vals["w3"]), np.full((nM, nG), vals["w4"])
    elif kind == "cosine":
        amp = float(spec.get("amplitude", 0.5))
        if not 0 <= amp <= 1:
            raise ValueError("cosine amplitude must lie in [0, 1] to keep the data nonnegative")
        mx = 1 + amp * _cos_profile(grid.macro.coords)
        my = 1 + amp * _cos_profile(grid.micro.coords)
        w1 = vals["w1"] * np.outer(mx, my)
        w2 = vals["w2"] * np.outer(mx, my)
        w3 = vals["w3"] * mx
        w4 = vals["w4"] * np.outer(mx, np.ones(nG)) / (1 + amp)
    elif kind == "random":
        rng = np.random.default_rng(seed)
        w1 = rng.uniform(0, vals["w1"], (nM, nY))
        w2 = rng.uniform(0, vals["w2"], (nM, nY))
        w3 = rng.uniform(0, vals["w3"], nM)
        w4 = rng.uniform(0, vals["w4"], (nM, nG))
    else:
        raise ValueError(f"unknown initial kind {kind!r}")
    if spec.get("dirichlet_compatible", True):
        w3 = np.array(w3)
        w3[grid.dirichlet_nodes] = c0
    return State(w1, w2, w3, w4, 0.0)


def _cos_profile(coords: np.ndarray) -> np.ndarray:
    return np.prod(np.cos(np.pi * coords), axis=1)
