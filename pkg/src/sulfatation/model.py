"""Parameters, kinetic laws and a-priori bounds of the sulfatation model.

The reaction rate at the gypsum interface is ``eta(w1, w4) = R(w1) * Q(w4)``
and the bulk exchange between H2SO4 and aqueous H2S is ``psi(w1 - gamma*w2)``.
Every kinetic law is described by an immutable :class:`KineticSpec` and
evaluated through :func:`eval_kinetic`, :func:`eval_primitive` and
:func:`eval_derivative`; all three accept scalars or numpy arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np

ROLES = ("R", "Q", "psi")
KINDS = ("clipped_linear", "power_monotone", "custom_table")
_KIND_ALIASES = {"linear": "clipped_linear", "power": "power_monotone", "table": "custom_table"}


class KineticSpecError(ValueError):
    """Raised for an ill-formed kinetic specification."""


class ConfigurationError(ValueError):
    """Raised when a requested operation is not available for a configuration."""


@dataclass(frozen=True)
class KineticSpec:
    """One kinetic law R, Q or psi.

    Built-in formulas (``k`` slope, ``p`` exponent, ``threshold`` = beta_max):

    ==============  =====================  ==========================  =====================
    kind            R(r)                   Q(r)                        psi(r)
    ==============  =====================  ==========================  =====================
    clipped_linear  k*max(r, 0)            k*max(threshold - r, 0)     k*r
    power_monotone  k*max(r, 0)**p         k*max(threshold - r, 0)**p  k*sign(r)*|r|**p
    custom_table    piecewise-linear interpolation of ``table`` with constant extension
    ==============  =====================  ==========================  =====================

    ``lower``/``upper`` clip the argument before evaluation; they are set by
    :func:`truncate` and are ``None`` for an untruncated law.
    """

    role: str
    kind: str = "clipped_linear"
    k: float = 1.0
    p: float = 1.0
    threshold: float | None = None
    table: tuple[tuple[float, float], ...] | None = None
    lower: float | None = None
    upper: float | None = None

    def __post_init__(self):
        kind = _KIND_ALIASES.get(self.kind, self.kind)
        object.__setattr__(self, "kind", kind)
        if self.role not in ROLES:
            raise KineticSpecError(f"unknown kinetic role {self.role!r}; expected one of {ROLES}")
        if kind not in KINDS:
            raise KineticSpecError(f"unknown kinetic kind {self.kind!r}; expected one of {KINDS}")
        if kind == "custom_table":
            if not self.table or len(self.table) < 2:
                raise KineticSpecError("custom_table needs at least two (r, value) points")
            table = tuple((float(a), float(b)) for a, b in self.table)
            xs = [a for a, _ in table]
            if any(b <= a for a, b in zip(xs, xs[1:])):
                raise KineticSpecError("custom_table abscissae must be strictly increasing")
            object.__setattr__(self, "table", table)
        else:
            if not np.isfinite(self.k) or self.k < 0:
                raise KineticSpecError(f"slope k must be finite and nonnegative, got {self.k}")
            if kind == "power_monotone" and not self.p >= 1:
                raise KineticSpecError(f"power exponent p must be >= 1, got {self.p}")
            if self.role == "Q" and (self.threshold is None or not self.threshold > 0):
                raise KineticSpecError("Q needs a positive threshold (beta_max)")
        if self.lower is not None and self.upper is not None and self.lower > self.upper:
            raise KineticSpecError("truncation interval is empty")

    @property
    def linear_slope(self) -> float | None:
        """Slope if this is a globally linear psi, else ``None``."""
        if self.role != "psi" or self.lower is not None or self.upper is not None:
            return None
        if self.kind == "clipped_linear" or (self.kind == "power_monotone" and self.p == 1):
            return float(self.k)
        return None

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind}
        if self.kind == "custom_table":
            out["table"] = [list(row) for row in self.table]
        else:
            out["k"] = self.k
            if self.kind == "power_monotone":
                out["p"] = self.p
        if self.role == "Q" and self.threshold is not None:
            out["threshold"] = self.threshold
        if self.lower is not None:
            out["lower"] = self.lower
        if self.upper is not None:
            out["upper"] = self.upper
        return out

    @classmethod
    def from_dict(cls, role: str, data: dict[str, Any], beta_max: float | None = None) -> "KineticSpec":
        data = dict(data)
        if role == "Q" and "threshold" not in data:
            data["threshold"] = beta_max
        if "table" in data and data["table"] is not None:
            data["table"] = tuple(tuple(row) for row in data["table"])
        known = {"kind", "k", "p", "threshold", "table", "lower", "upper"}
        unknown = set(data) - known
        if unknown:
            raise KineticSpecError(f"unknown kinetic keys {sorted(unknown)}")
        return cls(role=role, **data)


# -- base laws (argument already clipped) -----------------------------------

def _table_arrays(spec):
    xs = np.array([a for a, _ in spec.table])
    ys = np.array([b for _, b in spec.table])
    return xs, ys


def _table_integral_from_x0(spec, r):
    # exact integral of the piecewise-linear (constant-extended) table from xs[0] to r
    xs, ys = _table_arrays(spec)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (ys[1:] + ys[:-1]) * np.diff(xs))])
    r = np.asarray(r, dtype=float)
    idx = np.clip(np.searchsorted(xs, r, side="right") - 1, 0, len(xs) - 2)
    inside = cum[idx] + 0.5 * (r - xs[idx]) * (ys[idx] + np.interp(r, xs, ys))
    left = ys[0] * (r - xs[0])
    right = cum[-1] + ys[-1] * (r - xs[-1])
    return np.where(r <= xs[0], left, np.where(r >= xs[-1], right, inside))


def _base_value(spec, r):
    if spec.kind == "custom_table":
        xs, ys = _table_arrays(spec)
        return np.interp(r, xs, ys)
    k, p = spec.k, spec.p
    if spec.role == "R":
        pos = np.maximum(r, 0.0)
        return k * pos if spec.kind == "clipped_linear" else k * pos**p
    if spec.role == "Q":
        pos = np.maximum(spec.threshold - r, 0.0)
        return k * pos if spec.kind == "clipped_linear" else k * pos**p
    if spec.kind == "clipped_linear":
        return k * r
    return k * np.sign(r) * np.abs(r) ** p


def _base_primitive(spec, r):
    if spec.kind == "custom_table":
        return _table_integral_from_x0(spec, r) - _table_integral_from_x0(spec, 0.0)
    k = spec.k
    q = 1.0 if spec.kind == "clipped_linear" else spec.p
    if spec.role == "R":
        return k * np.maximum(r, 0.0) ** (q + 1) / (q + 1)
    if spec.role == "Q":
        b = spec.threshold
        return k * (b ** (q + 1) - np.maximum(b - r, 0.0) ** (q + 1)) / (q + 1)
    return k * np.abs(r) ** (q + 1) / (q + 1)


def _base_derivative(spec, r):
    if spec.kind == "custom_table":
        # finite-difference fallback: tables carry no closed-form derivative
        delta = 1e-7 * np.maximum(1.0, np.abs(r))
        return (_base_value(spec, r + delta) - _base_value(spec, r - delta)) / (2 * delta)
    k = spec.k
    if spec.role == "R":
        if spec.kind == "clipped_linear":
            return np.where(r > 0, k, 0.0)
        return np.where(r > 0, k * spec.p * np.maximum(r, 0.0) ** (spec.p - 1), 0.0)
    if spec.role == "Q":
        gap = spec.threshold - r
        if spec.kind == "clipped_linear":
            return np.where(gap > 0, -k, 0.0)
        return np.where(gap > 0, -k * spec.p * np.maximum(gap, 0.0) ** (spec.p - 1), 0.0)
    if spec.kind == "clipped_linear":
        return np.full_like(np.asarray(r, dtype=float), k)
    return k * spec.p * np.abs(r) ** (spec.p - 1)


def _clip(spec, r):
    lo = -np.inf if spec.lower is None else spec.lower
    hi = np.inf if spec.upper is None else spec.upper
    return np.clip(r, lo, hi)


def _check(spec):
    if not isinstance(spec, KineticSpec):
        raise KineticSpecError(f"expected a KineticSpec, got {type(spec).__name__}")


def eval_kinetic(spec: KineticSpec, r):
    """Value of the kinetic law at ``r`` (scalar or array)."""
    _check(spec)
    r = np.asarray(r, dtype=float)
    out = _base_value(spec, _clip(spec, r))
    return float(out) if out.ndim == 0 else out


def eval_primitive(spec: KineticSpec, r):
    """Primitive ``F(r) = int_0^r f(s) ds`` of the kinetic law (so ``F(0) = 0``)."""
    _check(spec)
    r = np.asarray(r, dtype=float)
    rc = _clip(spec, r)
    out = _base_primitive(spec, rc) + _base_value(spec, rc) * (r - rc)
    return float(out) if out.ndim == 0 else out


def eval_derivative(spec: KineticSpec, r):
    """Derivative of the kinetic law; zero where truncation freezes the law."""
    _check(spec)
    r = np.asarray(r, dtype=float)
    lo = -np.inf if spec.lower is None else spec.lower
    hi = np.inf if spec.upper is None else spec.upper
    inside = (r > lo) & (r < hi)
    out = np.where(inside, _base_derivative(spec, np.clip(r, lo, hi)), 0.0)
    return float(out) if out.ndim == 0 else out


def truncate(spec: KineticSpec, m: float) -> KineticSpec:
    """Globally Lipschitz, bounded version of ``spec`` used for fixed-point arguments.

    ``R_m`` freezes R above ``m``; ``Q_m`` freezes Q above ``m`` and below 0;
    ``psi_m`` freezes psi outside ``[-m, m]``.
    """
    _check(spec)
    if not m > 0:
        raise ValueError(f"truncation level must be positive, got {m}")
    if spec.role == "R":
        return replace(spec, upper=float(m))
    if spec.role == "Q":
        return replace(spec, lower=0.0, upper=float(m))
    return replace(spec, lower=-float(m), upper=float(m))


# -- boundary data ----------------------------------------------------------

@dataclass(frozen=True)
class BoundaryData:
    """Spatially constant Dirichlet data ``w3D(t) = limit + amplitude * exp(-rate * t)``.

    The exponential transient makes ``d/dt w3D`` integrable on ``(0, inf)``.
    Since the data are constant in space their extension into the domain is
    the constant itself, so the macro source ``f = d/dt w3D - div(d3 grad w3D)``
    reduces to ``d/dt w3D``.
    """

    limit: float
    amplitude: float = 0.0
    rate: float = 1.0

    def value(self, t):
        return self.limit + self.amplitude * np.exp(-self.rate * np.asarray(t, dtype=float))

    def time_derivative(self, t):
        return -self.rate * self.amplitude * np.exp(-self.rate * np.asarray(t, dtype=float))

    def source(self, t):
        return self.time_derivative(t)

    def source_rate(self, t):
        return self.rate**2 * self.amplitude * np.exp(-self.rate * np.asarray(t, dtype=float))

    @property
    def initial(self) -> float:
        return float(self.limit + self.amplitude)

    def sup(self) -> float:
        return float(max(self.limit, self.initial))

    def inf(self) -> float:
        return float(min(self.limit, self.initial))

    def to_dict(self) -> dict[str, float]:
        return {"limit": self.limit, "amplitude": self.amplitude, "rate": self.rate}


# -- parameters -------------------------------------------------------------

Coefficient = Any  # float or numpy array of nodal values


@dataclass(frozen=True)
class Params:
    """All coefficients of the two-scale system.

    ``d1``/``d2`` are scalars, micro nodal arrays ``(n_micro,)`` or full
    ``(n_macro, n_micro)`` arrays; ``d3`` is a scalar or macro nodal array.
    ``mu``/``p`` declare strong monotonicity of psi when known.
    """

    d1: Coefficient = 1.0
    d2: Coefficient = 1.0
    d3: Coefficient = 1.0
    alpha: float = 1.0
    gamma: float = 1.0
    henry: float = 1.0
    beta_max: float = 1.0
    R: KineticSpec = field(default_factory=lambda: KineticSpec("R"))
    Q: KineticSpec = field(default_factory=lambda: KineticSpec("Q", threshold=1.0))
    psi: KineticSpec = field(default_factory=lambda: KineticSpec("psi"))
    w3D: BoundaryData = field(default_factory=lambda: BoundaryData(limit=1.0))
    mu: float | None = None
    p: float | None = None

    def with_(self, **changes) -> "Params":
        return replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        def coef(c):
            return c.tolist() if isinstance(c, np.ndarray) else c

        out = {
            "d1": coef(self.d1), "d2": coef(self.d2), "d3": coef(self.d3),
            "alpha": self.alpha, "gamma": self.gamma, "henry": self.henry,
            "beta_max": self.beta_max, "w3D": self.w3D.to_dict(),
        }
        if self.mu is not None:
            out["mu"] = self.mu
        if self.p is not None:
            out["p"] = self.p
        return out


def default_params(**overrides) -> Params:
    """Canonical parameters: linear kinetics and a rising boundary transient.

    All values are dyadic so the Henry equilibrium is exact in floating
    point. The exchange rate and psi slope put the slowest decay rate of the
    canonical grid near 0.37.
    """
    base = dict(
        d1=1.0, d2=1.0, d3=1.0, alpha=4.0, gamma=2.0, henry=0.5, beta_max=1.0,
        R=KineticSpec("R", "clipped_linear", k=1.0),
        Q=KineticSpec("Q", "clipped_linear", k=1.0, threshold=1.0),
        psi=KineticSpec("psi", "clipped_linear", k=2.0),
        w3D=BoundaryData(limit=1.0, amplitude=-0.5, rate=1.0),
        mu=2.0, p=1.0,
    )
    base.update(overrides)
    return Params(**base)


# -- bounds -----------------------------------------------------------------

@dataclass(frozen=True)
class Bounds:
    M1: float
    M2: float
    M3: float
    M4: float

    def as_array(self) -> np.ndarray:
        return np.array([self.M1, self.M2, self.M3, self.M4])


def bounds_from_norms(params: Params, w10: float, w20: float, w30: float, w40: float,
                      w3D_sup: float | None = None) -> Bounds:
    """Maximum-principle bounds from sup norms of the initial data."""
    g, h = params.gamma, params.henry
    if w3D_sup is None:
        w3D_sup = max(abs(params.w3D.limit), abs(params.w3D.initial))
    M1 = max(abs(w10), g * abs(w20), g * h * abs(w30), g * h * abs(w3D_sup))
    M2 = M1 / g
    return Bounds(M1=M1, M2=M2, M3=M2 / h, M4=max(params.beta_max, abs(w40)))


def compute_bounds(params: Params, initial) -> Bounds:
    """Bounds M1..M4 of the solution started from ``initial`` (a State)."""
    def sup(a):
        a = np.asarray(a)
        return float(np.max(np.abs(a))) if a.size else 0.0

    return bounds_from_norms(params, sup(initial.w1), sup(initial.w2), sup(initial.w3), sup(initial.w4))


# -- validation -------------------------------------------------------------

@dataclass(frozen=True)
class Check:
    label: str
    passed: bool
    message: str = ""


@dataclass
class ValidationReport:
    checks: list[Check] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def add(self, label, passed, message=""):
        self.checks.append(Check(label, bool(passed), message))

    def __str__(self):
        return "\n".join(f"{'pass' if c.passed else 'FAIL'} {c.label}: {c.message}" for c in self.checks)


def _min_coefficient(d) -> float:
    arr = np.asarray(d, dtype=float)
    return float(np.min(arr)) if arr.size else float("nan")


def validate(params: Params, m0: float | None = None, n_samples: int = 10_000,
             initial=None, dirichlet_nodes: Sequence[int] | None = None) -> ValidationReport:
    """Check assumptions (A1)-(A6) numerically. Never raises.

    Monotonicity and sign conditions are sampled on ``n_samples`` points of
    ``[-2*m0, 2*m0]``. When ``initial`` is given, (A5) is checked as well;
    ``dirichlet_nodes`` adds the compatibility ``w30 = w3D(0)`` on the
    Dirichlet boundary.
    """
    rep = ValidationReport()
    if m0 is None:
        m0 = max(1.0, params.beta_max, params.gamma * params.henry * params.w3D.sup())
    r = np.linspace(-2 * m0, 2 * m0, n_samples)

    for name in ("d1", "d2", "d3"):
        dmin = _min_coefficient(getattr(params, name))
        ok = np.isfinite(dmin) and dmin > 0 and np.all(np.isfinite(np.asarray(getattr(params, name), dtype=float)))
        rep.add("(A1)", ok, f"min {name} = {dmin:g}")
    for name in ("alpha", "gamma", "henry", "beta_max"):
        val = getattr(params, name)
        rep.add("constants", np.isfinite(val) and val > 0, f"{name} = {val:g}")

    try:
        Rv = eval_kinetic(params.R, r)
        Qv = eval_kinetic(params.Q, r)
        Pv = eval_kinetic(params.psi, r)
    except Exception as exc:  # noqa: BLE001 - report, never abort
        rep.add("(A2)", False, f"kinetics not evaluable: {exc}")
        return rep

    rep.add("(A2)", np.all(np.diff(Rv) >= -1e-14), "R nondecreasing")
    rep.add("(A2)", np.all(Rv[r <= 0] == 0) and np.all(Rv[r > 0] > 0), "R = 0 for r <= 0, R > 0 for r > 0")
    rep.add("(A2)", np.all(np.diff(Qv) <= 1e-14), "Q nonincreasing")
    beta = params.beta_max
    rep.add("(A2)", np.all(Qv[r < beta] > 0) and np.all(Qv[r >= beta] == 0),
            f"Q > 0 below beta_max = {beta:g}, Q = 0 above")
    rep.add("(A3)", np.all(np.diff(Pv) >= -1e-14), "psi nondecreasing")
    rep.add("(A3)", eval_kinetic(params.psi, 0.0) == 0.0, "psi(0) = 0")
    slopes = np.abs(np.diff(Pv)) / np.diff(r)
    rep.add("(A3)", np.all(np.isfinite(slopes)), f"psi sampled Lipschitz constant {np.max(slopes):.3g}")

    bd = params.w3D
    rep.add("(A4)", bd.inf() >= 0 and np.isfinite(bd.sup()), f"w3D in [{bd.inf():g}, {bd.sup():g}]")
    rep.add("(A4)", True, "w3D spatially constant: zero normal derivative on Gamma_N")
    rep.add("(A6)", bd.amplitude == 0 or bd.rate > 0,
            f"transient amplitude {bd.amplitude:g}, rate {bd.rate:g}")

    if params.mu is not None:
        p = 1.0 if params.p is None else params.p
        a = r[::max(1, n_samples // 400)]
        x, y = np.meshgrid(a, a)
        lhs = (eval_kinetic(params.psi, x) - eval_kinetic(params.psi, y)) * (x - y)
        ok = params.mu > 0 and p >= 1 and np.all(lhs >= params.mu * np.abs(x - y) ** (p + 1) * (1 - 1e-12) - 1e-14)
        rep.add("strong monotonicity", ok, f"mu = {params.mu:g}, p = {p:g}")

    if initial is not None:
        for name in ("w1", "w2", "w3", "w4"):
            a = np.asarray(getattr(initial, name))
            rep.add("(A5)", bool(np.all(np.isfinite(a)) and np.all(a >= 0)), f"{name}0 nonnegative and bounded")
        if dirichlet_nodes is not None and len(dirichlet_nodes):
            gap = np.max(np.abs(np.asarray(initial.w3)[list(dirichlet_nodes)] - bd.initial))
            rep.add("(A5)", gap <= 1e-12 * max(1.0, bd.sup()), f"w30 - w3D(0) on Gamma_D: {gap:.3g}")
    return rep
