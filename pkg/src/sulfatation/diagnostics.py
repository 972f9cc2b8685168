"""Energy, norms, mass balance and bound checks.

The Lyapunov functional is evaluated with exactly the quadrature of
:mod:`sulfatation.discrete_ops`, so the implicit diffusion step is a discrete
gradient-flow step of it (up to the lagged terms)::

    phi_1(t; u) = 1/2 u1.K1.u1 + sum_G1 Q(w4) Rhat(u1) + gamma/2 u2.K2.u2
                + sum_Y psihat(u1 - gamma u2)
                + gamma alpha/2 sum_G2 |h (u3 + w3D(t)) - u2|^2
                + gamma h/2 u3.K3.u3 + gamma h sum_Omega f(t) u3

with ``u = (w1, w2, w3 - w3D(t))`` and ``f = d/dt w3D - div(d3 grad w3D)``.
Micro sums carry the macro weight of their node.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .discrete_ops import DiscreteOperators, build_operators
from .grid import TwoScaleGrid
from .model import Bounds, Params, eval_kinetic, eval_primitive
from .state import State


@dataclass(frozen=True)
class DiagnosticsRecord:
    """Diagnostics at one output time.

    ``dissipation`` is the rate ``|d/dt w~|_H^2`` of the last step;
    ``dissipation_integral`` and ``I_terms`` are accumulated from ``t = 0``.
    """

    t: float
    energy: float
    h_norm_sq: float
    dissipation: float
    dissipation_integral: float
    I_terms: tuple[float, float, float, float]
    mass_defect: float
    bound_defect: float
    w4_total: float

    def as_row(self) -> dict:
        row = {k: getattr(self, k) for k in ("t", "energy", "h_norm_sq", "dissipation",
                                             "dissipation_integral", "mass_defect", "bound_defect", "w4_total")}
        for i, v in enumerate(self.I_terms, 1):
            row[f"I{i}"] = v
        return row


def _ops(params, grid, ops):
    return ops if ops is not None else build_operators(params, grid)


def tilde(state: State, params: Params) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(w1, w2, w3 - w3D(t))``, the unknowns of the gradient flow."""
    return state.w1, state.w2, state.w3 - float(params.w3D.value(state.t))


def h_inner(u, v, params: Params, grid: TwoScaleGrid) -> float:
    """``(u1,v1) + gamma (u2,v2) + gamma h (u3,v3)`` with trapezoidal quadrature."""
    u1, u2, u3 = (np.asarray(a, dtype=float) for a in u)
    v1, v2, v3 = (np.asarray(a, dtype=float) for a in v)
    if u1.shape != v1.shape or u2.shape != v2.shape or u3.shape != v3.shape:
        raise ValueError("h_inner: shape mismatch")
    mO, mY = grid.macro_mass, grid.micro_mass
    p1 = mO @ ((u1 * v1) @ mY)
    p2 = mO @ ((u2 * v2) @ mY)
    p3 = mO @ (u3 * v3)
    return float(p1 + params.gamma * p2 + params.gamma * params.henry * p3)


def h_norm(u, params, grid) -> float:
    return float(np.sqrt(max(h_inner(u, u, params, grid), 0.0)))


def h_distance(u, v, params, grid) -> float:
    return h_norm(tuple(a - b for a, b in zip(u, v)), params, grid)


def energy_functional(u, w4, w3d: float, f: float, params: Params, grid: TwoScaleGrid,
                      ops: DiscreteOperators | None = None) -> float:
    """Discrete ``phi_1`` for given ``u = (u1, u2, u3~)``, gypsum and boundary values."""
    ops = _ops(params, grid, ops)
    u1, u2, u3 = u
    g, h, a = params.gamma, params.henry, params.alpha
    mO, mY = grid.macro_mass, grid.micro_mass
    cpl = ops.coupling
    grad1 = 0.5 * mO @ np.einsum("ij,ij->i", u1, ops.apply_K1(u1))
    grad2 = 0.5 * g * mO @ np.einsum("ij,ij->i", u2, ops.apply_K2(u2))
    grad3 = 0.5 * g * h * u3 @ ops.macro.apply(u3)
    react = mO @ ((eval_kinetic(params.Q, w4) * eval_primitive(params.R, cpl.trace_gamma1(u1))) @ cpl.gamma1_weights)
    bulk = mO @ (eval_primitive(params.psi, u1 - g * u2) @ mY)
    gap = h * (u3[:, None] + w3d) - cpl.trace_gamma2(u2)
    robin = 0.5 * g * a * mO @ (gap**2 @ cpl.gamma2_weights)
    source = g * h * f * (mO @ u3)
    return float(grad1 + grad2 + grad3 + react + bulk + robin + source)


def energy(state: State, params: Params, grid: TwoScaleGrid, t: float | None = None,
           w4_field=None, ops: DiscreteOperators | None = None) -> float:
    """``phi_1^t(w~(t))``; ``w4_field`` overrides the gypsum of ``state``."""
    t = state.t if t is None else t
    u = (state.w1, state.w2, state.w3 - float(params.w3D.value(t)))
    w4 = state.w4 if w4_field is None else w4_field
    return energy_functional(u, w4, float(params.w3D.value(t)), float(params.w3D.source(t)), params, grid, ops)


def limit_energy(u, w4inf, params: Params, grid: TwoScaleGrid, ops=None) -> float:
    """``phi_1^inf``: boundary data and source frozen at their limits."""
    return energy_functional(u, w4inf, params.w3D.limit, 0.0, params, grid, ops)


def step_increments(prev: State, nxt: State, params: Params, grid: TwoScaleGrid) -> np.ndarray:
    """Dissipation and I1..I4 over one step as ``[diss, I1, I2, I3, I4]``.

    ``diss = |w~(n+1) - w~(n)|_H^2 / dt``. I1, I2, I4 are the exact changes of
    ``phi_1`` due to its explicit time dependence (gypsum, boundary data,
    source) evaluated at the old state; I3 is ``-gamma h`` times the change of
    ``int f u3``, reported for bookkeeping only (it is already part of ``phi_1``).
    """
    dt = nxt.t - prev.t
    g, h, a = params.gamma, params.henry, params.alpha
    bd = params.w3D
    c0, c1 = float(bd.value(prev.t)), float(bd.value(nxt.t))
    f0, f1 = float(bd.source(prev.t)), float(bd.source(nxt.t))
    mO, mY = grid.macro_mass, grid.micro_mass
    u3 = prev.w3 - c0
    u3n = nxt.w3 - c1
    d1 = nxt.w1 - prev.w1
    d2 = nxt.w2 - prev.w2
    d3 = u3n - u3
    diss = (mO @ ((d1 * d1) @ mY) + g * (mO @ ((d2 * d2) @ mY)) + g * h * (mO @ (d3 * d3))) / dt
    g1, w1g = grid.gamma1_nodes, grid.gamma1_weights
    g2, w2g = grid.gamma2_nodes, grid.gamma2_weights
    dQ = eval_kinetic(params.Q, nxt.w4) - eval_kinetic(params.Q, prev.w4)
    I1 = mO @ ((dQ * eval_primitive(params.R, prev.w1[:, g1])) @ w1g)
    tr2 = prev.w2[:, g2]
    base = h * u3[:, None] - tr2
    I2 = 0.5 * g * a * mO @ (((base + h * c1) ** 2 - (base + h * c0) ** 2) @ w2g)
    I3 = -g * h * (f1 * (mO @ u3n) - f0 * (mO @ u3))
    I4 = g * h * (f1 - f0) * (mO @ u3)
    return np.array([diss, I1, I2, I3, I4])


def energy_balance(records) -> tuple[np.ndarray, float]:
    """Per-interval defect of the energy inequality and its max positive value.

    ``defect_n = phi_1(t_{n+1}) - phi_1(t_n) + int diss - (int I1 + int I2 + int I4)``;
    I3 is excluded because ``phi_1`` already contains the source term.
    """
    if len(records) < 2:
        return np.zeros(0), 0.0
    E = np.array([r.energy for r in records])
    D = np.array([r.dissipation_integral for r in records])
    I = np.array([r.I_terms for r in records])
    forcing = I[:, 0] + I[:, 1] + I[:, 3]
    defects = np.diff(E) + np.diff(D) - np.diff(forcing)
    return defects, float(max(0.0, defects.max()))


def check_bounds(state: State, bounds: Bounds) -> np.ndarray:
    """``max(-w_i, w_i - M_i)`` over nodes for i = 1..4, floored at zero."""
    M = bounds.as_array()
    out = np.zeros(4)
    for i, a in enumerate((state.w1, state.w2, state.w3, state.w4)):
        if a.size:
            out[i] = max(0.0, float(-a.min()), float(a.max() - M[i]))
    return out


def mass_total(state: State, grid: TwoScaleGrid) -> float:
    """``int int (w1 + w2) + int w3 + int int_G1 w4``."""
    mO = grid.macro_mass
    return float(mO @ ((state.w1 + state.w2) @ grid.micro_mass) + mO @ state.w3
                 + mO @ (state.w4 @ grid.gamma1_weights))


def dirichlet_flux(prev: State, nxt: State, params: Params, grid: TwoScaleGrid,
                   ops: DiscreteOperators | None = None) -> float:
    """Mass injected through Gamma_D over one backward-Euler step.

    It is the residual of the implicit macro equation on the Dirichlet nodes.
    """
    ops = _ops(params, grid, ops)
    dt = nxt.t - prev.t
    D = grid.dirichlet_nodes
    mO = grid.macro_mass[D]
    K3w = ops.macro.apply(nxt.w3)[D]
    exch = params.alpha * (params.henry * nxt.w3[D] * grid.gamma2_weights.sum()
                           - nxt.w2[D][:, grid.gamma2_nodes] @ grid.gamma2_weights)
    return float(mO @ (nxt.w3[D] - prev.w3[D]) + dt * K3w.sum() + dt * (mO @ exch))


def mass_defect(prev: State, nxt: State, params: Params, grid: TwoScaleGrid,
                ops: DiscreteOperators | None = None) -> tuple[float, float]:
    """``(total(n+1) - total(n) - Dirichlet flux, total(n+1))`` for one step."""
    total = mass_total(nxt, grid)
    return total - mass_total(prev, grid) - dirichlet_flux(prev, nxt, params, grid, ops), total


def mass_balance(trajectory, params: Params, grid: TwoScaleGrid, ops=None) -> np.ndarray:
    """Mass defect of every consecutive pair; the trajectory must hold every step."""
    ops = _ops(params, grid, ops)
    return np.array([mass_defect(a, b, params, grid, ops)[0] for a, b in zip(trajectory, trajectory[1:])])


@dataclass(frozen=True)
class W4Convergence:
    monotone: bool
    min_increment: float
    total_variation: float
    l2_time_integral: float
    tail_fraction: float


def w4_convergence(trajectory, grid: TwoScaleGrid | None = None, tail: float = 0.1) -> W4Convergence:
    """Monotonicity of the gypsum and the L1/L2 time integrals of its rate.

    ``total_variation = sum ||w4(n+1) - w4(n)||_L1`` and
    ``l2_time_integral = sum ||w4(n+1) - w4(n)||_L2^2 / dt``; with ``grid``
    the norms use the ``Omega x Gamma_1`` quadrature, otherwise plain sums.
    ``tail_fraction`` is the share of the L1 sum collected in the last
    ``tail`` part of the horizon.
    """
    if len(trajectory) < 2:
        return W4Convergence(True, 0.0, 0.0, 0.0, 0.0)
    if grid is None:
        weights = np.ones_like(trajectory[0].w4)
    else:
        weights = np.outer(grid.macro_mass, grid.gamma1_weights)
    t = np.array([s.t for s in trajectory])
    inc = [b.w4 - a.w4 for a, b in zip(trajectory, trajectory[1:])]
    min_inc = min(float(d.min()) for d in inc) if inc[0].size else 0.0
    l1 = np.array([np.sum(weights * np.abs(d)) for d in inc])
    l2 = np.array([np.sum(weights * d * d) / (tb - ta) for d, ta, tb in zip(inc, t, t[1:])])
    total = float(l1.sum())
    t_tail = t[0] + (1 - tail) * (t[-1] - t[0])
    tail_sum = float(l1[t[:-1] >= t_tail - 1e-12].sum())
    return W4Convergence(min_inc >= 0.0, min_inc, total, float(l2.sum()),
                         tail_sum / total if total > 0 else 0.0)


@dataclass
class InvariantSummary:
    """Pass/fail per invariant for the machine-readable run summary."""

    checks: dict = field(default_factory=dict)

    def add(self, name: str, passed: bool, value=None, limit=None):
        self.checks[name] = {"pass": bool(passed), "value": value, "limit": limit}

    @property
    def ok(self) -> bool:
        return all(c["pass"] for c in self.checks.values())
