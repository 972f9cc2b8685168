"""Brute-force references used by the test suite.

``explicit_run`` integrates the semi-discrete system with forward Euler and
no splitting; ``energy_independent`` re-evaluates the Lyapunov functional
with plain loops over nodes and edges. Both share the grid and the kinetic
laws with the production code, but neither the time integrator nor the
energy accumulation.
"""
from __future__ import annotations

import math

import numpy as np

from .discrete_ops import DomainError, build_operators, coupling_residuals, nodal_coefficient
from .grid import StructuredGrid, TwoScaleGrid
from .model import Params, eval_kinetic, eval_primitive
from .state import State

STABILITY_FACTOR = 0.25
"""``c`` in ``dt <= c * min(spacing)^2 / max(d)``; 1/4 is the 2D five-point limit."""


def stable_dt(params: Params, grid: TwoScaleGrid) -> float:
    h2 = min(min(grid.macro.spacing), min(grid.micro.spacing)) ** 2
    dmax = max(float(np.max(params.d1)), float(np.max(params.d2)), float(np.max(params.d3)))
    return STABILITY_FACTOR * h2 / dmax


def explicit_run(initial: State, t_end: float, dt: float, params: Params, grid: TwoScaleGrid) -> State:
    """Forward Euler on all four fields at once.

    Dirichlet nodes of ``w3`` take the boundary value at every new time.
    Refuses ``dt`` above :func:`stable_dt`.
    """
    limit = stable_dt(params, grid)
    if not 0 < dt <= limit:
        raise DomainError(f"explicit step {dt:g} outside the stability bound (0, {limit:g}]")
    ops = build_operators(params, grid)
    mY, mO = grid.micro_mass, grid.macro_mass
    D = grid.dirichlet_nodes
    n = int(math.ceil((t_end - initial.t) / dt - 1e-9)) if t_end > initial.t else 0
    w1, w2 = np.array(initial.w1), np.array(initial.w2)
    w3, w4 = np.array(initial.w3), np.array(initial.w4)
    t = initial.t
    for k in range(n):
        h = min(dt, t_end - t)
        s = State(w1, w2, w3, w4, t)
        r1, r2, r3, r4 = coupling_residuals(s, params, grid, ops)
        w1 = w1 + h * (r1 - ops.apply_K1(w1) / mY)
        w2 = w2 + h * (r2 - ops.apply_K2(w2) / mY)
        w3 = w3 + h * (r3 - ops.macro.apply(w3) / mO)
        w4 = w4 + h * r4
        t = initial.t + (k + 1) * dt if k < n - 1 else t_end
        w3[D] = float(params.w3D.value(t))
    return State(w1, w2, w3, w4, t)


def _gradient_energy(sgrid: StructuredGrid, d, u) -> float:
    """``1/2 sum_edges c_e (u_i - u_j)^2`` accumulated edge by edge."""
    dn = nodal_coefficient(d, sgrid.n_nodes)
    total = 0.0
    if sgrid.dim == 1:
        n, hx = sgrid.cells[0] + 1, sgrid.spacing[0]
        for i in range(n - 1):
            c = 0.5 * (dn[i] + dn[i + 1]) / hx
            total += 0.5 * c * (u[i] - u[i + 1]) ** 2
        return total
    nx, ny = sgrid.cells[0] + 1, sgrid.cells[1] + 1
    hx, hy = sgrid.spacing
    for i in range(nx):
        for j in range(ny):
            a = i * ny + j
            wy = hy * (0.5 if j in (0, ny - 1) else 1.0)
            wx = hx * (0.5 if i in (0, nx - 1) else 1.0)
            if i + 1 < nx:
                b = (i + 1) * ny + j
                total += 0.5 * (0.5 * (dn[a] + dn[b]) * wy / hx) * (u[a] - u[b]) ** 2
            if j + 1 < ny:
                b = i * ny + j + 1
                total += 0.5 * (0.5 * (dn[a] + dn[b]) * wx / hy) * (u[a] - u[b]) ** 2
    return total


def _micro_d(d, x, grid):
    arr = np.asarray(d, dtype=float)
    return arr[x] if arr.ndim == 2 else arr


def energy_independent(state: State, t: float, params: Params, grid: TwoScaleGrid) -> float:
    """Lyapunov functional at time ``t`` from node and edge loops."""
    g, h, a = params.gamma, params.henry, params.alpha
    c = float(params.w3D.value(t))
    f = float(params.w3D.source(t))
    micro, macro = grid.micro, grid.macro
    mY, mO = micro.weights, macro.weights
    total = 0.0
    for x in range(grid.n_macro):
        u1, u2 = state.w1[x], state.w2[x]
        u3 = state.w3[x] - c
        local = _gradient_energy(micro, _micro_d(params.d1, x, grid), u1)
        local += g * _gradient_energy(micro, _micro_d(params.d2, x, grid), u2)
        for y in range(grid.n_micro):
            local += mY[y] * float(eval_primitive(params.psi, u1[y] - g * u2[y]))
        for k, (y, w) in enumerate(zip(grid.gamma1_nodes, grid.gamma1_weights)):
            local += w * float(eval_kinetic(params.Q, state.w4[x, k])) * float(eval_primitive(params.R, u1[y]))
        for y, w in zip(grid.gamma2_nodes, grid.gamma2_weights):
            local += 0.5 * g * a * w * (h * (u3 + c) - u2[y]) ** 2
        local += g * h * f * u3
        total += mO[x] * local
    u3 = state.w3 - c
    total += g * h * _gradient_energy(macro, params.d3, u3)
    return float(total)
