"""Spatially discrete weak forms of the two-scale system.

Diffusion is the vertex-centred five-point (three-point in 1D) stiffness
matrix of ``int d grad u . grad v`` with edge coefficients equal to the mean
of the two nodal values and trapezoidal transverse weights; the mass is
lumped. Robin and reaction terms on the micro boundary enter through
boundary quadrature, never through ghost nodes, so that ``lift`` is the exact
adjoint of ``trace``.

Fields on the product grid are arrays of shape ``(n_macro, n_micro)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .grid import StructuredGrid, TwoScaleGrid
from .model import Params, eval_kinetic


class DomainError(ValueError):
    """Input outside the domain of a discrete operator."""


def _edge_list(sgrid: StructuredGrid):
    """Yield ``(i, j, geometric factor)`` for every grid edge.

    The factor is ``(transverse trapezoid weight) / spacing``; multiplied by
    the edge diffusivity it gives the off-diagonal conductance.
    """
    idx = np.arange(sgrid.n_nodes).reshape(sgrid.shape)
    h = sgrid.spacing
    if sgrid.dim == 1:
        yield idx[:-1], idx[1:], np.full(sgrid.cells[0], 1.0 / h[0])
        return
    wx, wy = sgrid.axis_weights
    yield idx[:-1, :].ravel(), idx[1:, :].ravel(), np.broadcast_to(wy[None, :] / h[0], idx[:-1, :].shape).ravel()
    yield idx[:, :-1].ravel(), idx[:, 1:].ravel(), np.broadcast_to(wx[:, None] / h[1], idx[:, :-1].shape).ravel()


def nodal_coefficient(d, n: int) -> np.ndarray:
    arr = np.asarray(d, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if arr.shape != (n,):
        raise DomainError(f"coefficient has shape {arr.shape}, expected scalar or ({n},)")
    return arr


def stiffness_matrix(sgrid: StructuredGrid, d) -> sp.csr_matrix:
    dn = nodal_coefficient(d, sgrid.n_nodes)
    if not np.all(np.isfinite(dn)) or np.min(dn) <= 0:
        raise DomainError(f"diffusion coefficient must be positive, min = {np.min(dn):g}")
    rows, cols, vals = [], [], []
    for i, j, g in _edge_list(sgrid):
        c = 0.5 * (dn[i] + dn[j]) * g
        rows += [i, j, i, j]
        cols += [j, i, i, j]
        vals += [-c, -c, c, c]
    n = sgrid.n_nodes
    K = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return K.tocsr()


@dataclass(frozen=True, eq=False)
class DiffusionOperator:
    """Stiffness matrix of ``int d grad u . grad v`` and the lumped mass vector."""

    stiffness: sp.csr_matrix
    mass: np.ndarray

    def apply(self, u: np.ndarray) -> np.ndarray:
        """``K u`` for one field ``(n,)`` or a stack ``(m, n)``."""
        return (self.stiffness @ u.T).T

    def quadratic(self, u: np.ndarray) -> np.ndarray:
        """``u^T K u`` per row."""
        return np.einsum("...i,...i->...", u, self.apply(u))


def assemble_micro(d, grid: TwoScaleGrid | StructuredGrid) -> DiffusionOperator:
    """Micro diffusion operator for one cell with nodal coefficient ``d``."""
    micro = grid.micro if isinstance(grid, TwoScaleGrid) else grid
    return DiffusionOperator(stiffness_matrix(micro, d), micro.weights)


@dataclass(frozen=True, eq=False)
class MacroOperator(DiffusionOperator):
    """Macro diffusion with the Dirichlet nodes split off.

    ``free_stiffness`` acts on the test space of fields vanishing on Gamma_D.
    """

    free: np.ndarray = None
    dirichlet: np.ndarray = None
    free_stiffness: sp.csr_matrix = None


def assemble_macro(d3, grid: TwoScaleGrid, dirichlet_nodes=None) -> MacroOperator:
    dirichlet = grid.dirichlet_nodes if dirichlet_nodes is None else np.asarray(dirichlet_nodes, dtype=int)
    if len(dirichlet) == 0:
        raise DomainError("macro operator needs a nonempty Dirichlet boundary")
    K = stiffness_matrix(grid.macro, d3)
    free = np.setdiff1d(np.arange(grid.n_macro), dirichlet)
    Kff = K[free][:, free].tocsr()
    return MacroOperator(K, grid.macro.weights, free=free, dirichlet=np.sort(dirichlet), free_stiffness=Kff)


@dataclass(frozen=True, eq=False)
class CouplingOperators:
    """Traces on Gamma_1/Gamma_2 and their quadrature-weighted adjoints.

    ``lift`` returns nodal values ``B g / m`` (boundary load divided by the
    lumped micro mass) so that ``<trace u, g>_Gamma = <u, lift g>_Y`` with the
    mass-weighted micro pairing.
    """

    micro_mass: np.ndarray
    gamma1_nodes: np.ndarray
    gamma1_weights: np.ndarray
    gamma2_nodes: np.ndarray
    gamma2_weights: np.ndarray

    def trace_gamma1(self, u):
        return u[..., self.gamma1_nodes]

    def trace_gamma2(self, u):
        return u[..., self.gamma2_nodes]

    def _lift(self, g, nodes, weights):
        g = np.asarray(g, dtype=float)
        out = np.zeros(g.shape[:-1] + (len(self.micro_mass),))
        out[..., nodes] = g * (weights / self.micro_mass[nodes])
        return out

    def lift_gamma1(self, g):
        return self._lift(g, self.gamma1_nodes, self.gamma1_weights)

    def lift_gamma2(self, g):
        return self._lift(g, self.gamma2_nodes, self.gamma2_weights)

    def gamma2_integral(self, u):
        """``int_{Gamma_2} u dgamma_y`` for a micro field (per macro node for stacks)."""
        return u[..., self.gamma2_nodes] @ self.gamma2_weights

    @property
    def gamma2_load(self) -> np.ndarray:
        """Full-length micro vector carrying the Gamma_2 quadrature weights."""
        b = np.zeros(len(self.micro_mass))
        b[self.gamma2_nodes] = self.gamma2_weights
        return b

    @property
    def gamma1_load(self) -> np.ndarray:
        b = np.zeros(len(self.micro_mass))
        b[self.gamma1_nodes] = self.gamma1_weights
        return b


def _micro_coefficients(d, grid: TwoScaleGrid) -> list[np.ndarray] | np.ndarray:
    """Normalize ``d1``/``d2`` to one nodal vector or one vector per macro node."""
    arr = np.asarray(d, dtype=float)
    if arr.ndim == 0:
        return np.full(grid.n_micro, float(arr))
    if arr.shape == (grid.n_micro,):
        return arr
    if arr.shape == (grid.n_macro, grid.n_micro):
        if np.all(arr == arr[0]):
            return arr[0].copy()
        return [row for row in arr]
    raise DomainError(f"micro coefficient shape {arr.shape} does not match the grid")


@dataclass(frozen=True, eq=False)
class DiscreteOperators:
    """Everything assembled once per (params, grid) pair.

    ``micro1``/``micro2`` are a single :class:`DiffusionOperator` when the
    coefficient is the same in every macro node, else one operator per node.
    """

    grid: TwoScaleGrid
    micro1: DiffusionOperator | list
    micro2: DiffusionOperator | list
    macro: MacroOperator
    coupling: CouplingOperators

    @property
    def uniform_micro(self) -> bool:
        return isinstance(self.micro1, DiffusionOperator) and isinstance(self.micro2, DiffusionOperator)

    def _apply(self, op, u):
        if isinstance(op, DiffusionOperator):
            return op.apply(u)
        return np.stack([o.apply(row) for o, row in zip(op, u)])

    def apply_K1(self, w1):
        return self._apply(self.micro1, w1)

    def apply_K2(self, w2):
        return self._apply(self.micro2, w2)

    def micro_operator(self, which: int, node: int) -> DiffusionOperator:
        op = self.micro1 if which == 1 else self.micro2
        return op if isinstance(op, DiffusionOperator) else op[node]


def build_operators(params: Params, grid: TwoScaleGrid) -> DiscreteOperators:
    def micro(d):
        coef = _micro_coefficients(d, grid)
        if isinstance(coef, list):
            return [assemble_micro(c, grid) for c in coef]
        return assemble_micro(coef, grid)

    coupling = CouplingOperators(grid.micro_mass, grid.gamma1_nodes, grid.gamma1_weights,
                                 grid.gamma2_nodes, grid.gamma2_weights)
    return DiscreteOperators(grid, micro(params.d1), micro(params.d2),
                             assemble_macro(params.d3, grid), coupling)


def coupling_residuals(state, params: Params, grid: TwoScaleGrid, ops: DiscreteOperators | None = None):
    """Source terms of the semi-discrete system at ``state``.

    Returns nodal rates ``(r1, r2, r3, r4)``::

        r1 = -psi(w1 - gamma w2) - lift_G1(R(w1) Q(w4))
        r2 = +psi(w1 - gamma w2) + alpha lift_G2(h w3 - w2)
        r3 = -alpha int_G2 (h w3 - w2)
        r4 = R(w1|G1) Q(w4)
    """
    nM, nY, nG = grid.n_macro, grid.n_micro, grid.n_gamma1
    if state.w1.shape != (nM, nY) or state.w2.shape != (nM, nY) or state.w3.shape != (nM,) \
            or state.w4.shape != (nM, nG):
        raise DomainError("state shape does not match the grid")
    cpl = ops.coupling if ops is not None else CouplingOperators(
        grid.micro_mass, grid.gamma1_nodes, grid.gamma1_weights, grid.gamma2_nodes, grid.gamma2_weights)
    w1, w2, w3, w4 = state.w1, state.w2, state.w3, state.w4
    g, h, a = params.gamma, params.henry, params.alpha
    s = eval_kinetic(params.psi, w1 - g * w2)
    eta = eval_kinetic(params.R, cpl.trace_gamma1(w1)) * eval_kinetic(params.Q, w4)
    gap = h * w3[:, None] - cpl.trace_gamma2(w2)
    r1 = -s - cpl.lift_gamma1(eta)
    r2 = s + a * cpl.lift_gamma2(gap)
    r3 = -a * (gap @ cpl.gamma2_weights)
    return r1, r2, r3, eta


def duality_check(grid: TwoScaleGrid, n_trials: int = 100, seed: int = 0) -> float:
    """Max relative defect of ``<trace u, g>_Gamma - <u, lift g>_Y`` over random pairs."""
    rng = np.random.default_rng(seed)
    cpl = CouplingOperators(grid.micro_mass, grid.gamma1_nodes, grid.gamma1_weights,
                            grid.gamma2_nodes, grid.gamma2_weights)
    worst = 0.0
    m = grid.micro_mass
    for _ in range(n_trials):
        u = rng.standard_normal(grid.n_micro)
        for trace, lift, w in ((cpl.trace_gamma1, cpl.lift_gamma1, cpl.gamma1_weights),
                               (cpl.trace_gamma2, cpl.lift_gamma2, cpl.gamma2_weights)):
            gvals = rng.standard_normal(len(w))
            lhs = np.sum(w * trace(u) * gvals)
            rhs = np.sum(m * u * lift(gvals))
            scale = np.sum(np.abs(w * trace(u) * gvals)) or 1.0
            worst = max(worst, abs(lhs - rhs) / scale)
    return worst
