"""Stationary problem for frozen gypsum ``w4inf`` and boundary value ``w3Dinf``.

Unknowns are ``w1``, ``w2`` on every micro node and the free macro values of
``w3~ = w3 - w3Dinf``, the same lifted variable the time stepper uses. The
discrete residual is the time stepper's right-hand side without the time
derivative::

    F1 = K1 w1 + M psi(w1 - gamma w2) + B1 R(w1) Q(w4inf)
    F2 = K2 w2 - M psi(w1 - gamma w2) - alpha B2 (h w3 - w2)
    F3 = (K3 w3)_free + alpha m (h |G2| w3 - int_G2 w2)_free

It is solved by Newton's method with Armijo backtracking.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .diagnostics import h_distance
from .discrete_ops import DiscreteOperators, build_operators
from .grid import TwoScaleGrid
from .model import Params, bounds_from_norms, eval_derivative, eval_kinetic
from .state import State


@dataclass
class StationarySolution:
    w1: np.ndarray
    w2: np.ndarray
    w3: np.ndarray
    w4inf: np.ndarray
    w3Dinf: float
    residuals: tuple[float, float, float]
    converged: bool
    iterations: int
    trace: list = field(default_factory=list)

    @property
    def w3_tilde(self) -> np.ndarray:
        return self.w3 - self.w3Dinf

    @property
    def residual(self) -> float:
        return float(np.sqrt(sum(r * r for r in self.residuals)))

    def tilde(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.w1, self.w2, self.w3_tilde

    def as_state(self, t: float = 0.0) -> State:
        return State(self.w1, self.w2, self.w3, self.w4inf, t)


class _System:
    """Residual and Jacobian of the stationary equations on one grid."""

    def __init__(self, params: Params, grid: TwoScaleGrid, w4inf, w3Dinf: float,
                 ops: DiscreteOperators | None = None):
        self.p, self.grid = params, grid
        self.ops = ops if ops is not None else build_operators(params, grid)
        nM, nY = grid.n_macro, grid.n_micro
        self.nM, self.nY = nM, nY
        self.free = self.ops.macro.free
        self.c = float(w3Dinf)
        self.w4 = np.broadcast_to(np.asarray(w4inf, dtype=float), (nM, grid.n_gamma1)).copy()
        self.q = eval_kinetic(params.Q, self.w4)
        self.mY, self.mO = grid.micro_mass, grid.macro_mass
        self.b2 = self.ops.coupling.gamma2_load
        self.area2 = float(grid.gamma2_weights.sum())
        self.n = 2 * nM * nY + len(self.free)

        def block(which):
            ops_ = [self.ops.micro_operator(which, i).stiffness for i in range(nM)] \
                if not self.ops.uniform_micro else None
            if ops_ is None:
                return sp.kron(sp.identity(nM), self.ops.micro_operator(which, 0).stiffness, format="csr")
            return sp.block_diag(ops_, format="csr")

        self.K1, self.K2 = block(1), block(2)
        # constant coupling blocks
        rows = (np.arange(nM)[:, None] * nY + grid.gamma2_nodes[None, :])
        fpos = np.full(nM, -1)
        fpos[self.free] = np.arange(len(self.free))
        keep = fpos >= 0
        r23 = rows[keep].ravel()
        c23 = np.repeat(fpos[keep], len(grid.gamma2_nodes))
        w2g = np.tile(grid.gamma2_weights, keep.sum())
        a, h = params.alpha, params.henry
        self.J23 = sp.csr_matrix((-a * h * w2g, (r23, c23)), shape=(nM * nY, len(self.free)))
        mrep = np.repeat(self.mO[keep], len(grid.gamma2_nodes))
        self.J32 = sp.csr_matrix((-a * mrep * w2g, (c23, r23)), shape=(len(self.free), nM * nY))
        self.J33 = (self.ops.macro.free_stiffness
                    + sp.diags(a * h * self.area2 * self.mO[self.free])).tocsr()
        self.robin = sp.diags(np.tile(a * self.b2, nM))

    def split(self, U):
        k = self.nM * self.nY
        w1 = U[:k].reshape(self.nM, self.nY)
        w2 = U[k:2 * k].reshape(self.nM, self.nY)
        w3 = np.full(self.nM, self.c)
        w3[self.free] += U[2 * k:]
        return w1, w2, w3

    def pack(self, w1, w2, w3):
        return np.concatenate([np.ravel(w1), np.ravel(w2), (np.asarray(w3) - self.c)[self.free]])

    def residual_parts(self, w1, w2, w3):
        p, g = self.p, self.grid
        s = eval_kinetic(p.psi, w1 - p.gamma * w2) * self.mY
        eta = np.zeros_like(w1)
        eta[:, g.gamma1_nodes] = eval_kinetic(p.R, w1[:, g.gamma1_nodes]) * self.q * g.gamma1_weights
        gap = p.henry * w3[:, None] - w2
        F1 = self.ops.apply_K1(w1) + s + eta
        F2 = self.ops.apply_K2(w2) - s - p.alpha * self.b2 * gap
        exch = p.alpha * self.mO * (p.henry * self.area2 * w3 - w2[:, g.gamma2_nodes] @ g.gamma2_weights)
        F3 = (self.ops.macro.apply(w3) + exch)[self.free]
        return F1, F2, F3

    def residual(self, U):
        F1, F2, F3 = self.residual_parts(*self.split(U))
        return np.concatenate([F1.ravel(), F2.ravel(), F3])

    def norms(self, F1, F2, F3) -> tuple[float, float, float]:
        """Dual grid norms of the three weak residuals."""
        wmic = self.mO[:, None] / self.mY[None, :]
        return (float(np.sqrt(np.sum(wmic * F1**2))), float(np.sqrt(np.sum(wmic * F2**2))),
                float(np.sqrt(np.sum(F3**2 / self.mO[self.free]))))

    def norm(self, F) -> float:
        k = self.nM * self.nY
        parts = (F[:k].reshape(self.nM, self.nY), F[k:2 * k].reshape(self.nM, self.nY), F[2 * k:])
        return float(np.sqrt(sum(r * r for r in self.norms(*parts))))

    def jacobian(self, U):
        p, g = self.p, self.grid
        w1, w2, _ = self.split(U)
        dpsi = (eval_derivative(p.psi, w1 - p.gamma * w2) * self.mY).ravel()
        dR = np.zeros_like(w1)
        dR[:, g.gamma1_nodes] = eval_derivative(p.R, w1[:, g.gamma1_nodes]) * self.q * g.gamma1_weights
        D = sp.diags(dpsi)
        J11 = self.K1 + D + sp.diags(dR.ravel())
        J12 = -p.gamma * D
        J21 = -D
        J22 = self.K2 + p.gamma * D + self.robin
        return sp.bmat([[J11, J12, None], [J21, J22, self.J23], [None, self.J32, self.J33]], format="csc")


def solve_stationary(w4inf, w3Dinf: float | None, params: Params, grid: TwoScaleGrid, *,
                     initial_guess=None, tol: float = 1e-10, atol: float = 1e-14, max_iter: int = 50,
                     ops: DiscreteOperators | None = None) -> StationarySolution:
    """Damped Newton for the stationary problem.

    ``initial_guess`` is a ``(w1, w2, w3)`` triple; the default is the Henry
    equilibrium ``(gamma h c, h c, c)`` with ``c = w3Dinf``. Iteration stops
    when the combined dual residual drops below ``tol * ref + atol`` with
    ``ref`` the residual of the zero state. A stagnating iteration returns
    its best iterate with ``converged = False``.
    """
    c = params.w3D.limit if w3Dinf is None else float(w3Dinf)
    sysm = _System(params, grid, w4inf, c, ops)
    if initial_guess is None:
        nM, nY = grid.n_macro, grid.n_micro
        initial_guess = (np.full((nM, nY), params.gamma * params.henry * c),
                         np.full((nM, nY), params.henry * c), np.full(nM, c))
    U = sysm.pack(*initial_guess)
    ref = sysm.norm(sysm.residual(np.zeros(sysm.n)))
    target = tol * ref + atol
    F = sysm.residual(U)
    r = sysm.norm(F)
    trace = [(0, r)]
    converged = r <= target
    it = 0
    while not converged and it < max_iter:
        it += 1
        try:
            dU = spla.spsolve(sysm.jacobian(U), -F)
        except RuntimeError:
            break
        if not np.all(np.isfinite(dU)):
            break
        lam, accepted = 1.0, False
        for _ in range(30):
            Ut = U + lam * dU
            Ft = sysm.residual(Ut)
            rt = sysm.norm(Ft)
            if rt**2 <= (1 - 1e-4 * lam) * r**2 or rt <= target:
                accepted = True
                break
            lam *= 0.5
        if not accepted:
            break
        U, F, r = Ut, Ft, rt
        trace.append((it, r))
        converged = r <= target
    w1, w2, w3 = sysm.split(U)
    return StationarySolution(w1.copy(), w2.copy(), w3, sysm.w4, c, sysm.norms(*sysm.residual_parts(w1, w2, w3)),
                              bool(converged), it, trace)


def residual_check(candidate, params: Params, grid: TwoScaleGrid, w4inf=None, w3Dinf=None,
                   ops: DiscreteOperators | None = None) -> tuple[float, float, float]:
    """Dual-norm weak residuals (micro-1, micro-2, macro) of a candidate.

    ``candidate`` is a :class:`StationarySolution` or a ``(w1, w2, w3)``
    triple; in the latter case ``w4inf``/``w3Dinf`` default to ``beta_max``
    and the boundary limit.
    """
    if isinstance(candidate, StationarySolution):
        w1, w2, w3 = candidate.w1, candidate.w2, candidate.w3
        w4inf = candidate.w4inf if w4inf is None else w4inf
        w3Dinf = candidate.w3Dinf if w3Dinf is None else w3Dinf
    else:
        w1, w2, w3 = (np.asarray(a, dtype=float) for a in candidate)
    w4inf = params.beta_max if w4inf is None else w4inf
    w3Dinf = params.w3D.limit if w3Dinf is None else w3Dinf
    sysm = _System(params, grid, w4inf, w3Dinf, ops)
    return sysm.norms(*sysm.residual_parts(w1, w2, w3))


@dataclass
class ProbeResult:
    max_distance: float
    distances: list
    solutions: list
    non_converged: list

    def __float__(self) -> float:
        return self.max_distance


def uniqueness_probe(params: Params, grid: TwoScaleGrid, w4inf, w3Dinf: float | None = None,
                     n_starts: int = 5, seed: int = 0, **solver_kw) -> ProbeResult:
    """Solve from ``n_starts`` random guesses in ``[0, M_i]`` and compare.

    Distances are H-norms of pairwise differences of converged solutions.
    Starts that do not converge are listed in ``non_converged`` and left out
    of the comparison.
    """
    if n_starts < 1:
        raise ValueError("n_starts must be >= 1")
    c = params.w3D.limit if w3Dinf is None else float(w3Dinf)
    w4_sup = float(np.max(np.abs(w4inf))) if np.size(w4inf) else 0.0
    b = bounds_from_norms(params, 0.0, 0.0, abs(c), w4_sup, w3D_sup=abs(c))
    rng = np.random.default_rng(seed)
    nM, nY = grid.n_macro, grid.n_micro
    ops = solver_kw.pop("ops", None) or build_operators(params, grid)
    sols, bad = [], []
    for k in range(n_starts):
        guess = (rng.uniform(0, b.M1, (nM, nY)), rng.uniform(0, b.M2, (nM, nY)), rng.uniform(0, b.M3, nM))
        sol = solve_stationary(w4inf, c, params, grid, initial_guess=guess, ops=ops, **solver_kw)
        (sols if sol.converged else bad).append(sol if sol.converged else k)
    dists = [h_distance(a.tilde(), b_.tilde(), params, grid)
             for i, a in enumerate(sols) for b_ in sols[i + 1:]]
    return ProbeResult(max(dists, default=0.0), dists, sols, bad)
