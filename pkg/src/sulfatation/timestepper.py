"""Implicit-diffusion, semi-implicit-reaction time stepping.

One step of size ``dt`` from ``(w1, w2, w3, w4)`` at ``t``:

1. Gypsum. ``w4' = w4 + dt R(w1|G1) Q(w4')`` is solved pointwise.
2. Gas and micro concentrations. Diffusion and the Robin exchange are
   implicit, linear ``psi`` is implicit, nonlinear ``psi`` and the Gamma_1 sink
   are lagged. The sink removes exactly ``w4' - w4`` from ``w1``.

Two schemes share these ingredients:

``coupled`` (default)
    The micro block is linear in ``w3'``, so its solution is ``a + w3' c``
    per macro node. Substituting into the macro equation gives a Schur
    complement system for ``w3'`` alone. The result solves the fully implicit
    scale coupling, so the exchange terms cancel to round-off in the mass
    balance.
``split``
    Gauss-Seidel across scales. The macro equation uses the lagged Gamma_2
    integral of ``w2``, then the micro block is solved with the new ``w3``.
    ``sweeps > 1`` repeats the pair with the updated integral.

All linear systems are factorized once per ``dt`` and reused. Micro blocks
are small, so up to :data:`DENSE_LIMIT` unknowns their inverse is formed once
and every step applies it to all macro nodes in a single matrix product.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import diagnostics as dg
from .discrete_ops import DiscreteOperators, DomainError, build_operators
from .grid import TwoScaleGrid
from .model import Bounds, KineticSpec, Params, compute_bounds, eval_derivative, eval_kinetic
from .state import State

__all__ = ["State", "StepFailure", "StepReport", "TimeStepper", "RunResult", "ode_w4_update",
           "w4_increment", "step", "run"]

SCHEMES = ("coupled", "split")
_CHUNK = 64
DENSE_LIMIT = 512
"""Micro blocks up to this size are inverted once and applied as a dense product."""


class StepFailure(RuntimeError):
    """A step could not be completed; ``report`` holds what is known."""

    def __init__(self, message: str, report: "StepReport | None" = None):
        super().__init__(message)
        self.report = report


@dataclass
class StepReport:
    dt: float
    linear_solves: int = 0
    w4_iterations: int = 0
    positivity_defect: float = 0.0
    macro_residual: float = 0.0
    micro_residual: float = float("nan")
    dirichlet_flux: float = 0.0


# -- gypsum ------------------------------------------------------------------

def w4_increment(rate: np.ndarray, w4: np.ndarray, dt: float, Q: KineticSpec,
                 max_iter: int = 100, tol: float = 1e-15) -> tuple[np.ndarray, int]:
    """Solve ``d = dt * rate * Q(w4 + d)`` for ``d >= 0`` nodewise.

    ``rate = R(w1|G1) >= 0``. Since Q is nonincreasing the right side is
    nonincreasing in ``d``, so the root is unique and lies in
    ``[0, dt rate Q(w4)]``. Clipped-linear Q has a closed form; other laws use
    safeguarded Newton on that bracket.
    """
    rate = np.maximum(np.asarray(rate, dtype=float), 0.0)
    w4 = np.asarray(w4, dtype=float)
    a = dt * rate
    if Q.kind == "clipped_linear" and Q.lower is None and Q.upper is None:
        gap = np.maximum(Q.threshold - w4, 0.0)
        ak = a * Q.k
        return ak * gap / (1.0 + ak), 0
    lo = np.zeros_like(w4)
    hi = a * eval_kinetic(Q, w4)
    d = hi.copy()
    active = hi > 0
    for it in range(1, max_iter + 1):
        g = d - a * eval_kinetic(Q, w4 + d)
        lo = np.where(g < 0, d, lo)
        hi = np.where(g > 0, d, hi)
        dg_ = 1.0 - a * eval_derivative(Q, w4 + d)
        newton = d - g / np.where(dg_ > 0, dg_, 1.0)
        inside = (newton > lo) & (newton < hi)
        d_new = np.where(inside, newton, 0.5 * (lo + hi))
        scale = np.maximum(np.abs(d_new), 1e-300)
        done = (np.abs(d_new - d) <= tol * scale) | (hi - lo <= tol * scale) | ~active
        d = d_new
        if np.all(done):
            return d, it
    raise StepFailure(f"gypsum update did not converge in {max_iter} iterations")


def ode_w4_update(w1_trace, w4, dt: float, params: Params, max_iter: int = 100) -> np.ndarray:
    """``w = w4 + dt R(w1_trace) Q(w)`` solved pointwise; the result is ``>= w4``."""
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")
    w4 = np.asarray(w4, dtype=float)
    d, _ = w4_increment(eval_kinetic(params.R, w1_trace), w4, dt, params.Q, max_iter)
    return w4 + d


# -- stepping ------------------------------------------------------------------

class _DenseInverse:
    """Explicit inverse of a small micro block; ``solve`` mirrors ``splu``."""

    def __init__(self, inv: np.ndarray):
        self.inv_t = np.ascontiguousarray(inv.T)

    def solve(self, b: np.ndarray) -> np.ndarray:
        return b @ self.inv_t


@dataclass
class _Factors:
    dt: float
    micro: list            # one solver (uniform) or one per macro node
    response: np.ndarray   # (n_macro, 2 n_micro) micro response to unit w3
    schur: np.ndarray      # Gamma_2 integral of the w2 part of the response
    macro: object          # splu of the free-node macro matrix
    macro_matrix: sp.csc_matrix


class TimeStepper:
    """Stepper bound to one parameter set and grid.

    Parameters
    ----------
    scheme
        ``"coupled"`` or ``"split"``.
    sweeps
        Macro/micro passes per step in the split scheme.
    bounds
        Bounds used by the positivity monitor; default from the first state.
    positivity_tol
        A step fails if a component drops below ``-positivity_tol * M_i``.
    threads
        Worker count for the micro solves. Results do not depend on it.
    """

    def __init__(self, params: Params, grid: TwoScaleGrid, ops: DiscreteOperators | None = None, *,
                 scheme: str = "coupled", sweeps: int = 1, bounds: Bounds | None = None,
                 positivity_tol: float = 1e-8, threads: int = 1):
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
        if sweeps < 1:
            raise ValueError("sweeps must be >= 1")
        self.params = params
        self.grid = grid
        self.ops = ops if ops is not None else build_operators(params, grid)
        self.scheme = scheme
        self.sweeps = int(sweeps)
        self.bounds = bounds
        self.positivity_tol = positivity_tol
        self.threads = max(1, int(threads))
        self.kpsi = params.psi.linear_slope
        self._cache: dict[float, _Factors] = {}
        nY = grid.n_micro
        self._b2 = self.ops.coupling.gamma2_load
        self._g2_full = nY + grid.gamma2_nodes
        self._g2_area = float(grid.gamma2_weights.sum())

    # -- matrices --
    def micro_matrix(self, dt: float, node: int = 0) -> sp.csc_matrix:
        p = self.params
        M = sp.diags(self.grid.micro_mass)
        K1 = self.ops.micro_operator(1, node).stiffness
        K2 = self.ops.micro_operator(2, node).stiffness
        k = self.kpsi or 0.0
        A11 = M / dt + K1 + k * M
        A22 = M / dt + K2 + (k * p.gamma) * M + p.alpha * sp.diags(self._b2)
        return sp.bmat([[A11, -(k * p.gamma) * M], [-k * M, A22]], format="csc")

    def macro_matrix(self, dt: float, schur: np.ndarray | None = None) -> sp.csc_matrix:
        p = self.params
        free = self.ops.macro.free
        m = self.grid.macro_mass[free]
        diag = m / dt + p.alpha * p.henry * m * self._g2_area
        if schur is not None:
            diag = diag - p.alpha * m * schur[free]
        return (self.ops.macro.free_stiffness + sp.diags(diag)).tocsc()

    def factors(self, dt: float) -> _Factors:
        fac = self._cache.get(dt)
        if fac is not None:
            return fac
        p = self.params
        nM, nY = self.grid.n_macro, self.grid.n_micro
        nodes = [0] if self.ops.uniform_micro else range(nM)
        if 2 * nY <= DENSE_LIMIT:
            micro = [_DenseInverse(np.linalg.inv(self.micro_matrix(dt, i).toarray())) for i in nodes]
        else:
            micro = [spla.splu(self.micro_matrix(dt, i)) for i in nodes]
        unit = np.zeros((nM, 2 * nY))
        unit[:, nY:] = p.alpha * p.henry * self._b2
        response = self._solve_micro(micro, unit)
        schur = response[:, self._g2_full] @ self.grid.gamma2_weights
        A = self.macro_matrix(dt, schur if self.scheme == "coupled" else None)
        fac = _Factors(dt, micro, response, schur, spla.splu(A) if A.shape[0] else None, A)
        if len(self._cache) > 8:
            self._cache.clear()
        self._cache[dt] = fac
        return fac

    def _solve_micro(self, micro, rhs: np.ndarray) -> np.ndarray:
        """Solve the micro block for every macro node; ``rhs`` is ``(n_macro, 2 n_micro)``."""
        nM = rhs.shape[0]
        if len(micro) > 1:
            return np.stack([micro[i].solve(rhs[i]) for i in range(nM)])
        lu = micro[0]
        if isinstance(lu, _DenseInverse):
            return rhs @ lu.inv_t
        if self.threads == 1 or nM <= _CHUNK:
            return lu.solve(np.ascontiguousarray(rhs.T)).T
        chunks = [slice(s, min(s + _CHUNK, nM)) for s in range(0, nM, _CHUNK)]
        out = np.empty_like(rhs)

        def work(sl):
            out[sl] = lu.solve(np.ascontiguousarray(rhs[sl].T)).T

        with ThreadPoolExecutor(self.threads) as pool:
            list(pool.map(work, chunks))
        return out

    # -- limits --
    def dt_max(self, bounds: Bounds | None = None) -> float:
        """Step size below which the lagged terms cannot create negative values.

        At a Gamma_1 node the lagged sink removes at most
        ``dt * L_R * Q_max * (w_G1 / m_Y) * w1``; a lagged ``psi`` moves at most
        ``dt * L_psi * max(1, gamma)`` times the donor value.
        """
        p = self.params
        b = bounds or self.bounds or Bounds(1.0, 1.0, 1.0, max(p.beta_max, 1.0))
        r = np.linspace(0.0, max(b.M1, 1e-12), 2001)
        L_R = float(np.max(np.abs(eval_derivative(p.R, r))))
        q_max = float(eval_kinetic(p.Q, 0.0))
        rho = float(np.max(self.grid.gamma1_weights / self.grid.micro_mass[self.grid.gamma1_nodes]))
        rate = L_R * q_max * rho
        if self.kpsi is None:
            m = max(b.M1, p.gamma * b.M2, 1e-12)
            s = np.linspace(-m, m, 4001)
            rate += float(np.max(np.abs(eval_derivative(p.psi, s)))) * max(1.0, p.gamma)
        return math.inf if rate == 0 else 1.0 / rate

    # -- one step --
    def step(self, state: State, dt: float) -> tuple[State, StepReport]:
        if not (dt > 0 and math.isfinite(dt)):
            raise DomainError(f"dt must be positive and finite, got {dt}")
        p, grid = self.params, self.grid
        nY = grid.n_micro
        g1, wg1, wg2 = grid.gamma1_nodes, grid.gamma1_weights, grid.gamma2_weights
        mY, mO = grid.micro_mass, grid.macro_mass
        free = self.ops.macro.free
        fac = self.factors(dt)
        report = StepReport(dt=dt)
        t1 = state.t + dt
        c0, c1 = float(p.w3D.value(state.t)), float(p.w3D.value(t1))

        # (1) gypsum
        dw4, report.w4_iterations = w4_increment(eval_kinetic(p.R, state.w1[:, g1]), state.w4, dt, p.Q)
        w4n = state.w4 + dw4

        # (2) micro residual at the old state, boundary gas fixed at w3D(t')
        g2 = grid.gamma2_nodes
        flux = mY * eval_kinetic(p.psi, state.w1 - p.gamma * state.w2)
        res = np.empty((grid.n_macro, 2 * nY))
        res[:, :nY] = -self.ops.apply_K1(state.w1) - flux
        res[:, g1] -= dw4 * (wg1 / dt)
        res[:, nY:] = -self.ops.apply_K2(state.w2) + flux
        res[:, nY + g2] += (p.alpha * wg2) * (p.henry * c1 - state.w2[:, g2])
        a = self._solve_micro(fac.micro, res)
        report.linear_solves += 1
        w2_int = state.w2[:, g2] @ wg2 + a[:, self._g2_full] @ wg2

        # (3) macro increment of w3~ = w3 - w3D, then micro recovery
        u3 = state.w3[free] - c0
        fh = (c1 - c0) / dt
        Ku3 = self.ops.macro.free_stiffness @ u3
        m = mO[free]
        u3n = np.zeros(grid.n_macro)
        if self.scheme == "coupled":
            gap = p.alpha * ((p.henry * self._g2_area - fac.schur[free]) * u3
                             + p.henry * self._g2_area * c1 - w2_int[free])
            u3n[free] = u3 + self._macro_solve(fac, -m * fh - Ku3 - m * gap, report)
        else:
            for _ in range(self.sweeps):
                gap = p.alpha * (p.henry * self._g2_area * (u3 + c1) - w2_int[free])
                u3n[free] = u3 + self._macro_solve(fac, -m * fh - Ku3 - m * gap, report)
                w2_int = (state.w2[:, g2] @ wg2 + a[:, self._g2_full] @ wg2
                          + u3n * fac.schur)
        z = a + u3n[:, None] * fac.response
        w1n = state.w1 + z[:, :nY]
        w2n = state.w2 + z[:, nY:]
        nxt = State(w1n, w2n, u3n + c1, w4n, t1)
        report.dirichlet_flux = dg.dirichlet_flux(state, nxt, p, grid, self.ops)
        self._check_positivity(state, nxt, report)
        return nxt, report

    def _macro_solve(self, fac: _Factors, rhs: np.ndarray, report: StepReport) -> np.ndarray:
        """Solve the free-node macro system for the increment of ``w3~``."""
        if fac.macro is None:
            return np.zeros(0)
        x = fac.macro.solve(rhs)
        report.linear_solves += 1
        scale = max(np.linalg.norm(rhs), 1e-300)
        report.macro_residual = float(np.linalg.norm(fac.macro_matrix @ x - rhs) / scale)
        return x

    def _check_positivity(self, prev: State, nxt: State, report: StepReport) -> None:
        b = self.bounds or compute_bounds(self.params, prev)
        M = np.maximum(b.as_array(), 1e-300)
        lows = [float(a.min()) if a.size else 0.0 for a in (nxt.w1, nxt.w2, nxt.w3, nxt.w4)]
        rel = [max(0.0, -lo) / m for lo, m in zip(lows, M)]
        report.positivity_defect = max(rel)
        finite = all(np.all(np.isfinite(a)) for a in (nxt.w1, nxt.w2, nxt.w3, nxt.w4))
        if not finite or report.positivity_defect > self.positivity_tol:
            raise StepFailure(f"positivity violated at t={nxt.t:g}: relative defect "
                              f"{report.positivity_defect:.3e} > {self.positivity_tol:g}", report)

    # -- runs --
    def run(self, initial: State, t_end: float, dt: float, *, output_every: float | None = None,
            steady_tol: float | None = None, adaptive: bool = False, max_halvings: int = 8,
            max_steps: int | None = None, keep_all: bool = False, reference=None,
            callback=None) -> "RunResult":
        return run(initial, t_end, dt, self.params, self.grid, stepper=self, output_every=output_every,
                   steady_tol=steady_tol, adaptive=adaptive, max_halvings=max_halvings,
                   max_steps=max_steps, keep_all=keep_all, reference=reference, callback=callback)


def step(state: State, dt: float, params: Params, grid: TwoScaleGrid,
         ops: DiscreteOperators | None = None, **kw) -> tuple[State, StepReport]:
    """One step with a throwaway :class:`TimeStepper`."""
    return TimeStepper(params, grid, ops, **kw).step(state, dt)


# -- run -----------------------------------------------------------------------

@dataclass
class RunResult:
    """Trajectory and diagnostics of a run.

    ``states`` holds the initial state and every output state (every step
    when ``keep_all``); ``records`` the matching diagnostics. ``log`` holds
    per-step arrays: ``t``, ``dt``, ``mass_defect``, ``total_mass``,
    ``bound_defect`` (relative, per component), ``w4_min_increment``,
    ``w4_l1`` and ``dissipation``.
    """

    states: list
    records: list
    log: dict
    bounds: Bounds
    dt_max: float
    status: str = "ok"
    message: str = ""
    reports: list = field(default_factory=list)

    @property
    def final(self) -> State:
        return self.states[-1]

    @property
    def ok(self) -> bool:
        return self.status in ("ok", "steady")

    def max_relative_mass_defect(self) -> float:
        d = np.abs(self.log["mass_defect"])
        if d.size == 0:
            return 0.0
        tot = np.maximum(np.abs(self.log["total_mass"]), 1e-300)
        return float(np.max(d / tot))


def run(initial: State, t_end: float, dt: float, params: Params, grid: TwoScaleGrid, *,
        stepper: TimeStepper | None = None, output_every: float | None = None,
        steady_tol: float | None = None, adaptive: bool = False, max_halvings: int = 8,
        max_steps: int | None = None, keep_all: bool = False, reference=None,
        callback=None, **stepper_kw) -> RunResult:
    """Integrate from ``initial`` to ``t_end`` with fixed steps ``dt``.

    Diagnostics are accumulated every step and recorded at multiples of
    ``output_every`` (default: every step). ``reference`` is an optional
    ``(w1, w2, w3~)`` triple; records then carry ``|w~(t) - reference|_H^2``.
    The run stops early when ``|w~' - w~|_H / dt < steady_tol``. A failing
    step is retried with halved steps when ``adaptive``; otherwise the run
    ends with status ``"failed"`` and the partial trajectory.
    """
    if t_end < 0:
        raise DomainError("t_end must be nonnegative")
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")
    initial.check_shapes(grid)
    bounds = compute_bounds(params, initial)
    if stepper is None:
        stepper = TimeStepper(params, grid, bounds=bounds, **stepper_kw)
    elif stepper.bounds is None:
        stepper.bounds = bounds
    ops = stepper.ops
    M = np.maximum(bounds.as_array(), 1e-300)
    t0 = initial.t
    n_steps = 0 if t_end <= t0 else max(1, int(math.ceil((t_end - t0) / dt - 1e-9)))
    if max_steps is not None:
        n_steps = min(n_steps, int(max_steps))
    out_dt = dt if output_every is None else float(output_every)

    log = {k: [] for k in ("t", "dt", "mass_defect", "total_mass", "bound_defect",
                           "w4_min_increment", "w4_l1", "dissipation")}
    acc = np.zeros(5)  # dissipation integral, I1..I4
    worst = {"mass": 0.0, "bound": 0.0}
    w4_weights = np.outer(grid.macro_mass, grid.gamma1_weights)

    def record(s: State, diss_rate: float) -> dg.DiagnosticsRecord:
        u = dg.tilde(s, params)
        hn = float("nan") if reference is None else dg.h_distance(u, reference, params, grid) ** 2
        return dg.DiagnosticsRecord(
            t=s.t, energy=dg.energy(s, params, grid, ops=ops), h_norm_sq=hn, dissipation=diss_rate,
            dissipation_integral=float(acc[0]), I_terms=tuple(float(x) for x in acc[1:]),
            mass_defect=worst["mass"], bound_defect=worst["bound"],
            w4_total=float(np.sum(w4_weights * s.w4)))

    states, records, reports = [initial], [record(initial, 0.0)], []
    total = dg.mass_total(initial, grid)

    def accept(prev: State, nxt: State, rep: StepReport) -> float:
        nonlocal total
        inc = dg.step_increments(prev, nxt, params, grid)
        acc[:] += inc
        new_total = dg.mass_total(nxt, grid)
        defect = new_total - total - rep.dirichlet_flux
        total = new_total
        bd = dg.check_bounds(nxt, bounds) / M
        d4 = nxt.w4 - prev.w4
        worst["mass"] = max(worst["mass"], abs(defect) / max(abs(total), 1e-300))
        worst["bound"] = max(worst["bound"], float(bd.max()))
        for k, v in (("t", nxt.t), ("dt", nxt.t - prev.t), ("mass_defect", defect), ("total_mass", total),
                     ("bound_defect", bd), ("w4_min_increment", float(d4.min()) if d4.size else 0.0),
                     ("w4_l1", float(np.sum(w4_weights * np.abs(d4)))), ("dissipation", inc[0])):
            log[k].append(v)
        reports.append(rep)
        return inc[0]

    def advance(s: State, h: float, depth: int) -> tuple[State, float]:
        try:
            nxt, rep = stepper.step(s, h)
        except StepFailure:
            if not adaptive or depth >= max_halvings:
                raise
            mid, _ = advance(s, h / 2, depth + 1)
            return advance(mid, h / 2, depth + 1)
        return nxt, accept(s, nxt, rep)

    status, message = "ok", ""
    state = initial
    next_out = t0 + out_dt
    diss = 0.0
    for n in range(n_steps):
        h = min(dt, t_end - state.t) if n == n_steps - 1 else dt
        if h <= 0:
            break
        try:
            nxt, diss = advance(state, h, 0)
        except StepFailure as exc:
            status, message = "failed", str(exc)
            break
        state = nxt
        if callback is not None:
            callback(state)
        steady = steady_tol is not None and math.sqrt(max(diss, 0.0) / h) < steady_tol
        last = n == n_steps - 1
        if keep_all or state.t >= next_out - 1e-9 * dt or last or steady:
            states.append(state)
            records.append(record(state, diss / h))
            while next_out <= state.t + 1e-9 * dt:
                next_out += out_dt
        if steady:
            status, message = "steady", f"steady state reached at t={state.t:g}"
            break
    if status == "ok" and max_steps is not None and state.t < t_end - 1e-9 * dt:
        status, message = "max_steps", f"stopped after {n_steps} steps at t={state.t:g}"
    log_arr = {k: np.array(v) for k, v in log.items()}
    return RunResult(states, records, log_arr, bounds, stepper.dt_max(bounds), status, message, reports)
