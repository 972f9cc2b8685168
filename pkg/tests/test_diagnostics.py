import numpy as np
import pytest

from conftest import random_state, smooth_state
from sulfatation import State, TimeStepper, canonical_grid, default_params
from sulfatation import diagnostics as dg
from sulfatation.model import BoundaryData, Bounds, KineticSpec
from sulfatation.oracle import energy_independent
from sulfatation.stationary import _System, solve_stationary


def ones(grid, a=1.0, b=1.0, c=1.0):
    nM, nY = grid.n_macro, grid.n_micro
    return np.full((nM, nY), a), np.full((nM, nY), b), np.full(nM, c)


# -- H inner product ----------------------------------------------------------

def test_h_inner_constants(params, small_grid):
    u = ones(small_grid)
    g, h = params.gamma, params.henry
    assert dg.h_inner(u, u, params, small_grid) == pytest.approx(1 + g + g * h, rel=1e-14)


def test_h_inner_weights(params, small_grid):
    u = ones(small_grid, 0.0, 1.0, 1.0)
    assert dg.h_inner(u, u, params, small_grid) == pytest.approx(3.0, rel=1e-14)


def test_h_inner_orthogonal_components(params, small_grid):
    u = ones(small_grid, 1.0, 0.0, 0.0)
    v = ones(small_grid, 0.0, 1.0, 1.0)
    assert dg.h_inner(u, v, params, small_grid) == 0.0


def test_h_inner_shape_mismatch(params, small_grid):
    u = ones(small_grid)
    v = (u[0], u[1], u[2][:-1])
    with pytest.raises(ValueError):
        dg.h_inner(u, v, params, small_grid)


def test_h_inner_symmetric_bilinear_positive(params, small_grid):
    rng = np.random.default_rng(3)
    for _ in range(20):
        u, v, w = (dg.tilde(random_state(small_grid, rng), params) for _ in range(3))
        a, b = rng.normal(size=2)
        uv = dg.h_inner(u, v, params, small_grid)
        assert uv == pytest.approx(dg.h_inner(v, u, params, small_grid), rel=1e-13)
        lin = tuple(a * x + b * y for x, y in zip(u, w))
        assert dg.h_inner(lin, v, params, small_grid) == pytest.approx(
            a * uv + b * dg.h_inner(w, v, params, small_grid), rel=1e-12, abs=1e-13)
        assert dg.h_inner(u, u, params, small_grid) > 0


# -- energy -------------------------------------------------------------------

def test_energy_zero_state():
    p = default_params(w3D=BoundaryData(0.0))
    grid = canonical_grid(4, 4)
    s = State.zeros(grid)
    assert dg.energy(s, p, grid) == 0.0
    assert energy_independent(s, 0.0, p, grid) == 0.0


def test_energy_constant_field_closed_form():
    # u1 = c, everything else zero, Q(w4) = q, no boundary data: only the
    # reaction and bulk primitives survive, on unit measures
    p = default_params(w3D=BoundaryData(0.0))
    grid = canonical_grid(4, 4)
    c, w4 = 0.5, 0.25
    s = State.zeros(grid)
    s = State(np.full_like(s.w1, c), s.w2, s.w3, np.full_like(s.w4, w4), 0.0)
    q = 1.0 - w4
    expected = q * c**2 / 2 + p.psi.k * c**2 / 2
    assert expected == 0.34375
    assert dg.energy(s, p, grid) == pytest.approx(expected, rel=1e-14)
    assert energy_independent(s, 0.0, p, grid) == pytest.approx(expected, rel=1e-14)


def test_energy_matches_independent_evaluator(params, small_grid):
    rng = np.random.default_rng(11)
    for k in range(10):
        s = random_state(small_grid, rng, t=0.3 * k)
        a, b = dg.energy(s, params, small_grid), energy_independent(s, s.t, params, small_grid)
        assert abs(a - b) <= 1e-12 * abs(b)


def test_energy_lower_bound(params, small_grid):
    rng = np.random.default_rng(5)
    g, h = params.gamma, params.henry
    for k in range(20):
        s = random_state(small_grid, rng, t=0.1 * k, scale=3.0)
        u3 = s.w3 - float(params.w3D.value(s.t))
        f = float(params.w3D.source(s.t))
        u3_l2 = np.sqrt(small_grid.macro_mass @ u3**2)
        assert dg.energy(s, params, small_grid) >= -g * h * abs(f) * u3_l2 - 1e-14


def test_stationary_solution_minimizes_limit_energy(params, small_grid):
    w4inf = params.beta_max * 0.5
    sol = solve_stationary(w4inf, None, params, small_grid)
    assert sol.converged
    u = sol.tilde()
    e0 = dg.limit_energy(u, sol.w4inf, params, small_grid)
    rng = np.random.default_rng(2)
    free = np.ones(small_grid.n_macro)
    free[small_grid.dirichlet_nodes] = 0.0
    for eps in (1e-1, 1e-2, 1e-3):
        for _ in range(10):
            v = (rng.normal(size=u[0].shape), rng.normal(size=u[1].shape), rng.normal(size=u[2].shape) * free)
            up = tuple(a + eps * b for a, b in zip(u, v))
            assert dg.limit_energy(up, sol.w4inf, params, small_grid) >= e0 - 1e-13 * abs(e0)


def test_energy_gradient_matches_residual(params, small_grid):
    """Directional differences of the limit energy equal the assembled residual."""
    c = params.w3D.limit
    w4inf = 0.3
    sysm = _System(params, small_grid, w4inf, c)
    s = smooth_state(small_grid, params)
    u = (s.w1, s.w2, s.w3 - c)
    u = (u[0], u[1], np.where(np.isin(np.arange(small_grid.n_macro), small_grid.dirichlet_nodes), 0.0, u[2]))
    F1, F2, F3 = sysm.residual_parts(u[0], u[1], u[2] + c)
    rng = np.random.default_rng(8)
    mO = small_grid.macro_mass
    g, h = params.gamma, params.henry
    w4 = np.full((small_grid.n_macro, small_grid.n_gamma1), w4inf)
    for _ in range(5):
        v1, v2 = rng.normal(size=u[0].shape), rng.normal(size=u[1].shape)
        v3 = np.zeros(small_grid.n_macro)
        v3[sysm.free] = rng.normal(size=len(sysm.free))
        exact = mO @ np.sum(F1 * v1, axis=1) + g * mO @ np.sum(F2 * v2, axis=1) + g * h * F3 @ v3[sysm.free]
        errs = []
        for delta in (1e-3, 5e-4):
            plus = tuple(a + delta * b for a, b in zip(u, (v1, v2, v3)))
            minus = tuple(a - delta * b for a, b in zip(u, (v1, v2, v3)))
            fd = (dg.limit_energy(plus, w4, params, small_grid)
                  - dg.limit_energy(minus, w4, params, small_grid)) / (2 * delta)
            errs.append(abs(fd - exact))
        assert errs[-1] <= 1e-6 * max(1.0, abs(exact))


# -- energy balance -------------------------------------------------------------

def test_energy_balance_stationary_state_is_zero(const_params, small_grid):
    s = State.henry_equilibrium(small_grid, const_params, w3=1.0, w4=const_params.beta_max)
    res = TimeStepper(const_params, small_grid).run(s, 0.05, 1e-2, output_every=1e-2)
    defects, pos = dg.energy_balance(res.records)
    assert np.all(defects == 0.0)
    assert pos == 0.0


def test_energy_balance_single_zero_step():
    p = default_params(w3D=BoundaryData(0.0))
    grid = canonical_grid(4, 4)
    res = TimeStepper(p, grid).run(State.zeros(grid), 1e-2, 1e-2)
    defects, pos = dg.energy_balance(res.records)
    assert len(defects) == 1 and pos == 0.0


def test_energy_balance_short_series():
    assert dg.energy_balance([])[1] == 0.0


def test_energy_decays_to_final_state(const_params, small_grid):
    s0 = smooth_state(small_grid, const_params)
    res = TimeStepper(const_params, small_grid).run(s0, 2.0, 1e-2, output_every=0.1)
    E = np.array([r.energy for r in res.records])
    assert int(np.argmin(E)) == len(E) - 1


# -- bounds, mass, gypsum ---------------------------------------------------------

def test_check_bounds_examples(small_grid):
    b = Bounds(1.0, 2.0, 3.0, 4.0)
    z = State.zeros(small_grid)
    assert np.all(dg.check_bounds(z, b) == 0.0)
    at = State(np.full_like(z.w1, 1.0), np.full_like(z.w2, 2.0), np.full_like(z.w3, 3.0),
               np.full_like(z.w4, 4.0), 0.0)
    assert np.all(dg.check_bounds(at, b) == 0.0)
    w1 = np.zeros_like(z.w1)
    w1[1, 2] = b.M1 + 1
    assert dg.check_bounds(State(w1, z.w2, z.w3, z.w4, 0.0), b)[0] == 1.0
    w3 = np.zeros_like(z.w3)
    w3[0] = -0.25
    assert dg.check_bounds(State(z.w1, z.w2, w3, z.w4, 0.0), b)[2] == 0.25


def test_mass_balance_zero_trajectory():
    p = default_params(w3D=BoundaryData(0.0))
    grid = canonical_grid(4, 4)
    res = TimeStepper(p, grid).run(State.zeros(grid), 0.05, 1e-2, output_every=1e-2, keep_all=True)
    assert np.all(dg.mass_balance(res.states, p, grid) == 0.0)


def test_mass_balance_closed_system(const_params, small_grid):
    s = State.henry_equilibrium(small_grid, const_params, w3=1.0, w4=0.5)
    res = TimeStepper(const_params, small_grid).run(s, 0.1, 1e-2, output_every=1e-2, keep_all=True)
    defects = dg.mass_balance(res.states, const_params, small_grid)
    assert np.max(np.abs(defects)) <= 1e-12 * dg.mass_total(res.final, small_grid)


def test_mass_balance_generic(params, small_grid):
    s0 = smooth_state(small_grid, params)
    res = TimeStepper(params, small_grid).run(s0, 0.2, 1e-2, output_every=1e-2, keep_all=True)
    defects = dg.mass_balance(res.states, params, small_grid)
    totals = np.array([dg.mass_total(s, small_grid) for s in res.states[1:]])
    assert np.all(np.abs(defects) <= 1e-8 * totals)


def test_w4_convergence_single_state(small_grid):
    r = dg.w4_convergence([State.zeros(small_grid)])
    assert r.monotone and r.total_variation == 0.0 and r.l2_time_integral == 0.0


def test_w4_convergence_q_zero(small_grid):
    p = default_params(Q=KineticSpec("Q", "clipped_linear", k=0.0, threshold=1.0))
    res = TimeStepper(p, small_grid).run(smooth_state(small_grid, p), 0.1, 1e-2, output_every=1e-2,
                                         keep_all=True)
    r = dg.w4_convergence(res.states, small_grid)
    assert r.total_variation == 0.0 and r.monotone


def test_w4_convergence_generic_saturates(params, small_grid):
    res = TimeStepper(params, small_grid).run(smooth_state(small_grid, params, w4=0.0), 20.0, 1e-2,
                                              output_every=1e-2, keep_all=True)
    r = dg.w4_convergence(res.states, small_grid)
    assert r.monotone and r.min_increment >= 0.0
    assert r.total_variation > 0 and r.l2_time_integral > 0
    assert r.tail_fraction < 0.01


def test_invariant_summary():
    s = dg.InvariantSummary()
    s.add("a", True, 1.0, 2.0)
    assert s.ok
    s.add("b", False)
    assert not s.ok and s.checks["a"] == {"pass": True, "value": 1.0, "limit": 2.0}


def test_record_row(params, small_grid):
    res = TimeStepper(params, small_grid).run(smooth_state(small_grid, params), 0.02, 1e-2)
    row = res.records[-1].as_row()
    assert set(row) >= {"t", "energy", "I1", "I4", "mass_defect", "w4_total"}
    assert np.isnan(row["h_norm_sq"])  # no stationary reference given
    assert all(np.isfinite(v) for k, v in row.items() if k != "h_norm_sq")
    assert row["dissipation"] >= 0


def test_record_distance_with_reference(params, small_grid):
    s0 = smooth_state(small_grid, params)
    ref = dg.tilde(s0, params)
    res = TimeStepper(params, small_grid).run(s0, 0.02, 1e-2, reference=ref)
    assert res.records[0].h_norm_sq == 0.0
    assert res.records[-1].h_norm_sq > 0.0
