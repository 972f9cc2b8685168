"""Plain-text writers for snapshots, time series and summaries.

Floats are written with 17 significant digits so identical runs give
byte-identical files.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .grid import TwoScaleGrid
from .state import State

_FMT = "%.17g"


def _fmt(x) -> str:
    return _FMT % x


def write_snapshot(path, state: State, grid: TwoScaleGrid) -> Path:
    """One row per (macro node, micro node).

    Columns are macro coordinates, micro coordinates, ``w1 w2 w3 w4``; ``w4``
    is ``nan`` away from Gamma_1.
    """
    path = Path(path)
    X, Y = grid.macro.coords, grid.micro.coords
    dx, dy = X.shape[1], Y.shape[1]
    names = [f"x{i + 1}" for i in range(dx)] + [f"y{i + 1}" for i in range(dy)] + ["w1", "w2", "w3", "w4"]
    w4_full = np.full((grid.n_macro, grid.n_micro), np.nan)
    w4_full[:, grid.gamma1_nodes] = state.w4
    nM, nY = grid.n_macro, grid.n_micro
    cols = [np.repeat(X[:, i], nY) for i in range(dx)] + [np.tile(Y[:, i], nM) for i in range(dy)]
    cols += [state.w1.ravel(), state.w2.ravel(), np.repeat(state.w3, nY), w4_full.ravel()]
    data = np.column_stack(cols)
    with path.open("w") as fh:
        fh.write(f"# t = {_fmt(state.t)}\n# " + " ".join(names) + "\n")
        np.savetxt(fh, data, fmt=_FMT)
    return path


def read_snapshot(path, grid: TwoScaleGrid) -> State:
    """Inverse of :func:`write_snapshot`."""
    path = Path(path)
    with path.open() as fh:
        t = float(fh.readline().split("=")[1])
    data = np.loadtxt(path, comments="#", ndmin=2)
    nM, nY = grid.n_macro, grid.n_micro
    k = grid.macro.dim + grid.micro.dim
    w1 = data[:, k].reshape(nM, nY)
    w2 = data[:, k + 1].reshape(nM, nY)
    w3 = data[::nY, k + 2]
    w4 = data[:, k + 3].reshape(nM, nY)[:, grid.gamma1_nodes]
    return State(w1, w2, w3, w4, t)


TIMESERIES_COLUMNS = ("step", "t", "energy", "h_norm_sq", "mass_defect", "bound_defect", "dissipation",
                      "dissipation_integral", "I1", "I2", "I3", "I4", "w4_total")


def write_timeseries(path, records, steps=None) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TIMESERIES_COLUMNS)
        for i, rec in enumerate(records):
            row = rec.as_row()
            step = steps[i] if steps is not None else i
            w.writerow([step] + [_fmt(row[c]) for c in TIMESERIES_COLUMNS[1:]])
    return path


def write_convergence(path, trace) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "residual"])
        for it, r in trace:
            w.writerow([it, _fmt(r)])
    return path


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else str(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def write_json(path, payload: dict) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(payload), indent=2) + "\n")
    return path
