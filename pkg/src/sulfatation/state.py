from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class State:
    """Snapshot of the four concentrations at time ``t``.

    ``w1``, ``w2``: ``(n_macro, n_micro)``; ``w3``: ``(n_macro,)``;
    ``w4``: ``(n_macro, n_gamma1)``. Arrays are copied and made read-only.
    """

    w1: np.ndarray
    w2: np.ndarray
    w3: np.ndarray
    w4: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        for name in ("w1", "w2", "w3", "w4"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        object.__setattr__(self, "t", float(self.t))
        if self.w1.shape != self.w2.shape or self.w1.ndim != 2:
            raise ValueError(f"w1/w2 shapes differ or are not 2D: {self.w1.shape} vs {self.w2.shape}")
        if self.w3.shape != (self.w1.shape[0],) or self.w4.shape[0] != self.w1.shape[0]:
            raise ValueError("w3/w4 must have one row per macro node")

    @classmethod
    def zeros(cls, grid, t: float = 0.0) -> "State":
        nM, nY, nG = grid.n_macro, grid.n_micro, grid.n_gamma1
        return cls(np.zeros((nM, nY)), np.zeros((nM, nY)), np.zeros(nM), np.zeros((nM, nG)), t)

    @classmethod
    def henry_equilibrium(cls, grid, params, w3=None, w4=None, t: float = 0.0) -> "State":
        """``w1 = gamma*h*w3``, ``w2 = h*w3``, ``w3`` constant, ``w4 = beta_max`` by default."""
        c = params.w3D.limit if w3 is None else w3
        w4 = params.beta_max if w4 is None else w4
        nM, nY, nG = grid.n_macro, grid.n_micro, grid.n_gamma1
        return cls(np.full((nM, nY), params.gamma * params.henry * c), np.full((nM, nY), params.henry * c),
                   np.full(nM, float(c)), np.full((nM, nG), float(w4)), t)

    def replace(self, **kw) -> "State":
        data = dict(w1=self.w1, w2=self.w2, w3=self.w3, w4=self.w4, t=self.t)
        data.update(kw)
        return State(**data)

    def check_shapes(self, grid) -> None:
        expected = {"w1": (grid.n_macro, grid.n_micro), "w2": (grid.n_macro, grid.n_micro),
                    "w3": (grid.n_macro,), "w4": (grid.n_macro, grid.n_gamma1)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, grid expects {shape}")
