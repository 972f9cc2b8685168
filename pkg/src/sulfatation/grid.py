"""Structured vertex-centred grids for the macro domain and the micro cell.

Nodes are numbered in C order over ``np.meshgrid(..., indexing="ij")``, so in
2D node ``(i, j)`` (``i`` along x, ``j`` along y) has index ``i * ny + j``.
Volume and boundary quadrature are trapezoidal.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

FACES = {1: ("left", "right"), 2: ("left", "right", "bottom", "top")}

MACRO_LABELS = {"D": "D", "dirichlet": "D", "gamma_d": "D", "N": "N", "neumann": "N", "gamma_n": "N"}
MICRO_LABELS = {
    "gamma1": "gamma1", "G1": "gamma1", "1": "gamma1",
    "gamma2": "gamma2", "G2": "gamma2", "2": "gamma2",
    "gamma3": "gamma3", "G3": "gamma3", "3": "gamma3",
}
REGION_ALIASES = {
    "gamma1": ("micro", "gamma1"), "G1": ("micro", "gamma1"), "Γ1": ("micro", "gamma1"), "Γ₁": ("micro", "gamma1"),
    "gamma2": ("micro", "gamma2"), "G2": ("micro", "gamma2"), "Γ2": ("micro", "gamma2"), "Γ₂": ("micro", "gamma2"),
    "gamma3": ("micro", "gamma3"), "G3": ("micro", "gamma3"), "Γ3": ("micro", "gamma3"), "Γ₃": ("micro", "gamma3"),
    "D": ("macro", "D"), "dirichlet": ("macro", "D"), "gamma_d": ("macro", "D"), "Γ_D": ("macro", "D"),
    "N": ("macro", "N"), "neumann": ("macro", "N"), "gamma_n": ("macro", "N"), "Γ_N": ("macro", "N"),
}


class GridError(ValueError):
    """Invalid grid specification."""


def _trapezoid_weights(n_cells: int, h: float) -> np.ndarray:
    w = np.full(n_cells + 1, h)
    w[0] = w[-1] = 0.5 * h
    return w


def _normalize_tags(dim: int, tags: Mapping, labels: Mapping[str, str], default: str) -> dict[str, str]:
    """Accept either ``{face: label}`` or ``{label: [faces]}`` and return ``{face: label}``."""
    faces = FACES[dim]
    out: dict[str, str] = {}
    for key, val in (tags or {}).items():
        if key in faces and isinstance(val, str):
            if val not in labels:
                raise GridError(f"unknown boundary label {val!r} for face {key!r}")
            if key in out and out[key] != labels[val]:
                raise GridError(f"face {key!r} tagged twice ({out[key]!r} and {labels[val]!r})")
            out[key] = labels[val]
        elif key in labels:
            for face in ([val] if isinstance(val, str) else list(val)):
                if face not in faces:
                    raise GridError(f"unknown face {face!r} for a {dim}D grid; faces are {faces}")
                if face in out and out[face] != labels[key]:
                    raise GridError(f"face {face!r} assigned to both {out[face]!r} and {labels[key]!r}")
                out[face] = labels[key]
        else:
            raise GridError(f"cannot interpret boundary tag {key!r}: {val!r}")
    for face in faces:
        out.setdefault(face, default)
    return out


@dataclass(frozen=True)
class StructuredGrid:
    """Tensor-product grid on ``[0, L_1] x ... x [0, L_dim]``."""

    dim: int
    cells: tuple[int, ...]
    lengths: tuple[float, ...]
    tags: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise GridError(f"dimension must be 1 or 2, got {self.dim}")
        cells = tuple(int(c) for c in np.atleast_1d(self.cells))
        lengths = tuple(float(x) for x in np.atleast_1d(self.lengths))
        if len(cells) == 1 and self.dim == 2:
            cells = cells * 2
        if len(lengths) == 1 and self.dim == 2:
            lengths = lengths * 2
        if len(cells) != self.dim or len(lengths) != self.dim:
            raise GridError("cells/lengths must have one entry per axis")
        if any(c < 1 for c in cells):
            raise GridError(f"cell counts must be positive, got {cells}")
        if any(not x > 0 for x in lengths):
            raise GridError(f"lengths must be positive, got {lengths}")
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "lengths", lengths)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(c + 1 for c in self.cells)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / c for L, c in zip(self.lengths, self.cells))

    @property
    def axis_coords(self) -> list[np.ndarray]:
        return [np.linspace(0.0, L, c + 1) for L, c in zip(self.lengths, self.cells)]

    @property
    def coords(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axis_coords, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @property
    def axis_weights(self) -> list[np.ndarray]:
        return [_trapezoid_weights(c, h) for c, h in zip(self.cells, self.spacing)]

    @property
    def weights(self) -> np.ndarray:
        """Trapezoidal (lumped mass) weight of every node."""
        w = self.axis_weights
        return w[0].copy() if self.dim == 1 else np.outer(w[0], w[1]).ravel()

    def face_nodes(self, face: str) -> np.ndarray:
        idx = np.arange(self.n_nodes).reshape(self.shape)
        sl = {"left": (0,), "right": (-1,), "bottom": (slice(None), 0), "top": (slice(None), -1)}[face]
        return np.atleast_1d(idx[sl]).ravel()

    def face_weights(self, face: str) -> np.ndarray:
        if self.dim == 1:
            return np.ones(1)
        axis = 1 if face in ("left", "right") else 0
        return self.axis_weights[axis].copy()

    def region(self, label: str) -> tuple[np.ndarray, np.ndarray]:
        """Sorted nodes of all faces carrying ``label`` and their boundary quadrature weights."""
        acc: dict[int, float] = {}
        for face in FACES[self.dim]:
            if self.tags.get(face) == label:
                for node, w in zip(self.face_nodes(face), self.face_weights(face)):
                    acc[int(node)] = acc.get(int(node), 0.0) + float(w)
        nodes = np.array(sorted(acc), dtype=int)
        return nodes, np.array([acc[n] for n in nodes], dtype=float)

    def boundary_measure(self) -> float:
        if self.dim == 1:
            return 2.0
        return 2.0 * sum(self.lengths)

    def to_dict(self) -> dict:
        return {"dim": self.dim, "cells": list(self.cells), "lengths": list(self.lengths),
                "tags": dict(self.tags)}


class MacroGrid(StructuredGrid):
    """Grid of the macro domain; faces tagged ``"D"`` (Dirichlet) or ``"N"`` (Neumann)."""

    def __post_init__(self):
        super().__post_init__()
        tags = _normalize_tags(self.dim, self.tags, MACRO_LABELS, "N")
        object.__setattr__(self, "tags", tags)
        if "D" not in tags.values():
            raise GridError("the macro grid needs at least one Dirichlet face")


class MicroGrid(StructuredGrid):
    """Grid of the reference cell; faces tagged ``gamma1``, ``gamma2`` or ``gamma3``."""

    def __post_init__(self):
        super().__post_init__()
        tags = _normalize_tags(self.dim, self.tags, MICRO_LABELS, "gamma3")
        object.__setattr__(self, "tags", tags)
        for label in ("gamma1", "gamma2"):
            if label not in tags.values():
                raise GridError(f"the micro grid needs a nonempty {label}")


@dataclass(frozen=True, eq=False)
class TwoScaleGrid:
    """Product of a macro grid and a micro grid with precomputed quadrature.

    Every macro node carries an identical copy of the micro grid.
    """

    macro: MacroGrid
    micro: MicroGrid

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "macro_mass", self.macro.weights)
        set_(self, "micro_mass", self.micro.weights)
        for label in ("gamma1", "gamma2", "gamma3"):
            nodes, w = self.micro.region(label)
            set_(self, f"{label}_nodes", nodes)
            set_(self, f"{label}_weights", w)
        for label, name in (("D", "dirichlet"), ("N", "neumann")):
            nodes, w = self.macro.region(label)
            set_(self, f"{name}_nodes", nodes)
            set_(self, f"{name}_weights", w)
        free = np.setdiff1d(np.arange(self.macro.n_nodes), self.dirichlet_nodes)
        set_(self, "free_nodes", free)

    # declared for type checkers; filled in __post_init__
    macro_mass: np.ndarray = field(init=False, repr=False)
    micro_mass: np.ndarray = field(init=False, repr=False)
    gamma1_nodes: np.ndarray = field(init=False, repr=False)
    gamma1_weights: np.ndarray = field(init=False, repr=False)
    gamma2_nodes: np.ndarray = field(init=False, repr=False)
    gamma2_weights: np.ndarray = field(init=False, repr=False)
    gamma3_nodes: np.ndarray = field(init=False, repr=False)
    gamma3_weights: np.ndarray = field(init=False, repr=False)
    dirichlet_nodes: np.ndarray = field(init=False, repr=False)
    dirichlet_weights: np.ndarray = field(init=False, repr=False)
    neumann_nodes: np.ndarray = field(init=False, repr=False)
    neumann_weights: np.ndarray = field(init=False, repr=False)
    free_nodes: np.ndarray = field(init=False, repr=False)

    @property
    def n_macro(self) -> int:
        return self.macro.n_nodes

    @property
    def n_micro(self) -> int:
        return self.micro.n_nodes

    @property
    def n_gamma1(self) -> int:
        return len(self.gamma1_nodes)

    def measure(self, region: str) -> float:
        """Quadrature of the constant 1 over ``Y``, ``Omega`` or a boundary region."""
        if region in ("Y", "micro"):
            return float(self.micro_mass.sum())
        if region in ("Omega", "macro"):
            return float(self.macro_mass.sum())
        return float(boundary_nodes(self, region)[1].sum())


def build_two_scale_grid(macro_spec: Mapping, micro_spec: Mapping) -> TwoScaleGrid:
    """Build a :class:`TwoScaleGrid` from plain specs.

    Each spec is a mapping with ``dim``, ``cells`` and optional ``lengths``
    (default 1 per axis) and ``tags``. Tags may be ``{face: label}`` or
    ``{label: [faces]}``; untagged macro faces are Neumann, untagged micro
    faces belong to ``gamma3``.
    """
    def make(cls, spec):
        spec = dict(spec)
        dim = int(spec.get("dim", 1))
        unknown = set(spec) - {"dim", "cells", "lengths", "tags"}
        if unknown:
            raise GridError(f"unknown grid keys {sorted(unknown)}")
        if "cells" not in spec:
            raise GridError("grid spec needs 'cells'")
        return cls(dim=dim, cells=spec["cells"], lengths=spec.get("lengths", [1.0] * dim),
                   tags=spec.get("tags", {}))

    return TwoScaleGrid(macro=make(MacroGrid, macro_spec), micro=make(MicroGrid, micro_spec))


def boundary_nodes(grid: TwoScaleGrid, region: str) -> tuple[np.ndarray, np.ndarray]:
    """Sorted, duplicate-free node indices of a boundary region with quadrature weights.

    Micro regions are ``gamma1``/``gamma2``/``gamma3``; macro regions ``D``/``N``.
    """
    if region not in REGION_ALIASES:
        raise ValueError(f"unknown boundary region {region!r}")
    scale, label = REGION_ALIASES[region]
    if scale == "micro":
        return getattr(grid, f"{label}_nodes"), getattr(grid, f"{label}_weights")
    return grid.macro.region(label)


def shrink(grid: TwoScaleGrid, cells: int = 3) -> TwoScaleGrid:
    """Same geometry and tags with ``cells`` cells per axis on both scales."""
    def re(g, cls):
        return cls(dim=g.dim, cells=(cells,) * g.dim, lengths=g.lengths, tags=dict(g.tags))

    return TwoScaleGrid(macro=re(grid.macro, MacroGrid), micro=re(grid.micro, MicroGrid))


def canonical_grid(n_macro: int = 8, n_micro: int = 8) -> TwoScaleGrid:
    """2D x 2D: Dirichlet on the left macro face; gamma1 bottom, gamma2 top, gamma3 sides."""
    return build_two_scale_grid(
        {"dim": 2, "cells": [n_macro, n_macro], "tags": {"D": ["left"], "N": ["right", "bottom", "top"]}},
        {"dim": 2, "cells": [n_micro, n_micro],
         "tags": {"gamma1": ["bottom"], "gamma2": ["top"], "gamma3": ["left", "right"]}},
    )


def line_grid(n_macro: int = 3, n_micro: int = 3, dirichlet: Sequence[str] = ("left",)) -> TwoScaleGrid:
    """1D x 1D test configuration with gamma1 at y = 0 and gamma2 at y = 1."""
    return build_two_scale_grid(
        {"dim": 1, "cells": [n_macro], "tags": {"D": list(dirichlet)}},
        {"dim": 1, "cells": [n_micro], "tags": {"gamma1": ["left"], "gamma2": ["right"]}},
    )
