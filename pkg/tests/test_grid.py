import numpy as np
import pytest

from sulfatation.grid import GridError, boundary_nodes, build_two_scale_grid, canonical_grid, line_grid, shrink


def micro1d(cells=10, **tags):
    return build_two_scale_grid({"dim": 1, "cells": [2], "tags": {"D": ["left"]}},
                                {"dim": 1, "cells": [cells], "tags": tags or {"gamma1": ["left"], "gamma2": ["right"]}})


def test_micro_measure_1d():
    g = micro1d()
    assert g.micro_mass.sum() == pytest.approx(1.0)


def test_gamma1_length_2d():
    g = canonical_grid(4, 6)
    assert g.measure("gamma1") == pytest.approx(1.0)


def test_overlapping_tags_rejected():
    with pytest.raises(GridError):
        micro1d(gamma1=["left"], gamma2=["left"])


def test_missing_gamma2_rejected():
    with pytest.raises(GridError):
        micro1d(gamma1=["left"], gamma3=["right"])


def test_missing_dirichlet_rejected():
    with pytest.raises(GridError):
        build_two_scale_grid({"dim": 1, "cells": [2], "tags": {"N": ["left", "right"]}},
                             {"dim": 1, "cells": [2], "tags": {"gamma1": ["left"], "gamma2": ["right"]}})


def test_gamma2_1d_is_last_node():
    g = micro1d()
    nodes, weights = boundary_nodes(g, "gamma2")
    assert list(nodes) == [10]
    assert list(weights) == [1.0]


@pytest.mark.parametrize("n", [3, 5, 9])
def test_gamma3_sides_2d(n):
    # n x n micro nodes: the two side edges hold 2n nodes
    g = canonical_grid(2, n - 1)
    nodes, _ = boundary_nodes(g, "gamma3")
    assert len(nodes) == 2 * n


def test_gamma3_empty_1d():
    g = line_grid()
    nodes, weights = boundary_nodes(g, "gamma3")
    assert len(nodes) == 0 and len(weights) == 0


def test_unknown_region():
    with pytest.raises(ValueError):
        boundary_nodes(line_grid(), "gamma7")


def test_boundary_quadrature_exact_for_affine():
    g = build_two_scale_grid({"dim": 1, "cells": [2], "tags": {"D": ["left"]}},
                             {"dim": 2, "cells": [5, 7], "lengths": [2.0, 3.0],
                              "tags": {"gamma1": ["bottom"], "gamma2": ["top"], "gamma3": ["left", "right"]}})
    y = g.micro.coords
    f = 1.5 + 0.7 * y[:, 0] - 0.2 * y[:, 1]
    nodes, w = boundary_nodes(g, "gamma1")  # y2 = 0, x in [0, 2]
    assert np.sum(w * f[nodes]) == pytest.approx(2 * 1.5 + 0.7 * 2.0)
    nodes, w = boundary_nodes(g, "gamma2")  # y2 = 3
    assert np.sum(w * f[nodes]) == pytest.approx(2 * (1.5 - 0.6) + 0.7 * 2.0)


def test_boundary_masses_sum_to_perimeter():
    g = canonical_grid(3, 5)
    total = sum(g.measure(r) for r in ("gamma1", "gamma2", "gamma3"))
    assert total == pytest.approx(4.0)


def test_volume_weights():
    g = canonical_grid(3, 5)
    assert g.macro_mass.sum() == pytest.approx(1.0)
    assert g.micro_mass.sum() == pytest.approx(1.0)


def test_shrink_keeps_tags():
    g = shrink(canonical_grid(8, 8), 3)
    assert g.n_macro == 16 and g.n_micro == 16
    assert g.measure("gamma1") == pytest.approx(1.0)
    assert len(g.dirichlet_nodes) == 4


def test_unknown_grid_keys():
    with pytest.raises(GridError):
        build_two_scale_grid({"dim": 1, "cells": [2], "colour": "red", "tags": {"D": ["left"]}},
                             {"dim": 1, "cells": [2], "tags": {"gamma1": ["left"], "gamma2": ["right"]}})
