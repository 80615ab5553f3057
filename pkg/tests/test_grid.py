import math

import numpy as np
import pytest

from ldmatrix import ensemble as E
from ldmatrix.grid import build_grid


def test_resolution_four_arc():
    g = build_grid(E.e3(), resolution=4)
    u = g.nodes[:, 0] / g.nodes.sum(axis=1)
    assert np.allclose(u, [0, 1 / 3, 2 / 3, 1])
    assert np.allclose(g.nodes.sum(axis=1), 1.0)


@pytest.mark.parametrize("res", [2, 5, 64, 2048])
def test_weights_sum_to_one(res):
    g = build_grid(2, resolution=res)
    assert abs(g.weights.sum() - 1.0) <= 1e-12 and np.all(g.weights > 0)


def test_three_dim_nodes():
    g = build_grid(3, resolution=1024)
    assert g.size == 1024
    assert np.all(g.nodes >= 0) and np.allclose(g.nodes.sum(axis=1), 1.0)
    assert np.unique(np.round(g.nodes, 12), axis=0).shape[0] == 1024
    assert abs(g.weights.sum() - 1.0) <= 1e-12


def test_deterministic():
    assert np.array_equal(build_grid(3, resolution=64).nodes, build_grid(3, resolution=64).nodes)


def test_too_small():
    with pytest.raises(ValueError):
        build_grid(3, resolution=4)
    with pytest.raises(ValueError):
        build_grid(2, resolution=1)


def test_two_norm_arc_nodes_unit():
    g = build_grid(2, E.NONNEGATIVE, "two", 33)
    assert np.allclose(np.linalg.norm(g.nodes, axis=1), 1.0)


def test_arc_interpolation_linear_in_u():
    g = build_grid(2, resolution=11)
    f = g.nodes[:, 0]  # u itself on the 1-norm arc
    y = np.array([[0.37, 0.63], [0.0, 1.0], [1.0, 0.0]])
    assert np.allclose(g.interpolate(f, y), y[:, 0])


def test_projective_arc_periodic():
    g = build_grid(2, E.INVERTIBLE, resolution=180)
    f = np.cos(2 * np.arctan2(g.nodes[:, 1], g.nodes[:, 0]))
    th = np.linspace(0, 2 * math.pi, 50)
    y = np.stack([np.cos(th), np.sin(th)], axis=1)
    assert np.allclose(g.interpolate(f, y), np.cos(2 * th), atol=1e-3)


def test_scatter_nearest_node():
    g = build_grid(3, resolution=256)
    assert np.array_equal(g.nearest(g.nodes), np.arange(256))
