import numpy as np
import pytest

from greenlearn.grid import Grid, make_tensor_grid, make_uniform_grid, refine_grid, split_axes


def test_closed_grid_nodes_and_weights():
    g = make_uniform_grid((0.0, 1.0), 5)
    np.testing.assert_array_equal(g.points[:, 0], np.linspace(0, 1, 5))
    np.testing.assert_allclose(g.weights, 0.2)
    assert g.dims == 1 and g.size == 5 and g.is_tensor


def test_interior_and_periodic_nodes():
    g = make_uniform_grid((0.0, 1.0), 3, "interior")
    np.testing.assert_allclose(g.points[:, 0], [0.25, 0.5, 0.75])
    p = make_uniform_grid((0.0, 4.0), 4, "periodic")
    np.testing.assert_allclose(p.points[:, 0], [0, 1, 2, 3])
    np.testing.assert_allclose(p.weights, 1.0)


@pytest.mark.parametrize("bounds,m,kind", [((1.0, 0.0), 5, "closed"), ((0.0, 1.0), 1, "closed"),
                                           ((0.0, 1.0), 4, "chebyshev")])
def test_invalid_grids(bounds, m, kind):
    with pytest.raises(ValueError):
        make_uniform_grid(bounds, m, kind)


def test_weights_integrate_constants_to_volume():
    g = make_tensor_grid([make_uniform_grid((0, 2), 7), make_uniform_grid((-1, 1), 5)])
    assert g.integrate(np.ones(g.size)) == pytest.approx(g.volume)
    assert g.shape == (7, 5)


def test_tensor_grid_is_row_major():
    gx = make_uniform_grid((0, 1), 3)
    gt = make_uniform_grid((0, 2), 2)
    g = make_tensor_grid([gx, gt])
    np.testing.assert_allclose(g.points[:2], [[0, 0], [0, 2]])
    np.testing.assert_allclose(g.points[2], [0.5, 0])
    parts = split_axes(g)
    assert parts[0].same_as(gx) and parts[1].same_as(gt)


def test_refine_contains_coarse_nodes():
    g = make_tensor_grid([make_uniform_grid((0, 1), 6), make_uniform_grid((0, 1), 4, "interior")])
    fine, idx = refine_grid(g, 4)
    for c, f, i in zip(g.axes, fine.axes, idx):
        np.testing.assert_array_equal(f[i], c)
        assert f.size > 3 * c.size


def test_dict_round_trip_is_exact():
    g = make_tensor_grid([make_uniform_grid((0, 1), 6), make_uniform_grid((-3, 3), 4)])
    h = Grid.from_dict(g.to_dict())
    assert h.same_as(g)
    np.testing.assert_array_equal(h.axes[1], g.axes[1])


def test_bad_weights_rejected():
    with pytest.raises(ValueError):
        Grid(points=np.zeros((3, 1)), weights=[1, -1, 1], bounds=((0, 1),))
    with pytest.raises(ValueError):
        Grid(points=np.zeros((3, 1)), weights=[1, 1], bounds=((0, 1),))
