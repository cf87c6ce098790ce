import re

import numpy as np
import pytest

from diffterrain.core import RigidState, Trajectory
from diffterrain.plotting import GT_COLOR, PRED_COLOR, heightmap_pgm, loss_svg, read_pgm, xy_svg, z_svg
from diffterrain.terrain import GridSpec, HeightMap


def polylines(svg):
    return re.findall(r'<polyline[^>]*stroke="([^"]+)"[^>]*points="([^"]*)"', svg)


def line_traj():
    return Trajectory((0.0, 0.1, 0.2), tuple(RigidState.at_rest((k, 2 * k, -k)) for k in range(3)))


def test_loss_plot_has_one_polyline_with_each_row():
    lines = polylines(loss_svg([3.0, 2.0, 1.5]))
    assert len(lines) == 1 and len(lines[0][1].split()) == 3


def test_identical_overlay_coincides():
    tr = line_traj()
    lines = polylines(xy_svg(tr, tr))
    assert len(lines) == 2
    (c1, p1), (c2, p2) = lines
    assert {c1, c2} == {GT_COLOR, PRED_COLOR} and p1 == p2


def test_deterministic():
    tr = line_traj()
    assert z_svg(tr, tr) == z_svg(tr, tr)
    assert loss_svg([1, 0.5]) == loss_svg([1, 0.5])


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        loss_svg([1.0, float("nan")])


def test_pgm_scaling_and_orientation():
    g = GridSpec(3, 2, 1.0, (0.0, 0.0))
    h = np.array([[-1.0, 0.0], [0.5, 0.2], [0.0, 3.0]])
    img = read_pgm(heightmap_pgm(HeightMap(g, h, np.ones((3, 2)), np.ones((3, 2)))))
    assert img.shape == (2, 3)
    assert img[1, 0] == 0        # cell (0, 0): bottom-left, the minimum
    assert img[0, 2] == 255      # cell (2, 1): top-right, the maximum
    assert img[1, 1] == round(1.5 / 4 * 255)


def test_pgm_constant_map():
    img = read_pgm(heightmap_pgm(HeightMap.flat(GridSpec(2, 2, 1.0, (0, 0)), 4.0)))
    assert np.all(img == 0)
