import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lgk.errors import BoxTooLarge, CollisionNotEnabled, ConfigError, NotNeighbors
from lgk.lattice import (Box, Configuration, Torus, apply_collision, apply_swap, block_average,
                         collision_indicator, exact_totals, reverse_collision)
from lgk.rng import stream
from lgk.velocity import model_one, sqrt2_set


def test_torus_layout():
    t = Torus(2, 4)
    assert t.n_sites == 16
    assert t.index([1, 2]) == 6  # row-major, last coordinate fastest
    np.testing.assert_array_equal(t.coords(6), [1, 2])
    assert t.index([-1, 4]) == t.index([3, 0])
    # neighbor columns: +e1, -e1, +e2, -e2
    np.testing.assert_array_equal(t.neighbors[0], [4, 12, 1, 3])
    np.testing.assert_array_equal(t.displacement(0, 12), [-1, 0])
    assert t.displacement(0, 5) is None
    np.testing.assert_allclose(t.positions()[6], [0.25, 0.5])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 3), st.integers(2, 6), st.data())
def test_index_coords_round_trip(d, n, data):
    t = Torus(d, n)
    x = data.draw(st.integers(0, t.n_sites - 1))
    assert t.index(t.coords(x)) == x
    for k in range(2 * d):
        y = int(t.neighbors[x, k])
        z = t.displacement(x, y)
        if n > 2:
            assert np.abs(z).sum() == 1
            assert t.shift(x, z) == y


def test_box_around_wraps():
    t = Torus(1, 7)
    assert Box.around(t, 0, 2).members.tolist() == [5, 6, 0, 1, 2]
    with pytest.raises(BoxTooLarge):
        Box.around(t, 0, 4)


def test_configuration_validation():
    vs = model_one(1)
    t = Torus(1, 4)
    with pytest.raises(ConfigError):
        Configuration(t, vs, np.zeros((3, 4)))
    with pytest.raises(ConfigError):
        Configuration(t, vs, np.full((2, 4), 2))


def test_snapshot_round_trip():
    vs = sqrt2_set()
    t = Torus(1, 9)
    occ = (stream(3, 0, "test").random((4, 9)) < 0.5).astype(np.uint8)
    cfg = Configuration(t, vs, occ)
    blob = cfg.to_bytes()
    assert blob[:4] == b"LGKC"
    back = Configuration.from_bytes(blob, vs)
    assert back == cfg
    with pytest.raises(ConfigError):
        Configuration.from_bytes(blob, model_one(1))


def test_swap_and_collision_conserve():
    vs = sqrt2_set()
    t = Torus(1, 5)
    occ = np.zeros((4, 5), dtype=np.uint8)
    occ[0, 2] = occ[1, 2] = 1  # +1 and -1 at site 2
    cfg = Configuration(t, vs, occ, check=True)
    q = (0, 1, 2, 3)
    assert collision_indicator(cfg, 2, q) == 1
    apply_collision(cfg, 2, q)
    assert cfg.occupancy[:, 2].tolist() == [0, 0, 1, 1]
    apply_collision(cfg, 2, reverse_collision(q))
    assert cfg.occupancy[:, 2].tolist() == [1, 1, 0, 0]
    with pytest.raises(CollisionNotEnabled):
        apply_collision(cfg, 1, q)
    apply_swap(cfg, 2, 3, 0)
    assert cfg.occupancy[0].tolist() == [0, 0, 0, 1, 0]
    with pytest.raises(NotNeighbors):
        apply_swap(cfg, 0, 2, 0)
    assert exact_totals(cfg.occupancy, vs) == cfg.totals_exact


def test_block_average():
    vs = model_one(1)
    t = Torus(1, 6)
    occ = np.array([[1, 1, 0, 0, 0, 0], [0, 0, 0, 0, 0, 1]], dtype=np.uint8)
    cfg = Configuration(t, vs, occ)
    # box {5, 0, 1}: three particles, momentum +1 +1 -1
    np.testing.assert_allclose(block_average(cfg, vs, 0, 1), [1.0, 1 / 3])
