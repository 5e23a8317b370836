import numpy as np
import pytest

from lgk.errors import StateSpaceTooLarge
from lgk.exactgen import (adjoint_residuals, build_generators, ergodic_components, exact_report,
                          invariant_measure, lnc_annihilation, stationarity_residual)
from lgk.lattice import exact_totals
from lgk.velocity import model_one, sqrt2_set


@pytest.fixture(scope="module")
def pm1():
    return build_generators(3, 1, 0.5, model_one(1))


@pytest.fixture(scope="module")
def sq2():
    return build_generators(2, 1, 0.5, sqrt2_set())


def test_shapes_and_row_sums(pm1):
    assert pm1.n_states == 64
    for name in ("L_ex", "L_ex_sym", "L_ex_anti", "L_c"):
        m = getattr(pm1, name)
        np.testing.assert_allclose(np.asarray(m.sum(axis=1)).ravel(), 0.0, atol=1e-14)
    np.testing.assert_allclose((pm1.L_ex - pm1.L_ex_sym - pm1.L_ex_anti).toarray(), 0.0, atol=1e-15)
    assert pm1.L_c.nnz == 0


def test_single_jump_entries(pm1):
    # one +1 particle at site 0 of a 3-ring, a = 0.5: rates 1 +/- 3^-0.5
    s = 0b000001
    right, left = 0b000010, 0b000100
    drift = 3 ** -0.5
    assert pm1.L_ex[s, right] == pytest.approx(1 + drift)
    assert pm1.L_ex[s, left] == pytest.approx(1 - drift)
    assert pm1.L_ex[s, s] == pytest.approx(-2.0)
    assert pm1.full()[s, right] == pytest.approx(9 * (1 + drift))


def test_two_site_ring_adds_both_directions():
    gen = build_generators(2, 1, 0.5, model_one(1))
    # both directions reach the other site; drifts cancel
    assert gen.L_ex[0b01, 0b10] == pytest.approx(2.0)


def test_invariant_measure_normalised_and_stationary(sq2):
    mu = invariant_measure(sq2, [0.3, -0.7])
    assert mu.sum() == pytest.approx(1.0, abs=1e-13)
    assert stationarity_residual(sq2, [0.3, -0.7]) < 1e-12


def test_residuals_detect_broken_generator(pm1):
    lam = [0.4, 0.9]
    good = adjoint_residuals(pm1, lam)
    assert max(good.values()) < 1e-12
    bad = pm1.dense("L_ex_sym").copy()
    bad[1, 2] += 0.05
    bad[1, 1] -= 0.05
    assert adjoint_residuals(pm1, lam, mats={"L_ex_sym": bad})["sym_ex"] > 1e-4
    # a non-invariant measure is caught too
    mu = invariant_measure(pm1, lam)
    mu[3] *= 1.1
    assert stationarity_residual(pm1, lam, mu) > 1e-4


def test_collisions_move_non_conserved_functions(sq2):
    assert lnc_annihilation(sq2, lambda f: f[:, 0].sum() ** 2) < 1e-13
    # occupancy of species +1 alone is not a function of the conserved field
    from lgk.exactgen import apply_to_function
    f = np.array([sq2.occupancy(s)[0].sum() for s in range(sq2.n_states)], dtype=float)
    assert np.max(np.abs(apply_to_function(sq2, "L_c", f))) > 0.5


def test_components_count_conserved_classes(pm1, sq2):
    # +-1 without collisions: species counts (0..3)^2 are the invariants
    assert ergodic_components(pm1) == 16
    classes = {exact_totals(sq2.occupancy(s), sq2.vs).key() for s in range(sq2.n_states)}
    assert ergodic_components(sq2) == len(classes) == 65


def test_size_guards():
    with pytest.raises(StateSpaceTooLarge):
        build_generators(6, 1, 0.5, sqrt2_set())
    gen = build_generators(4, 1, 0.5, sqrt2_set())  # 16 bits: sparse only
    with pytest.raises(StateSpaceTooLarge):
        gen.dense("L_c")


def test_exact_report(pm1):
    rep = exact_report(pm1, [[0.1, 0.2], [-0.5, 0.5]])
    assert rep["pass"]
    assert rep["max_row_sum"] < 1e-13
