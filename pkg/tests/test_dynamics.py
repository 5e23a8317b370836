import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lgk.dynamics import (SimParams, TestFunction, _Tables, dominating_rate, empirical_field,
                          exchange_rate, collision_rate, run_events, simulate, step)
from lgk.errors import ConfigError, NegativeRate, NotNeighbors
from lgk.exactgen import build_generators
from lgk.kernels import BACKENDS, default_backend, get_kernel
from lgk.lattice import Configuration, Torus, exact_totals
from lgk.measure import PotentialField, sample
from lgk.rng import stream
from lgk.velocity import model_one, sqrt2_set


def _random_cfg(vs, N, seed, d=None):
    t = Torus(d or vs.dim, N)
    return sample(PotentialField.constant(t, np.zeros(vs.dim + 1)), vs, stream(seed, 0, "initial"))


def test_dominating_rate_formula():
    vs = sqrt2_set()
    N, a = 8, 0.5
    want = N ** 2 * (N * 2 * 4 * (1 + math.sqrt(2) * N ** (a - 1)) + N * 8)
    assert dominating_rate(SimParams(N, a, vs)) == pytest.approx(want, rel=1e-14)


def test_params_validation():
    vs = sqrt2_set()
    with pytest.raises(ConfigError):
        SimParams(8, 1.0, vs)
    with pytest.raises(NegativeRate):
        SimParams(2, 0.9, vs)  # sqrt2 > 2^0.1
    with pytest.raises(ConfigError):
        SimParams(8, 0.5, vs, T=1.0, snapshot_times=[0.5, 0.2])


@pytest.mark.skipif("cython" not in BACKENDS, reason="extension not built")
@pytest.mark.parametrize("vs_name", ["pm1", "sqrt2", "model1_d2"])
def test_backends_bit_identical(vs_name):
    vs = {"pm1": model_one(1), "sqrt2": sqrt2_set(), "model1_d2": model_one(2)}[vs_name]
    N = 16 if vs.dim == 1 else 6
    params = SimParams(N, 0.4, vs)
    c1 = _random_cfg(vs, N, 5)
    c2 = c1.copy()
    k1 = run_events(params, c1, 50_000, stream(9), backend="python")
    k2 = run_events(params, c2, 50_000, stream(9), backend="cython")
    np.testing.assert_array_equal(c1.occupancy, c2.occupancy)
    np.testing.assert_array_equal(k1, k2)
    assert k1[1] > 0


def test_backend_selection(monkeypatch):
    monkeypatch.setenv("LGK_BACKEND", "python")
    assert default_backend() == "python"
    assert get_kernel() is BACKENDS["python"]
    monkeypatch.setenv("LGK_BACKEND", "fortran")
    with pytest.raises(ValueError):
        default_backend()


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 0.8))
def test_events_conserve_totals(seed, a):
    vs = sqrt2_set()
    N = 12
    cfg = _random_cfg(vs, N, seed)
    start = exact_totals(cfg.occupancy, vs)
    run_events(SimParams(N, a, vs), cfg, 2000, stream(seed))
    assert exact_totals(cfg.occupancy, vs) == start


def test_step_matches_kernel_and_conserves():
    vs = sqrt2_set()
    params = SimParams(6, 0.5, vs)
    cfg = _random_cfg(vs, 6, 2)
    cfg.check = True
    tables = _Tables(params, cfg.torus)
    rng = stream(4)
    start = cfg.totals_exact
    seen = set()
    for _ in range(3000):
        tau, ev = step(params, cfg, rng, tables)
        assert tau > 0
        if ev is not None:
            seen.add(ev[0])
    assert seen == {"exchange", "collision"}
    assert exact_totals(cfg.occupancy, vs) == start


def _state_of(occ):
    n_species, n = occ.shape
    return sum(int(occ[v, x]) << (v * n + x) for v in range(n_species) for x in range(n))


def test_rates_agree_with_generator_entries():
    vs = sqrt2_set()
    N, a = 3, 0.5
    gen = build_generators(N, 1, a, vs)
    params = SimParams(N, a, vs)
    t = Torus(1, N)
    rng = stream(8, 0, "test")
    for _ in range(20):
        occ = (rng.random((4, N)) < 0.5).astype(np.uint8)
        cfg = Configuration(t, vs, occ)
        s = _state_of(occ)
        for v in range(4):
            for x in range(N):
                for y in t.neighbors[x]:
                    r = exchange_rate(params, cfg, x, int(y), v)
                    if r > 0:
                        new = occ.copy()
                        new[v, x], new[v, y] = 0, 1
                        assert r == pytest.approx(N ** 2 * gen.L_ex[s, _state_of(new)], rel=1e-12)
        # the ordered quadruples of one unordered swap share a target state
        by_target = {}
        for q in vs.collision_set:
            for x in range(N):
                r = collision_rate(params, cfg, x, q)
                if r > 0:
                    new = occ.copy()
                    new[list(q[:2]), x] = 0
                    new[list(q[2:]), x] = 1
                    key = _state_of(new)
                    by_target[key] = by_target.get(key, 0.0) + r
        for key, r in by_target.items():
            assert r == N ** 2 * gen.L_c[s, key]
        assert gen.L_c[s].nnz == len(by_target) + (1 if by_target else 0)
    with pytest.raises(NotNeighbors):
        exchange_rate(params, Configuration(Torus(1, 5), vs), 0, 2, 0)


def test_embedded_chain_frequencies():
    # Accepted-event frequencies from one state match rate / R_dom.
    vs = model_one(1)
    N, a = 4, 0.5
    params = SimParams(N, a, vs)
    occ = np.array([[1, 0, 1, 0], [0, 1, 1, 0]], dtype=np.uint8)
    cfg0 = Configuration(Torus(1, N), vs, occ)
    tables = _Tables(params, cfg0.torus)
    rng = stream(12)
    trials = 40_000
    counts = {}
    for _ in range(trials):
        cfg = cfg0.copy()
        _, ev = step(params, cfg, rng, tables)
        if ev is not None:
            counts[ev[1:]] = counts.get(ev[1:], 0) + 1
    for (x, y, v), c in counts.items():
        p = exchange_rate(params, cfg0, x, y, v) / tables.rate
        assert abs(c - trials * p) < 5 * math.sqrt(trials * p * (1 - p))
    assert len(counts) == 4 + 2  # +1 particles move either way, -1 particles only outward


def test_simulate_reproducible_and_snapshots():
    vs = model_one(1)
    params = SimParams(16, 0.5, vs, T=0.02, snapshot_times=[0.0, 0.01, 0.02])
    init = _random_cfg(vs, 16, 1)
    t1 = simulate(params, init, rng=stream(3))
    t2 = simulate(params, init, rng=stream(3))
    assert len(t1.snapshots) == 3
    np.testing.assert_array_equal(t1.snapshots[0], init.occupancy)
    for s1, s2 in zip(t1.snapshots, t2.snapshots):
        np.testing.assert_array_equal(s1, s2)
    assert t1.counters == t2.counters
    assert t1.counters["collision_attempts"] == 0


def test_empirical_field_constant_functional():
    vs = model_one(1)
    N, a = 10, 0.3
    cfg = _random_cfg(vs, N, 6)
    F = TestFunction((0,), [1.0, 0.0], [0.0, 0.0])
    total = int(cfg.occupancy.sum())
    want = N ** (a - 1) * (total - N * vs.p_star[0])
    assert empirical_field(cfg, vs, a, F) == pytest.approx(want, rel=1e-12)
