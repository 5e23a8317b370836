import math

import numpy as np
import pytest

from lgk.errors import ConfigError
from lgk.lattice import Configuration, Torus
from lgk.measure import (PerturbationField, PotentialField, lambda_field_from_phi, log_weight,
                         product_relative_entropy, sample)
from lgk.rng import stream
from lgk.velocity import big_p, model_one, sqrt2_set, theta


def test_log_weight_matches_bernoulli_product():
    vs = sqrt2_set()
    t = Torus(1, 5)
    rng = stream(7, 0, "test")
    field = PotentialField(t, rng.normal(size=(5, 2)))
    cfg = Configuration(t, vs, (rng.random((4, 5)) < 0.5).astype(np.uint8))
    dens = field.densities(vs)
    direct = sum(math.log(dens[v, x] if cfg.occupancy[v, x] else 1 - dens[v, x])
                 for v in range(4) for x in range(5))
    assert log_weight(cfg, field, vs) == pytest.approx(direct, rel=1e-12)


def test_relative_entropy():
    vs = model_one(1)
    t = Torus(1, 3)
    f1 = PotentialField(t, [[0.2, 0.1], [0.0, -0.3], [1.0, 0.5]])
    f2 = PotentialField.constant(t, [0.0, 0.0])
    assert product_relative_entropy(f1, f1, vs) == 0.0
    p, q = theta(vs.lifted @ f1.values.T), theta(vs.lifted @ f2.values.T)
    kl = np.sum(p * np.log(p / q) + (1 - p) * np.log((1 - p) / (1 - q)))
    assert product_relative_entropy(f1, f2, vs) == pytest.approx(kl, rel=1e-12)


def test_sample_densities():
    vs = model_one(1)
    t = Torus(1, 20000)
    lam = [0.3, -0.4]
    cfg = sample(PotentialField.constant(t, lam), vs, stream(11, 0, "initial"))
    target = theta(vs.lifted @ np.array(lam))
    se = np.sqrt(target * (1 - target) / t.n_sites)
    assert np.all(np.abs(cfg.occupancy.mean(axis=1) - target) < 5 * se)


def test_lambda_field_from_phi_inverts_p():
    vs = sqrt2_set()
    phi = PerturbationField.from_dict([{"k": [1], "re": [0.5, 0.2]}], a=0.3)
    N = 16
    field = lambda_field_from_phi(vs, phi, N)
    pos = Torus(1, N).positions()
    want = vs.p_star + N ** -0.3 * phi(pos)
    got = np.array([big_p(vs, lam) for lam in field.values])
    np.testing.assert_allclose(got, want, atol=1e-11)


def test_perturbation_validation():
    with pytest.raises(ConfigError):
        PerturbationField([], a=0.5)
    with pytest.raises(ConfigError):
        PerturbationField.from_dict([{"k": [1], "re": [1, 0]}], a=1.0)
    pf = PerturbationField.from_dict([{"k": [1], "re": [1, 0]}], a=0.1)
    assert pf.check_theorem_bound(model_one(1))  # 0.1 < 1/7
    pf.a = 0.2
    assert not pf.check_theorem_bound(model_one(1))


def test_potential_field_shape():
    with pytest.raises(ConfigError):
        PotentialField(Torus(1, 3), np.zeros((2, 2)))
    with pytest.raises(ConfigError):
        PotentialField(Torus(1, 3), [np.nan, 0.0])
