"""Product Bernoulli measures: parameter fields, sampling, log-weights, entropy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NewtonDiverged
from .lattice import Configuration, Torus
from .velocity import VelocitySet, lambda_of_p, theta


@dataclass
class PotentialField:
    """Chemical potential lambda(x), one (d+1)-vector per torus site."""

    torus: Torus
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = np.tile(vals, (self.torus.n_sites, 1))
        if vals.shape[0] != self.torus.n_sites:
            raise ConfigError("potential field needs one value per site")
        if not np.all(np.isfinite(vals)):
            raise ConfigError("potential field values must be finite")
        self.values = vals

    @classmethod
    def constant(cls, torus: Torus, lam) -> "PotentialField":
        return cls(torus, np.asarray(lam, dtype=float))

    def densities(self, vs: VelocitySet) -> np.ndarray:
        """theta(lambda(x) . v) as a (|V|, N^d) array."""
        return theta(vs.lifted @ self.values.T)


@dataclass
class FourierMode:
    k: tuple[int, ...]
    re: np.ndarray
    im: np.ndarray

    def __post_init__(self):
        self.k = tuple(int(c) for c in self.k)
        self.re = np.asarray(self.re, dtype=float)
        self.im = np.asarray(self.im, dtype=float)


@dataclass
class PerturbationField:
    """phi(u) = sum over modes of re*cos(2 pi k.u) + im*sin(2 pi k.u)."""

    modes: list[FourierMode]
    a: float
    ncomp: int | None = None

    def __post_init__(self):
        if not 0.0 < self.a < 1.0:
            raise ConfigError(f"scaling exponent a={self.a} must lie in (0, 1)")
        if self.ncomp is None:
            if not self.modes:
                raise ConfigError("empty perturbation needs an explicit component count")
            self.ncomp = len(self.modes[0].re)

    @classmethod
    def from_dict(cls, modes: list[dict], a: float, ncomp: int | None = None):
        out = []
        for m in modes:
            if "re" not in m and "im" not in m:
                raise ConfigError("Fourier mode needs 're' or 'im' coefficients")
            n = ncomp or len(m.get("re", m.get("im")))
            out.append(FourierMode(m["k"], m.get("re", [0.0] * n), m.get("im", [0.0] * n)))
        return cls(out, a, ncomp)

    def __call__(self, u) -> np.ndarray:
        u = np.atleast_2d(np.asarray(u, dtype=float))
        out = np.zeros((u.shape[0], self.ncomp))
        for m in self.modes:
            arg = 2 * np.pi * (u @ np.asarray(m.k, dtype=float))
            out += np.outer(np.cos(arg), m.re) + np.outer(np.sin(arg), m.im)
        return out

    def check_theorem_bound(self, vs: VelocitySet) -> bool:
        """Is a < d/(kappa + 2d) for the set's spectral-gap exponent?"""
        kappa = vs.kappa()
        return kappa is not None and self.a < vs.dim / (kappa + 2 * vs.dim)


def lambda_field_from_phi(vs: VelocitySet, phi: PerturbationField, N: int,
                          phi_values: np.ndarray | None = None) -> PotentialField:
    """lambda(x) = Lambda(p* + N^-a phi(x/N)) site by site.

    ``phi_values`` overrides the evaluation of ``phi`` at the lattice points,
    which lets a numerical PDE solution be turned into a measure.
    """
    torus = Torus(vs.dim, N)
    if phi_values is None:
        phi_values = phi(torus.positions())
    p = vs.p_star + N ** (-phi.a) * np.asarray(phi_values)
    lam = np.empty_like(p)
    cache: dict[bytes, np.ndarray] = {}
    for x in range(torus.n_sites):
        key = p[x].tobytes()
        if key not in cache:
            try:
                cache[key] = lambda_of_p(vs, p[x])
            except NewtonDiverged as exc:
                raise NewtonDiverged(f"site {x}: {exc}", p=p[x], site=x) from exc
        lam[x] = cache[key]
    return PotentialField(torus, lam)


def sample(field: PotentialField, vs: VelocitySet, rng: np.random.Generator) -> Configuration:
    """Independent Bernoulli(theta(lambda(x).v)) draw for every (x, v)."""
    dens = field.densities(vs)
    occ = (rng.random(dens.shape) < dens).astype(np.uint8)
    return Configuration(field.torus, vs, occ)


def _log_partition(vs: VelocitySet, field: PotentialField) -> np.ndarray:
    return np.logaddexp(0.0, field.values @ vs.lifted.T).sum(axis=1)


def log_weight(cfg: Configuration, field: PotentialField, vs: VelocitySet) -> float:
    """log mu_lambda(eta) = sum_x [lambda_x . I(eta_x) - sum_v log(1 + e^{lambda_x . v})]."""
    local = cfg.local_fields()
    return float(np.sum(np.einsum("xk,xk->x", field.values, local) - _log_partition(vs, field)))


def product_relative_entropy(field1: PotentialField, field2: PotentialField,
                             vs: VelocitySet) -> float:
    """H(mu_1 | mu_2) summed over independent Bernoulli coordinates."""
    a1 = vs.lifted @ field1.values.T
    a2 = vs.lifted @ field2.values.T
    t1 = theta(a1)
    # log(t1/t2) and log((1-t1)/(1-t2)) in logit form, stable for large |alpha|
    lp = -np.logaddexp(0.0, -a1) + np.logaddexp(0.0, -a2)
    lq = -np.logaddexp(0.0, a1) + np.logaddexp(0.0, a2)
    h = t1 * lp + (1.0 - t1) * lq
    return float(max(np.sum(h), 0.0))
