"""Velocity sets in exact rational-symbol arithmetic and their derived constants.

A velocity component is a rational combination of user-declared symbols
(e.g. ``1`` and ``sqrt2``) that the user asserts to be linearly independent
over the rationals. This makes momentum conservation and the integer
independence test exact.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy.special import expit

from .errors import (
    DegeneratePairForm,
    DuplicateVelocity,
    EmptySet,
    GramNotInvertible,
    MissingPairForm,
    NewtonDiverged,
)

NEWTON_TOL = 1e-12
NEWTON_MAXITER = 50
SPAN_PIVOT_TOL = 1e-10


@dataclass(frozen=True)
class SymbolBasis:
    """Named real symbols; the first one is the rational unit."""

    names: tuple[str, ...] = ("1",)
    values: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if len(self.names) != len(self.values) or not self.names:
            raise ValueError("basis needs one value per symbol name")
        if self.values[0] != 1.0:
            raise ValueError("first basis symbol must be the rational unit 1")
        if len(set(self.names)) != len(self.names):
            raise ValueError("basis symbol names must be unique")
        if not all(np.isfinite(self.values)):
            raise ValueError("basis symbol values must be finite")

    def __len__(self):
        return len(self.names)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


@dataclass(frozen=True)
class ExactVector:
    """Vector whose component j equals ``sum_s coeffs[j][s] * symbol_s``."""

    coeffs: tuple[tuple[Fraction, ...], ...]

    @classmethod
    def from_rows(cls, rows) -> "ExactVector":
        return cls(tuple(tuple(Fraction(c) for c in row) for row in rows))

    @classmethod
    def zero(cls, dim: int, nsym: int) -> "ExactVector":
        return cls(tuple((Fraction(0),) * nsym for _ in range(dim)))

    @property
    def dim(self) -> int:
        return len(self.coeffs)

    def __add__(self, other):
        return ExactVector(tuple(tuple(a + b for a, b in zip(r, s))
                                 for r, s in zip(self.coeffs, other.coeffs)))

    def __sub__(self, other):
        return self + (-other)

    def __neg__(self):
        return ExactVector(tuple(tuple(-a for a in r) for r in self.coeffs))

    def scale(self, c) -> "ExactVector":
        c = Fraction(c)
        return ExactVector(tuple(tuple(c * a for a in r) for r in self.coeffs))

    def is_zero(self) -> bool:
        return all(a == 0 for r in self.coeffs for a in r)

    def evaluate(self, basis: SymbolBasis) -> np.ndarray:
        vals = basis.values
        return np.array([float(sum(a * v for a, v in zip(r, vals))) if any(r) else 0.0
                         for r in self.coeffs])

    def lifted(self) -> "ExactVector":
        """The mass-momentum lift (1, v)."""
        nsym = len(self.coeffs[0]) if self.coeffs else 1
        unit = (Fraction(1),) + (Fraction(0),) * (nsym - 1)
        return ExactVector((unit,) + self.coeffs)

    def key(self) -> tuple:
        """Canonical hashable key (numerator, denominator pairs)."""
        return tuple((a.numerator, a.denominator) for r in self.coeffs for a in r)

    def __str__(self):
        return "(" + ", ".join(_fmt_component(r) for r in self.coeffs) + ")"


def _fmt_component(row, names=None) -> str:
    terms = []
    for s, a in enumerate(row):
        if a == 0:
            continue
        sym = "" if s == 0 else f"*s{s}" if names is None else f"*{names[s]}"
        terms.append(f"{a}{sym}")
    return "+".join(terms) if terms else "0"


def theta(alpha):
    """Logistic density parameter e^a / (e^a + 1)."""
    return expit(alpha)


def theta_prime(alpha):
    t = expit(alpha)
    return t * (1.0 - t)


@dataclass
class VelocitySet:
    basis: SymbolBasis
    dim: int
    velocities: list[ExactVector]
    pair_form: tuple[ExactVector, list[ExactVector]] | None = None
    values: np.ndarray = field(init=False, repr=False)
    lifted: np.ndarray = field(init=False, repr=False)
    collision_set: list[tuple[int, int, int, int]] = field(init=False, repr=False)
    gram: np.ndarray = field(init=False, repr=False)
    a_matrix: np.ndarray | None = field(init=False, repr=False)
    p_star: np.ndarray = field(init=False, repr=False)
    p_star_exact: ExactVector = field(init=False, repr=False)
    coupling: np.ndarray | None = field(init=False, repr=False)

    def __post_init__(self):
        if not self.velocities:
            raise EmptySet("velocity set is empty")
        keys = [v.key() for v in self.velocities]
        if len(set(keys)) != len(keys):
            raise DuplicateVelocity("velocities must be pairwise distinct")
        for v in self.velocities:
            if v.dim != self.dim or any(len(r) != len(self.basis) for r in v.coeffs):
                raise ValueError("velocity shape does not match dimension/basis")
        self.values = np.array([v.evaluate(self.basis) for v in self.velocities])
        if not np.all(np.isfinite(self.values)):
            raise ValueError("velocity components must be finite")
        self.lifted = np.hstack([np.ones((len(self), 1)), self.values])
        self.collision_set = _effective_collisions(self.velocities)
        self.gram = self.lifted.T @ self.lifted
        total = ExactVector.zero(self.dim + 1, len(self.basis))
        for v in self.velocities:
            total = total + v.lifted()
        self.p_star_exact = total.scale(Fraction(1, 2))
        self.p_star = self.p_star_exact.evaluate(self.basis)
        rep = assumption_av_report(self)
        if rep["invertible"]:
            self.a_matrix = 2.0 * np.linalg.inv(self.gram)
            self.a_matrix = 0.5 * (self.a_matrix + self.a_matrix.T)
            self.coupling = _coupling(self.lifted, self.values, self.a_matrix)
        else:
            self.a_matrix = None
            self.coupling = None

    def __len__(self):
        return len(self.velocities)

    @property
    def n_pairs(self) -> int | None:
        return None if self.pair_form is None else len(self.pair_form[1])

    @property
    def v_max(self) -> float:
        """Largest |v_j| over all velocities and coordinates."""
        return float(np.max(np.abs(self.values)))

    def kappa(self) -> int | None:
        """Spectral-gap exponent (2n+1)d+2 available for pair-form sets."""
        n = self.n_pairs
        return None if n is None else (2 * n + 1) * self.dim + 2

    def collision_array(self) -> np.ndarray:
        return np.array(self.collision_set, dtype=np.int64).reshape(-1, 4)

    def index_of(self, v: ExactVector) -> int:
        k = v.key()
        for i, w in enumerate(self.velocities):
            if w.key() == k:
                return i
        raise KeyError(str(v))

    def describe(self) -> list[str]:
        return [_describe(v, self.basis) for v in self.velocities]


def _describe(v: ExactVector, basis: SymbolBasis) -> str:
    return "(" + ", ".join(_fmt_component(r, basis.names) for r in v.coeffs) + ")"


def _effective_collisions(vels: Sequence[ExactVector]) -> list[tuple[int, int, int, int]]:
    sums: dict[tuple, list[tuple[int, int]]] = {}
    for a, b in itertools.permutations(range(len(vels)), 2):
        sums.setdefault((vels[a] + vels[b]).key(), []).append((a, b))
    out = []
    for a, b in itertools.permutations(range(len(vels)), 2):
        for c, e in sums[(vels[a] + vels[b]).key()]:
            if {a, b} & {c, e}:
                continue
            out.append((a, b, c, e))
    out.sort()
    return out


def _coupling(lifted, values, a_matrix) -> np.ndarray:
    av = lifted @ a_matrix.T  # rows: A v_lifted
    return np.einsum("vk,vi,vj,vl->kijl", lifted, av, av, values)


def build_velocity_set(basis: SymbolBasis | None = None, *, velocities=None, v_star=None,
                       generators=None, dim: int | None = None) -> VelocitySet:
    """Build a velocity set from an explicit list or from the pair form v* +/- v_l.

    Vectors may be given as :class:`ExactVector` or as nested rows of
    rationals, one row per component with one coefficient per basis symbol.
    A plain number per component is read as a multiple of the unit symbol.
    """
    basis = basis or SymbolBasis()
    if velocities is not None:
        vels = [_as_exact(v, basis) for v in velocities]
        if not vels:
            raise EmptySet("velocity set is empty")
        return VelocitySet(basis, vels[0].dim if dim is None else dim, vels)
    if generators is None or len(generators) == 0:
        raise EmptySet("need explicit velocities or at least one generator")
    gens = [_as_exact(g, basis) for g in generators]
    d = gens[0].dim
    vstar = ExactVector.zero(d, len(basis)) if v_star is None else _as_exact(v_star, basis)
    vels = []
    for g in gens:
        vels.extend([vstar + g, vstar - g])
    keys = [v.key() for v in vels]
    if len(set(keys)) != len(keys):
        raise DegeneratePairForm("pair form produces coinciding velocities")
    return VelocitySet(basis, d, vels, pair_form=(vstar, gens))


def _as_exact(v, basis: SymbolBasis) -> ExactVector:
    if isinstance(v, ExactVector):
        return v
    rows = []
    for comp in v:
        if isinstance(comp, (list, tuple)):
            row = [Fraction(c) for c in comp]
            row += [Fraction(0)] * (len(basis) - len(row))
        else:
            row = [Fraction(comp)] + [Fraction(0)] * (len(basis) - 1)
        if len(row) != len(basis):
            raise ValueError("component has more coefficients than basis symbols")
        rows.append(tuple(row))
    return ExactVector(tuple(rows))


def check_span(vs: VelocitySet) -> tuple[bool, int]:
    """Do the pair-form generators span R^d?  Returns (spans, numeric rank)."""
    if vs.pair_form is None:
        raise MissingPairForm("span check needs a pair-form velocity set")
    g = np.array([x.evaluate(vs.basis) for x in vs.pair_form[1]]).T  # d x n
    rank = _numeric_rank(g, SPAN_PIVOT_TOL)
    return rank == vs.dim, rank


def _numeric_rank(mat: np.ndarray, tol: float) -> int:
    a = np.array(mat, dtype=float, copy=True)
    rows, cols = a.shape
    rank = 0
    for c in range(cols):
        if rank == rows:
            break
        p = rank + int(np.argmax(np.abs(a[rank:, c])))
        if abs(a[p, c]) <= tol:
            continue
        a[[rank, p]] = a[[p, rank]]
        a[rank + 1:] -= np.outer(a[rank + 1:, c] / a[rank, c], a[rank])
        rank += 1
    return rank


def integer_relation_matrix(vs: VelocitySet):
    """Stacked exact (d*|basis|) x n coefficient matrix of the generators."""
    if vs.pair_form is None:
        raise MissingPairForm("integer independence needs a pair-form velocity set")
    import sympy

    gens = vs.pair_form[1]
    rows = []
    for j in range(vs.dim):
        for s in range(len(vs.basis)):
            rows.append([sympy.Rational(g.coeffs[j][s].numerator, g.coeffs[j][s].denominator)
                         for g in gens])
    return sympy.Matrix(rows)


def check_integer_independence(vs: VelocitySet) -> bool:
    """True iff the only integer relation among the generators is trivial.

    Relies on the declared rational independence of the basis symbols, so an
    integer relation exists iff the exact coefficient matrix has a nontrivial
    rational kernel.
    """
    m = integer_relation_matrix(vs)
    return m.rank() == len(vs.pair_form[1])


def integer_relation(vs: VelocitySet) -> list[int] | None:
    """A primitive integer relation among the generators, or None."""
    import sympy

    m = integer_relation_matrix(vs)
    ns = m.nullspace()
    if not ns:
        return None
    vec = ns[0]
    den = sympy.ilcm(*[sympy.fraction(x)[1] for x in vec])
    ints = [int(x * den) for x in vec]
    g = int(np.gcd.reduce(np.abs(ints)))
    return [i // g for i in ints]


def assumption_av_report(vs: VelocitySet) -> dict:
    eig = np.linalg.eigvalsh(vs.gram)
    scale = max(1.0, float(np.max(np.abs(eig))))
    invertible = bool(eig[0] > 1e-12 * scale)
    return {"invertible": invertible, "min_eigenvalue": float(eig[0]),
            "eigenvalues": eig.tolist()}


def coupling_tensor(vs: VelocitySet) -> np.ndarray:
    """C[k,i,j,l] = sum_v v_k (A v)_i (A v)_j v_l, with v_0 = 1 for k."""
    if vs.a_matrix is None:
        raise GramNotInvertible("sum of lifted outer products is singular")
    return vs.coupling


def big_p(vs: VelocitySet, lam) -> np.ndarray:
    """Averaged mass-momentum P(lambda) = sum_v v_lifted theta(lambda . v_lifted)."""
    lam = np.asarray(lam, dtype=float)
    return vs.lifted.T @ theta(vs.lifted @ lam)


def big_p_jacobian(vs: VelocitySet, lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    w = theta_prime(vs.lifted @ lam)
    return (vs.lifted * w[:, None]).T @ vs.lifted


def lambda_of_p(vs: VelocitySet, p, *, tol: float = NEWTON_TOL,
                maxiter: int = NEWTON_MAXITER) -> np.ndarray:
    """Invert P by Newton's method started at lambda = 0."""
    p = np.asarray(p, dtype=float)
    lam = np.zeros(vs.dim + 1)
    res = big_p(vs, lam) - p
    for _ in range(maxiter):
        if np.max(np.abs(res)) < tol:
            return lam
        try:
            step = np.linalg.solve(big_p_jacobian(vs, lam), res)
        except np.linalg.LinAlgError as exc:
            raise NewtonDiverged(f"singular Jacobian inverting P at p={p}", p=p) from exc
        lam = lam - step
        if not np.all(np.isfinite(lam)):
            break
        res = big_p(vs, lam) - p
    if np.all(np.isfinite(res)) and np.max(np.abs(res)) < tol:
        return lam
    raise NewtonDiverged(f"Newton failed to invert P at p={p.tolist()}", p=p)


def lambda_derivatives_fd(vs: VelocitySet, h1: float = 1e-4, h2: float = 1e-3) -> dict:
    """Central finite-difference Jacobian and Hessian of Lambda at p*.

    Returns the Jacobian, its max deviation from 2 A_V, and the largest
    Hessian entry (which vanishes since theta'' is odd about 0).
    """
    if vs.a_matrix is None:
        raise GramNotInvertible("A_V undefined: Gram matrix is singular")
    m = vs.dim + 1
    p0 = vs.p_star
    eye = np.eye(m)
    jac = np.column_stack([(lambda_of_p(vs, p0 + h1 * eye[j]) - lambda_of_p(vs, p0 - h1 * eye[j]))
                           / (2 * h1) for j in range(m)])
    hess = np.zeros((m, m, m))
    for i in range(m):
        for j in range(m):
            pp = lambda_of_p(vs, p0 + h2 * (eye[i] + eye[j]))
            pm = lambda_of_p(vs, p0 + h2 * (eye[i] - eye[j]))
            mp = lambda_of_p(vs, p0 - h2 * (eye[i] - eye[j]))
            mm = lambda_of_p(vs, p0 - h2 * (eye[i] + eye[j]))
            hess[:, i, j] = (pp - pm - mp + mm) / (4 * h2 * h2)
    return {"jacobian": jac, "jacobian_error": float(np.max(np.abs(jac - 2 * vs.a_matrix))),
            "hessian": hess, "hessian_max": float(np.max(np.abs(hess)))}


def velocity_set_from_dict(data: dict) -> VelocitySet:
    """Parse the JSON velocity-set schema (``dimension``, ``symbols``, ...)."""
    symbols = data.get("symbols") or {"1": 1.0}
    basis = SymbolBasis(tuple(symbols.keys()), tuple(float(x) for x in symbols.values()))
    d = int(data["dimension"])
    if "pair_form" in data:
        pf = data["pair_form"]
        vstar = pf.get("v_star")
        vs = build_velocity_set(basis, v_star=vstar, generators=pf["generators"], dim=d)
    elif "velocities" in data:
        vs = build_velocity_set(basis, velocities=data["velocities"], dim=d)
    else:
        raise EmptySet("velocity file needs 'pair_form' or 'velocities'")
    if vs.dim != d:
        raise ValueError(f"declared dimension {d} does not match vectors ({vs.dim})")
    return vs


# Reference sets used throughout tests and examples.
def model_one(d: int) -> VelocitySet:
    """{+/- e_j}, in pair form with v* = 0."""
    gens = [[1 if j == i else 0 for j in range(d)] for i in range(d)]
    return build_velocity_set(SymbolBasis(), generators=gens)


def sqrt2_set() -> VelocitySet:
    """d=1, {+/-1, +/-sqrt2} over the basis {1, sqrt2}."""
    basis = SymbolBasis(("1", "sqrt2"), (1.0, float(np.sqrt(2.0))))
    return build_velocity_set(basis, generators=[[[1, 0]], [[0, 1]]])
