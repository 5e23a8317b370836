"""Micro-canonical surfaces on the free-boundary box, Dirichlet forms and k-space tools.

A configuration on the box Lambda_M = {-M..M}^d is an integer whose bit
``v * |Lambda_M| + x`` is eta_x(v). Quadratic forms are stored as sparse
positive semidefinite matrices F = -L, so that for the uniform measure
<f, -L f> = f^T F f / |Y|.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .errors import (BoxTooLarge, ChainInvariantViolated, ConfigError, EigensolveFailure,
                     NoSolution, OutOfDomain)
from .velocity import ExactVector, VelocitySet

MAX_SURFACE_BITS = 24
DENSE_LIMIT = 4096  # largest state space ever handed to a dense solver
DENSE_SOLVE = 1024  # default switch to Lanczos; dense solves near 4096 cost seconds each
ZERO_TOL = 1e-10
RITZ_TOL = 1e-9
_MOVE_BLOCK = 1 << 24  # state x move pairs evaluated per block

FORM_NAMES = ("nn_ex", "local_c", "mf_ex", "mf_c")


@dataclass(frozen=True)
class BoxLattice:
    """The box {-M..M}^d without wrap-around, sites in row-major order."""

    M: int
    d: int

    @property
    def side(self) -> int:
        return 2 * self.M + 1

    @property
    def n_sites(self) -> int:
        return self.side ** self.d

    @cached_property
    def coords(self) -> np.ndarray:
        grid = itertools.product(range(-self.M, self.M + 1), repeat=self.d)
        return np.array(list(grid), dtype=np.int64).reshape(-1, self.d)

    def index(self, coord) -> int:
        idx = 0
        for c in coord:
            if not -self.M <= c <= self.M:
                raise OutOfDomain(f"{tuple(coord)} is outside the box of radius {self.M}")
            idx = idx * self.side + (int(c) + self.M)
        return idx

    @cached_property
    def nn_bonds(self) -> np.ndarray:
        """Ordered pairs (x, y) with |x - y| = 1, both orientations."""
        out = []
        for x, cx in enumerate(self.coords):
            for j in range(self.d):
                for s in (1, -1):
                    c = cx.copy()
                    c[j] += s
                    if -self.M <= c[j] <= self.M:
                        out.append((x, self.index(c)))
        return np.array(out, dtype=np.int64).reshape(-1, 2)


def _integer_lifts(vs: VelocitySet) -> np.ndarray:
    """Lifted velocities as an exact integer matrix (common denominator cleared)."""
    rows = [[a for r in v.lifted().coeffs for a in r] for v in vs.velocities]
    den = math.lcm(*[a.denominator for row in rows for a in row])
    return np.array([[int(a * den) for a in row] for row in rows], dtype=np.int64)


def _exact_i(vs: VelocitySet, k, L: int) -> ExactVector:
    total = ExactVector.zero(vs.dim + 1, len(vs.basis))
    for kv, v in zip(k, vs.velocities):
        if kv:
            total = total + v.lifted().scale(kv)
    return total.scale(Fraction(1, L))


def i_string(i: ExactVector, vs: VelocitySet) -> str:
    from .velocity import _fmt_component
    return "(" + ", ".join(_fmt_component(r, vs.basis.names) for r in i.coeffs) + ")"


@dataclass
class MicroSurface:
    M: int
    box: BoxLattice
    vs: VelocitySet
    i: ExactVector
    members: np.ndarray
    k_classes: list[tuple[int, ...]]
    _forms: dict = field(default_factory=dict, repr=False)

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def weight(self) -> Fraction:
        return Fraction(1, self.size)

    @property
    def label(self) -> str:
        return i_string(self.i, self.vs)

    @property
    def i_values(self) -> np.ndarray:
        return self.i.evaluate(self.vs.basis)

    def form(self, name: str) -> sp.csr_matrix:
        if name not in FORM_NAMES:
            raise ConfigError(f"unknown form {name!r}; expected one of {FORM_NAMES}")
        if name not in self._forms:
            self._forms[name] = _build_form(self, name)
        return self._forms[name]

    def generator_form(self) -> sp.csr_matrix:
        """F for -(L^{ex,s} + L^c), nearest-neighbour exclusion plus local collisions."""
        return self.form("nn_ex") + self.form("local_c")

    def occupancy(self, local_index: int) -> np.ndarray:
        n = self.box.n_sites
        s = int(self.members[local_index])
        return np.array([[(s >> (v * n + x)) & 1 for x in range(n)]
                         for v in range(len(self.vs))], dtype=np.uint8)

    def occupancies(self) -> np.ndarray:
        """All members as a (size, |V|, L) array."""
        n, S = self.box.n_sites, len(self.vs)
        shifts = np.arange(S * n, dtype=np.int64)
        bits = (np.asarray(self.members, dtype=np.int64)[:, None] >> shifts) & 1
        return bits.reshape(-1, S, n).astype(np.uint8)


def enumerate_surfaces(M: int, vs: VelocitySet) -> dict[tuple, MicroSurface]:
    """Partition {0,1}^(Lambda_M x V) by the box average of I, keyed exactly."""
    box = BoxLattice(M, vs.dim)
    L, S = box.n_sites, len(vs)
    n_bits = L * S
    if n_bits > MAX_SURFACE_BITS:
        raise BoxTooLarge(f"{n_bits} occupancy bits exceeds {MAX_SURFACE_BITS}")
    states = np.arange(1 << n_bits, dtype=np.int64)
    table = np.array([bin(c).count("1") for c in range(1 << L)], dtype=np.int64)
    mask = (1 << L) - 1
    kidx = np.zeros(len(states), dtype=np.int64)
    for v in range(S):
        kidx += table[(states >> (v * L)) & mask] * (L + 1) ** v
    del states
    lifts = _integer_lifts(vs)
    present = np.unique(kidx)
    ks = [tuple(int(c) // (L + 1) ** v % (L + 1) for v in range(S)) for c in present]
    keys = [tuple((np.array(k) @ lifts).tolist()) for k in ks]
    order = sorted(set(keys))
    sid_of_key = {key: j for j, key in enumerate(order)}
    sid_lookup = np.full(int(present[-1]) + 1, -1, dtype=np.int64)
    groups: dict[int, list] = {j: [] for j in range(len(order))}
    for c, k, key in zip(present, ks, keys):
        sid_lookup[c] = sid_of_key[key]
        groups[sid_of_key[key]].append(k)
    sid = sid_lookup[kidx]
    perm = np.argsort(sid, kind="stable")
    bounds = np.searchsorted(sid[perm], np.arange(len(order) + 1))
    out = {}
    for j, key in enumerate(order):
        k0 = groups[j][0]
        i = _exact_i(vs, k0, L)
        out[i.key()] = MicroSurface(M, box, vs, i, perm[bounds[j]:bounds[j + 1]].copy(),
                                    sorted(groups[j]))
    return out


def _moves(surface: MicroSurface, name: str):
    """(set_mask, clear_mask, weight) arrays for every elementary move of a form."""
    L = surface.box.n_sites
    S = len(surface.vs)
    one = np.int64(1)
    if name in ("nn_ex", "mf_ex"):
        if name == "nn_ex":
            pairs, w = surface.box.nn_bonds, 1.0
        else:
            pairs = np.array([(x, y) for x in range(L) for y in range(L) if x != y],
                             dtype=np.int64).reshape(-1, 2)
            w = 1.0 / L
        sm = np.concatenate([one << (v * L + pairs[:, 0]) for v in range(S)])
        cm = np.concatenate([one << (v * L + pairs[:, 1]) for v in range(S)])
        return sm, cm, np.full(len(sm), w)
    coll = surface.vs.collision_array()
    if len(coll) == 0:
        z = np.zeros(0, dtype=np.int64)
        return z, z, np.zeros(0)
    if name == "local_c":
        xs = np.arange(L)
        sm = np.concatenate([(one << (q[0] * L + xs)) | (one << (q[1] * L + xs)) for q in coll])
        cm = np.concatenate([(one << (q[2] * L + xs)) | (one << (q[3] * L + xs)) for q in coll])
        return sm, cm, np.ones(len(sm))
    r = np.array(list(itertools.product(range(L), repeat=4)), dtype=np.int64)
    sm = np.concatenate([(one << (q[0] * L + r[:, 0])) | (one << (q[1] * L + r[:, 1]))
                         for q in coll])
    cm = np.concatenate([(one << (q[2] * L + r[:, 2])) | (one << (q[3] * L + r[:, 3]))
                         for q in coll])
    return sm, cm, np.full(len(sm), 1.0 / L ** 3)


def _build_form(surface: MicroSurface, name: str) -> sp.csr_matrix:
    sm, cm, w = _moves(surface, name)
    members = surface.members
    n = len(members)
    rows, cols, vals = [], [], []
    if len(sm):
        block = max(1, _MOVE_BLOCK // len(sm))
        for start in range(0, n, block):
            s = members[start:start + block, None]
            ok = ((s & sm) == sm) & ((s & cm) == 0)
            si, mi = np.nonzero(ok)
            tgt = members[start + si] ^ sm[mi] ^ cm[mi]
            rows.append(start + si)
            cols.append(np.searchsorted(members, tgt))
            vals.append(w[mi])
    if rows:
        r, c, x = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    else:
        r = c = np.zeros(0, np.int64)
        x = np.zeros(0)
    W = sp.coo_matrix((x, (r, c)), shape=(n, n)).tocsr()
    W.sum_duplicates()
    return (sp.diags(np.asarray(W.sum(axis=1)).ravel()) - W).tocsr()


def _components(F: sp.spmatrix) -> tuple[int, np.ndarray]:
    adj = sp.csr_matrix(F, copy=True)
    adj.setdiag(0)
    adj.eliminate_zeros()
    return connected_components(adj, directed=False)


def _smallest_eigs_sparse(F: sp.csr_matrix, k: int) -> np.ndarray:
    """k smallest eigenvalues of a PSD sparse matrix by restarted Lanczos."""
    n = F.shape[0]
    try:
        vals, vecs = spla.eigsh(F, k=k, which="SA", tol=1e-12, ncv=min(n - 1, max(60, 4 * k)),
                                maxiter=20 * n)
    except spla.ArpackNoConvergence as exc:
        raise EigensolveFailure(f"Lanczos iteration stagnated: {exc}") from exc
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]
    resid = np.linalg.norm(F @ vecs - vecs * vals, axis=0)
    if np.any(resid > RITZ_TOL):
        raise EigensolveFailure(f"Ritz residual {resid.max():.3g} above {RITZ_TOL}")
    return vals


def spectral_gap(surface: MicroSurface, form: sp.spmatrix | None = None, *,
                 dense_limit: int = DENSE_SOLVE) -> dict:
    """Smallest nonzero eigenvalue of F and the multiplicity of eigenvalue 0.

    The default form is the nearest-neighbour exclusion plus local collision
    generator; the uniform measure makes it a symmetric matrix.
    """
    F = surface.generator_form() if form is None else form
    n = F.shape[0]
    if n == 1:
        return {"gap": math.inf, "zero_multiplicity": 1}
    if n <= min(dense_limit, DENSE_LIMIT):
        ev = np.linalg.eigvalsh(F.toarray())
        zero = int(np.sum(ev < ZERO_TOL))
        nz = ev[ev >= ZERO_TOL]
        return {"gap": float(nz[0]) if len(nz) else math.inf, "zero_multiplicity": zero}
    # above the dense limit the kernel is counted combinatorially (one
    # eigenvalue 0 per connected component of the transition graph)
    zero, _ = _components(F)
    ev = _smallest_eigs_sparse(F, zero + 1)
    if np.sum(ev < ZERO_TOL) != zero:
        raise EigensolveFailure("kernel dimension disagrees with the component count")
    return {"gap": float(ev[zero]), "zero_multiplicity": int(zero)}


def rayleigh_ratio(formA: sp.spmatrix, formB: sp.spmatrix, surface: MicroSurface | None = None,
                   *, tol: float = 1e-9, dense_limit: int = DENSE_SOLVE) -> float:
    """sup A(f)/B(f) over f outside ker(B); +inf when ker(B) is not inside ker(A).

    ``surface`` is accepted for symmetry with the other operations; the forms
    already carry the state space.
    """
    A = sp.csr_matrix(formA)
    B = sp.csr_matrix(formB)
    n = B.shape[0]
    ncomp, labels = _components(B)
    ind = sp.csr_matrix((np.ones(n), (np.arange(n), labels)), shape=(n, ncomp))
    scale = max(1.0, float(abs(A).sum(axis=1).max()))
    if n == 0:
        return 0.0
    if abs(A @ ind).max() > 1e-12 * scale:
        return math.inf
    if ncomp == n:
        return 0.0  # B and A both vanish
    roots = np.zeros(n, dtype=bool)
    roots[np.unique(labels, return_index=True)[1]] = True
    keep = np.nonzero(~roots)[0]
    Ag = A[keep][:, keep]
    Bg = B[keep][:, keep]
    m = len(keep)
    if m <= min(dense_limit, DENSE_LIMIT):
        ev = sla.eigh(Ag.toarray(), Bg.toarray(), eigvals_only=True,
                      subset_by_index=[m - 1, m - 1])
        return float(ev[-1])
    return _largest_generalized(Ag.tocsc(), Bg.tocsc(), tol)


def _largest_generalized(A: sp.csr_matrix, B: sp.csr_matrix, tol: float) -> float:
    """Largest lambda of A x = lambda B x, B positive definite, without factorizing B.

    ARPACK's generalized mode needs B^-1 y; Jacobi-preconditioned CG supplies
    it, since sparse LU of these state graphs fills in badly.
    """
    jac = sp.diags(1.0 / B.diagonal())

    def solve(y):
        x, info = spla.cg(B, y, rtol=1e-13, atol=0.0, M=jac, maxiter=20 * B.shape[0])
        if info != 0:
            raise EigensolveFailure(f"inner CG solve did not converge (info={info})")
        return x

    Binv = spla.LinearOperator(B.shape, matvec=solve, dtype=float)
    try:
        vals, vecs = spla.eigsh(A, k=1, M=B, Minv=Binv, which="LA", tol=tol * 1e-2)
    except spla.ArpackNoConvergence as exc:
        raise EigensolveFailure(f"generalized Lanczos stagnated: {exc}") from exc
    x = vecs[:, 0]
    Bx = B @ x
    resid = np.linalg.norm(A @ x - vals[0] * Bx) / max(np.linalg.norm(Bx), 1e-300)
    if resid > max(tol, 1e-6) * max(1.0, abs(vals[0])):
        raise EigensolveFailure(f"generalized Ritz residual {resid:.3g} too large")
    return float(vals[0])


# ---------------------------------------------------------------------------
# particle-number space


def h_alpha(box_size: int, alpha: int, k: int) -> Fraction:
    """(k+1)(k-alpha+1) / ((L-k)(L-k+alpha)) as an exact rational."""
    L = box_size
    if not (0 <= k + 1 <= L and 0 <= k - alpha + 1 <= L):
        raise OutOfDomain(f"h_alpha undefined at L={L}, alpha={alpha}, k={k}")
    den = (L - k) * (L - k + alpha)
    if L - k <= 0 or L - k + alpha <= 0:
        raise OutOfDomain(f"h_alpha denominator vanishes at L={L}, alpha={alpha}, k={k}")
    return Fraction((k + 1) * (k - alpha + 1), den)


def k_move(k, q, box_size: int) -> tuple[tuple[int, ...], int]:
    """Apply the collision q = (v, w, v', w') to particle numbers k."""
    k = tuple(int(c) for c in k)
    v, w, v2, w2 = q
    p = k[v] * k[w] * (box_size - k[v2]) * (box_size - k[w2])
    if p <= 0:
        return k, 0
    out = list(k)
    out[v] -= 1
    out[w] -= 1
    out[v2] += 1
    out[w2] += 1
    return tuple(out), p


@dataclass
class KSpace:
    M: int
    vs: VelocitySet
    i: ExactVector
    box_size: int
    ks: list[tuple[int, ...]]
    nu_bar: dict[tuple[int, ...], Fraction]

    def __len__(self):
        return len(self.ks)

    @property
    def label(self) -> str:
        return i_string(self.i, self.vs)

    @property
    def is_pair_form(self) -> bool:
        return self.vs.pair_form is not None

    def pair_counts(self, k) -> tuple[list[int], list[int]]:
        """(k_l, k_-l) for l = 1..n under the pair-form species order."""
        n = self._require_pairs()
        return [k[2 * l] for l in range(n)], [k[2 * l + 1] for l in range(n)]

    def _require_pairs(self) -> int:
        if self.vs.pair_form is None:
            raise ConfigError("operation requires a pair-form velocity set")
        return len(self.vs.pair_form[1])

    @property
    def alphas(self) -> tuple[int, ...]:
        plus, minus = self.pair_counts(self.ks[0])
        return tuple(a - b for a, b in zip(plus, minus))

    @property
    def i0(self) -> int:
        return sum(self.ks[0])

    def neighbors(self, k):
        """[(q, k^q, p(q, k))] over effective collisions with p > 0."""
        out = []
        for q in self.vs.collision_set:
            kq, p = k_move(k, q, self.box_size)
            if p > 0:
                out.append((q, kq, p))
        return out

    def reduced_nu_bar(self) -> dict[tuple[int, ...], Fraction]:
        """nu-bar from the product over pairs of binom(L, k_l) binom(L, k_l - alpha_l)."""
        L = self.box_size
        raw = {}
        for k in self.ks:
            plus, _ = self.pair_counts(k)
            w = 1
            for kl, al in zip(plus, self.alphas):
                w *= math.comb(L, kl) * math.comb(L, kl - al)
            raw[k] = w
        z = sum(raw.values())
        return {k: Fraction(w, z) for k, w in raw.items()}


def _kspace_from_ks(M: int, vs: VelocitySet, ks, L: int) -> KSpace:
    ks = sorted(ks)
    raw = {k: math.prod(math.comb(L, c) for c in k) for k in ks}
    z = sum(raw.values())
    return KSpace(M, vs, _exact_i(vs, ks[0], L), L, ks, {k: Fraction(w, z) for k, w in raw.items()})


def all_kspaces(M: int, vs: VelocitySet) -> dict[tuple, KSpace]:
    """D_{M,i} for every i in D_M, keyed like :func:`enumerate_surfaces`."""
    L = (2 * M + 1) ** vs.dim
    S = len(vs)
    if (L + 1) ** S > 50_000_000:
        raise BoxTooLarge("particle-number grid too large to enumerate")
    grid = np.indices((L + 1,) * S).reshape(S, -1).T
    keys = grid @ _integer_lifts(vs)
    order = np.lexsort(keys.T[::-1])
    groups: dict[tuple, list] = {}
    for row in order:
        groups.setdefault(tuple(keys[row].tolist()), []).append(tuple(int(c) for c in grid[row]))
    out = {}
    for ks in groups.values():
        space = _kspace_from_ks(M, vs, ks, L)
        out[space.i.key()] = space
    return out


def kspace_for(M: int, vs: VelocitySet, k) -> KSpace:
    """The particle-number space containing k."""
    L = (2 * M + 1) ** vs.dim
    lifts = _integer_lifts(vs)
    target = np.asarray(k) @ lifts
    grid = np.indices((L + 1,) * len(vs)).reshape(len(vs), -1).T
    hit = np.all(grid @ lifts == target, axis=1)
    return _kspace_from_ks(M, vs, [tuple(int(c) for c in g) for g in grid[hit]], L)


def _h_ext(L: int, alpha: int, k: int) -> Fraction | float:
    """h_alpha with the boundary conventions of an impossible move (0 or +inf)."""
    if k + 1 <= 0 or k - alpha + 1 <= 0:
        return Fraction(0)
    if L - k <= 0 or L - k + alpha <= 0:
        return math.inf
    return h_alpha(L, alpha, k)


def maximizer_condition(ks: KSpace, k) -> bool:
    """max_l h(k_l - 1) <= min_l h(k_l), compared exactly."""
    plus, _ = ks.pair_counts(k)
    L = ks.box_size
    lo = max(_h_ext(L, a, kl - 1) for kl, a in zip(plus, ks.alphas))
    hi = min(_h_ext(L, a, kl) for kl, a in zip(plus, ks.alphas))
    return lo <= hi


def find_maximizer(ks: KSpace) -> tuple[int, ...]:
    ks._require_pairs()
    for k in ks.ks:
        if maximizer_condition(ks, k):
            return k
    raise NoSolution(f"no particle-number vector satisfies the maximizer condition on {ks.label}")


def build_k_chain(ks: KSpace, k_start, k_star) -> list[tuple[tuple[int, ...], tuple]]:
    """Monotone collision path from k_start to k_star.

    Returns the steps as (k, q) pairs, where q is applied to k. Greedy ascent
    first (largest nu-bar, ties to the lexicographically smallest q), then
    equal-measure pair swaps.
    """
    n = ks._require_pairs()
    k = tuple(int(c) for c in k_start)
    k_star = tuple(int(c) for c in k_star)
    nb = ks.nu_bar
    steps: list = []
    seen = {k}

    def advance(q, kq):
        nonlocal k
        if nb[kq] < nb[k]:
            raise ChainInvariantViolated(f"nu-bar decreases along {k} -> {kq}")
        if kq in seen:
            raise ChainInvariantViolated(f"chain revisits {kq}")
        steps.append((k, q))
        seen.add(kq)
        k = kq
        if len(steps) > len(ks):
            raise ChainInvariantViolated("chain longer than |D|")

    while k != k_star:
        best = None
        for q, kq, _ in ks.neighbors(k):
            if nb[kq] > nb[k] and (best is None or nb[kq] > nb[best[1]]):
                best = (q, kq)
        if best is None:
            break
        advance(*best)
    while k != k_star:
        plus, _ = ks.pair_counts(k)
        star_plus, _ = ks.pair_counts(k_star)
        hi = [l for l in range(n) if plus[l] == star_plus[l] + 1]
        lo = [l for l in range(n) if plus[l] == star_plus[l] - 1]
        if not hi or not lo or any(abs(a - b) > 1 for a, b in zip(plus, star_plus)):
            raise ChainInvariantViolated(f"greedy phase ended at {k}, not adjacent to {k_star}")
        l1, l2 = hi[0], lo[0]
        q = (2 * l1, 2 * l1 + 1, 2 * l2, 2 * l2 + 1)
        kq, p = k_move(k, q, ks.box_size)
        if p == 0:
            raise ChainInvariantViolated(f"pair swap {q} impossible at {k}")
        advance(q, kq)
    return steps


def _dirichlet_matrices(ks: KSpace) -> tuple[np.ndarray, np.ndarray]:
    """Variance and collision-Dirichlet quadratic forms on functions of k."""
    idx = {k: j for j, k in enumerate(ks.ks)}
    nu = np.array([float(ks.nu_bar[k]) for k in ks.ks])
    var = np.diag(nu) - np.outer(nu, nu)
    dir_ = np.zeros((len(ks), len(ks)))
    for k in ks.ks:
        a = idx[k]
        for _, kq, p in ks.neighbors(k):
            b = idx[kq]
            c = nu[a] * p
            dir_[a, a] += c
            dir_[b, b] += c
            dir_[a, b] -= c
            dir_[b, a] -= c
    return var, dir_


def verify_cor_sg_k(ks: KSpace) -> dict:
    """Extremal Var/Dirichlet ratio on the k-graph against the bound |D|^2."""
    ks._require_pairs()
    bound = float(len(ks)) ** 2
    if len(ks) == 1:
        return {"ratio": 0.0, "bound": bound, "pass": True}
    var, dir_ = _dirichlet_matrices(ks)
    ratio = rayleigh_ratio(sp.csr_matrix(var), sp.csr_matrix(dir_))
    return {"ratio": ratio, "bound": bound, "pass": bool(ratio <= bound * (1 + 1e-12))}


def members_of_k(k, box_size: int, how: str = "first", rng=None) -> np.ndarray:
    """A configuration with k_v particles of species v, as a (|V|, L) array."""
    occ = np.zeros((len(k), box_size), dtype=np.uint8)
    for v, kv in enumerate(k):
        if how == "first":
            occ[v, :kv] = 1
        elif how == "last":
            occ[v, box_size - kv:] = 1
        else:
            occ[v, rng.choice(box_size, size=kv, replace=False)] = 1
    return occ


def mean_field_kernel_sum(occ: np.ndarray, q) -> int | np.ndarray:
    """sum over r in Lambda^4 of p(r, q, eta), evaluated term by term.

    ``occ`` may carry a leading batch axis, in which case one sum per member
    is returned.
    """
    v, w, v2, w2 = q
    occ = np.asarray(occ, dtype=np.int64)
    batched = occ.ndim == 3
    occ = occ if batched else occ[None]
    a, b = occ[:, v], occ[:, w]
    c, e = 1 - occ[:, v2], 1 - occ[:, w2]
    terms = (a[:, :, None, None, None] * b[:, None, :, None, None]
             * c[:, None, None, :, None] * e[:, None, None, None, :])
    sums = terms.reshape(len(occ), -1).sum(axis=1)
    return sums if batched else int(sums[0])


def kernel_consistency(ks: KSpace, surface: MicroSurface | None = None, *,
                       n_random: int = 3, seed: int = 0) -> int:
    """Max |sum_r p(r,q,eta) - p(q,k)| over k, effective q and members eta.

    Members come from ``surface`` when given, otherwise a few are constructed
    per k (packed left, packed right and random placements).
    """
    L = ks.box_size
    worst = 0
    rng = np.random.default_rng(seed)
    by_k: dict[tuple, np.ndarray] = {}
    if surface is not None:
        occs = surface.occupancies()
        counts = occs.sum(axis=2)
        for k in ks.ks:
            by_k[k] = occs[np.all(counts == np.asarray(k), axis=1)]
    for k in ks.ks:
        etas = by_k.get(k)
        if etas is None or len(etas) == 0:
            etas = np.stack([members_of_k(k, L, "first"), members_of_k(k, L, "last")]
                            + [members_of_k(k, L, "random", rng) for _ in range(n_random)])
        for q in ks.vs.collision_set:
            _, p = k_move(k, q, L)
            for start in range(0, len(etas), 512):
                sums = mean_field_kernel_sum(etas[start:start + 512], q)
                worst = max(worst, int(np.max(np.abs(sums - p))))
    return worst


# ---------------------------------------------------------------------------
# canonical paths


def nn_route(x, y, M: int | None = None) -> list[tuple[int, ...]]:
    """Staircase path from x to y, coordinate 1 first, unit steps."""
    x = tuple(int(c) for c in x)
    y = tuple(int(c) for c in y)
    if M is not None and any(abs(c) > M for c in x + y):
        raise OutOfDomain("route endpoints must lie in the box")
    route = [x]
    cur = list(x)
    for j in range(len(x)):
        step = 1 if y[j] > cur[j] else -1
        while cur[j] != y[j]:
            cur[j] += step
            route.append(tuple(cur))
    return route


def route_census(M: int, d: int) -> dict:
    """Directed-bond multiplicities over nn_route(x, y) for all ordered pairs."""
    sites = [tuple(c) for c in BoxLattice(M, d).coords.tolist()]
    counts: dict[tuple, int] = {}
    for x in sites:
        for y in sites:
            r = nn_route(x, y, M)
            for a, b in zip(r, r[1:]):
                counts[(a, b)] = counts.get((a, b), 0) + 1
    worst = max(counts.values()) if counts else 0
    bound = (2 * M + 1) ** (d + 1)
    return {"max": worst, "bound": bound, "pass": worst <= bound, "bonds": len(counts)}


def gap_table(M_list, vs: VelocitySet) -> list[dict]:
    """Per-surface gap rows for the ``gap`` subcommand."""
    kappa = vs.kappa()
    rows = []
    for M in M_list:
        for surf in enumerate_surfaces(M, vs).values():
            g = spectral_gap(surf)
            scaled = g["gap"] * (2 * M + 1) ** kappa if kappa is not None else math.nan
            rows.append({"M": M, "i": surf.label, "size": surf.size,
                         "zero_multiplicity": g["zero_multiplicity"], "gap": g["gap"],
                         "gap_scaled": scaled})
    return rows
