"""Full generator matrices on small tori and the algebraic identities they satisfy.

States are the integers 0 .. 2^(|V| N^d) - 1; bit ``v * N^d + x`` is eta_x(v).
Matrices use the rate convention (off-diagonal = jump rate, rows sum to 0)
and are unit-time: the simulated chain is N^2 (L_ex + L_c).

Exchange moves are enumerated per site and per direction (+e_j, -e_j), the
same channels the simulator uses. For N >= 3 this is exactly the sum over
neighbouring pairs; on N = 2 both directions reach the same site and their
rates add.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import StateSpaceTooLarge
from .lattice import Torus
from .velocity import VelocitySet

MAX_BITS = 20
MAX_DENSE_BITS = 12


@dataclass
class GeneratorMatrices:
    N: int
    d: int
    a: float
    vs: VelocitySet
    L_ex: sp.csr_matrix
    L_ex_sym: sp.csr_matrix
    L_ex_anti: sp.csr_matrix
    L_c: sp.csr_matrix

    @property
    def n_bits(self) -> int:
        return len(self.vs) * self.N ** self.d

    @property
    def n_states(self) -> int:
        return 1 << self.n_bits

    @property
    def torus(self) -> Torus:
        return Torus(self.d, self.N)

    def full(self) -> sp.csr_matrix:
        """The simulated generator N^2 (L_ex + L_c)."""
        return (self.N ** 2) * (self.L_ex + self.L_c)

    def dense(self, name: str) -> np.ndarray:
        if self.n_bits > MAX_DENSE_BITS:
            raise StateSpaceTooLarge(f"dense path limited to {MAX_DENSE_BITS} bits")
        return getattr(self, name).toarray()

    def occupancy(self, state: int) -> np.ndarray:
        n = self.N ** self.d
        bits = (state >> np.arange(len(self.vs) * n)) & 1
        return bits.reshape(len(self.vs), n).astype(np.uint8)


def state_bits(n_states: int, n_bits: int) -> np.ndarray:
    s = np.arange(n_states, dtype=np.int64)
    return ((s[:, None] >> np.arange(n_bits, dtype=np.int64)) & 1).astype(np.uint8)


def _laplacian(rows, cols, vals, n) -> sp.csr_matrix:
    if rows:
        r, c, w = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    else:
        r = c = np.zeros(0, np.int64)
        w = np.zeros(0)
    off = sp.coo_matrix((w, (r, c)), shape=(n, n)).tocsr()
    off.sum_duplicates()
    return (off - sp.diags(np.asarray(off.sum(axis=1)).ravel())).tocsr()


def build_generators(N: int, d: int, a: float, vs: VelocitySet) -> GeneratorMatrices:
    torus = Torus(d, N)
    n = torus.n_sites
    n_bits = len(vs) * n
    if n_bits > MAX_BITS:
        raise StateSpaceTooLarge(f"{n_bits} occupancy bits exceeds {MAX_BITS}")
    states = np.arange(1 << n_bits, dtype=np.int64)
    n_states = len(states)
    drift_scale = N ** (a - 1.0)

    sym_r, sym_c, sym_w = [], [], []
    anti_w = []
    for v in range(len(vs)):
        for x in range(n):
            bx = np.int64(1) << (v * n + x)
            for k in range(2 * d):
                y = int(torus.neighbors[x, k])
                by = np.int64(1) << (v * n + y)
                ok = np.nonzero((states & bx != 0) & (states & by == 0))[0]
                sym_r.append(ok)
                sym_c.append(states[ok] ^ bx ^ by)
                sym_w.append(np.ones(len(ok)))
                zv = (1.0 if k % 2 == 0 else -1.0) * vs.values[v, k // 2]
                anti_w.append(np.full(len(ok), zv * drift_scale))
    L_sym = _laplacian(sym_r, sym_c, sym_w, n_states)
    L_anti = _laplacian(sym_r, sym_c, anti_w, n_states)
    L_ex = _laplacian(sym_r, sym_c, [s + t for s, t in zip(sym_w, anti_w)], n_states)

    c_r, c_c, c_w = [], [], []
    for q in vs.collision_set:
        for x in range(n):
            b = [np.int64(1) << (u * n + x) for u in q]
            ok = np.nonzero((states & b[0] != 0) & (states & b[1] != 0)
                            & (states & b[2] == 0) & (states & b[3] == 0))[0]
            c_r.append(ok)
            c_c.append(states[ok] ^ b[0] ^ b[1] ^ b[2] ^ b[3])
            c_w.append(np.ones(len(ok)))
    L_c = _laplacian(c_r, c_c, c_w, n_states)
    return GeneratorMatrices(N, d, a, vs, L_ex, L_sym, L_anti, L_c)


def invariant_measure(gen: GeneratorMatrices, lam) -> np.ndarray:
    """mu_lambda over all states, from the product Bernoulli log-weights."""
    n = gen.N ** gen.d
    alpha = gen.vs.lifted @ np.asarray(lam, dtype=float)  # lambda . v per species
    per_bit = np.repeat(alpha, n)
    bits = state_bits(gen.n_states, gen.n_bits).astype(float)
    logw = bits @ per_bit - n * np.sum(np.logaddexp(0.0, alpha))
    return np.exp(logw)


def stationarity_residual(gen: GeneratorMatrices, lam, mu=None) -> float:
    """max |mu^T (L_ex + L_c)| for mu = mu_lambda (or a supplied measure)."""
    mu = invariant_measure(gen, lam) if mu is None else np.asarray(mu, dtype=float)
    L = (gen.L_ex + gen.L_c).T
    return float(np.max(np.abs(L @ mu)))


def adjoint_residuals(gen: GeneratorMatrices, lam, mats: dict | None = None) -> dict:
    """Infinity-norm defects of the mu_lambda (anti)symmetry identities."""
    mu = invariant_measure(gen, lam)
    m = {"L_ex_sym": gen.dense("L_ex_sym"), "L_ex_anti": gen.dense("L_ex_anti"),
         "L_c": gen.dense("L_c")}
    if mats:
        m.update(mats)
    Dm = mu[:, None]

    def norm(x):
        return float(np.max(np.abs(x)))

    return {
        "sym_ex": norm(Dm * m["L_ex_sym"] - (Dm * m["L_ex_sym"]).T),
        "anti_ex": norm(Dm * m["L_ex_anti"] + (Dm * m["L_ex_anti"]).T),
        "sym_c": norm(Dm * m["L_c"] - (Dm * m["L_c"]).T),
    }


def local_fields_all(gen: GeneratorMatrices) -> np.ndarray:
    """I(eta_x) for every state and site, shape (n_states, N^d, d+1)."""
    n = gen.N ** gen.d
    bits = state_bits(gen.n_states, gen.n_bits).reshape(gen.n_states, len(gen.vs), n)
    return np.einsum("svx,vk->sxk", bits.astype(float), gen.vs.lifted)


def lnc_annihilation(gen: GeneratorMatrices, f_tilde) -> float:
    """||L_c f||_inf for f(eta) = f_tilde(I-field of eta).

    ``f_tilde`` receives the (N^d, d+1) array of local mass-momenta.
    """
    fields = local_fields_all(gen)
    f = np.array([f_tilde(fields[s]) for s in range(gen.n_states)], dtype=float)
    return float(np.max(np.abs(gen.L_c @ f)))


def apply_to_function(gen: GeneratorMatrices, name: str, f) -> np.ndarray:
    return getattr(gen, name) @ np.asarray(f, dtype=float)


def ergodic_components(gen: GeneratorMatrices) -> int:
    from scipy.sparse.csgraph import connected_components

    adj = (gen.L_ex_sym + gen.L_c).tocsr()
    adj = adj - sp.diags(adj.diagonal())
    return int(connected_components(adj, directed=False)[0])


def exact_report(gen: GeneratorMatrices, lambdas, tol: float = 1e-10) -> dict:
    """Residual report used by the ``exact`` CLI subcommand."""
    rows = []
    ok = True
    for lam in lambdas:
        r = adjoint_residuals(gen, lam)
        r["stationarity"] = stationarity_residual(gen, lam)
        r["lambda"] = [float(x) for x in lam]
        r["pass"] = all(r[k] <= tol for k in ("sym_ex", "anti_ex", "sym_c", "stationarity"))
        ok &= r["pass"]
        rows.append(r)
    row_sum = max(float(np.max(np.abs(np.asarray(getattr(gen, m).sum(axis=1)))))
                  for m in ("L_ex", "L_ex_sym", "L_ex_anti", "L_c"))
    ok &= row_sum <= 1e-12
    return {"N": gen.N, "d": gen.d, "a": gen.a, "n_states": gen.n_states,
            "max_row_sum": row_sum, "tolerance": tol, "residuals": rows, "pass": bool(ok)}
