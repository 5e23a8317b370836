"""Exact continuous-time simulation of L_N = N^2 (L_ex + L_c) by uniformization.

Every proposal slot gets a fixed maximal rate. Exchange slots (v, x, direction)
have maximum N^2 (1 + v_max N^(a-1)) and collision slots (q, x) have maximum
N^2. Proposals arrive as a Poisson process with the summed rate R_dom. A
proposal picks a slot uniformly within its channel and is accepted with
probability (actual rate) / (slot maximum), so the accepted events form
exactly the chain generated by L_N.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NegativeRate
from .kernels import get_kernel
from .lattice import Configuration, Torus
from .rng import stream
from .velocity import VelocitySet

CHUNK = 1 << 20  # proposals per kernel call; bounds memory for uniforms


@dataclass
class SimParams:
    N: int
    a: float
    vs: VelocitySet
    T: float = 0.0
    snapshot_times: list[float] = field(default_factory=list)
    seed: int = 0
    replica: int = 0
    collisions: bool = True

    def __post_init__(self):
        if not 0.0 < self.a < 1.0:
            raise ConfigError(f"a={self.a} must lie in (0, 1)")
        if self.vs.v_max > self.N ** (1.0 - self.a):
            raise NegativeRate(
                f"v_max={self.vs.v_max:.4g} exceeds N^(1-a)={self.N ** (1 - self.a):.4g}; "
                "jump rates would be negative")
        times = [float(t) for t in self.snapshot_times] or [0.0, float(self.T)]
        if sorted(times) != times or times[0] < 0 or times[-1] > self.T + 1e-15:
            raise ConfigError("snapshot times must be sorted and within [0, T]")
        self.snapshot_times = times

    @property
    def d(self) -> int:
        return self.vs.dim

    @property
    def drift_scale(self) -> float:
        return self.N ** (self.a - 1.0)


@dataclass
class Trajectory:
    times: list[float]
    snapshots: list[np.ndarray]
    counters: dict[str, int]
    wall_time: float = 0.0

    def configurations(self, torus: Torus, vs: VelocitySet) -> list[Configuration]:
        return [Configuration(torus, vs, occ) for occ in self.snapshots]


class _Tables:
    """Precomputed per-run arrays shared by step() and the kernels."""

    def __init__(self, params: SimParams, torus: Torus):
        vs = params.vs
        n, d = torus.n_sites, torus.dim
        self.nbr = np.ascontiguousarray(torus.neighbors, dtype=np.int64)
        # drift[v, k] = z_k . v / N^(1-a) for directions z = +e_j (k=2j), -e_j (k=2j+1)
        dirs = np.zeros((2 * d, d))
        for j in range(d):
            dirs[2 * j, j], dirs[2 * j + 1, j] = 1.0, -1.0
        self.drift = np.ascontiguousarray(vs.values @ dirs.T * params.drift_scale)
        self.dmax = vs.v_max * params.drift_scale
        coll = vs.collision_array() if params.collisions else np.zeros((0, 4), np.int64)
        self.coll = np.ascontiguousarray(coll, dtype=np.int64)
        N2 = float(params.N) ** 2
        self.w_ex = N2 * n * 2 * d * len(vs) * (1.0 + self.dmax)
        self.w_c = N2 * n * len(self.coll)
        self.rate = self.w_ex + self.w_c
        self.p_ex = self.w_ex / self.rate


def dominating_rate(params: SimParams) -> float:
    """R_dom = N^2 [N^d 2d |V| (1 + v_max N^(a-1)) + N^d |Q_eff|]."""
    return _Tables(params, Torus(params.d, params.N)).rate


def exchange_rate(params: SimParams, cfg: Configuration, x: int, y: int, v: int) -> float:
    z = cfg.torus.displacement(x, y)
    if z is None:
        from .errors import NotNeighbors
        raise NotNeighbors(f"sites {x} and {y} are not nearest neighbours")
    occ = cfg.occupancy
    if occ[v, x] == 0 or occ[v, y] == 1:
        return 0.0
    pn = 1.0 + float(z @ params.vs.values[v]) * params.drift_scale
    if pn < 0:
        raise NegativeRate(f"p_N={pn} < 0")
    return params.N ** 2 * pn


def collision_rate(params: SimParams, cfg: Configuration, x: int, q) -> float:
    from .lattice import collision_indicator
    return params.N ** 2 * collision_indicator(cfg, x, q)


def step(params: SimParams, cfg: Configuration, rng: np.random.Generator,
         tables: _Tables | None = None):
    """One uniformized proposal.

    Returns ``(waiting_time, event)`` where ``event`` is ``None`` for a rejected
    proposal, ``("exchange", x, y, v)`` or ``("collision", x, q)``.
    """
    tables = tables or _Tables(params, cfg.torus)
    tau = float(rng.exponential(1.0 / tables.rate))
    u, acc = rng.random(2)
    occ = cfg.occupancy
    n_species, n_sites = occ.shape
    n_dir = tables.nbr.shape[1]
    if u < tables.p_ex:
        n_ex = n_species * n_sites * n_dir
        slot = min(int((u / tables.p_ex) * n_ex), n_ex - 1)
        slot, k = divmod(slot, n_dir)
        v, x = divmod(slot, n_sites)
        y = int(tables.nbr[x, k])
        if (occ[v, x] == 1 and occ[v, y] == 0
                and acc < (1.0 + tables.drift[v, k]) * (1.0 / (1.0 + tables.dmax))):
            occ[v, x], occ[v, y] = 0, 1
            return tau, ("exchange", x, y, v)
        return tau, None
    n_c = len(tables.coll) * n_sites
    slot = min(int(((u - tables.p_ex) / (1.0 - tables.p_ex)) * n_c), n_c - 1)
    qi, x = divmod(slot, n_sites)
    q = tuple(int(c) for c in tables.coll[qi])
    if occ[q[0], x] == 1 and occ[q[1], x] == 1 and occ[q[2], x] == 0 and occ[q[3], x] == 0:
        occ[[q[0], q[1]], x] = 0
        occ[[q[2], q[3]], x] = 1
        return tau, ("collision", x, q)
    return tau, None


def simulate(params: SimParams, initial: Configuration, *, backend: str | None = None,
             rng: np.random.Generator | None = None, observe=None) -> Trajectory:
    """Run from ``initial`` and record the state at every snapshot time.

    Proposal counts per snapshot interval are Poisson(R_dom * dt), which is
    equivalent to summing exponential waiting times. ``observe``, if given,
    maps the occupancy array to whatever is stored per snapshot.
    """
    t0 = _time.perf_counter()
    kernel = get_kernel(backend)
    tables = _Tables(params, initial.torus)
    rng = rng if rng is not None else stream(params.seed, params.replica, "dynamics")
    occ = np.ascontiguousarray(initial.occupancy.copy())
    counters = np.zeros(4, dtype=np.int64)
    keep = observe or (lambda o: o.copy())
    snaps, t = [], 0.0
    for ts in params.snapshot_times:
        dt = ts - t
        if dt > 0:
            remaining = int(rng.poisson(tables.rate * dt))
            while remaining > 0:
                n = min(remaining, CHUNK)
                kernel.run_proposals(occ, tables.nbr, tables.drift, tables.coll,
                                     rng.random(2 * n), n, tables.p_ex, tables.dmax, counters)
                remaining -= n
            t = ts
        snaps.append(keep(occ))
    names = ("exchange_attempts", "exchange_accepts", "collision_attempts",
             "collision_accepts")
    return Trajectory(list(params.snapshot_times), snaps,
                      dict(zip(names, (int(c) for c in counters))),
                      _time.perf_counter() - t0)


def run_events(params: SimParams, cfg: Configuration, n_proposals: int,
               rng: np.random.Generator, *, backend: str | None = None) -> np.ndarray:
    """Apply exactly ``n_proposals`` proposals in place; returns the counters."""
    kernel = get_kernel(backend)
    tables = _Tables(params, cfg.torus)
    counters = np.zeros(4, dtype=np.int64)
    remaining = n_proposals
    while remaining > 0:
        n = min(remaining, CHUNK)
        kernel.run_proposals(cfg.occupancy, tables.nbr, tables.drift, tables.coll,
                             rng.random(2 * n), n, tables.p_ex, tables.dmax, counters)
        remaining -= n
    return counters


@dataclass
class TestFunction:
    """F(u) = re cos(2 pi k.u) + im sin(2 pi k.u), valued in R^(d+1)."""

    k: tuple[int, ...]
    re: np.ndarray
    im: np.ndarray
    name: str = ""

    __test__ = False  # not a pytest class

    def __post_init__(self):
        self.k = tuple(int(c) for c in self.k)
        self.re = np.asarray(self.re, dtype=float)
        self.im = np.asarray(self.im, dtype=float)

    def __call__(self, u) -> np.ndarray:
        u = np.atleast_2d(np.asarray(u, dtype=float))
        arg = 2 * np.pi * (u @ np.asarray(self.k, dtype=float))
        return np.outer(np.cos(arg), self.re) + np.outer(np.sin(arg), self.im)


def empirical_field(cfg: Configuration, vs: VelocitySet, a: float, F: TestFunction) -> float:
    """N^(a-d) sum_x F(x/N) . (I(eta_x) - p*)."""
    return _empirical(cfg.occupancy, cfg.torus, vs, a, F(cfg.torus.positions()))


def _empirical(occ: np.ndarray, torus: Torus, vs: VelocitySet, a: float,
               f_values: np.ndarray) -> float:
    local = occ.T.astype(float) @ vs.lifted - vs.p_star
    return float(torus.side ** (a - torus.dim) * np.sum(f_values * local))
