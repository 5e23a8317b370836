"""Method-of-lines solver for the perturbation field phi on the unit torus.

    d phi_k / dt = sum_{i,j,l} C_kijl phi_i D_l phi_j + Lap_h phi_k

with second-order central differences, periodic wrap and classical RK4.
Fields have shape (G,)*d + (d+1,), grid nodes at u = index / G.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BlowUpDetected, ConfigError
from .velocity import VelocitySet

DEFAULT_CFL = 0.2


@dataclass
class PdeState:
    G: int
    values: np.ndarray
    vs: VelocitySet
    t: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        d = self.vs.dim
        if self.values.shape != (self.G,) * d + (d + 1,):
            raise ConfigError(f"field shape {self.values.shape} does not match G={self.G}, d={d}")
        if not np.all(np.isfinite(self.values)):
            raise BlowUpDetected("non-finite field values", t=self.t)

    @property
    def d(self) -> int:
        return self.vs.dim

    @property
    def h(self) -> float:
        return 1.0 / self.G

    @classmethod
    def from_function(cls, vs: VelocitySet, G: int, phi, t: float = 0.0) -> "PdeState":
        """Sample ``phi`` (points (n, d) -> values (n, d+1)) at the grid nodes."""
        u = grid_points(G, vs.dim)
        vals = np.asarray(phi(u), dtype=float).reshape((G,) * vs.dim + (vs.dim + 1,))
        return cls(G, vals, vs, t)

    @classmethod
    def constant(cls, vs: VelocitySet, G: int, c) -> "PdeState":
        vals = np.broadcast_to(np.asarray(c, dtype=float), (G,) * vs.dim + (vs.dim + 1,))
        return cls(G, vals.copy(), vs)

    def copy(self) -> "PdeState":
        return PdeState(self.G, self.values.copy(), self.vs, self.t)


def grid_points(G: int, d: int) -> np.ndarray:
    """Node coordinates in row-major order, matching Torus.positions()."""
    axes = np.meshgrid(*([np.arange(G) / G] * d), indexing="ij")
    return np.stack([a.ravel() for a in axes], axis=1)


def central_diff(f: np.ndarray, axis: int, h: float) -> np.ndarray:
    return (np.roll(f, -1, axis=axis) - np.roll(f, 1, axis=axis)) / (2.0 * h)


def laplacian(f: np.ndarray, d: int, h: float) -> np.ndarray:
    out = -2.0 * d * f
    for ax in range(d):
        out = out + np.roll(f, -1, axis=ax) + np.roll(f, 1, axis=ax)
    return out / (h * h)


def _rhs(phi: np.ndarray, C: np.ndarray | None, d: int, h: float) -> np.ndarray:
    out = laplacian(phi, d, h)
    if C is not None:
        grads = np.stack([central_diff(phi, ax, h) for ax in range(d)], axis=-1)  # (..., j, l)
        out = out + np.einsum("kijl,...i,...jl->...k", C, phi, grads)
    return out


def rhs(state: PdeState, *, diffusion_only: bool = False) -> np.ndarray:
    C = None if diffusion_only else _coupling(state.vs)
    return _rhs(state.values, C, state.d, state.h)


def _coupling(vs: VelocitySet) -> np.ndarray:
    if vs.coupling is None:
        from .errors import GramNotInvertible
        raise GramNotInvertible("coupling tensor needs an invertible Gram matrix")
    return vs.coupling


def functional(state_values: np.ndarray, F, G: int, d: int) -> float:
    """Midpoint-rule value of int F(u) . phi(u) du over the torus."""
    fv = np.asarray(F(grid_points(G, d)), dtype=float)
    return float(np.sum(fv * state_values.reshape(-1, d + 1)) / G ** d)


def integrate(state: PdeState, T_end: float, *, c_cfl: float = DEFAULT_CFL,
              functionals: dict | None = None, times=None,
              diffusion_only: bool = False) -> tuple[PdeState, dict]:
    """RK4 from state.t to T_end.

    The step is c_cfl * h^2, shortened per interval so that every requested
    time is hit exactly. Returns the final state and ``{id: [(t, value)]}``
    for the requested functionals (each a callable F(u) -> (n, d+1)).
    """
    if c_cfl <= 0:
        raise ConfigError("c_cfl must be positive")
    functionals = functionals or {}
    d, h, G = state.d, state.h, state.G
    C = None if diffusion_only else _coupling(state.vs)
    stops = sorted({float(t) for t in (times or []) if t <= T_end} | {float(T_end)})
    if stops[0] < state.t - 1e-15:
        raise ConfigError("requested times precede the state time")
    fvals = {fid: np.asarray(F(grid_points(G, d)), dtype=float).reshape(state.values.shape)
             for fid, F in functionals.items()}
    series: dict = {fid: [] for fid in functionals}
    phi = state.values.copy()
    t = state.t
    dt_max = c_cfl * h * h

    def record(t_now):
        for fid, fv in fvals.items():
            series[fid].append((t_now, float(np.sum(fv * phi) / G ** d)))

    if stops and abs(stops[0] - t) < 1e-15:
        record(t)
        stops = stops[1:]
    for stop in stops:
        n = max(1, math.ceil((stop - t) / dt_max - 1e-9))
        dt = (stop - t) / n
        for s in range(n):
            with np.errstate(over="ignore", invalid="ignore"):  # blow-up is checked below
                k1 = _rhs(phi, C, d, h)
                k2 = _rhs(phi + 0.5 * dt * k1, C, d, h)
                k3 = _rhs(phi + 0.5 * dt * k2, C, d, h)
                k4 = _rhs(phi + dt * k3, C, d, h)
                phi = phi + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.isfinite(phi).all():
                raise BlowUpDetected(f"non-finite field at t={t + (s + 1) * dt:.6g}",
                                     t=t + (s + 1) * dt)
        t = stop
        record(t)
    return PdeState(G, phi, state.vs, t), series


def fourier_decay_error(G: int, k: int, T: float, vs: VelocitySet, c_cfl: float = DEFAULT_CFL) -> float:
    """Relative error of a pure-diffusion sine mode against exp(-4 pi^2 k^2 T) (d=1 path)."""
    if vs.dim != 1:
        raise ConfigError("decay check is defined for d=1")
    phi0 = PdeState.from_function(
        vs, G, lambda u: np.outer(np.sin(2 * np.pi * k * u[:, 0]), np.ones(2)))
    out, _ = integrate(phi0, T, c_cfl=c_cfl, diffusion_only=True)
    exact = np.exp(-4 * np.pi ** 2 * k ** 2 * T) * phi0.values
    return float(np.max(np.abs(out.values - exact)) / np.max(np.abs(exact)))


def self_convergence(vs: VelocitySet, phi, T: float, grids=(64, 128, 256),
                     c_cfl: float = DEFAULT_CFL) -> dict:
    """Errors between successive grids on the coarsest nodes, and the observed order."""
    sols = []
    for G in grids:
        out, _ = integrate(PdeState.from_function(vs, G, phi), T, c_cfl=c_cfl)
        sols.append(out.values)
    G0 = grids[0]

    def coarse(v, G):
        step = G // G0
        sl = (slice(None, None, step),) * vs.dim
        return v[sl]

    errs = [float(np.max(np.abs(coarse(sols[j + 1], grids[j + 1]) - coarse(sols[j], grids[j]))))
            for j in range(len(grids) - 1)]
    ratio = errs[0] / errs[1] if len(errs) > 1 and errs[1] > 0 else math.inf
    return {"errors": errs, "ratio": ratio, "order": math.log2(ratio) if ratio > 0 else math.nan}
