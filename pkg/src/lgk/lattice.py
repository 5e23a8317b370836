"""Discrete torus, particle configurations, local moves and conserved totals."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import BoxTooLarge, CollisionNotEnabled, ConfigError, NotNeighbors
from .velocity import ExactVector, VelocitySet

SNAPSHOT_MAGIC = b"LGKC"
SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class Torus:
    dim: int
    side: int
    strides: tuple[int, ...] = field(init=False)
    neighbors: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.dim < 1 or self.side < 1:
            raise ValueError("torus needs dim >= 1 and side >= 1")
        # row-major: last coordinate varies fastest
        strides = tuple(self.side ** (self.dim - 1 - j) for j in range(self.dim))
        object.__setattr__(self, "strides", strides)
        coords = self.coords(np.arange(self.n_sites))
        nb = np.empty((self.n_sites, 2 * self.dim), dtype=np.int64)
        for j in range(self.dim):
            for s, sgn in enumerate((1, -1)):
                c = coords.copy()
                c[:, j] = (c[:, j] + sgn) % self.side
                nb[:, 2 * j + s] = self.index(c)
        nb.setflags(write=False)
        object.__setattr__(self, "neighbors", nb)

    @property
    def n_sites(self) -> int:
        return self.side ** self.dim

    def coords(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        out = np.empty(idx.shape + (self.dim,), dtype=np.int64)
        rem = idx.copy()
        for j, s in enumerate(self.strides):
            out[..., j], rem = np.divmod(rem, s)
        return out

    def index(self, coords) -> np.ndarray | int:
        c = np.asarray(coords, dtype=np.int64) % self.side
        idx = c @ np.asarray(self.strides, dtype=np.int64)
        return int(idx) if np.ndim(idx) == 0 else idx

    def shift(self, x: int, z) -> int:
        return self.index(self.coords(x) + np.asarray(z))

    def displacement(self, x: int, y: int) -> np.ndarray | None:
        """Unit vector y - x on the torus, or None if x, y are not neighbors."""
        for k in range(2 * self.dim):
            if self.neighbors[x, k] == y:
                z = np.zeros(self.dim, dtype=np.int64)
                z[k // 2] = 1 if k % 2 == 0 else -1
                return z
        return None

    def positions(self) -> np.ndarray:
        """Macroscopic positions x/N in [0,1)^d, one row per site."""
        return self.coords(np.arange(self.n_sites)) / self.side


@dataclass(frozen=True)
class Box:
    center: int
    radius: int
    members: np.ndarray

    @classmethod
    def around(cls, torus: Torus, center: int, radius: int) -> "Box":
        if 2 * radius + 1 > torus.side:
            raise BoxTooLarge(f"box of radius {radius} does not fit a torus of side {torus.side}")
        offs = np.array(np.meshgrid(*[np.arange(-radius, radius + 1)] * torus.dim,
                                    indexing="ij")).reshape(torus.dim, -1).T
        members = torus.index(torus.coords(center) + offs)
        return cls(center, radius, np.atleast_1d(members))


class Configuration:
    """Occupancies eta_x(v), stored species-major as a (|V|, N^d) 0/1 byte array."""

    def __init__(self, torus: Torus, vs: VelocitySet, occupancy=None, *, check: bool = False):
        self.torus = torus
        self.vs = vs
        if occupancy is None:
            occupancy = np.zeros((len(vs), torus.n_sites), dtype=np.uint8)
        occ = np.ascontiguousarray(occupancy, dtype=np.uint8)
        if occ.shape != (len(vs), torus.n_sites):
            raise ConfigError(f"occupancy shape {occ.shape} != {(len(vs), torus.n_sites)}")
        if occ.size and occ.max() > 1:
            raise ConfigError("occupancies must be 0 or 1")
        self.occupancy = occ
        self.check = check
        self.totals_exact = exact_totals(self.occupancy, vs)

    @property
    def species_count(self) -> int:
        return len(self.vs)

    @property
    def totals(self) -> np.ndarray:
        return self.totals_exact.evaluate(self.vs.basis)

    def copy(self) -> "Configuration":
        c = Configuration.__new__(Configuration)
        c.torus, c.vs, c.check = self.torus, self.vs, self.check
        c.occupancy = self.occupancy.copy()
        c.totals_exact = self.totals_exact
        return c

    def species_counts(self) -> np.ndarray:
        return self.occupancy.sum(axis=1, dtype=np.int64)

    def site_pattern(self, x: int) -> int:
        """Occupancy of site x as a bitmask over species."""
        return int(self.occupancy[:, x] @ (1 << np.arange(self.species_count)))

    def local_fields(self) -> np.ndarray:
        """I(eta_x) for every site, shape (N^d, d+1)."""
        return self.occupancy.T.astype(float) @ self.vs.lifted

    def verify_totals(self):
        if exact_totals(self.occupancy, self.vs) != self.totals_exact:
            raise AssertionError("cached mass-momentum totals out of sync")

    def __eq__(self, other):
        return (isinstance(other, Configuration) and self.torus == other.torus
                and np.array_equal(self.occupancy, other.occupancy))

    # snapshot format -------------------------------------------------------
    def to_bytes(self, labels: list[str] | None = None) -> bytes:
        """Header ``LGKC | u8 version | u8 d | u32 N | u32 |V| | labels`` then packed bits.

        Each label is a u16 byte length followed by UTF-8. Bits are the
        occupancy array flattened species-major (bit index v*N^d + x), packed
        little-endian within bytes, zero padded to a whole byte.
        """
        labels = labels if labels is not None else self.vs.describe()
        head = SNAPSHOT_MAGIC + struct.pack("<BBII", SNAPSHOT_VERSION, self.torus.dim,
                                            self.torus.side, self.species_count)
        for lab in labels:
            raw = lab.encode("utf-8")
            head += struct.pack("<H", len(raw)) + raw
        return head + np.packbits(self.occupancy.reshape(-1), bitorder="little").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, vs: VelocitySet) -> "Configuration":
        if data[:4] != SNAPSHOT_MAGIC:
            raise ConfigError("not an lgk configuration snapshot")
        version, d, n, s = struct.unpack_from("<BBII", data, 4)
        if version != SNAPSHOT_VERSION or s != len(vs) or d != vs.dim:
            raise ConfigError("snapshot header does not match velocity set")
        off = 4 + struct.calcsize("<BBII")
        for _ in range(s):
            (ln,) = struct.unpack_from("<H", data, off)
            off += 2 + ln
        torus = Torus(d, n)
        nbits = s * torus.n_sites
        bits = np.unpackbits(np.frombuffer(data[off:], dtype=np.uint8), count=nbits,
                             bitorder="little")
        return cls(torus, vs, bits.reshape(s, torus.n_sites))


def exact_totals(occupancy: np.ndarray, vs: VelocitySet) -> ExactVector:
    counts = occupancy.sum(axis=1, dtype=np.int64)
    total = ExactVector.zero(vs.dim + 1, len(vs.basis))
    for k, v in zip(counts, vs.velocities):
        if k:
            total = total + v.lifted().scale(Fraction(int(k)))
    return total


def local_mass_momentum(cfg: Configuration, vs: VelocitySet, x: int) -> np.ndarray:
    return cfg.occupancy[:, x].astype(float) @ vs.lifted


def block_average(cfg: Configuration, vs: VelocitySet, x: int, M: int) -> np.ndarray:
    box = Box.around(cfg.torus, x, M)
    fields = cfg.occupancy[:, box.members].astype(float).T @ vs.lifted
    return fields.mean(axis=0)


def apply_swap(cfg: Configuration, x: int, y: int, v: int) -> Configuration:
    if cfg.torus.displacement(x, y) is None:
        raise NotNeighbors(f"sites {x} and {y} are not nearest neighbours")
    occ = cfg.occupancy
    occ[v, x], occ[v, y] = occ[v, y], occ[v, x]
    if cfg.check:
        cfg.verify_totals()
    return cfg


def collision_indicator(cfg: Configuration, x: int, q) -> int:
    v, w, v2, w2 = q
    o = cfg.occupancy[:, x]
    return int(o[v]) * int(o[w]) * (1 - int(o[v2])) * (1 - int(o[w2]))


def apply_collision(cfg: Configuration, x: int, q) -> Configuration:
    if not collision_indicator(cfg, x, q):
        raise CollisionNotEnabled(f"collision {tuple(q)} not possible at site {x}")
    v, w, v2, w2 = q
    occ = cfg.occupancy
    occ[v, x] = occ[w, x] = 0
    occ[v2, x] = occ[w2, x] = 1
    if cfg.check:
        cfg.verify_totals()
    return cfg


def reverse_collision(q):
    v, w, v2, w2 = q
    return (v2, w2, v, w)
