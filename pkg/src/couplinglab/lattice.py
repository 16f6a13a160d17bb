"""Lattice geometry, configurations and local functions on a periodic box.

Sites of a ``Lattice`` are stored row-major with linear indices in ``[0, N)``.
Lattice points are written in centered coordinates: each axis runs over
``lo, ..., lo + L - 1`` with ``lo = -(L // 2)``, so the origin is the site
with linear index 0.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

MAX_DEPENDENCE = 20

Point = tuple[int, ...]


@dataclass(frozen=True)
class Lattice:
    d: int
    L: int

    def __post_init__(self):
        if self.d < 1 or self.L < 1:
            raise ValueError(f"need d >= 1 and L >= 1, got d={self.d}, L={self.L}")

    @property
    def N(self) -> int:
        return self.L**self.d

    @property
    def lo(self) -> int:
        return -(self.L // 2)

    def check_point(self, x: Sequence[int]) -> Point:
        x = tuple(int(c) for c in x)
        if len(x) != self.d:
            raise ValueError(f"point {x} has dimension {len(x)}, lattice has d={self.d}")
        hi = self.lo + self.L - 1
        for c in x:
            if not self.lo <= c <= hi:
                raise ValueError(f"coordinate {c} of {x} outside [{self.lo}, {hi}]")
        return x

    def site(self, x: Sequence[int]) -> int:
        """Linear index of a lattice point; coordinates are taken mod L."""
        idx = 0
        for c in x:
            idx = idx * self.L + (int(c) % self.L)
        return idx

    def point(self, site: int) -> Point:
        """Centered coordinates of a linear index."""
        if not 0 <= site < self.N:
            raise ValueError(f"site {site} outside [0, {self.N})")
        out = []
        for _ in range(self.d):
            site, r = divmod(site, self.L)
            out.append(_center(r, self.L))
        return tuple(reversed(out))

    @cached_property
    def points(self) -> np.ndarray:
        """(N, d) array of centered coordinates in storage order."""
        grids = np.indices((self.L,) * self.d).reshape(self.d, -1).T
        return (grids - self.lo) % self.L + self.lo

    @cached_property
    def _spiral(self) -> np.ndarray:
        pts = self.points
        shell = np.abs(pts).max(axis=1)
        order = np.lexsort(tuple(pts[:, k] for k in reversed(range(self.d))) + (shell,))
        index = np.empty(self.N, dtype=np.int64)
        index[order] = np.arange(self.N)
        return index

    def spiral_index(self, x: Sequence[int]) -> int:
        """Position of ``x`` in the shell-by-shell enumeration.

        Sites are ordered by increasing l-infinity radius around the origin and
        lexicographically by centered coordinates inside a shell.
        """
        x = self.check_point(x)
        return int(self._spiral[self.site(x)])

    def spiral_order(self) -> np.ndarray:
        """Linear site indices listed in spiral order."""
        return np.argsort(self._spiral)

    def neighbor_table(self, offsets: Sequence[Sequence[int]]) -> np.ndarray:
        """(N, K) table with ``table[s, j]`` the site ``s + offsets[j]``."""
        return _neighbor_table(self.d, self.L, tuple(tuple(int(c) for c in o) for o in offsets))


def _center(r: int, L: int) -> int:
    lo = -(L // 2)
    return (r - lo) % L + lo


_nbr_cache: dict = {}


def _neighbor_table(d: int, L: int, offsets: tuple) -> np.ndarray:
    key = (d, L, offsets)
    if key not in _nbr_cache:
        shape = (L,) * d
        idx = np.arange(L**d).reshape(shape)
        cols = []
        for off in offsets:
            # np.roll by -off puts the value at s + off into position s
            cols.append(np.roll(idx, tuple(-c for c in off), axis=tuple(range(d))).ravel())
        table = np.ascontiguousarray(np.stack(cols, axis=1).astype(np.int64))
        table.flags.writeable = False
        _nbr_cache[key] = table
    return _nbr_cache[key]


@dataclass(frozen=True, eq=False)
class Configuration:
    """Immutable 0/1 occupation field on a lattice."""

    lattice: Lattice
    occupation: np.ndarray

    def __post_init__(self):
        occ = np.array(self.occupation, dtype=np.uint8).reshape(-1)
        if occ.size != self.lattice.N:
            raise ValueError(f"expected {self.lattice.N} sites, got {occ.size}")
        if occ.max(initial=0) > 1:
            raise ValueError("occupation values must lie in {0, 1}")
        occ.flags.writeable = False
        object.__setattr__(self, "occupation", occ)

    @classmethod
    def zeros(cls, lattice: Lattice) -> Configuration:
        return cls(lattice, np.zeros(lattice.N, dtype=np.uint8))

    @classmethod
    def ones(cls, lattice: Lattice) -> Configuration:
        return cls(lattice, np.ones(lattice.N, dtype=np.uint8))

    @classmethod
    def bernoulli(cls, lattice: Lattice, rho: float, rng: np.random.Generator) -> Configuration:
        return cls(lattice, (rng.random(lattice.N) < rho).astype(np.uint8))

    def __eq__(self, other):
        if not isinstance(other, Configuration):
            return NotImplemented
        return self.lattice == other.lattice and np.array_equal(self.occupation, other.occupation)

    def __hash__(self):
        return hash((self.lattice, self.occupation.tobytes()))

    def __getitem__(self, i: int) -> int:
        return int(self.occupation[i])

    def with_value(self, i: int, value: int) -> Configuration:
        occ = self.occupation.copy()
        occ[i] = value
        return Configuration(self.lattice, occ)

    def count(self) -> int:
        return int(self.occupation.sum())

    def __le__(self, other: Configuration) -> bool:
        return bool(np.all(self.occupation <= other.occupation))


def flip(sigma: Configuration, i: int) -> Configuration:
    return sigma.with_value(i, 1 - sigma[i])


def swap(sigma: Configuration, i: int, j: int) -> Configuration:
    occ = sigma.occupation.copy()
    occ[i], occ[j] = occ[j], occ[i]
    return Configuration(sigma.lattice, occ)


def shift(sigma: Configuration, x: Sequence[int]) -> Configuration:
    """Translate by ``x``: the result at site ``y`` is ``sigma(y - x)``."""
    lat = sigma.lattice
    a = sigma.occupation.reshape((lat.L,) * lat.d)
    return Configuration(lat, np.roll(a, tuple(int(c) for c in x), axis=tuple(range(lat.d))).ravel())


@dataclass(frozen=True, eq=False)
class LocalFunction:
    """Real function of the occupations on a finite set of lattice points.

    ``values[idx]`` is the value on the restriction whose occupation at
    ``sites[j]`` is bit ``m - 1 - j`` of ``idx`` (lexicographic order, first
    site most significant).
    """

    sites: tuple[Point, ...]
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        sites = tuple(tuple(int(c) for c in s) for s in self.sites)
        if len(set(sites)) != len(sites):
            raise ValueError("dependence sites must be distinct")
        if len(sites) > MAX_DEPENDENCE:
            raise ValueError(f"at most {MAX_DEPENDENCE} dependence sites supported, got {len(sites)}")
        if sites and len({len(s) for s in sites}) != 1:
            raise ValueError("all dependence sites need the same dimension")
        vals = np.array(self.values, dtype=np.float64).reshape(-1)
        if vals.size != 2 ** len(sites):
            raise ValueError(f"value table needs {2 ** len(sites)} entries, got {vals.size}")
        vals.flags.writeable = False
        object.__setattr__(self, "sites", sites)
        object.__setattr__(self, "values", vals)

    @property
    def m(self) -> int:
        return len(self.sites)

    @classmethod
    def from_callable(cls, sites: Iterable[Sequence[int]], fn) -> LocalFunction:
        """Tabulate ``fn(bits)`` where ``bits`` is the tuple of occupations on ``sites``."""
        sites = tuple(tuple(s) for s in sites)
        table = [fn(bits) for bits in itertools.product((0, 1), repeat=len(sites))]
        return cls(sites, np.array(table, dtype=np.float64))

    @classmethod
    def constant(cls, c: float) -> LocalFunction:
        return cls((), np.array([c], dtype=np.float64))

    @classmethod
    def occupation(cls, x: Sequence[int]) -> LocalFunction:
        return cls((tuple(x),), np.array([0.0, 1.0]))

    @classmethod
    def from_literal(cls, literal: Mapping) -> LocalFunction:
        return cls(tuple(tuple(s) for s in literal["sites"]), np.array(literal["values"], dtype=np.float64))

    def to_literal(self) -> dict:
        return {"sites": [list(s) for s in self.sites], "values": self.values.tolist()}

    def shifted(self, x: Sequence[int]) -> LocalFunction:
        """The function ``sigma -> f(shift(sigma, x))``; it depends on ``D_f - x``."""
        return LocalFunction(tuple(tuple(a - b for a, b in zip(s, x)) for s in self.sites), self.values)

    def evaluate_many(self, occupations: np.ndarray, lattice: Lattice) -> np.ndarray:
        """Values on a batch of configurations, ``occupations`` of shape (n, N)."""
        occ = np.atleast_2d(occupations)
        idx = np.zeros(occ.shape[0], dtype=np.int64)
        for s in self.sites:
            idx = (idx << 1) | occ[:, lattice.site(s)]
        return self.values[idx]

    def __call__(self, sigma: Configuration) -> float:
        return float(self.evaluate_many(sigma.occupation[None, :], sigma.lattice)[0])


def _bits(m: int) -> np.ndarray:
    idx = np.arange(2**m, dtype=np.int64)
    return (idx[:, None] >> np.arange(m - 1, -1, -1)) & 1


def delta_vector(f: LocalFunction) -> dict[Point, float]:
    """Variation ``max_eta f(eta^i) - f(eta)`` at every dependence site."""
    idx = np.arange(2**f.m, dtype=np.int64)
    out = {}
    for j, s in enumerate(f.sites):
        bit = 1 << (f.m - 1 - j)
        out[s] = float(np.max(f.values[idx ^ bit] - f.values))
    return out


def lp_norm(delta: Mapping | Sequence[float] | np.ndarray, p: float) -> float:
    if p < 1:
        raise ValueError(f"lp_norm needs p >= 1, got {p}")
    vals = np.fromiter(delta.values(), dtype=np.float64) if isinstance(delta, Mapping) else np.asarray(delta, dtype=np.float64)
    if vals.size == 0:
        return 0.0
    if math.isinf(p):
        return float(np.max(np.abs(vals)))
    return float(np.sum(np.abs(vals) ** p) ** (1.0 / p))


@dataclass(frozen=True)
class SpatialAverageSpec:
    window: tuple[Point, ...]
    alpha: float

    def __post_init__(self):
        window = tuple(tuple(int(c) for c in x) for x in self.window)
        if not window:
            raise ValueError("spatial-average window must contain at least one site")
        if len(set(window)) != len(window):
            raise ValueError("window sites must be distinct")
        object.__setattr__(self, "window", window)


def spatial_average(f: LocalFunction, spec: SpatialAverageSpec, lattice: Lattice | None = None) -> LocalFunction:
    """``|window|^-alpha * sum_x f o shift(., x)`` as an explicit local function.

    With ``lattice`` given, the dependence set must fit in the torus without
    two points landing on the same site.
    """
    if f.m == 0:
        return LocalFunction.constant(f.values[0] * len(spec.window) ** (1.0 - spec.alpha))
    shifted = [f.shifted(x) for x in spec.window]
    union = sorted({s for g in shifted for s in g.sites})
    if len(union) > MAX_DEPENDENCE:
        raise ValueError(f"averaged function depends on {len(union)} > {MAX_DEPENDENCE} sites")
    if lattice is not None:
        wrapped = {lattice.site(s) for s in union}
        if len(wrapped) != len(union):
            raise ValueError("shifted dependence sets overlap after wrapping on the torus")
    pos = {s: k for k, s in enumerate(union)}
    bits = _bits(len(union))
    total = np.zeros(2 ** len(union))
    for g in shifted:
        idx = np.zeros(bits.shape[0], dtype=np.int64)
        for s in g.sites:
            idx = (idx << 1) | bits[:, pos[s]]
        total += g.values[idx]
    return LocalFunction(tuple(union), total * len(spec.window) ** (-spec.alpha))
