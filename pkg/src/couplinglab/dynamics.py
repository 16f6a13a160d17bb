"""Graphical construction of lattice dynamics and the basic coupling of two copies.

Every dynamics is driven by a merged Poisson stream of rate ``N * M`` whose
events carry a uniformly chosen site and a uniform mark in ``[0, 1)``.

* exclusion (SEP, ASEP): ``M`` is the walk's jump rate, the mark picks the
  bond direction through the cumulative jump law, and the exchange happens iff
  the source is occupied and the target empty;
* voter: the mark picks the neighbour whose opinion is copied;
* contact: ``M = 1 + 2 d lambda``; an occupied site recovers iff
  ``mark >= 1 - 1/M``, an empty site is infected iff ``mark < lambda n / M``
  with ``n`` the number of occupied neighbours;
* heat-bath Glauber: ``M = 1``, the site is set to 1 iff ``mark < mu(1 | rest)``.

Feeding the same stream to two copies realizes the basic coupling; all
rules above are monotone in the configuration.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

from .gibbs1d import Interaction
from .lattice import Configuration, Lattice
from .montecarlo import substream
from .random_walk import JumpKernel

EXCLUSION, VOTER, CONTACT, GLAUBER = 0, 1, 2, 3
KINDS = ("SEP", "ASEP", "Voter", "Contact", "GlauberHeatBath")


class HorizonError(RuntimeError):
    pass


class InvariantViolation(RuntimeError):
    pass


def _nn_offsets(d: int) -> tuple[tuple[int, ...], ...]:
    out = []
    for k in range(d):
        for s in (1, -1):
            e = [0] * d
            e[k] = s
            out.append(tuple(e))
    return tuple(out)


@dataclass(frozen=True)
class ProcessSpec:
    kind: str
    kernel: JumpKernel | None = None
    lam: float | None = None
    interaction: Interaction | None = None
    d: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown process kind {self.kind!r}")
        if self.kind in ("SEP", "Voter"):
            if self.kernel is None or not self.kernel.symmetric:
                raise ValueError(f"{self.kind} needs a symmetric jump kernel")
        if self.kind == "ASEP":
            k = self.kernel
            if k is None or k.d != 1 or set(k.offsets) - {(1,), (-1,)}:
                raise ValueError("ASEP needs a one-dimensional nearest-neighbour kernel")
            if k.symmetric:
                raise ValueError("ASEP needs p != q")
        if self.kernel is not None:
            object.__setattr__(self, "d", self.kernel.d)
        if self.kind == "Contact" and not (self.lam is not None and self.lam > 0):
            raise ValueError("contact process needs lambda > 0")
        if self.kind == "GlauberHeatBath":
            if self.interaction is None:
                raise ValueError("Glauber dynamics needs an interaction")
            if self.d != 1:
                raise ValueError("Glauber dynamics is one-dimensional here")

    @classmethod
    def sep(cls, kernel: JumpKernel) -> ProcessSpec:
        return cls("SEP", kernel=kernel)

    @classmethod
    def asep(cls, p: float) -> ProcessSpec:
        return cls("ASEP", kernel=JumpKernel.asymmetric_nn(p))

    @classmethod
    def voter(cls, kernel: JumpKernel) -> ProcessSpec:
        return cls("Voter", kernel=kernel)

    @classmethod
    def contact(cls, lam: float, d: int = 1) -> ProcessSpec:
        return cls("Contact", lam=lam, d=d)

    @classmethod
    def glauber(cls, interaction: Interaction) -> ProcessSpec:
        return cls("GlauberHeatBath", interaction=interaction)

    @property
    def code(self) -> int:
        return {"SEP": EXCLUSION, "ASEP": EXCLUSION, "Voter": VOTER, "Contact": CONTACT}.get(self.kind, GLAUBER)

    @property
    def offsets(self) -> tuple[tuple[int, ...], ...]:
        if self.kernel is not None:
            return self.kernel.offsets
        if self.kind == "Contact":
            return _nn_offsets(self.d)
        R = self.interaction.R
        return tuple((j,) for j in range(-R, R + 1) if j != 0)

    @property
    def rate_bound(self) -> float:
        """Per-site clock rate ``M``."""
        if self.kernel is not None:
            return self.kernel.rate
        if self.kind == "Contact":
            return 1.0 + 2.0 * self.d * self.lam
        return 1.0

    @property
    def rate_limits(self) -> tuple[float, float]:
        """``(eps, K)`` with ``eps <= c(i, sigma) <= K`` for spin-flip dynamics."""
        if self.kind == "GlauberHeatBath":
            return self.interaction.rate_bounds()
        if self.kind == "Contact":
            return 0.0, max(1.0, 2 * self.d * self.lam)
        return 0.0, 1.0

    @property
    def monotone(self) -> bool:
        return self.kind != "GlauberHeatBath" or self.interaction.beta >= 0

    def kernel_args(self, lattice: Lattice):
        if lattice.d != self.d:
            raise ValueError(f"process is {self.d}-dimensional, lattice is {lattice.d}-dimensional")
        offs = self.offsets
        reach = max(max(abs(c) for c in o) for o in offs)
        if 2 * reach >= lattice.L:
            raise ValueError("torus too small for the interaction range")
        nbr = lattice.neighbor_table(offs)
        cum = np.cumsum(self.kernel.probs) if self.kernel is not None else np.ones(1)
        if self.kind == "GlauberHeatBath":
            jv = np.array([self.interaction.J(abs(o[0])) for o in offs])
        else:
            jv = np.zeros(len(offs))
        M = self.rate_bound
        birth = (self.lam / M) if self.kind == "Contact" else 0.0
        death = (1.0 - 1.0 / M) if self.kind == "Contact" else 1.0
        return self.code, nbr, cum, jv, birth, death, lattice.N * M


# numba kernels


@njit(nogil=True, cache=True)
def _channel(cum, u):
    j = 0
    while j < cum.size - 1 and u >= cum[j]:
        j += 1
    return j


@njit(nogil=True, cache=True)
def _step(kind, occ, x, u, nbr, cum, jv, birth, death):
    if kind == 0:
        y = nbr[x, _channel(cum, u)]
        if occ[x] == 1 and occ[y] == 0:
            occ[x] = 0
            occ[y] = 1
    elif kind == 1:
        occ[x] = occ[nbr[x, _channel(cum, u)]]
    elif kind == 2:
        if occ[x] == 1:
            if u >= death:
                occ[x] = 0
        else:
            n = 0
            for j in range(nbr.shape[1]):
                n += occ[nbr[x, j]]
            if u < n * birth:
                occ[x] = 1
    else:
        h = 0.0
        for j in range(nbr.shape[1]):
            h += jv[j] * (2 * occ[nbr[x, j]] - 1)
        occ[x] = 1 if u < 1.0 / (1.0 + math.exp(-2.0 * h)) else 0


@njit(nogil=True, cache=True)
def _run_stream(kind, a, b, coupled, nbr, cum, jv, birth, death, times, sites, marks, start, t):
    """Apply stream events with index >= start and time <= t; returns the next index."""
    k = start
    while k < times.size and times[k] <= t:
        _step(kind, a, sites[k], marks[k], nbr, cum, jv, birth, death)
        if coupled:
            _step(kind, b, sites[k], marks[k], nbr, cum, jv, birth, death)
        k += 1
    return k


@njit(nogil=True, cache=True)
def _site_mark(rng, N):
    # one uniform gives both the site and an independent mark (its fractional part)
    v = rng.random() * N
    x = int(v)
    if x >= N:
        x = N - 1
    return x, v - x


@njit(nogil=True, cache=True)
def _single_grid(kind, starts, ts, total_rate, nbr, cum, jv, birth, death, rng, out):
    n, N = starts.shape
    occ = np.empty(N, np.uint8)
    for r in range(n):
        occ[:] = starts[r]
        prev = 0.0
        for g in range(ts.size):
            m = rng.poisson(total_rate * (ts[g] - prev))
            prev = ts[g]
            for _ in range(m):
                x, u = _site_mark(rng, N)
                _step(kind, occ, x, u, nbr, cum, jv, birth, death)
            out[r, g] = occ


@njit(nogil=True, cache=True)
def _coupled_grid(kind, starts_a, starts_b, ts, total_rate, nbr, cum, jv, birth, death, rng, out_a, out_b):
    n, N = starts_a.shape
    a = np.empty(N, np.uint8)
    b = np.empty(N, np.uint8)
    for r in range(n):
        a[:] = starts_a[r]
        b[:] = starts_b[r]
        prev = 0.0
        for g in range(ts.size):
            m = rng.poisson(total_rate * (ts[g] - prev))
            prev = ts[g]
            for _ in range(m):
                x, u = _site_mark(rng, N)
                _step(kind, a, x, u, nbr, cum, jv, birth, death)
                _step(kind, b, x, u, nbr, cum, jv, birth, death)
            out_a[r, g] = a
            out_b[r, g] = b


@njit(nogil=True, cache=True)
def _discrepancy_counts(kind, envs, origin, ts, total_rate, nbr, cum, jv, birth, death, rng, counts, sizes):
    """Runs from ``(env with 1 at origin, env with 0 at origin)``.

    ``counts[g, k]`` accumulates discrepancy indicators, ``sizes[r, g]`` the
    discrepancy cardinality per run. A run stops once the copies coincide.
    """
    n, N = envs.shape
    a = np.empty(N, np.uint8)
    b = np.empty(N, np.uint8)
    for r in range(n):
        a[:] = envs[r]
        b[:] = envs[r]
        a[origin] = 1
        b[origin] = 0
        nd = 1
        prev = 0.0
        for g in range(ts.size):
            if nd == 0:
                break
            m = rng.poisson(total_rate * (ts[g] - prev))
            prev = ts[g]
            for _ in range(m):
                x, u = _site_mark(rng, N)
                if kind == 0:
                    y = nbr[x, _channel(cum, u)]
                    before = (a[x] != b[x]) + (a[y] != b[y])
                    _step(kind, a, x, u, nbr, cum, jv, birth, death)
                    _step(kind, b, x, u, nbr, cum, jv, birth, death)
                    nd += (a[x] != b[x]) + (a[y] != b[y]) - before
                else:
                    before = a[x] != b[x]
                    _step(kind, a, x, u, nbr, cum, jv, birth, death)
                    _step(kind, b, x, u, nbr, cum, jv, birth, death)
                    nd += (a[x] != b[x]) - before
                if nd == 0:
                    break
            if nd > 0:
                for k in range(N):
                    if a[k] != b[k]:
                        counts[g, k] += 1
            sizes[r, g] = nd


@njit(nogil=True, cache=True)
def _sc_event(a, b, x, y, step, X, disp, nd):
    """Exclusion exchange across ``x -> y`` in both copies with second-class bookkeeping."""
    before = (a[x] != b[x]) + (a[y] != b[y])
    if a[x] == 1 and a[y] == 0:
        a[x] = 0
        a[y] = 1
    if b[x] == 1 and b[y] == 0:
        b[x] = 0
        b[y] = 1
    nd += (a[x] != b[x]) + (a[y] != b[y]) - before
    if X == x and a[x] == b[x]:
        X = y
        disp += step
    elif X == y and a[y] == b[y]:
        X = x
        disp -= step
    return X, disp, nd


@njit(nogil=True, cache=True)
def _second_class(envs, n_rep, origin, ts, total_rate, nbr, cum, steps, rng, disp_out):
    """Second-class displacement at grid times; returns the first run index violating ``|discrepancy| = 1`` or -1."""
    n_env, N = envs.shape
    a = np.empty(N, np.uint8)
    b = np.empty(N, np.uint8)
    for e in range(n_env):
        for r in range(n_rep):
            a[:] = envs[e]
            b[:] = envs[e]
            a[origin] = 1
            b[origin] = 0
            X = origin
            disp = 0
            nd = 1
            prev = 0.0
            for g in range(ts.size):
                m = rng.poisson(total_rate * (ts[g] - prev))
                prev = ts[g]
                for _ in range(m):
                    x, u = _site_mark(rng, N)
                    j = _channel(cum, u)
                    X, disp, nd = _sc_event(a, b, x, nbr[x, j], steps[j], X, disp, nd)
                    if nd != 1 or a[X] == b[X]:
                        return e * n_rep + r
                disp_out[e, r, g] = disp
    return -1


@njit(nogil=True, cache=True)
def _second_class_stream(a, b, X, nbr, cum, steps, times, sites, marks, t):
    disp = 0
    nd = 1
    k = 0
    while k < times.size and times[k] <= t:
        x = sites[k]
        j = _channel(cum, marks[k])
        X, disp, nd = _sc_event(a, b, x, nbr[x, j], steps[j], X, disp, nd)
        if nd != 1 or a[X] == b[X]:
            return X, disp, k
        k += 1
    return X, disp, -1


# event streams


@dataclass(frozen=True, eq=False)
class EventStream:
    """Realized merged Poisson events on ``[0, horizon]`` with sites and marks.

    ``extended`` appends an independent segment drawn from a substream keyed
    by the segment number, so a stream is a deterministic function of its seed
    and its sequence of horizons.
    """

    seed: int
    horizon: float
    n_sites: int
    rate: float
    times: np.ndarray = field(repr=False)
    sites: np.ndarray = field(repr=False)
    marks: np.ndarray = field(repr=False)
    segments: int = 1

    @staticmethod
    def _segment(seed, k, n_sites, rate, t0, t1):
        rng = substream(seed, "events", k)
        m = rng.poisson(rate * (t1 - t0))
        times = np.sort(rng.uniform(t0, t1, m))
        return times, rng.integers(0, n_sites, m).astype(np.int64), rng.random(m)

    @classmethod
    def generate(cls, seed: int, lattice: Lattice, spec: ProcessSpec, horizon: float) -> EventStream:
        if horizon < 0:
            raise ValueError("horizon must be nonnegative")
        rate = lattice.N * spec.rate_bound
        times, sites, marks = cls._segment(seed, 0, lattice.N, rate, 0.0, horizon)
        return cls(seed, float(horizon), lattice.N, rate, times, sites, marks, 1)

    def extended(self, horizon: float) -> EventStream:
        if horizon <= self.horizon:
            return self
        times, sites, marks = self._segment(self.seed, self.segments, self.n_sites, self.rate, self.horizon, horizon)
        return EventStream(
            self.seed,
            float(horizon),
            self.n_sites,
            self.rate,
            np.concatenate([self.times, times]),
            np.concatenate([self.sites, sites]),
            np.concatenate([self.marks, marks]),
            self.segments + 1,
        )

    def check(self, lattice: Lattice, spec: ProcessSpec, t: float) -> None:
        if t > self.horizon:
            raise HorizonError(f"stream horizon {self.horizon} < t = {t}; extend it with stream.extended({t})")
        if self.n_sites != lattice.N or abs(self.rate - lattice.N * spec.rate_bound) > 1e-12 * self.rate:
            raise ValueError("stream was generated for a different lattice or rate bound")


def evolve(sigma: Configuration, spec: ProcessSpec, t: float, stream: EventStream) -> Configuration:
    stream.check(sigma.lattice, spec, t)
    kind, nbr, cum, jv, birth, death, _ = spec.kernel_args(sigma.lattice)
    a = sigma.occupation.copy()
    _run_stream(kind, a, a, False, nbr, cum, jv, birth, death, stream.times, stream.sites, stream.marks, 0, t)
    return Configuration(sigma.lattice, a)


def evolve_coupled(
    sigma1: Configuration, sigma2: Configuration, spec: ProcessSpec, t: float, stream: EventStream
) -> tuple[Configuration, Configuration]:
    if sigma1.lattice != sigma2.lattice:
        raise ValueError("copies live on different lattices")
    stream.check(sigma1.lattice, spec, t)
    kind, nbr, cum, jv, birth, death, _ = spec.kernel_args(sigma1.lattice)
    a = sigma1.occupation.copy()
    b = sigma2.occupation.copy()
    _run_stream(kind, a, b, True, nbr, cum, jv, birth, death, stream.times, stream.sites, stream.marks, 0, t)
    return Configuration(sigma1.lattice, a), Configuration(sigma2.lattice, b)


def discrepancy_profile(sigma1: Configuration, sigma2: Configuration) -> frozenset[int]:
    if sigma1.lattice != sigma2.lattice:
        raise ValueError("configurations live on different lattices")
    return frozenset(int(k) for k in np.nonzero(sigma1.occupation != sigma2.occupation)[0])


@dataclass(frozen=True, eq=False)
class DiscrepancyTrace:
    times: np.ndarray
    sets: tuple[frozenset[int], ...]
    second_class: np.ndarray | None = None


def discrepancy_trace(
    sigma1: Configuration, sigma2: Configuration, spec: ProcessSpec, ts: Sequence[float], stream: EventStream
) -> DiscrepancyTrace:
    ts = np.asarray(sorted(ts), dtype=float)
    stream.check(sigma1.lattice, spec, float(ts[-1]) if ts.size else 0.0)
    kind, nbr, cum, jv, birth, death, _ = spec.kernel_args(sigma1.lattice)
    a = sigma1.occupation.copy()
    b = sigma2.occupation.copy()
    k = 0
    sets = []
    for t in ts:
        k = _run_stream(kind, a, b, True, nbr, cum, jv, birth, death, stream.times, stream.sites, stream.marks, k, t)
        sets.append(frozenset(int(s) for s in np.nonzero(a != b)[0]))
    positions = None
    if spec.kind == "ASEP" and all(len(s) == 1 for s in sets):
        positions = np.array([next(iter(s)) for s in sets])
    return DiscrepancyTrace(ts, tuple(sets), positions)


def _second_class_args(spec: ProcessSpec, lattice: Lattice):
    if spec.kernel is None or spec.kernel.d != 1 or set(spec.kernel.offsets) - {(1,), (-1,)}:
        raise ValueError("second-class tracking needs a one-dimensional nearest-neighbour exclusion")
    nbr = lattice.neighbor_table(spec.kernel.offsets)
    cum = np.cumsum(spec.kernel.probs)
    steps = np.array([o[0] for o in spec.kernel.offsets], dtype=np.int64)
    return nbr, cum, steps


def track_second_class(sigma: Configuration, i: int, spec: ProcessSpec, t: float, stream: EventStream) -> int:
    """Site of the unique discrepancy at time ``t`` started from ``(sigma with 1 at i, sigma with 0 at i)``."""
    if spec.kind != "ASEP":
        raise ValueError("second-class tracking is defined for ASEP")
    lat = sigma.lattice
    stream.check(lat, spec, t)
    nbr, cum, steps = _second_class_args(spec, lat)
    a = sigma.occupation.copy()
    b = sigma.occupation.copy()
    a[i], b[i] = 1, 0
    X, _, bad = _second_class_stream(a, b, i, nbr, cum, steps, stream.times, stream.sites, stream.marks, t)
    if bad >= 0:
        raise InvariantViolation(f"discrepancy count left 1 at event {bad}")
    return int(X)


# batch entry points used by the estimators


def simulate_grid(starts: np.ndarray, spec: ProcessSpec, lattice: Lattice, ts: Sequence[float], rng: np.random.Generator) -> np.ndarray:
    """Configurations of independent runs at each grid time, shape ``(n, G, N)``."""
    ts = np.asarray(ts, dtype=float)
    kind, nbr, cum, jv, birth, death, rate = spec.kernel_args(lattice)
    starts = np.ascontiguousarray(starts, dtype=np.uint8)
    out = np.empty((starts.shape[0], ts.size, lattice.N), np.uint8)
    _single_grid(kind, starts, ts, rate, nbr, cum, jv, birth, death, rng, out)
    return out


def simulate_coupled_grid(
    starts_a: np.ndarray, starts_b: np.ndarray, spec: ProcessSpec, lattice: Lattice, ts: Sequence[float], rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    ts = np.asarray(ts, dtype=float)
    kind, nbr, cum, jv, birth, death, rate = spec.kernel_args(lattice)
    sa = np.ascontiguousarray(starts_a, dtype=np.uint8)
    sb = np.ascontiguousarray(starts_b, dtype=np.uint8)
    out_a = np.empty((sa.shape[0], ts.size, lattice.N), np.uint8)
    out_b = np.empty_like(out_a)
    _coupled_grid(kind, sa, sb, ts, rate, nbr, cum, jv, birth, death, rng, out_a, out_b)
    return out_a, out_b


def discrepancy_counts(envs: np.ndarray, spec: ProcessSpec, lattice: Lattice, ts: Sequence[float], rng: np.random.Generator, origin: int = 0):
    """Per-site discrepancy counts ``(G, N)`` and per-run cardinalities ``(n, G)``."""
    ts = np.asarray(ts, dtype=float)
    kind, nbr, cum, jv, birth, death, rate = spec.kernel_args(lattice)
    envs = np.ascontiguousarray(envs, dtype=np.uint8)
    counts = np.zeros((ts.size, lattice.N), np.int64)
    sizes = np.zeros((envs.shape[0], ts.size), np.int64)
    _discrepancy_counts(kind, envs, origin, ts, rate, nbr, cum, jv, birth, death, rng, counts, sizes)
    return counts, sizes


def second_class_displacements(
    envs: np.ndarray, n_rep: int, spec: ProcessSpec, lattice: Lattice, ts: Sequence[float], rng: np.random.Generator, origin: int = 0
) -> np.ndarray:
    """Unwrapped second-class displacement, shape ``(n_env, n_rep, G)``; aborts on a broken invariant."""
    ts = np.asarray(ts, dtype=float)
    nbr, cum, steps = _second_class_args(spec, lattice)
    envs = np.ascontiguousarray(envs, dtype=np.uint8)
    out = np.zeros((envs.shape[0], n_rep, ts.size), np.int64)
    bad = _second_class(envs, n_rep, origin, ts, lattice.N * spec.rate_bound, nbr, cum, steps, rng, out)
    if bad >= 0:
        raise InvariantViolation(f"discrepancy count left 1 in run {bad}")
    return out


def write_trajectory_csv(path, sigma: Configuration, spec: ProcessSpec, ts: Sequence[float], stream: EventStream) -> None:
    """Dump ``(time, site, value)`` rows of one trajectory at the given times."""
    stream.check(sigma.lattice, spec, max(ts))
    kind, nbr, cum, jv, birth, death, _ = spec.kernel_args(sigma.lattice)
    a = sigma.occupation.copy()
    k = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "site", "value"])
        for t in sorted(ts):
            k = _run_stream(kind, a, a, False, nbr, cum, jv, birth, death, stream.times, stream.sites, stream.marks, k, t)
            for s in range(a.size):
                w.writerow([t, s, int(a[s])])
