"""Continuous-time random walks on a torus: exact transition rows by uniformization."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .concentration import CouplingKernel
from .lattice import Lattice


@dataclass(frozen=True)
class JumpKernel:
    """Finitely supported jump law ``p(0, x)`` of a walk that jumps at total ``rate``."""

    d: int
    offsets: tuple[tuple[int, ...], ...]
    probs: tuple[float, ...]
    rate: float = 1.0

    def __post_init__(self):
        offsets = tuple(tuple(int(c) for c in o) for o in self.offsets)
        probs = tuple(float(p) for p in self.probs)
        if len(offsets) != len(probs) or not offsets:
            raise ValueError("offsets and probs must be non-empty and of equal length")
        if any(len(o) != self.d for o in offsets):
            raise ValueError(f"every offset must have dimension {self.d}")
        if len(set(offsets)) != len(offsets):
            raise ValueError("duplicate offsets")
        if any(all(c == 0 for c in o) for o in offsets):
            raise ValueError("p(0, 0) must be zero")
        if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-12:
            raise ValueError(f"probabilities must be nonnegative and sum to 1, got sum {sum(probs)}")
        if self.rate <= 0:
            raise ValueError("rate must be positive")
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "probs", probs)
        if self.second_moment <= 0:
            raise ValueError("second moment must be positive")

    @classmethod
    def nearest_neighbor(cls, d: int = 1, rate: float = 1.0) -> JumpKernel:
        offsets = []
        for k in range(d):
            for s in (1, -1):
                e = [0] * d
                e[k] = s
                offsets.append(tuple(e))
        return cls(d, tuple(offsets), (1.0 / (2 * d),) * (2 * d), rate)

    @classmethod
    def asymmetric_nn(cls, p: float) -> JumpKernel:
        """One-dimensional kernel jumping right with probability ``p`` and left with ``1 - p``."""
        pairs = [(o, w) for o, w in (((1,), p), ((-1,), 1.0 - p)) if w > 0]
        return cls(1, tuple(o for o, _ in pairs), tuple(w for _, w in pairs))

    @property
    def table(self) -> dict[tuple[int, ...], float]:
        return dict(zip(self.offsets, self.probs))

    @property
    def symmetric(self) -> bool:
        tab = self.table
        return all(abs(tab.get(tuple(-c for c in o), 0.0) - p) <= 1e-15 for o, p in tab.items())

    @property
    def first_moment(self) -> np.ndarray:
        return np.sum([np.array(o) * p for o, p in zip(self.offsets, self.probs)], axis=0)

    @property
    def second_moment(self) -> float:
        return float(sum(p * sum(c * c for c in o) for o, p in zip(self.offsets, self.probs)))

    def symmetrized(self) -> JumpKernel:
        """Kernel of the difference of two independent copies: jumps ``a`` at rate ``p(a) + p(-a)``."""
        tab: dict = {}
        for o, p in zip(self.offsets, self.probs):
            neg = tuple(-c for c in o)
            tab[o] = tab.get(o, 0.0) + p
            tab[neg] = tab.get(neg, 0.0) + p
        offsets = tuple(sorted(tab))
        return JumpKernel(self.d, offsets, tuple(tab[o] / 2.0 for o in offsets), 2.0 * self.rate)


@dataclass(frozen=True, eq=False)
class TransitionRow:
    """``p_t(0, k)`` for every torus site ``k`` (storage order) with a truncation bound."""

    t: float
    lattice: Lattice
    values: np.ndarray = field(repr=False)
    error_bound: float
    terms: int

    def at(self, k: Sequence[int]) -> float:
        return float(self.values[self.lattice.site(k)])


def _poisson_cutoff(mu: float, tol: float) -> int:
    n = int(stats.poisson.isf(tol, mu)) if mu > 0 else 0
    while stats.poisson.sf(n, mu) >= tol:
        n += 1
    return n


def transition_row(kernel: JumpKernel, t: float, L: int, tol: float = 1e-13) -> TransitionRow:
    """Uniformization series ``sum_n Pois(n; rate t) P^n(0, .)`` truncated once the Poisson tail is below ``tol``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    if t < 0:
        raise ValueError("t must be nonnegative")
    lat = Lattice(kernel.d, L)
    shape = (L,) * kernel.d
    axes = tuple(range(kernel.d))
    v = np.zeros(shape)
    v[(0,) * kernel.d] = 1.0
    mu = kernel.rate * t
    if mu == 0:
        return TransitionRow(t, lat, v.ravel(), 0.0, 1)
    n_max = _poisson_cutoff(mu, tol)
    weights = stats.poisson.pmf(np.arange(n_max + 1), mu)
    row = weights[0] * v
    for n in range(1, n_max + 1):
        nxt = np.zeros(shape)
        for off, p in zip(kernel.offsets, kernel.probs):
            nxt += p * np.roll(v, off, axis=axes)
        v = nxt
        row += weights[n] * v
    return TransitionRow(t, lat, row.ravel(), float(stats.poisson.sf(n_max, mu)), n_max + 1)


def psi_sep(kernel: JumpKernel, t: float, L: int, tol: float = 1e-13) -> CouplingKernel:
    """Single-discrepancy coupling kernel of the exclusion process: the walk's transition row."""
    row = transition_row(kernel, t, L, tol)
    return CouplingKernel(
        t=t,
        lattice=row.lattice,
        values=row.values,
        se=np.zeros_like(row.values),
        provenance="exact-duality",
        n=0,
        error_bound=row.error_bound,
    )


def psi_l2_squared(kernel: JumpKernel, t: float, L: int, tol: float = 1e-13) -> float:
    """``sum_k p_t(0, k)^2``, cross-checked against the meeting probability of two walks."""
    row = transition_row(kernel, t, L, tol)
    value = float(np.sum(row.values**2))
    if kernel.symmetric:
        check = transition_row(kernel, 2 * t, L, tol).values[0]
    else:
        check = transition_row(kernel.symmetrized(), t, L, tol).values[0]
    if abs(value - check) > 2 * tol + 1e-14:
        raise RuntimeError(f"squared-row sum {value} disagrees with return probability {check}")
    return value


def local_limit_prefactor(kernel: JumpKernel) -> float:
    """``2 (d / (2 pi theta))^(d/2)`` for a symmetric kernel of second moment ``theta``.

    For the rate-one continuous-time walk the return probability behaves like
    half of this constant times ``t^(-d/2)``; the value here is an upper envelope.
    """
    if not kernel.symmetric:
        raise ValueError("local-limit prefactor needs a symmetric kernel")
    d, theta = kernel.d, kernel.second_moment
    return 2.0 * (d / (2.0 * math.pi * theta)) ** (d / 2.0)


def convolve_rows(a: np.ndarray, b: np.ndarray, lattice: Lattice) -> np.ndarray:
    """Circular convolution of two rows in storage order."""
    shape = (lattice.L,) * lattice.d
    fa = np.fft.rfftn(a.reshape(shape))
    fb = np.fft.rfftn(b.reshape(shape))
    return np.fft.irfftn(fa * fb, s=shape, axes=tuple(range(lattice.d))).ravel()


def write_rows_csv(path, rows: Sequence[TransitionRow]) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "site", "point", "p"])
        for row in rows:
            for s, val in enumerate(row.values):
                w.writerow([row.t, s, " ".join(map(str, row.lattice.point(s))), repr(float(val))])
