"""One-dimensional Ising-type Gibbs measures with long-range pair interactions.

Spins are stored as bits ``sigma in {0, 1}`` and enter the energy as
``s = 2 sigma - 1``. The pair energy is ``-J(r) s_i s_j`` so ``beta > 0`` is
ferromagnetic. A boundary collar with value ``None`` is free (spin 0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special

from .lattice import LocalFunction, _bits
from .montecarlo import EstimateWithError, batch_bounds, batch_estimate, batch_se, map_batches, substream

SAMPLING_BUDGET = 2**26
MAX_DOBRUSHIN_RANGE = 10


def _radius_for_tolerance(beta: float, kappa: float, tol: float) -> int:
    if beta == 0 or math.isinf(kappa):
        return 1
    total = float(special.zeta(kappa, 1))
    # smallest R with tail beyond R below tol * total
    R = max(1, int(((kappa - 1) * tol * total) ** (-1.0 / (kappa - 1))) // 2)
    while float(special.zeta(kappa, R + 1)) >= tol * total:
        R += 1
    while R > 1 and float(special.zeta(kappa, R)) < tol * total:
        R -= 1
    return R


@dataclass(frozen=True)
class Interaction:
    """Pair coupling ``J(r) = beta / r^kappa``; ``kappa = inf`` is nearest-neighbour.

    ``R`` truncates the range used by samplers and dynamics. When omitted it is
    the smallest radius whose neglected tail is below ``tol`` times the total.
    Tail sums ``T(m)`` always refer to the untruncated interaction.
    """

    beta: float
    kappa: float = math.inf
    R: int | None = None
    tol: float = 1e-8

    def __post_init__(self):
        if not math.isinf(self.kappa) and self.kappa <= 2:
            raise ValueError("need kappa > 2 for summable sum_r r |J(r)|")
        if self.R is None:
            object.__setattr__(self, "R", _radius_for_tolerance(self.beta, self.kappa, self.tol))
        if self.R < 1:
            raise ValueError("truncation radius must be >= 1")

    @classmethod
    def from_literal(cls, lit: dict) -> Interaction:
        kappa = lit.get("kappa", "inf")
        kappa = math.inf if kappa in ("inf", None) else float(kappa)
        return cls(float(lit["beta"]), kappa, lit.get("truncation_radius"), float(lit.get("tolerance", 1e-8)))

    def J(self, r: int) -> float:
        if r < 1:
            raise ValueError("pair distance must be >= 1")
        if math.isinf(self.kappa):
            return self.beta if r == 1 else 0.0
        return self.beta / r**self.kappa

    @property
    def couplings(self) -> np.ndarray:
        """``J(1), ..., J(R)``."""
        return np.array([self.J(r) for r in range(1, self.R + 1)])

    def tail(self, m: int) -> float:
        """``T(m) = 2 sum_{r >= m} |J(r)|`` of the untruncated interaction."""
        m = max(int(m), 1)
        if math.isinf(self.kappa):
            return 2.0 * abs(self.beta) if m == 1 else 0.0
        return 2.0 * abs(self.beta) * float(special.zeta(self.kappa, m))

    def truncated_tail(self) -> float:
        return self.tail(self.R + 1)

    @property
    def strongly_summable(self) -> bool:
        """Tail sums decay faster than ``m^-3``."""
        return math.isinf(self.kappa) or self.kappa - 1 > 3

    def field_bound(self) -> float:
        """``sup |h|`` for the truncated model, ``2 sum_{r <= R} |J(r)|``."""
        return 2.0 * float(np.abs(self.couplings).sum())

    def rate_bounds(self) -> tuple[float, float]:
        """Heat-bath flip rate bounds ``(eps, K)``."""
        h = self.field_bound()
        return 1.0 / (1.0 + math.exp(2 * h)), 1.0 / (1.0 + math.exp(-2 * h))


def _spins(bits) -> np.ndarray | None:
    if bits is None:
        return None
    return 2.0 * np.asarray(bits, dtype=float) - 1.0


@dataclass(frozen=True, eq=False)
class GibbsVolume:
    """Finite-volume Gibbs measure on sites ``0..N-1`` with collars of width ``R``.

    ``left[r-1]`` is the spin bit at position ``-r``; ``right[r-1]`` the bit at
    ``N - 1 + r``. Log-messages ``log_beta[i, S]`` are the log partition sums of
    sites ``i..N-1`` given the ``R`` spins left of ``i`` encoded in ``S``
    (bit ``r-1`` is the spin at ``i - r``).
    """

    interaction: Interaction
    N: int
    left: tuple[int, ...] | None = None
    right: tuple[int, ...] | None = None
    log_beta: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        R = self.interaction.R
        if self.N < 1:
            raise ValueError("volume needs at least one site")
        for name in ("left", "right"):
            col = getattr(self, name)
            if col is not None:
                col = tuple(int(b) for b in col)
                if len(col) != R or any(b not in (0, 1) for b in col):
                    raise ValueError(f"{name} collar must hold {R} bits")
                object.__setattr__(self, name, col)
        if self.N * 2**R > SAMPLING_BUDGET:
            raise ValueError(
                f"transfer sweep over N * 2^R = {self.N} * 2^{R} states exceeds the budget; "
                "use a larger truncation tolerance or an explicit smaller radius"
            )
        object.__setattr__(self, "log_beta", self._sweep())

    @property
    def R(self) -> int:
        return self.interaction.R

    def collar_spin(self, pos: int) -> float:
        if pos < 0:
            col, r = self.left, -pos
        else:
            col, r = self.right, pos - self.N + 1
        if col is None or r > self.R:
            return 0.0
        return 2.0 * col[r - 1] - 1.0

    def _state_bits(self) -> np.ndarray:
        S = np.arange(2**self.R)
        return ((S[:, None] >> np.arange(self.R)) & 1).astype(float)

    def local_field(self, i: int) -> np.ndarray:
        """Field at site ``i`` from the left window (per state) plus the right collar."""
        J = self.interaction.couplings
        spins = 2.0 * self._state_bits() - 1.0
        for r in range(1, self.R + 1):
            if i - r < 0:
                spins[:, r - 1] = self.collar_spin(i - r)
        h = spins @ J
        g = sum(J[r - 1] * self.collar_spin(i + r) for r in range(1, self.R + 1) if i + r >= self.N)
        return h + g

    def _sweep(self) -> np.ndarray:
        R, N = self.R, self.N
        mask = 2**R - 1
        S = np.arange(2**R)
        nxt = [((S << 1) | b) & mask for b in (0, 1)]
        lb = np.zeros((N + 1, 2**R))
        fields = np.empty((N, 2**R))
        for i in range(N - 1, -1, -1):
            h = self.local_field(i)
            fields[i] = h
            lb[i] = np.logaddexp(-h + lb[i + 1][nxt[0]], h + lb[i + 1][nxt[1]])
        object.__setattr__(self, "_fields", fields)
        return lb

    def initial_state(self) -> int:
        if self.left is None:
            return 0
        return int(sum(b << (r - 1) for r, b in enumerate(self.left, start=1)))

    @property
    def log_partition(self) -> float:
        return float(self.log_beta[0, self.initial_state()])

    def forward_prob(self, i: int, states: np.ndarray) -> np.ndarray:
        """``mu(sigma_i = 1 | sigma_{<i})`` for an array of left-window states."""
        mask = 2**self.R - 1
        h = self._fields[i][states]
        up = h + self.log_beta[i + 1][((states << 1) | 1) & mask]
        down = -h + self.log_beta[i + 1][(states << 1) & mask]
        return 1.0 / (1.0 + np.exp(down - up))

    def advance(self, states: np.ndarray, bits: np.ndarray) -> np.ndarray:
        return ((states << 1) | bits) & (2**self.R - 1)

    def hamiltonian(self, sigma: Sequence[int]) -> float:
        s = _spins(sigma)
        if s.shape != (self.N,):
            raise ValueError(f"configuration needs {self.N} spins")
        J = self.interaction.couplings
        H = 0.0
        for r in range(1, self.R + 1):
            if r < self.N:
                H -= J[r - 1] * float(np.dot(s[:-r], s[r:]))
        for i in range(self.N):
            for r in range(1, self.R + 1):
                if i - r < 0:
                    H -= J[r - 1] * s[i] * self.collar_spin(i - r)
                if i + r >= self.N:
                    H -= J[r - 1] * s[i] * self.collar_spin(i + r)
        return H

    def energy_difference(self, sigma: Sequence[int], i: int) -> float:
        """``H(sigma with s_i = +1) - H(sigma with s_i = -1)``."""
        return -2.0 * self._site_field(sigma, i)

    def _site_field(self, sigma: Sequence[int], i: int) -> float:
        s = _spins(sigma)
        J = self.interaction.couplings
        h = 0.0
        for r in range(1, self.R + 1):
            for j in (i - r, i + r):
                h += J[r - 1] * (s[j] if 0 <= j < self.N else self.collar_spin(j))
        return h

    def condition_first(self, value: int) -> GibbsVolume:
        """The law of sites ``1..N-1`` given ``sigma_0 = value``, as a volume of size ``N - 1``."""
        if self.N < 2:
            raise ValueError("need at least two sites")
        if self.left is None and self.R > 1:
            raise ValueError("conditioning a free boundary needs R = 1: the collar would be partially free")
        left = (int(value),) + (self.left[:-1] if self.left is not None else ())
        return GibbsVolume(self.interaction, self.N - 1, left, self.right)


def conditional_prob(vol: GibbsVolume, i: int, context: Sequence[int]) -> float:
    """``mu(sigma_i = 1 | sigma off i) = 1 / (1 + exp(Delta H))``."""
    return 1.0 / (1.0 + math.exp(vol.energy_difference(context, i)))


def flip_ratio(vol: GibbsVolume, sigma: Sequence[int], i: int) -> float:
    """``mu(sigma^i) / mu(sigma)``."""
    sgn = 2 * int(sigma[i]) - 1
    # flipping s_i changes the energy by 2 s_i h
    return math.exp(-2.0 * sgn * vol._site_field(sigma, i))


def rnd_bound(inter: Interaction) -> float:
    return math.exp(2.0 * inter.tail(1))


def boltzmann_weights(vol: GibbsVolume) -> np.ndarray:
    """Exact probabilities of all ``2^N`` configurations (first site most significant)."""
    if vol.N > 20:
        raise ValueError("exhaustive enumeration limited to N <= 20")
    confs = _bits(vol.N)
    logw = np.array([-vol.hamiltonian(c) for c in confs])
    logw -= logw.max()
    w = np.exp(logw)
    return w / w.sum()


def sample_gibbs(vol: GibbsVolume, n: int, seed: int | np.random.Generator) -> np.ndarray:
    """Exact sequential samples, shape ``(n, N)``, uint8."""
    rng = seed if isinstance(seed, np.random.Generator) else substream(seed, "gibbs")
    states = np.full(n, vol.initial_state(), dtype=np.int64)
    out = np.empty((n, vol.N), dtype=np.uint8)
    for i in range(vol.N):
        b = (rng.random(n) < vol.forward_prob(i, states)).astype(np.int64)
        out[:, i] = b
        states = vol.advance(states, b)
    return out


def configuration_index(samples: np.ndarray) -> np.ndarray:
    weights = 1 << np.arange(samples.shape[1] - 1, -1, -1)
    return samples.astype(np.int64) @ weights


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


# house-of-cards coupling


def optimal_two_point_coupling(p: float, q: float) -> tuple[float, float, float, float]:
    """Masses on ``(1,1), (1,0), (0,1), (0,0)`` of the maximal coupling of Bernoulli(p), Bernoulli(q)."""
    if not (0 <= p <= 1 and 0 <= q <= 1):
        raise ValueError("probabilities must lie in [0, 1]")
    m = min(p, q)
    return m, p - m, q - m, 1.0 - p - q + m


def _prefix_state(vol: GibbsVolume, prefix: Sequence[int]) -> int:
    state = vol.initial_state()
    for b in prefix:
        state = ((state << 1) | int(b)) & (2**vol.R - 1)
    return state


@dataclass(frozen=True, eq=False)
class CoupledTails:
    first: np.ndarray
    second: np.ndarray
    coalescence_offset: int


def house_of_cards_couple(vol: GibbsVolume, i: int, prefix: Sequence[int], seed) -> CoupledTails:
    """Couple the right tails after ``i`` given histories ``prefix[:i] + (1 - prefix[i])`` and ``prefix[:i+1]``.

    Each site uses the maximal coupling of the two sequential conditionals via a
    shared uniform. ``coalescence_offset`` is the smallest ``j >= 1`` from which
    the tails agree at every later site.
    """
    if not 0 <= i < vol.N - 1:
        raise ValueError("i must leave at least one site to its right")
    rng = seed if isinstance(seed, np.random.Generator) else substream(seed, "hoc")
    prefix = [int(b) for b in prefix[: i + 1]]
    s1 = np.array([_prefix_state(vol, prefix[:i] + [1 - prefix[i]])])
    s2 = np.array([_prefix_state(vol, prefix)])
    t1, t2 = [], []
    for j in range(i + 1, vol.N):
        u = rng.random(1)
        b1 = (u < vol.forward_prob(j, s1)).astype(np.int64)
        b2 = (u < vol.forward_prob(j, s2)).astype(np.int64)
        t1.append(int(b1[0]))
        t2.append(int(b2[0]))
        s1, s2 = vol.advance(s1, b1), vol.advance(s2, b2)
    diff = [k + 1 for k, (a, b) in enumerate(zip(t1, t2)) if a != b]
    return CoupledTails(np.array(t1, np.uint8), np.array(t2, np.uint8), (diff[-1] + 1) if diff else 1)


def _flipped_prefix_states(vol: GibbsVolume, i: int, prefix: Sequence[int]) -> tuple[int, int]:
    prefix = [int(b) for b in prefix[: i + 1]]
    return _prefix_state(vol, prefix[:i] + [1 - prefix[i]]), _prefix_state(vol, prefix)


def house_of_cards_mismatch(vol: GibbsVolume, i: int, prefix: Sequence[int], n_runs: int, rng: np.random.Generator) -> np.ndarray:
    """Mismatch indicators at offsets ``1..N-1-i`` for ``n_runs`` coupled runs, shape ``(n_runs, N-1-i)``."""
    a, b = _flipped_prefix_states(vol, i, prefix)
    s1 = np.full(n_runs, a, dtype=np.int64)
    s2 = np.full(n_runs, b, dtype=np.int64)
    out = np.empty((n_runs, vol.N - 1 - i), dtype=bool)
    for j in range(i + 1, vol.N):
        u = rng.random(n_runs)
        b1 = (u < vol.forward_prob(j, s1)).astype(np.int64)
        b2 = (u < vol.forward_prob(j, s2)).astype(np.int64)
        out[:, j - i - 1] = b1 != b2
        s1, s2 = vol.advance(s1, b1), vol.advance(s2, b2)
    return out


def house_of_cards_mismatch_exact(vol: GibbsVolume, i: int, prefix: Sequence[int]) -> np.ndarray:
    """Exact mismatch probabilities at offsets ``1..N-1-i`` by a pair-state recursion."""
    n_states = 2**vol.R
    a, b = _flipped_prefix_states(vol, i, prefix)
    dist = np.zeros((n_states, n_states))
    dist[a, b] = 1.0
    S = np.arange(n_states)
    out = []
    for j in range(i + 1, vol.N):
        p = vol.forward_prob(j, S)
        P, Q = np.meshgrid(p, p, indexing="ij")
        m = np.minimum(P, Q)
        masses = {(1, 1): m, (1, 0): P - m, (0, 1): Q - m, (0, 0): 1 - P - Q + m}
        new = np.zeros_like(dist)
        mismatch = 0.0
        for (b1, b2), w in masses.items():
            mass = dist * w
            if b1 != b2:
                mismatch += mass.sum()
            n1 = vol.advance(S, np.full(n_states, b1))
            n2 = vol.advance(S, np.full(n_states, b2))
            np.add.at(new, (n1[:, None].repeat(n_states, 1), n2[None, :].repeat(n_states, 0)), mass)
        dist = new
        out.append(mismatch)
    return np.array(out)


STRESS_PATTERNS = ("plus", "minus", "alternating")


def stress_prefix(name: str, length: int) -> np.ndarray:
    if name == "plus":
        return np.ones(length, np.uint8)
    if name == "minus":
        return np.zeros(length, np.uint8)
    if name == "alternating":
        return (np.arange(length) % 2).astype(np.uint8)
    raise ValueError(f"unknown stress pattern {name!r}")


@dataclass(frozen=True, eq=False)
class ThetaProfile:
    """``Theta_hat(j)`` for ``j = 1..j_max`` (max over boundary conditions) with errors."""

    j: np.ndarray
    theta: np.ndarray
    se: np.ndarray
    argmax: tuple[str, ...]
    left_collar_width: int
    right_collar_width: int
    q: float = 2.5

    def __post_init__(self):
        if np.any(self.theta < 0) or np.any(self.theta > 1):
            raise ValueError("Theta values must lie in [0, 1]")


def estimate_theta(
    vol: GibbsVolume,
    j_max: int,
    n: int,
    stress_set: Sequence[str] = STRESS_PATTERNS,
    seed: int = 0,
    n_runs: int = 4000,
    exact: bool = False,
    q: float = 2.5,
) -> ThetaProfile:
    """Mismatch profile of the house-of-cards coupling at the central site.

    Boundary conditions are the named stress patterns (applied to the left
    collar and the history) plus ``n`` prefixes drawn from ``sample_gibbs``.
    With ``exact=True`` mismatch probabilities come from the pair-state
    recursion and carry zero error.
    """
    if not stress_set and n == 0:
        raise ValueError("need at least one boundary condition")
    i = vol.N // 2
    if i + j_max > vol.N - 1:
        raise ValueError(f"j_max={j_max} does not fit right of the central site {i} in N={vol.N}")
    cases: list[tuple[str, GibbsVolume, np.ndarray]] = []
    for name in stress_set:
        pref = stress_prefix(name, vol.R + i + 1)
        left = tuple(int(b) for b in pref[: vol.R][::-1])
        cases.append((name, GibbsVolume(vol.interaction, vol.N, left, vol.right), pref[vol.R :]))
    if n:
        samples = sample_gibbs(vol, n, substream(seed, "theta-bc"))
        cases += [(f"sample{k}", vol, samples[k, : i + 1]) for k in range(n)]
    rows, ses = [], []
    for idx, (name, v, pref) in enumerate(cases):
        if exact:
            rows.append(house_of_cards_mismatch_exact(v, i, pref)[:j_max])
            ses.append(np.zeros(j_max))
        else:
            mism = house_of_cards_mismatch(v, i, pref, n_runs, substream(seed, "theta-runs", idx))[:, :j_max]
            rows.append(mism.mean(axis=0))
            sizes = [hi - lo for lo, hi in batch_bounds(n_runs)]
            means = [mism[lo:hi].mean(axis=0) for lo, hi in batch_bounds(n_runs)]
            ses.append(batch_se(np.array(means), sizes))
    rows, ses = np.array(rows), np.array(ses)
    best = rows.argmax(axis=0)
    cols = np.arange(j_max)
    return ThetaProfile(
        j=np.arange(1, j_max + 1),
        theta=rows[best, cols],
        se=ses[best, cols],
        argmax=tuple(cases[b][0] for b in best),
        left_collar_width=i + vol.R,
        right_collar_width=vol.N - 1 - i + vol.R,
        q=q,
    )


# house-of-cards chain


def gamma_bound(inter: Interaction, m: int) -> float:
    """``exp(T(m)) - 1``."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return math.expm1(inter.tail(m))


def hoc_gammas(inter: Interaction, horizon: int) -> np.ndarray:
    """``gamma_m = min(1, gamma_bound(max(m, 1)))`` for ``m = 0..horizon``."""
    return np.array([min(1.0, gamma_bound(inter, max(m, 1))) for m in range(horizon + 1)])


@dataclass(frozen=True, eq=False)
class HocChain:
    gammas: np.ndarray
    horizon: int
    returns: np.ndarray  # P(Z_n = 0), n = 0..horizon

    def tail_sums(self, k_max: int) -> tuple[np.ndarray, bool]:
        """``sum_{l >= k} P(Z_l = 0)`` for ``k = 0..k_max`` with a power-law remainder past the horizon.

        The second value is True when the returns do not decay fast enough for
        the remainder to be finite; the sums are then infinite.
        """
        rem, divergent = _power_tail(self.returns)
        if divergent:
            return np.full(k_max + 1, math.inf), True
        csum = np.cumsum(self.returns[::-1])[::-1]
        return csum[: k_max + 1] + rem, False


def _power_tail(r: np.ndarray) -> tuple[float, bool]:
    H = r.size - 1
    lo = max(2, H // 2)
    n = np.arange(lo, H + 1)
    y = r[lo:]
    if np.all(y == 0):
        return 0.0, False
    if np.any(y <= 0):
        return 0.0, False
    slope, icpt = np.polyfit(np.log(n), np.log(y), 1)
    s = -slope
    if s <= 1.05:
        return math.inf, True
    A = math.exp(icpt)
    # sum_{n > H} A n^-s <= A H^(1-s)/(s-1)
    return A * H ** (1 - s) / (s - 1), False


def hoc_return_probs(gammas: Sequence[float], horizon: int) -> HocChain:
    """Exact ``P(Z_n = 0)`` for the chain that climbs with probability ``1 - gamma_m`` and otherwise resets."""
    g = np.asarray(gammas, dtype=float)
    if g.size < horizon + 1:
        raise ValueError(f"need gamma_m for m = 0..{horizon}")
    if np.any(g < 0) or np.any(g > 1):
        raise ValueError("gamma values must lie in [0, 1]")
    g = g[: horizon + 1]
    dist = np.zeros(horizon + 2)
    dist[0] = 1.0
    returns = np.empty(horizon + 1)
    returns[0] = 1.0
    for n in range(1, horizon + 1):
        new = np.zeros_like(dist)
        new[0] = np.dot(dist[: horizon + 1], g)
        new[1:] = dist[:-1] * np.append(1 - g, 0.0)[: horizon + 1]
        dist = new
        returns[n] = dist[0]
    return HocChain(g, horizon, returns)


@dataclass(frozen=True)
class Summability:
    partial: float
    tail: float
    total: float
    divergent: bool


def theta_summability(profile: ThetaProfile, q: float | None = None, chain: HocChain | None = None) -> Summability:
    """``sum_j Theta(j)^(1/q)`` over the computed range plus a tail bound past it.

    The tail past ``j_max`` uses the chain's tail sums as a ceiling on Theta.
    Without a chain no tail can be bounded and the result is flagged.
    """
    q = profile.q if q is None else q
    if q <= 2:
        raise ValueError("q must exceed 2")
    partial = float(np.sum(np.clip(profile.theta, 0, 1) ** (1.0 / q)))
    if chain is None:
        return Summability(partial, 0.0, partial, True)
    jm = int(profile.j[-1])
    k_max = chain.horizon
    sums, div = chain.tail_sums(k_max)
    if div:
        return Summability(partial, math.inf, math.inf, True)
    tail = float(np.sum(np.minimum(sums[jm + 1 :], 1.0) ** (1.0 / q)))
    # beyond the horizon use the power-law decay of the tail sums
    y = sums[max(jm + 1, k_max // 2) :]
    n = np.arange(k_max + 1 - y.size, k_max + 1)
    if y.size >= 2 and np.all(y > 0):
        slope, icpt = np.polyfit(np.log(n), np.log(y), 1)
        s = -slope / q
        if s <= 1.0:
            return Summability(partial, math.inf, math.inf, True)
        tail += math.exp(icpt / q) * k_max ** (1 - s) / (s - 1)
    return Summability(partial, tail, partial + tail, False)


# Dobrushin matrix and Glauber decay


@dataclass(frozen=True, eq=False)
class DobrushinMatrix:
    """Translation-invariant row ``C_{0j}`` for ``j = -R..R``."""

    offsets: np.ndarray
    row: np.ndarray

    @property
    def row_sum(self) -> float:
        return float(self.row.sum())

    def entry(self, j: int) -> float:
        hit = np.nonzero(self.offsets == j)[0]
        return float(self.row[hit[0]]) if hit.size else 0.0


def _heat_bath(h: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-2.0 * h))


def dobrushin_matrix(inter: Interaction) -> DobrushinMatrix:
    """``C_{0j} = max |p(h + J_j) - p(h - J_j)|`` over spin patterns on the other sites of the range."""
    R = inter.R
    if R > MAX_DOBRUSHIN_RANGE:
        raise ValueError(f"enumeration over 2^(2R) patterns limited to R <= {MAX_DOBRUSHIN_RANGE}")
    offs = np.array([j for j in range(-R, R + 1) if j != 0])
    J = np.array([inter.J(abs(j)) for j in offs])
    spins = 2.0 * _bits(offs.size) - 1.0
    h = spins @ J
    row = np.empty(offs.size)
    for k in range(offs.size):
        # the field with s_j = +1 versus s_j = -1, everything else fixed
        base = h - spins[:, k] * J[k]
        row[k] = np.max(np.abs(_heat_bath(base + J[k]) - _heat_bath(base - J[k])))
    return DobrushinMatrix(offs, row)


def circulant_exp_row(C: DobrushinMatrix, t: float, window: int) -> np.ndarray:
    """Row 0 of ``exp(-t (I - C))`` on a periodic window of the given size."""
    if window < 2 * int(np.abs(C.offsets).max()) + 1:
        raise ValueError("window too small for the interaction range")
    a = np.zeros(window)
    for j, c in zip(C.offsets, C.row):
        a[j % window] += c
    a[0] -= 1.0
    return np.real(np.fft.ifft(np.exp(t * np.fft.fft(a))))


def glauber_decay_bound(C: DobrushinMatrix, t: float, window: int = 64) -> float:
    """Row l2-norm of ``exp(-t (I - C))``."""
    if C.row_sum >= 1:
        raise ValueError(f"outside the Dobrushin regime: ||C||_inf = {C.row_sum} >= 1")
    return float(np.linalg.norm(circulant_exp_row(C, t, window)))


# Dirichlet form and Poincare ratio


def _site_index(s) -> int:
    return int(s[0]) if isinstance(s, (tuple, list)) else int(s)


def _grad_squared_sum(f: LocalFunction, samples: np.ndarray) -> np.ndarray:
    sites = [_site_index(s) for s in f.sites]
    idx = np.zeros(samples.shape[0], dtype=np.int64)
    for s in sites:
        idx = (idx << 1) | samples[:, s]
    base = f.values[idx]
    total = np.zeros(samples.shape[0])
    for k in range(f.m):
        bit = 1 << (f.m - 1 - k)
        total += (f.values[idx ^ bit] - base) ** 2
    return total


def _f_values(f: LocalFunction, samples: np.ndarray) -> np.ndarray:
    idx = np.zeros(samples.shape[0], dtype=np.int64)
    for s in f.sites:
        idx = (idx << 1) | samples[:, _site_index(s)]
    return f.values[idx]


def _check_sites(f: LocalFunction, vol: GibbsVolume) -> None:
    for s in f.sites:
        if not 0 <= _site_index(s) < vol.N:
            raise ValueError(f"dependence site {s} outside the volume 0..{vol.N - 1}")


def dirichlet_form_exact(f: LocalFunction, vol: GibbsVolume) -> float:
    _check_sites(f, vol)
    w = boltzmann_weights(vol)
    return float(np.dot(w, _grad_squared_sum(f, _bits(vol.N).astype(np.int64))))


def variance_exact(f: LocalFunction, vol: GibbsVolume) -> float:
    _check_sites(f, vol)
    w = boltzmann_weights(vol)
    vals = _f_values(f, _bits(vol.N).astype(np.int64))
    mean = np.dot(w, vals)
    return float(np.dot(w, (vals - mean) ** 2))


def poincare_ratio_exact(f: LocalFunction, vol: GibbsVolume) -> float:
    e = dirichlet_form_exact(f, vol)
    if e == 0:
        raise ValueError("Dirichlet form vanishes; ratio undefined")
    return variance_exact(f, vol) / e


def _gibbs_batches(vol: GibbsVolume, n: int, seed: int, tag: str, fn, workers: int = 1):
    def work(b, lo, hi):
        samples = sample_gibbs(vol, hi - lo, substream(seed, tag, b)).astype(np.int64)
        return hi - lo, fn(samples)

    return map_batches(work, n, workers)


def dirichlet_form(f: LocalFunction, vol: GibbsVolume, n: int, seed: int, workers: int = 1) -> EstimateWithError:
    """Monte Carlo ``sum_i E (grad_i f)^2`` over exact Gibbs samples."""
    _check_sites(f, vol)
    res = _gibbs_batches(vol, n, seed, "dirichlet", lambda s: float(_grad_squared_sum(f, s).mean()), workers)
    return batch_estimate([m for _, m in res], [k for k, _ in res])


def poincare_ratio(f: LocalFunction, vol: GibbsVolume, n: int, seed: int, workers: int = 1) -> EstimateWithError:
    """``Var(f) / E(f, f)`` from Gibbs samples with a batch-ratio error.

    Flagged ``"degenerate-denominator"`` when the Dirichlet form is within five
    standard errors of zero.
    """
    _check_sites(f, vol)

    def stats_of(s):
        v = _f_values(f, s)
        return np.array([v.mean(), (v**2).mean(), _grad_squared_sum(f, s).mean()])

    res = _gibbs_batches(vol, n, seed, "poincare", stats_of, workers)
    sizes = np.array([k for k, _ in res], dtype=float)
    mom = np.array([m for _, m in res])
    tot = sizes @ mom / sizes.sum()
    var = tot[1] - tot[0] ** 2
    e = tot[2]
    e_se = batch_se(mom[:, 2], sizes)
    flags = ("degenerate-denominator",) if e <= 5 * e_se or e == 0 else ()
    if e == 0:
        return EstimateWithError(math.inf, math.inf, int(sizes.sum()), flags)
    batch_ratio = (mom[:, 1] - mom[:, 0] ** 2) / np.where(mom[:, 2] > 0, mom[:, 2], np.nan)
    ok = np.isfinite(batch_ratio)
    se = batch_se(batch_ratio[ok], sizes[ok]) if ok.sum() > 1 else math.inf
    return EstimateWithError(float(var / e), float(se), int(sizes.sum()), flags)


def random_local_function(rng: np.random.Generator, n_sites: int, max_dep: int) -> LocalFunction:
    m = int(rng.integers(1, max_dep + 1))
    sites = rng.choice(n_sites, size=m, replace=False)
    return LocalFunction(tuple((int(s),) for s in sites), rng.normal(size=2**m))
