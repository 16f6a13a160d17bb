"""Monte Carlo estimators for semigroup values, variances, coupling kernels and decay rates.

Every estimator splits its replicas into the fixed batches of
``montecarlo.batch_bounds``; errors are batch-means standard errors and the
numbers do not depend on the worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .concentration import CouplingKernel, product_mean
from .dynamics import ProcessSpec, discrepancy_counts, second_class_displacements, simulate_grid
from .lattice import Configuration, Lattice, LocalFunction
from .montecarlo import EstimateWithError, batch_estimate, batch_se, map_batches, substream

__all__ = [
    "EstimateWithError",
    "ProductMeasureSpec",
    "estimate_stf",
    "estimate_var_stf",
    "estimate_psi",
    "estimate_psi_grid",
    "estimate_Psi_asep",
    "second_class_drift",
    "second_class_law",
    "estimate_structure_function",
    "empirical_deviation",
    "fit_decay",
]


@dataclass(frozen=True)
class ProductMeasureSpec:
    """Bernoulli product measure of density ``rho``, or an arbitrary sampler ``(lattice, n, rng) -> (n, N)``."""

    rho: float | None = None
    sampler: Callable | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.sampler is None:
            if self.rho is None or not 0 < self.rho < 1:
                raise ValueError("density must lie in (0, 1)")

    def sample(self, lattice: Lattice, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.sampler is not None:
            return np.asarray(self.sampler(lattice, n, rng), dtype=np.uint8)
        return (rng.random((n, lattice.N)) < self.rho).astype(np.uint8)


def _env_sampler(env, lattice: Lattice):
    if isinstance(env, Configuration):
        occ = env.occupation
        return lambda n, rng: np.broadcast_to(occ, (n, lattice.N)).copy()
    return lambda n, rng: env.sample(lattice, n, rng)


# semigroup values and variances


def estimate_stf(
    sigma: Configuration, f: LocalFunction, spec: ProcessSpec, t: float, n_inner: int, seed: int, workers: int = 1
) -> EstimateWithError:
    """``S_t f(sigma) = E_sigma f(eta_t)`` by independent runs from ``sigma``."""
    if n_inner < 2:
        raise ValueError("n_inner must be >= 2")
    lat = sigma.lattice

    def work(b, lo, hi):
        starts = np.broadcast_to(sigma.occupation, (hi - lo, lat.N))
        finals = simulate_grid(starts, spec, lat, [t], substream(seed, "stf", b))[:, 0]
        return hi - lo, float(f.evaluate_many(finals, lat).mean())

    res = map_batches(work, n_inner, workers)
    return batch_estimate([m for _, m in res], [k for k, _ in res])


def _inner_stats(mu, f, spec, t, n_outer, n_inner, seed, lattice, workers, tag):
    def work(b, lo, hi):
        nb = hi - lo
        envs = mu.sample(lattice, nb, substream(seed, tag, "env", b))
        starts = np.repeat(envs, n_inner, axis=0)
        finals = simulate_grid(starts, spec, lattice, [t], substream(seed, tag, "runs", b))[:, 0]
        vals = f.evaluate_many(finals, lattice).reshape(nb, n_inner)
        return vals.mean(axis=1), vals.var(axis=1, ddof=1)

    res = map_batches(work, n_outer, workers)
    return [r[0] for r in res], [r[1] for r in res]


def _nested_variance(means: np.ndarray, s2: np.ndarray, n_inner: int) -> float:
    return float(means.var(ddof=1) - s2.mean() / n_inner)


def estimate_var_stf(
    mu: ProductMeasureSpec,
    f: LocalFunction,
    spec: ProcessSpec,
    t: float,
    n_outer: int,
    n_inner: int,
    seed: int,
    lattice: Lattice,
    workers: int = 1,
) -> EstimateWithError:
    """Unbiased nested estimator of ``Var_mu(S_t f)``.

    Sample variance of the inner means minus the mean inner variance over
    ``n_inner``; a negative result is clamped to 0 and flagged ``"clamped"``.
    """
    if n_inner < 2:
        raise ValueError("n_inner must be >= 2")
    if n_outer < 4:
        raise ValueError("n_outer must be >= 4")
    means, s2 = _inner_stats(mu, f, spec, t, n_outer, n_inner, seed, lattice, workers, "var")
    est = _nested_variance(np.concatenate(means), np.concatenate(s2), n_inner)
    per_batch = [(_nested_variance(m, s, n_inner), m.size) for m, s in zip(means, s2) if m.size >= 2]
    se = batch_se([v for v, _ in per_batch], [k for _, k in per_batch]) if len(per_batch) > 1 else math.inf
    flags = ()
    if est < 0:
        est, flags = 0.0, ("clamped",)
    return EstimateWithError(est, float(se), n_outer, flags)


@dataclass(frozen=True)
class DeviationEstimate:
    probability: EstimateWithError
    inner_se: float
    center: float


def empirical_deviation(
    mu: ProductMeasureSpec,
    f: LocalFunction,
    spec: ProcessSpec,
    t: float,
    a: float,
    n_outer: int,
    n_inner: int,
    seed: int,
    lattice: Lattice,
    workers: int = 1,
    center: float | None = None,
) -> DeviationEstimate:
    """Fraction of outer samples with ``|S_t f(sigma) - center| >= a``.

    ``center`` defaults to ``mu(f)`` for a Bernoulli measure (the mean of
    ``S_t f`` when ``mu`` is invariant) and to the sample mean otherwise.
    ``inner_se`` is the typical inner Monte Carlo error of one ``S_t f`` value.
    """
    if n_inner < 2:
        raise ValueError("n_inner must be >= 2")
    means, s2 = _inner_stats(mu, f, spec, t, n_outer, n_inner, seed, lattice, workers, "dev")
    allm = np.concatenate(means)
    if center is None:
        center = product_mean(f, mu.rho) if mu.sampler is None else float(allm.mean())
    hits = [np.mean(np.abs(m - center) >= a) for m in means]
    prob = batch_estimate(hits, [m.size for m in means])
    inner = float(np.sqrt(np.concatenate(s2).mean() / n_inner))
    return DeviationEstimate(prob, inner, float(center))


# coupling kernels


def estimate_psi_grid(
    spec: ProcessSpec,
    ts: Sequence[float],
    env: ProductMeasureSpec | Configuration,
    n: int,
    seed: int,
    lattice: Lattice | None = None,
    workers: int = 1,
) -> list[CouplingKernel]:
    """``psi_hat_t(k)``: fraction of coupled runs discrepant at ``k``, started one flip apart at the origin.

    Environments are drawn from ``env`` (or fixed to a configuration). Each
    kernel also carries the unbiased pair-count estimate of ``||psi_t||_2^2``.
    """
    if isinstance(env, Configuration):
        lattice = env.lattice
    if lattice is None:
        raise ValueError("a lattice is needed when the environment is a measure")
    ts = np.asarray(ts, dtype=float)
    if np.any(np.diff(ts) < 0) or np.any(ts < 0):
        raise ValueError("time grid must be nonnegative and sorted")
    draw = _env_sampler(env, lattice)

    def work(b, lo, hi):
        envs = draw(hi - lo, substream(seed, "psi-env", b))
        counts, _ = discrepancy_counts(envs, spec, lattice, ts, substream(seed, "psi-runs", b))
        return hi - lo, counts

    res = map_batches(work, n, workers)
    sizes = np.array([k for k, _ in res], dtype=float)
    counts = np.array([c for _, c in res], dtype=float)  # (B, G, N)
    total = counts.sum(axis=0)
    out = []
    for g, t in enumerate(ts):
        frac = counts[:, g, :] / sizes[:, None]
        se = batch_se(frac, sizes)
        u = float(np.sum(total[g] * (total[g] - 1)) / (n * (n - 1))) if n > 1 else float(np.sum((total[g] / n) ** 2))
        ok = sizes > 1
        ub = [np.sum(counts[b, g] * (counts[b, g] - 1)) / (sizes[b] * (sizes[b] - 1)) for b in np.nonzero(ok)[0]]
        use = batch_se(ub, sizes[ok]) if len(ub) > 1 else math.inf
        out.append(
            CouplingKernel(
                t=float(t),
                lattice=lattice,
                values=total[g] / n,
                se=np.asarray(se),
                provenance="monte-carlo",
                n=n,
                l2_squared_unbiased=u,
                l2_squared_se=float(use),
            )
        )
    return out


def estimate_psi(spec, t, env, n, seed, lattice=None, workers=1) -> CouplingKernel:
    return estimate_psi_grid(spec, [t], env, n, seed, lattice, workers)[0]


# asymmetric exclusion


def exclusion_process(p: float) -> ProcessSpec:
    from .random_walk import JumpKernel

    k = JumpKernel.asymmetric_nn(p)
    return ProcessSpec("ASEP", kernel=k) if not k.symmetric else ProcessSpec("SEP", kernel=k)


def _displacements(rho, ts, n_env, n_rep, seed, L, p, workers, tag):
    lat = Lattice(1, L)
    spec = exclusion_process(p)
    mu = ProductMeasureSpec(rho)

    def work(b, lo, hi):
        envs = mu.sample(lat, hi - lo, substream(seed, tag, "env", b))
        return second_class_displacements(envs, n_rep, spec, lat, ts, substream(seed, tag, "runs", b))

    return map_batches(work, n_env, workers)


def second_class_drift(
    rho: float, t: float, n: int, seed: int, L: int = 512, p: float = 1.0, workers: int = 1
) -> EstimateWithError:
    """Mean of ``X_t / t`` for the second-class particle in a Bernoulli(rho) environment."""
    if t <= 0:
        raise ValueError("t must be positive")
    res = _displacements(rho, [t], n, 1, seed, L, p, workers, "drift")
    return batch_estimate([r[:, 0, 0].mean() / t for r in res], [r.shape[0] for r in res])


def second_class_law(
    rho: float, t: float, ks: Sequence[int], n: int, seed: int, L: int = 512, p: float = 1.0, workers: int = 1
) -> tuple[np.ndarray, np.ndarray]:
    """``P(X_t = k)`` averaged over Bernoulli(rho) environments, with batch errors."""
    ks = np.asarray(list(ks), dtype=np.int64)
    res = _displacements(rho, [t], n, 1, seed, L, p, workers, "law")
    sizes = np.array([r.shape[0] for r in res], dtype=float)
    fr = np.array([(r[:, 0, 0][:, None] == ks[None, :]).mean(axis=0) for r in res])
    return sizes @ fr / sizes.sum(), np.asarray(batch_se(fr, sizes))


@dataclass(frozen=True, eq=False)
class PsiProfile:
    """``Psi_hat_t(k)`` with the underlying squared estimates and ``sum_k Psi_hat^2`` over all k."""

    t: float
    ks: np.ndarray
    psi: np.ndarray
    psi_se: np.ndarray
    squared: np.ndarray
    squared_se: np.ndarray
    sum_squared: EstimateWithError


def estimate_Psi_asep(
    rho: float,
    t: float,
    k_range: Sequence[int],
    n_env: int,
    n_rep: int,
    seed: int,
    L: int = 256,
    p: float = 1.0,
    workers: int = 1,
) -> PsiProfile:
    """``Psi_t(k) = (E_rho P(X_t = k)^2)^(1/2)`` by ordered-pair counting within each environment."""
    if n_rep < 2:
        raise ValueError("n_rep must be >= 2")
    ks = np.asarray(list(k_range), dtype=np.int64)
    res = _displacements(rho, [t], n_env, n_rep, seed, L, p, workers, "Psi")
    batch_sq, batch_tot, sizes = [], [], []
    for disp in res:
        x = disp[:, :, 0]
        lo = int(x.min())
        counts = np.stack([np.bincount(row - lo, minlength=int(x.max()) - lo + 1) for row in x]).astype(float)
        pairs = counts * (counts - 1) / (n_rep * (n_rep - 1))
        idx = ks - lo
        inside = (idx >= 0) & (idx < counts.shape[1])
        sq = np.zeros((x.shape[0], ks.size))
        sq[:, inside] = pairs[:, idx[inside]]
        batch_sq.append(sq.mean(axis=0))
        batch_tot.append(pairs.sum(axis=1).mean())
        sizes.append(x.shape[0])
    sizes = np.array(sizes, dtype=float)
    sq_all = np.array(batch_sq)
    squared = sizes @ sq_all / sizes.sum()
    squared_se = np.asarray(batch_se(sq_all, sizes))
    psi = np.sqrt(np.clip(squared, 0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        psi_se = np.where(psi > 0, squared_se / (2 * psi), np.sqrt(squared_se))
    return PsiProfile(float(t), ks, psi, psi_se, squared, squared_se, batch_estimate(batch_tot, sizes))


@dataclass(frozen=True, eq=False)
class StructureFunction:
    t: float
    ks: np.ndarray
    values: np.ndarray
    se: np.ndarray
    sum_rule: EstimateWithError
    window_sum: EstimateWithError  # sum of S(k, t) over the probed ks


def estimate_structure_function(
    rho: float,
    t: float,
    ks: Sequence[int],
    n: int,
    seed: int,
    L: int = 128,
    p: float = 1.0,
    workers: int = 1,
) -> StructureFunction:
    """``S(k, t) = E((eta_t(k) - rho)(eta_0(0) - rho)) / (rho (1 - rho))`` from stationary starts.

    Each run contributes its translation average, computed by FFT.
    """
    lat = Lattice(1, L)
    spec = exclusion_process(p)
    mu = ProductMeasureSpec(rho)
    ks = np.asarray(list(ks), dtype=np.int64)
    norm = rho * (1 - rho)

    def work(b, lo, hi):
        eta0 = mu.sample(lat, hi - lo, substream(seed, "sf-env", b))
        eta_t = simulate_grid(eta0, spec, lat, [t], substream(seed, "sf-runs", b))[:, 0]
        a = np.fft.rfft(eta_t - rho, axis=1)
        c = np.fft.rfft(eta0 - rho, axis=1)
        corr = np.fft.irfft(a * np.conj(c), n=L, axis=1) / (L * norm)
        return hi - lo, corr[:, ks % L].mean(axis=0), corr.sum(axis=1).mean()

    res = map_batches(work, n, workers)
    sizes = np.array([r[0] for r in res], dtype=float)
    vals = np.array([r[1] for r in res])
    return StructureFunction(
        float(t),
        ks,
        sizes @ vals / sizes.sum(),
        np.asarray(batch_se(vals, sizes)),
        batch_estimate([r[2] for r in res], sizes),
        batch_estimate(vals.sum(axis=1), sizes),
    )


# decay fits


@dataclass(frozen=True)
class DecayFit:
    """``model="power"``: ``value ~ A t^exponent``; ``model="exponential"``: ``value ~ A exp(-rate t)``."""

    model: str
    value: float
    se: float
    log_prefactor: float


def fit_decay(points: Sequence[tuple[float, float, float]], model: str = "power") -> DecayFit:
    """Weighted least squares of log values; weights are ``value / se`` when errors are given."""
    if model not in ("power", "exponential"):
        raise ValueError("model must be 'power' or 'exponential'")
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 4:
        raise ValueError("need at least 4 points")
    t, v, se = pts[:, 0], pts[:, 1], pts[:, 2]
    if np.any(v <= 0):
        raise ValueError("all values must be positive for a log fit")
    x = np.log(t) if model == "power" else t
    y = np.log(v)
    if np.all(se <= 0):
        coef, cov = np.polyfit(x, y, 1, cov=True)
    else:
        rel = np.where(se > 0, se, se[se > 0].min()) / v
        coef, cov = np.polyfit(x, y, 1, w=1.0 / rel, cov="unscaled")
    slope, icpt = coef
    slope_se = float(math.sqrt(max(cov[0, 0], 0.0)))
    value = slope if model == "power" else -slope
    return DecayFit(model, float(value), slope_se, float(icpt))
