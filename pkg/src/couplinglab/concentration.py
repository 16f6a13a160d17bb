"""Closed-form concentration bounds and exact exponential-moment checks on product measures."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lattice import Lattice, LocalFunction, _bits, delta_vector, lp_norm


@dataclass(frozen=True)
class BoundParams:
    """Inputs shared by the bound formulas: GEMB constant, Young pair, moment order, level, tail constant."""

    c: float = 0.125
    u: float = 2.0
    v: float = 1.0
    p: float = 2.0
    a: float = 0.0
    kappa: float = 1.0

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError("c must be positive")
        if self.u < 1 or self.v < 1:
            raise ValueError("Young exponents must be >= 1")
        if self.p < 1:
            raise ValueError("moment order p must be >= 1")
        if self.a < 0:
            raise ValueError("deviation level must be nonnegative")
        if self.kappa <= 0:
            raise ValueError("tail constant must be positive")

    def check_young(self) -> None:
        if abs(1.0 / self.u + 1.0 / self.v - 1.5) > 1e-12:
            raise ValueError(f"need 1/u + 1/v = 3/2, got u={self.u}, v={self.v}")


@dataclass(frozen=True, eq=False)
class CouplingKernel:
    """``psi_t(k)`` on the torus in storage order, exact or estimated."""

    t: float
    lattice: Lattice
    values: np.ndarray = field(repr=False)
    se: np.ndarray = field(repr=False)
    provenance: str
    n: int = 0
    error_bound: float = 0.0
    l2_squared_unbiased: float | None = None
    l2_squared_se: float | None = None

    def __post_init__(self):
        if self.provenance not in ("exact-duality", "monte-carlo"):
            raise ValueError(f"unknown provenance {self.provenance!r}")
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.lattice.N,):
            raise ValueError("kernel needs one value per site")
        if np.any(vals < -1e-12) or np.any(vals > 1 + 1e-12):
            raise ValueError("kernel entries must lie in [0, 1]")

    def at(self, k) -> float:
        return float(self.values[self.lattice.site(k)])

    def norm(self, u: float) -> float:
        return lp_norm(self.values, u)

    @property
    def l2_squared(self) -> float:
        if self.l2_squared_unbiased is not None:
            return self.l2_squared_unbiased
        return float(np.sum(self.values**2))


# exact computations on product Bernoulli measures


def _product_weights(m: int, rho: float) -> np.ndarray:
    bits = _bits(m)
    ones = bits.sum(axis=1)
    return rho**ones * (1.0 - rho) ** (m - ones)


def product_mean(f: LocalFunction, rho: float) -> float:
    return float(np.dot(_product_weights(f.m, rho), f.values))


def product_variance(f: LocalFunction, rho: float) -> float:
    w = _product_weights(f.m, rho)
    mean = np.dot(w, f.values)
    return float(np.dot(w, (f.values - mean) ** 2))


@dataclass(frozen=True)
class GembCheck:
    lhs: float
    rhs: float
    holds: bool


def gemb_exhaustive_check(f: LocalFunction, rho: float, c: float) -> GembCheck:
    """Compare ``E exp(f - Ef)`` under Bernoulli(rho) with ``exp(c ||delta f||_2^2)`` by enumeration."""
    if not 0 < rho < 1:
        raise ValueError("density must lie in (0, 1)")
    w = _product_weights(f.m, rho)
    mean = np.dot(w, f.values)
    lhs = float(np.dot(w, np.exp(f.values - mean)))
    rhs = math.exp(c * lp_norm(delta_vector(f), 2) ** 2)
    return GembCheck(lhs, rhs, lhs <= rhs * (1 + 1e-12))


# closed-form bounds


def deviation_bound(bp: BoundParams, psi_u: float, df_v: float) -> float:
    """``2 exp(-a^2 / (4 c psi_u^2 df_v^2))``."""
    bp.check_young()
    if bp.a == 0:
        return 2.0
    scale = 4.0 * bp.c * psi_u**2 * df_v**2
    if scale == 0:
        raise ValueError("zero norms with a > 0 give no meaningful bound")
    return 2.0 * math.exp(-(bp.a**2) / scale)


def moment_constant(p: float) -> float:
    """``2^(-1/2) (p Gamma(p/2))^(1/p)``."""
    if p < 1:
        raise ValueError("p must be >= 1")
    return 2.0**-0.5 * (p * math.gamma(p / 2.0)) ** (1.0 / p)


def lp_relaxation_bound(bp: BoundParams, psi_u: float, df_v: float) -> float:
    """``2 sqrt(c) (p Gamma(p/2))^(1/p) psi_u df_v``."""
    return 2.0 * math.sqrt(bp.c) * (bp.p * math.gamma(bp.p / 2.0)) ** (1.0 / bp.p) * psi_u * df_v


def moment_from_tail(p: float, kappa: float) -> float:
    """Moment bound ``p Gamma(p/2) kappa^(p/2)`` for a variable with ``P(|X| >= a) <= 2 exp(-a^2/kappa)``."""
    if p < 1 or kappa <= 0:
        raise ValueError("need p >= 1 and kappa > 0")
    return p * math.gamma(p / 2.0) * kappa ** (p / 2.0)


def spatial_average_deviation_bound(bp: BoundParams, psi_u: float, df_1: float, size: int, alpha: float) -> float:
    """``2 exp(-|Lambda|^(2 alpha - 2/v) a^2 / (4 c psi_u^2 df_1^2))``."""
    bp.check_young()
    if alpha < 0.5:
        raise ValueError("alpha must be >= 1/2")
    if size < 1:
        raise ValueError("window size must be >= 1")
    if bp.a == 0:
        return 2.0
    scale = 4.0 * bp.c * psi_u**2 * df_1**2
    if scale == 0:
        raise ValueError("zero norms with a > 0 give no meaningful bound")
    return 2.0 * math.exp(-(size ** (2 * alpha - 2.0 / bp.v)) * bp.a**2 / scale)


def mesoscopic_exponents(d: int, kappa: float, eps: float) -> tuple[float, float]:
    """Exponents of ``t`` and ``|Lambda|`` in the mesoscopic-average bound."""
    return -d * eps / (2 + 2 * eps), (eps / (1 + eps)) * (1 - kappa * d / 2.0)


def mesoscopic_bound(
    p: float,
    t: float,
    size: int,
    kappa: float,
    alpha: float,
    eps: float,
    dg_1: float,
    prefactor: float,
    d: int = 1,
) -> float:
    """``C'(p) t^(-d eps/(2+2 eps)) |Lambda|^((eps/(1+eps))(1 - kappa d/2)) dg_1``.

    Meaningful only when ``t |Lambda|^kappa`` is large; see ``mesoscopic_regime``.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if alpha < 0.5:
        raise ValueError("alpha must be >= 1/2")
    et, el = mesoscopic_exponents(d, kappa, eps)
    return prefactor * t**et * size**el * dg_1


def mesoscopic_regime(t: float, size: int, kappa: float, threshold: float = 100.0) -> bool:
    return t * size**kappa >= threshold


def nonuniform_lp_bound(p: int, d_norm: float, df_2: float) -> float:
    """``20 p D_norm df_2``."""
    if int(p) != p or p < 1:
        raise ValueError("p must be a positive integer")
    return 20.0 * p * d_norm * df_2


VARIANCE_CONSTANTS = {"c": 1.0, "2c": 2.0, "8c": 8.0}


def variance_bound(c: float, psi_u: float, df_v: float, form: str = "8c") -> float:
    """``k c psi_u^2 df_v^2`` with ``k`` given by ``form`` in {"c", "2c", "8c"}."""
    return VARIANCE_CONSTANTS[form] * c * psi_u**2 * df_v**2


def sep_deviation_bound(a: float, c: float, p2t: float, df_1: float) -> float:
    """Exclusion deviation bound ``2 exp(-a^2 / (4 c p_2t(0,0) ||df||_1^2))``."""
    if a == 0:
        return 2.0
    return 2.0 * math.exp(-(a**2) / (4.0 * c * p2t * df_1**2))


def sep_lp_bound(p: float, p2t: float, df_1: float) -> float:
    """Exclusion L^p bound ``C(p) ||df||_1 sqrt(p_2t(0,0))``."""
    return moment_constant(p) * df_1 * math.sqrt(p2t)
