"""Kernel density estimators for linear, directional and directional-linear data.

The directional kernel is the von Mises kernel ``L(r) = exp(-r)`` and the
linear kernel is the standard normal, so every estimator is a mixture of
vMF and normal densities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .directional import as_unit_vectors
from .errors import DegenerateData, DomainError, NonFiniteObjective
from .numerics import LOG_2PI, log_cq, normal_pdf
from .search import grid_simplex_max

# exp(x) is exactly 0.0 in double precision below this
_LOG_ZERO = math.log(np.nextafter(0.0, 1.0)) - 1.0


@dataclass(frozen=True, eq=False)
class DirLinSample:
    """Paired directions ``xs`` (n x (q+1) unit rows) and scalars ``zs``."""

    xs: np.ndarray
    zs: np.ndarray

    def __post_init__(self):
        xs = as_unit_vectors(self.xs)
        zs = np.asarray(self.zs, dtype=float).ravel()
        if xs.shape[0] != zs.shape[0]:
            raise DomainError(f"{xs.shape[0]} directions but {zs.shape[0]} linear values")
        if xs.shape[1] < 2:
            raise DomainError("directions need at least two coordinates")
        if not np.all(np.isfinite(zs)):
            raise DomainError("linear values must be finite")
        xs.setflags(write=False)
        zs.setflags(write=False)
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "zs", zs)

    @property
    def n(self) -> int:
        return self.zs.shape[0]

    @property
    def q(self) -> int:
        return self.xs.shape[1] - 1

    def permuted(self, perm) -> "DirLinSample":
        """Sample with the linear values reordered as ``zs[perm]``."""
        return DirLinSample(self.xs, self.zs[np.asarray(perm)])

    def zs_sd(self) -> float:
        """Sample standard deviation of ``zs``; raises on constant data."""
        if self.n < 2:
            raise DegenerateData("need at least two observations")
        sd = float(np.std(self.zs, ddof=1))
        if not sd > 0:
            raise DegenerateData("linear values are constant")
        return sd


@dataclass(frozen=True)
class BandwidthPair:
    """Directional bandwidth ``h`` and linear bandwidth ``g``."""

    h: float
    g: float

    def __post_init__(self):
        if not (self.h > 0 and self.g > 0) or not (math.isfinite(self.h) and math.isfinite(self.g)):
            raise DomainError(f"bandwidths must be positive and finite, got ({self.h}, {self.g})")
        object.__setattr__(self, "h", float(self.h))
        object.__setattr__(self, "g", float(self.g))


def _check_nonempty(n):
    if n == 0:
        raise DomainError("empty sample")


def kde_linear(zs, g: float, z):
    """Normal-kernel density estimate of ``zs`` at ``z`` (scalar or array)."""
    zs = np.asarray(zs, dtype=float).ravel()
    _check_nonempty(zs.size)
    z = np.asarray(z, dtype=float)
    out = normal_pdf(z[..., None], zs, g).mean(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def kde_directional(xs, h: float, x):
    """von Mises kernel density estimate at ``x`` (one vector or rows of vectors).

    Equal to the mixture ``mean_i f_vM(x; X_i, 1/h^2)``.
    """
    xs = as_unit_vectors(xs)
    _check_nonempty(xs.shape[0])
    if not h > 0:
        raise DomainError("bandwidth must be positive")
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != xs.shape[1]:
        raise DomainError(f"dimension mismatch: {x.shape[-1]} vs {xs.shape[1]}")
    kappa = 1.0 / h**2
    q = xs.shape[1] - 1
    logk = log_cq(q, kappa) + kappa * (x @ xs.T)
    out = np.exp(logsumexp(logk, axis=-1) - math.log(xs.shape[0]))
    return float(out) if np.ndim(out) == 0 else out


def kde_dirlin(sample: DirLinSample, bw: BandwidthPair, x, z):
    """Directional-linear estimate at the paired points ``(x, z)``.

    ``x`` has shape ``(..., q+1)`` and ``z`` broadcasts against ``x[..., 0]``.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != sample.q + 1:
        raise DomainError(f"dimension mismatch: {x.shape[-1]} vs {sample.q + 1}")
    z = np.asarray(z, dtype=float)
    kappa = 1.0 / bw.h**2
    logk = (log_cq(sample.q, kappa) + kappa * (x @ sample.xs.T)
            - 0.5 * ((z[..., None] - sample.zs) / bw.g) ** 2 - 0.5 * LOG_2PI - math.log(bw.g))
    out = np.exp(logsumexp(logk, axis=-1) - math.log(sample.n))
    return float(out) if np.ndim(out) == 0 else out


class _PairCache:
    """Inner products and squared differences reused across bandwidths."""

    def __init__(self, sample: DirLinSample):
        self.sample = sample
        self.dots = np.clip(sample.xs @ sample.xs.T, -1.0, 1.0)
        dz = sample.zs[:, None] - sample.zs[None, :]
        self.dz2 = dz * dz
        self.off = ~np.eye(sample.n, dtype=bool)
        self.norm_sum = np.sqrt(np.clip(2.0 + 2.0 * self.dots, 0.0, None))
        self._psi = (None, None)

    def log_kernel(self, h, g):
        kappa = 1.0 / h**2
        return (log_cq(self.sample.q, kappa) + kappa * self.dots
                - 0.5 * self.dz2 / g**2 - 0.5 * LOG_2PI - math.log(g))

    def loo_log_density(self, h, g):
        lk = np.where(self.off, self.log_kernel(h, g), -np.inf)
        return logsumexp(lk, axis=1) - math.log(self.sample.n - 1)

    def integral_sq(self, h, g):
        """Closed form of the integral of the squared joint estimate."""
        if self._psi[0] != h:
            q = self.sample.q
            kappa = 1.0 / h**2
            self._psi = (h, 2.0 * log_cq(q, kappa) - log_cq(q, kappa * self.norm_sum))
        log_psi = self._psi[1]
        s2 = 2.0 * g**2
        log_omega = -0.5 * self.dz2 / s2 - 0.5 * math.log(2.0 * math.pi * s2)
        return float(np.exp(log_psi + log_omega).sum()) / self.sample.n**2


def _require_pairs(sample):
    if sample.n < 2:
        raise DomainError("cross-validation needs n >= 2")


def lcv_objective(sample: DirLinSample, bw: BandwidthPair, _cache=None) -> float:
    """Leave-one-out log-likelihood ``sum_i log f^{-i}(X_i, Z_i)``."""
    _require_pairs(sample)
    cache = _cache or _PairCache(sample)
    loo = cache.loo_log_density(bw.h, bw.g)
    if np.any(loo < _LOG_ZERO) or not np.all(np.isfinite(loo)):
        raise NonFiniteObjective("a leave-one-out density vanishes")
    return float(loo.sum())


def lscv_objective(sample: DirLinSample, bw: BandwidthPair, _cache=None) -> float:
    """``2/n sum_i f^{-i}(X_i, Z_i) - integral of the squared estimate``."""
    _require_pairs(sample)
    cache = _cache or _PairCache(sample)
    loo = np.exp(cache.loo_log_density(bw.h, bw.g))
    value = 2.0 * loo.mean() - cache.integral_sq(bw.h, bw.g)
    if not math.isfinite(value):
        raise NonFiniteObjective("LSCV objective is not finite")
    return float(value)


OBJECTIVES = {"lcv": lcv_objective, "lscv": lscv_objective}


def cv_search_box(sample: DirLinSample):
    sd = sample.zs_sd()
    return (0.05, 5.0), (0.05 * sd, 5.0 * sd)


def select_cv_bandwidths(sample: DirLinSample, objective: str = "lcv") -> BandwidthPair:
    """Maximize the LCV or LSCV objective over ``(h, g)``."""
    _require_pairs(sample)
    key = objective.lower()
    if key not in OBJECTIVES:
        raise DomainError(f"unknown objective {objective!r}")
    fn = OBJECTIVES[key]
    cache = _PairCache(sample)
    h_range, g_range = cv_search_box(sample)
    res = grid_simplex_max(lambda h, g: fn(sample, BandwidthPair(h, g), cache),
                           h_range, g_range, label=key.upper())
    return BandwidthPair(res.h, res.g)
