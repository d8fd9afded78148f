"""Special functions and quadrature rules.

Everything touching the von Mises--Fisher normalizer works in log space:
concentrations of the form ``1 / h**2`` overflow ``exp`` long before the
bandwidths of interest become small.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import DomainError

LOG_2PI = math.log(2.0 * math.pi)

# below this concentration log C_q uses its Taylor expansion at 0
_SMALL_KAPPA = 1e-6
# below this argument log I_nu uses two terms of its power series
_SMALL_Z = 1e-6

MIN_CIRCLE_NODES = 16
MIN_SPHERE_NODES = (8, 16)
MIN_LINE_NODES = 64
_LINE_PANEL = 8


def sphere_measure(q: int) -> float:
    """Surface measure of the unit sphere in R^(q+1)."""
    _check_q(q)
    return 2.0 * math.pi ** ((q + 1) / 2) / math.gamma((q + 1) / 2)


def _check_q(q):
    if int(q) != q or q < 1:
        raise DomainError(f"sphere dimension must be a positive integer, got {q!r}")


def log_bessel_i(nu, z):
    """Logarithm of the modified Bessel function of the first kind.

    Evaluated through the exponentially scaled ``ive`` (``i0e``/``i1e`` for
    orders 0 and 1) so that arguments up to at least 1e6 stay finite.  Order
    1/2 is short-circuited to its closed form ``sqrt(2 / (pi z)) sinh(z)``.
    Arguments below 1e-6 use ``(z/2)^nu / Gamma(nu+1) (1 + (z/2)^2 / (nu+1))``,
    which avoids underflow of the scaled function.  Returns ``-inf`` where
    ``I_nu(z) == 0`` (``nu > 0`` and ``z == 0``).
    """
    nu_a = np.asarray(nu, dtype=float)
    z_a = np.asarray(z, dtype=float)
    if np.any(nu_a < 0) or np.any(np.isnan(nu_a)):
        raise DomainError("Bessel order must be nonnegative")
    if np.any(z_a < 0) or np.any(np.isnan(z_a)):
        raise DomainError("Bessel argument must be nonnegative")
    nu_b, z_b = np.broadcast_arrays(nu_a, z_a)
    out = np.empty(nu_b.shape)
    tiny = z_b < _SMALL_Z
    half = (nu_b == 0.5) & ~tiny
    with np.errstate(divide="ignore", invalid="ignore"):
        if np.any(tiny):
            nt, zt = nu_b[tiny], z_b[tiny]
            val = np.where(nt == 0, 0.0, nt * np.log(zt / 2.0))
            out[tiny] = val - special.gammaln(nt + 1.0) + np.log1p((zt / 2.0) ** 2 / (nt + 1.0))
        if np.any(half):
            zh = z_b[half]
            val = np.full(zh.shape, -np.inf)
            pos = zh > 0
            zp = zh[pos]
            # log sinh z = z + log(1 - e^{-2z}) - log 2
            val[pos] = (0.5 * np.log(2.0 / (np.pi * zp)) + zp
                        + np.log(-np.expm1(-2.0 * zp)) - math.log(2.0))
            out[half] = val
        for order, scaled in ((0.0, special.i0e), (1.0, special.i1e)):
            sel = (nu_b == order) & ~tiny
            if np.any(sel):
                out[sel] = np.log(scaled(z_b[sel])) + z_b[sel]
        rest = ~(tiny | half | (nu_b == 0.0) | (nu_b == 1.0))
        if np.any(rest):
            out[rest] = np.log(special.ive(nu_b[rest], z_b[rest])) + z_b[rest]
    if out.ndim == 0:
        return float(out)
    return out


def log_cq(q: int, kappa):
    """Log of the vMF normalizing constant C_q(kappa) on the q-sphere.

    ``C_q(k) = k^((q-1)/2) / ((2 pi)^((q+1)/2) I_{(q-1)/2}(k))``; at ``k = 0`` it
    equals the reciprocal of the sphere's surface measure.
    """
    _check_q(q)
    k = np.asarray(kappa, dtype=float)
    if np.any(k < 0) or np.any(np.isnan(k)):
        raise DomainError("concentration must be nonnegative")
    nu = (q - 1) / 2.0
    out = np.empty(k.shape)
    small = k < _SMALL_KAPPA
    if np.any(small):
        ks = k[small]
        out[small] = (nu * math.log(2.0) + math.lgamma(nu + 1.0)
                      - (q + 1) / 2.0 * LOG_2PI - ks**2 / (4.0 * (nu + 1.0)))
    big = ~small
    if np.any(big):
        kb = k[big]
        if q == 2:
            # C_2(k) = k / (4 pi sinh k)
            out[big] = (-math.log(4.0 * math.pi) + np.log(kb) - kb + math.log(2.0)
                        - np.log(-np.expm1(-2.0 * kb)))
        else:
            out[big] = nu * np.log(kb) - (q + 1) / 2.0 * LOG_2PI - log_bessel_i(nu, kb)
    if out.ndim == 0:
        return float(out)
    return out


def log_chq(q: int, h):
    """Log of the von Mises kernel constant ``c_{h,q}(L) = C_q(1/h^2) e^{1/h^2}``."""
    h_a = np.asarray(h, dtype=float)
    if np.any(~(h_a > 0)):
        raise DomainError("bandwidth must be positive")
    kappa = 1.0 / h_a**2
    return log_cq(q, kappa) + kappa


def mean_resultant_ratio(q: int, kappa):
    """``A_q(k) = I_{(q+1)/2}(k) / I_{(q-1)/2}(k)``, the vMF mean resultant length."""
    _check_q(q)
    k = np.asarray(kappa, dtype=float)
    out = np.zeros(k.shape)
    pos = k > 0
    if np.any(pos):
        kp = k[pos]
        out[pos] = np.exp(log_bessel_i((q + 1) / 2.0, kp) - log_bessel_i((q - 1) / 2.0, kp))
    if out.ndim == 0:
        return float(out)
    return out


def normal_pdf(x, mean=0.0, sd=1.0):
    """Density of N(mean, sd^2)."""
    sd_a = np.asarray(sd, dtype=float)
    if np.any(~(sd_a > 0)):
        raise DomainError("standard deviation must be positive")
    u = (np.asarray(x, dtype=float) - mean) / sd_a
    out = np.exp(-0.5 * u * u) / (math.sqrt(2.0 * math.pi) * sd_a)
    if np.ndim(out) == 0:
        return float(out)
    return out


def log_normal_pdf(x, mean=0.0, sd=1.0):
    """Log density of N(mean, sd^2)."""
    sd_a = np.asarray(sd, dtype=float)
    if np.any(~(sd_a > 0)):
        raise DomainError("standard deviation must be positive")
    u = (np.asarray(x, dtype=float) - mean) / sd_a
    return -0.5 * u * u - 0.5 * LOG_2PI - np.log(sd_a)


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and nonnegative weights for integrating over one domain.

    ``nodes`` holds unit vectors (shape ``(k, q+1)``) for ``circle`` and
    ``sphere`` and scalars (shape ``(k,)``) for ``line``.  ``window`` is the
    integration interval of a line rule.  ``degree`` is the polynomial or
    spherical-harmonic degree integrated exactly (``None`` for the line).
    """

    domain: str
    nodes: np.ndarray
    weights: np.ndarray
    window: tuple[float, float] | None = None
    degree: int | None = None
    resolution: object = field(default=None, compare=False)

    @property
    def size(self) -> int:
        return len(self.weights)

    def integrate(self, values) -> float | np.ndarray:
        """Weighted sum over the last axis of ``values``."""
        return np.asarray(values) @ self.weights


def make_quadrature(domain: str, resolution=None, window=None) -> QuadratureRule:
    """Build a quadrature rule.

    circle
        ``resolution`` equispaced nodes (trapezoid rule), exact for
        trigonometric polynomials of degree below ``resolution``.
    sphere
        ``resolution = (n_polar, n_azimuth)``: Gauss--Legendre in the cosine
        of the polar angle times the trapezoid rule in azimuth.
    line
        composite 8-point Gauss--Legendre on ``window`` (default ``(-8, 8)``)
        with at least ``resolution`` nodes.
    """
    if domain == "circle":
        n = 64 if resolution is None else int(resolution)
        if n < MIN_CIRCLE_NODES:
            raise DomainError(f"circle rule needs at least {MIN_CIRCLE_NODES} nodes")
        theta = 2.0 * np.pi * np.arange(n) / n
        nodes = np.column_stack([np.cos(theta), np.sin(theta)])
        weights = np.full(n, 2.0 * np.pi / n)
        return QuadratureRule("circle", nodes, weights, degree=n - 1, resolution=n)
    if domain == "sphere":
        n_pol, n_az = (24, 48) if resolution is None else (int(resolution[0]), int(resolution[1]))
        if n_pol < MIN_SPHERE_NODES[0] or n_az < MIN_SPHERE_NODES[1]:
            raise DomainError(f"sphere rule needs at least {MIN_SPHERE_NODES} nodes")
        t, wt = np.polynomial.legendre.leggauss(n_pol)
        phi = 2.0 * np.pi * np.arange(n_az) / n_az
        s = np.sqrt(1.0 - t**2)
        nodes = np.column_stack([
            np.outer(s, np.cos(phi)).ravel(),
            np.outer(s, np.sin(phi)).ravel(),
            np.repeat(t, n_az),
        ])
        weights = np.outer(wt, np.full(n_az, 2.0 * np.pi / n_az)).ravel()
        degree = min(2 * n_pol - 1, n_az - 1)
        return QuadratureRule("sphere", nodes, weights, degree=degree, resolution=(n_pol, n_az))
    if domain == "line":
        n = MIN_LINE_NODES if resolution is None else int(resolution)
        if n < MIN_LINE_NODES:
            raise DomainError(f"line rule needs at least {MIN_LINE_NODES} nodes")
        lo, hi = (-8.0, 8.0) if window is None else (float(window[0]), float(window[1]))
        if not hi > lo:
            raise DomainError("line window must have hi > lo")
        panels = -(-n // _LINE_PANEL)
        t, wt = np.polynomial.legendre.leggauss(_LINE_PANEL)
        edges = np.linspace(lo, hi, panels + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[:-1] + edges[1:])
        nodes = (mid[:, None] + half[:, None] * t[None, :]).ravel()
        weights = (half[:, None] * wt[None, :]).ravel()
        return QuadratureRule("line", nodes, weights, window=(lo, hi), resolution=panels * _LINE_PANEL)
    raise DomainError(f"unsupported quadrature domain {domain!r}")


def sphere_rule(q: int, resolution=None) -> QuadratureRule:
    """Quadrature rule on the q-sphere for q in {1, 2}."""
    if q == 1:
        return make_quadrature("circle", resolution)
    if q == 2:
        return make_quadrature("sphere", resolution)
    raise DomainError(f"no quadrature rule for q={q}")
