"""Pilot bandwidths, the exact bootstrap MISE and the bootstrap-based selectors."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import DegenerateData
from .kde import BandwidthPair, DirLinSample, cv_search_box, select_cv_bandwidths
from .numerics import log_bessel_i, log_cq, mean_resultant_ratio, sphere_rule
from .search import H_MAX, grid_simplex_max

SQRT_PI = math.sqrt(math.pi)


@dataclass(frozen=True)
class PilotBandwidths:
    """Oversmoothed bandwidths driving the smooth bootstrap."""

    h_p: float
    g_p: float
    kappa_hat: float | None = None
    h_amise: float | None = None
    note: str | None = None

    def __post_init__(self):
        if not (self.h_p > 0 and self.g_p > 0):
            raise ValueError("pilot bandwidths must be positive")


def estimate_kappa(xs) -> tuple[float, float]:
    """Concentration estimate by solving ``A_q(kappa) = mean resultant length``.

    Returns ``(kappa_hat, rbar)``.
    """
    xs = np.asarray(xs, dtype=float)
    q = xs.shape[1] - 1
    rbar = float(np.linalg.norm(xs.mean(axis=0)))
    if rbar >= 1.0 - 1e-12:
        raise DegenerateData("all directions are identical")
    if rbar < 1e-8:
        return (q + 1) * rbar, rbar
    hi = max(1.0, q / (2.0 * (1.0 - rbar)))
    while mean_resultant_ratio(q, hi) < rbar:
        hi *= 2.0
    kappa = optimize.brentq(lambda k: mean_resultant_ratio(q, k) - rbar, 0.0, hi,
                            xtol=1e-12, rtol=1e-12)
    return float(kappa), rbar


def amise_bandwidth_vmf(q: int, kappa: float, n: int) -> float:
    """AMISE-optimal von Mises kernel bandwidth when the density is vM(., kappa).

    ``h^(4+q) = q / (n (4 pi)^(q/2) R)`` with ``R`` the integrated squared
    Laplace--Beltrami operator of the reference density, here in closed form.
    Returns ``inf`` for ``kappa == 0``.
    """
    if kappa <= 0:
        return math.inf
    log_num = math.log(4.0 * SQRT_PI) + 2.0 * log_bessel_i((q - 1) / 2.0, kappa)
    log_i1 = log_bessel_i((q + 1) / 2.0, 2.0 * kappa)
    log_i3 = log_bessel_i((q + 3) / 2.0, 2.0 * kappa)
    # 2q I_{(q+1)/2}(2k) + (2+q) k I_{(q+3)/2}(2k), combined in log space
    m = max(log_i1, log_i3)
    log_bracket = m + math.log(2.0 * q * math.exp(log_i1 - m)
                               + (2.0 + q) * kappa * math.exp(log_i3 - m))
    log_den = (q + 1) / 2.0 * math.log(kappa) + log_bracket + math.log(n)
    return math.exp((log_num - log_den) / (4.0 + q))


def pilot_bandwidths(sample: DirLinSample, h_max: float = H_MAX) -> PilotBandwidths:
    """Marginal pilots: vMF rule of thumb for ``h``, normal reference for ``g``.

    ``h_p = h_AMISE n^(1/(4+q) - 1/(6+q))`` and ``g_p = 1.06 sd(Z) n^(-1/7)``.
    A near-uniform directional sample has ``h_AMISE`` capped at ``h_max``.
    """
    n, q = sample.n, sample.q
    sd = sample.zs_sd()
    kappa, _ = estimate_kappa(sample.xs)
    h_amise = amise_bandwidth_vmf(q, kappa, n)
    note = None
    if not h_amise <= h_max:
        note = f"directional sample is close to uniform; h_AMISE capped at {h_max}"
        warnings.warn(note, RuntimeWarning, stacklevel=2)
        h_amise = h_max
    h_p = h_amise * n ** (1.0 / (4 + q) - 1.0 / (6 + q))
    g_nr = 1.06 * sd * n ** (-1.0 / 5.0)
    g_p = g_nr * n ** (1.0 / 5.0 - 1.0 / 7.0)
    return PilotBandwidths(h_p, g_p, kappa, h_amise, note)


def default_rule(q: int, h_p: float):
    """Spherical rule fine enough for integrands concentrated like ``vM(., 2/h_p^2)``."""
    kappa = 2.0 / h_p**2
    if q == 1:
        n = max(64, 8 * math.ceil((10.0 * math.sqrt(kappa) + 16.0) / 8.0))
        return sphere_rule(1, n)
    if q == 2:
        n_pol = max(24, math.ceil(5.0 * math.sqrt(kappa) + 8.0))
        return sphere_rule(2, (n_pol, 2 * n_pol))
    raise ValueError(f"no default rule for q={q}")


def _gauss_gram(dz2, sd):
    return np.exp(-0.5 * dz2 / sd**2) / (math.sqrt(2.0 * math.pi) * sd)


@dataclass(frozen=True)
class BootstrapGrams:
    psi0: np.ndarray
    psi1: np.ndarray
    psi2: np.ndarray
    omega0: np.ndarray
    omega1: np.ndarray
    omega2: np.ndarray


class BootstrapMise:
    """Exact bootstrap MISE of the directional-linear estimator for one sample.

    Directional matrices depend on ``h`` only and linear ones on ``g`` only, so
    both are cached per bandwidth value; the grid search then costs one
    Hadamard product per cell.
    """

    def __init__(self, sample: DirLinSample, pilots: PilotBandwidths, rule=None):
        self.sample = sample
        self.pilots = pilots
        self.q = q = sample.q
        self.n = sample.n
        self.rule = rule if rule is not None else default_rule(q, pilots.h_p)
        xs, zs = sample.xs, sample.zs
        self.kp = kp = 1.0 / pilots.h_p**2
        self.log_cp = log_cq(q, kp)
        dots = np.clip(xs @ xs.T, -1.0, 1.0)
        norm_sum = np.sqrt(np.clip(2.0 + 2.0 * dots, 0.0, None))
        self.psi0 = np.exp(2.0 * self.log_cp - log_cq(q, kp * norm_sum))
        dz = zs[:, None] - zs[None, :]
        self.dz2 = dz * dz
        self.omega0 = _gauss_gram(self.dz2, math.sqrt(2.0) * pilots.g_p)
        self.s0 = float(np.sum(self.psi0 * self.omega0))
        # pilot kernel at the nodes, weighted: w_k f_vM(x_k; X_j, kp)
        proj = xs @ self.rule.nodes.T
        self._proj = proj
        self._vw = np.exp(self.log_cp + kp * proj) * self.rule.weights
        self._dir_cache: dict[float, tuple] = {}
        self._lin_cache: dict[float, tuple] = {}

    def directional(self, h):
        hit = self._dir_cache.get(h)
        if hit is None:
            q, kp = self.q, self.kp
            kh = 1.0 / h**2
            # ||x/h^2 + X_i/h_p^2|| at every node x
            norm = np.sqrt(np.clip(kh**2 + kp**2 + 2.0 * kh * kp * self._proj, 0.0, None))
            a = np.exp(log_cq(q, kh) + self.log_cp - log_cq(q, norm))
            aw = a * self.rule.weights
            psi2 = aw @ a.T
            psi1 = a @ self._vw.T
            var = math.exp(2.0 * log_cq(q, kh) - log_cq(q, 2.0 * kh))
            hit = (psi1, psi2, var)
            if len(self._dir_cache) > 64:
                self._dir_cache.clear()
            self._dir_cache[h] = hit
        return hit

    def linear(self, g):
        hit = self._lin_cache.get(g)
        if hit is None:
            gp2 = self.pilots.g_p**2
            hit = (_gauss_gram(self.dz2, math.sqrt(g**2 + 2.0 * gp2)),
                   _gauss_gram(self.dz2, math.sqrt(2.0 * g**2 + 2.0 * gp2)))
            if len(self._lin_cache) > 64:
                self._lin_cache.clear()
            self._lin_cache[g] = hit
        return hit

    def grams(self, bw: BandwidthPair) -> BootstrapGrams:
        psi1, psi2, _ = self.directional(bw.h)
        om1, om2 = self.linear(bw.g)
        return BootstrapGrams(self.psi0, psi1, psi2, self.omega0, om1, om2)

    def __call__(self, h, g) -> float:
        n = self.n
        psi1, psi2, var = self.directional(h)
        om1, om2 = self.linear(g)
        bias = ((1.0 - 1.0 / n) * np.sum(psi2 * om2) - 2.0 * np.sum(psi1 * om1) + self.s0) / n**2
        return var / (2.0 * SQRT_PI * g * n) + float(bias)


def bootstrap_grams(sample, pilots, bw, rule=None) -> BootstrapGrams:
    """The six matrices entering the bootstrap MISE."""
    return BootstrapMise(sample, pilots, rule).grams(bw)


def bootstrap_mise(sample: DirLinSample, pilots: PilotBandwidths, bw: BandwidthPair,
                   rule=None) -> float:
    """Bootstrap MISE of the estimator with bandwidths ``bw`` under pilot ``pilots``.

    The variance term is ``C_q(1/h^2)^2 / (C_q(2/h^2) 2 sqrt(pi) g n)`` and the
    integrated squared bias is ``n^-2 1'[(1-1/n) Psi2*Omega2 - 2 Psi1*Omega1 +
    Psi0*Omega0]1``.  ``Psi1`` and ``Psi2`` are integrated with ``rule``.
    """
    return BootstrapMise(sample, pilots, rule)(bw.h, bw.g)


def _minimize_mise(mise: BootstrapMise, label: str) -> BandwidthPair:
    h_range, g_range = cv_search_box(mise.sample)

    def grid(hs, gs):
        out = np.empty((len(hs), len(gs)))
        for a, h in enumerate(hs):
            for b, g in enumerate(gs):
                out[a, b] = -mise(h, g)
        out[~np.isfinite(out)] = -np.inf
        return out

    res = grid_simplex_max(lambda h, g: -mise(h, g), h_range, g_range, grid_fn=grid, label=label)
    return BandwidthPair(res.h, res.g)


def select_bo(sample: DirLinSample, pilots: PilotBandwidths | None = None, rule=None) -> BandwidthPair:
    """``argmin_{h,g}`` of the bootstrap MISE under the given (default: marginal) pilots."""
    if pilots is None:
        pilots = pilot_bandwidths(sample)
    return _minimize_mise(BootstrapMise(sample, pilots, rule), "bootstrap MISE")


def modified_order(bw: BandwidthPair, n: int, q: int) -> PilotBandwidths:
    """Rescale CV bandwidths to pilot orders ``(n^(-1/(6+q)), n^(-1/7))``."""
    h = bw.h * n ** (1.0 / (4 + q) - 1.0 / (6 + q))
    g = bw.g * n ** (1.0 / 5.0 - 1.0 / 7.0)
    return PilotBandwidths(h, g)


def select_bcv(sample: DirLinSample, inner: str = "lcv", rule=None) -> tuple[BandwidthPair, PilotBandwidths]:
    """Bootstrap selector driven by rescaled CV pilots; returns ``(bw, pilots)``."""
    cv = select_cv_bandwidths(sample, inner)
    pilots = modified_order(cv, sample.n, sample.q)
    return _minimize_mise(BootstrapMise(sample, pilots, rule), f"B{inner.upper()}"), pilots


def select_blcv(sample: DirLinSample, rule=None) -> BandwidthPair:
    """BLCV bandwidths: bootstrap MISE minimizer with MLCV pilots."""
    return select_bcv(sample, "lcv", rule)[0]


def select_blscv(sample: DirLinSample, rule=None) -> BandwidthPair:
    """BLSCV bandwidths: as BLCV with LSCV as the inner selector."""
    return select_bcv(sample, "lscv", rule)[0]
