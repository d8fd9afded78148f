"""The squared-L2 independence statistic and its calibrations."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .bandwidth import PilotBandwidths, pilot_bandwidths, select_bcv, select_bo
from .directional import circle_to_angles, sample_vmf_rows
from .errors import DegenerateData, DomainError
from .kde import BandwidthPair, DirLinSample, select_cv_bandwidths
from .numerics import log_cq

METHODS = ("permutation", "bootstrap", "baseline-R2", "baseline-U")
SELECTORS = ("LCV", "LSCV", "BLCV", "BLSCV", "BO", "fixed")

# permuted Omega blocks are gathered this many entries at a time
_CHUNK_ENTRIES = 2_000_000
# resampled statistics this close to the observed one (relatively) count as ties
TIE_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class GramMatrices:
    """``Psi(h)`` and ``Omega(g)`` for one sample."""

    psi: np.ndarray
    omega: np.ndarray
    h: float
    g: float


@dataclass
class TestReport:
    statistic: float
    p_value: float
    method: str
    B: int
    bandwidths: BandwidthPair | None
    selector: str
    seed: int | None
    n: int
    q: int
    pilots: PilotBandwidths | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "statistic": self.statistic,
            "p_value": self.p_value,
            "method": self.method,
            "B": self.B,
            "selector": self.selector,
            "seed": self.seed,
            "n": self.n,
            "q": self.q,
            "bandwidths": None if self.bandwidths is None else asdict(self.bandwidths),
        }
        if self.pilots is not None:
            d["pilots"] = {"h_p": self.pilots.h_p, "g_p": self.pilots.g_p}
        d.update(self.extra)
        return d


def _seed_of(rng):
    return int(rng) if isinstance(rng, (int, np.integer)) else None


def p_value(observed: float, resampled, correction: bool = False) -> float:
    """``#{observed <= T*} / B``, or ``(# + 1) / (B + 1)`` with ``correction``.

    Statistics within ``TIE_RTOL`` of ``observed`` count as ties, so exact
    ties that rounding splits still count.
    """
    resampled = np.asarray(resampled)
    count = int(np.count_nonzero(resampled >= observed - TIE_RTOL * abs(observed)))
    if correction:
        return (count + 1) / (resampled.size + 1)
    return count / resampled.size


def gram_matrices(sample: DirLinSample, bw: BandwidthPair) -> GramMatrices:
    """``Psi_ij = C_q(1/h^2)^2 / C_q(||X_i + X_j|| / h^2)``, ``Omega_ij = phi_{sqrt2 g}(Z_i - Z_j)``."""
    n, q = sample.n, sample.q
    if n < 1:
        raise DomainError("empty sample")
    kappa = 1.0 / bw.h**2
    iu, ju = np.triu_indices(n)
    xs, zs = sample.xs, sample.zs
    dots = np.einsum("ij,ij->i", xs[iu], xs[ju])
    norm_sum = np.sqrt(np.clip(2.0 + 2.0 * dots, 0.0, None))
    upper = np.exp(2.0 * log_cq(q, kappa) - log_cq(q, kappa * norm_sum))
    psi = np.empty((n, n))
    psi[iu, ju] = upper
    psi[ju, iu] = upper
    sd = math.sqrt(2.0) * bw.g
    dz = zs[iu] - zs[ju]
    upper = np.exp(-0.5 * (dz / sd) ** 2) / (math.sqrt(2.0 * math.pi) * sd)
    omega = np.empty((n, n))
    omega[iu, ju] = upper
    omega[ju, iu] = upper
    return GramMatrices(psi, omega, bw.h, bw.g)


def t_statistic(grams: GramMatrices) -> float:
    """``1(Psi o Omega / n^2 - 2 Psi Omega / n^3 + Psi 1'1 Omega / n^4)1'``."""
    psi, omega = grams.psi, grams.omega
    n = psi.shape[0]
    hadamard = np.sum(psi * omega) / n**2
    product = (psi.sum(axis=0) @ omega.sum(axis=1)) * 2.0 / n**3
    rank_one = psi.sum() * omega.sum() / n**4
    return float(hadamard - product + rank_one)


def permuted_statistics(grams: GramMatrices, perms) -> np.ndarray:
    """Statistics of the samples ``(X_i, Z_perm(i))`` without rebuilding any kernel.

    ``Omega`` is re-indexed as ``Omega[perm][:, perm]``; the row sums of the
    permuted matrix are the permuted row sums and the rank-one term does not
    change at all.
    """
    psi, omega = grams.psi, grams.omega
    perms = np.atleast_2d(np.asarray(perms, dtype=np.intp))
    n = psi.shape[0]
    col_psi = psi.sum(axis=0)
    row_omega = omega.sum(axis=1)
    rank_one = psi.sum() * omega.sum() / n**4
    out = np.empty(len(perms))
    step = max(1, _CHUNK_ENTRIES // (n * n))
    for start in range(0, len(perms), step):
        p = perms[start:start + step]
        block = omega[p[:, :, None], p[:, None, :]]
        hadamard = np.einsum("ij,bij->b", psi, block) / n**2
        # einsum rather than matmul: BLAS blocking would make rounding depend on the chunk
        product = np.einsum("bi,i->b", row_omega[p], col_psi) * 2.0 / n**3
        out[start:start + step] = hadamard - product + rank_one
    return out


def permutation_test(sample: DirLinSample, bw: BandwidthPair, B: int = 1000, rng=None,
                     selector: str = "fixed", correction: bool = False) -> TestReport:
    """Permutation calibration of ``T_n`` at fixed bandwidths ``bw``."""
    if int(B) != B or B < 1:
        raise DomainError("B must be a positive integer")
    seed = _seed_of(rng)
    rng = np.random.default_rng(rng)
    grams = gram_matrices(sample, bw)
    n = sample.n
    observed = permuted_statistics(grams, np.arange(n))[0]
    perms = rng.permuted(np.tile(np.arange(n), (int(B), 1)), axis=1)
    resampled = permuted_statistics(grams, perms)
    return TestReport(observed, p_value(observed, resampled, correction), "permutation", int(B),
                      bw, selector, seed, n, sample.q)


def smooth_bootstrap_sample(sample: DirLinSample, pilots: PilotBandwidths, rng=None) -> DirLinSample:
    """Draw ``n`` pairs from the product of the pilot marginal estimates.

    Direction and linear value come from independently drawn indices, which
    is what imposes independence.
    """
    rng = np.random.default_rng(rng)
    n = sample.n
    i = rng.integers(n, size=n)
    j = rng.integers(n, size=n)
    xs = sample_vmf_rows(sample.xs[i], 1.0 / pilots.h_p**2, rng)
    zs = sample.zs[j] + pilots.g_p * rng.standard_normal(n)
    return DirLinSample(xs, zs)


def _bootstrap_stat(args):
    sample, pilots, bw, seed = args
    star = smooth_bootstrap_sample(sample, pilots, np.random.default_rng(seed))
    return t_statistic(gram_matrices(star, bw))


def _map(fn, items, workers: int):
    if workers <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


def bootstrap_test(sample: DirLinSample, B: int = 1000, rng=None, pilots: PilotBandwidths | None = None,
                   correction: bool = False, workers: int = 1) -> TestReport:
    """Smooth-bootstrap calibration with marginal pilots and bootstrap-MISE bandwidths.

    Each resample draws from its own stream spawned from ``rng``, so the
    result does not depend on ``workers``.
    """
    if int(B) != B or B < 1:
        raise DomainError("B must be a positive integer")
    seed = _seed_of(rng)
    rng = np.random.default_rng(rng)
    if pilots is None:
        pilots = pilot_bandwidths(sample)
    bw = select_bo(sample, pilots)
    observed = t_statistic(gram_matrices(sample, bw))
    children = np.random.SeedSequence(rng.integers(2**63)).spawn(int(B))
    resampled = np.array(_map(_bootstrap_stat, [(sample, pilots, bw, c) for c in children], workers))
    return TestReport(observed, p_value(observed, resampled, correction), "bootstrap", int(B),
                      bw, "BO", seed, sample.n, sample.q, pilots=pilots)


def select_bandwidths(sample: DirLinSample, selector: str) -> tuple[BandwidthPair, PilotBandwidths | None]:
    """Dispatch to the named selector (LCV, LSCV, BLCV, BLSCV, BO)."""
    key = selector.upper()
    if key in ("LCV", "LSCV"):
        return select_cv_bandwidths(sample, key.lower()), None
    if key in ("BLCV", "BLSCV"):
        return select_bcv(sample, key[1:].lower())
    if key == "BO":
        pilots = pilot_bandwidths(sample)
        return select_bo(sample, pilots), pilots
    raise DomainError(f"unknown selector {selector!r}")


def independence_test(sample: DirLinSample, method: str = "permutation", selector: str = "LCV",
                      B: int = 1000, rng=None, bandwidths: BandwidthPair | None = None,
                      correction: bool = False, workers: int = 1) -> TestReport:
    """Select bandwidths and calibrate ``T_n`` by permutations or the smooth bootstrap."""
    if method == "bootstrap":
        return bootstrap_test(sample, B, rng, correction=correction, workers=workers)
    if method != "permutation":
        raise DomainError(f"unknown method {method!r}")
    pilots = None
    if selector.lower() == "fixed":
        if bandwidths is None:
            raise DomainError("selector 'fixed' needs explicit bandwidths")
        bw, label = bandwidths, "fixed"
    else:
        bw, pilots = select_bandwidths(sample, selector)
        label = selector.upper()
    report = permutation_test(sample, bw, B, rng, selector=label, correction=correction)
    report.pilots = pilots
    return report


def _standardize(v, name):
    v = np.asarray(v, dtype=float)
    sd = v.std()
    if not sd > 0 or not np.isfinite(sd):
        raise DegenerateData(f"{name} is constant")
    return (v - v.mean()) / sd


def _r2_from_corr(r_zc, r_zs, r_cs):
    return (r_zc**2 + r_zs**2 - 2.0 * r_zc * r_zs * r_cs) / (1.0 - r_cs**2)


def baseline_r2(thetas, zs, B: int = 1000, rng=None, correction: bool = False) -> TestReport:
    """Circular-linear squared correlation, calibrated by permuting ``zs``."""
    if int(B) != B or B < 1:
        raise DomainError("B must be a positive integer")
    seed = _seed_of(rng)
    rng = np.random.default_rng(rng)
    thetas = np.asarray(thetas, dtype=float)
    n = thetas.size
    c = _standardize(np.cos(thetas), "cos(theta)")
    s = _standardize(np.sin(thetas), "sin(theta)")
    z = _standardize(zs, "z")
    r_cs = float(c @ s) / n
    if abs(r_cs) >= 1.0 - 1e-12:
        raise DegenerateData("cos(theta) and sin(theta) are collinear")
    observed = float(_r2_from_corr(z @ c / n, z @ s / n, r_cs))
    perms = rng.permuted(np.tile(np.arange(n), (int(B), 1)), axis=1)
    zp = z[perms]
    resampled = _r2_from_corr(zp @ c / n, zp @ s / n, r_cs)
    return TestReport(observed, p_value(observed, resampled, correction), "baseline-R2", int(B),
                      None, "fixed", seed, n, 1)


def baseline_rank_u(thetas, zs, B: int = 1000, rng=None, correction: bool = False) -> TestReport:
    """Rank circular-linear statistic ``T_c^2 + T_s^2`` on uniform scores, by permutation."""
    if int(B) != B or B < 1:
        raise DomainError("B must be a positive integer")
    seed = _seed_of(rng)
    rng = np.random.default_rng(rng)
    thetas = np.asarray(thetas, dtype=float)
    zs = np.asarray(zs, dtype=float)
    n = thetas.size
    if np.ptp(zs) == 0 or np.ptp(thetas) == 0:
        raise DegenerateData("constant input to the rank statistic")
    beta = 2.0 * np.pi * stats.rankdata(thetas) / n
    cb, sb = np.cos(beta), np.sin(beta)
    ranks = stats.rankdata(zs)

    def u_stat(r):
        return (r @ cb) ** 2 + (r @ sb) ** 2

    observed = float(u_stat(ranks))
    perms = rng.permuted(np.tile(np.arange(n), (int(B), 1)), axis=1)
    resampled = u_stat(ranks[perms])
    return TestReport(observed, p_value(observed, resampled, correction), "baseline-U", int(B),
                      None, "fixed", seed, n, 1)


def sample_angles(sample: DirLinSample) -> np.ndarray:
    """Circular angles of a q = 1 sample."""
    if sample.q != 1:
        raise DomainError("circular baselines need q = 1")
    return circle_to_angles(sample.xs)
