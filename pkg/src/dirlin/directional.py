"""Unit vectors, von Mises--Fisher distributions and axial orientations."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateOrientation, DomainError
from .numerics import log_cq

UNIT_TOL = 1e-12


def as_unit_vectors(x, tol: float = 1e-10) -> np.ndarray:
    """Return ``x`` as a 2-D float array of unit rows, checking the norms."""
    arr = np.atleast_2d(np.asarray(x, dtype=float))
    norms = np.linalg.norm(arr, axis=1)
    bad = np.abs(norms - 1.0) > tol
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise DomainError(f"row {i} is not a unit vector (norm {norms[i]!r})")
    return arr


def angles_to_circle(theta) -> np.ndarray:
    """Map circular angles (radians) to points of S^1."""
    theta = np.asarray(theta, dtype=float)
    return np.stack([np.cos(theta), np.sin(theta)], axis=-1)


def circle_to_angles(x) -> np.ndarray:
    """Angles in [0, 2 pi) of points on S^1."""
    x = np.asarray(x, dtype=float)
    return np.mod(np.arctan2(x[..., 1], x[..., 0]), 2.0 * np.pi)


def north_pole(q: int) -> np.ndarray:
    """The vector (0_q, 1)."""
    e = np.zeros(q + 1)
    e[-1] = 1.0
    return e


@dataclass(frozen=True)
class VonMisesFisher:
    """vMF distribution on the q-sphere with mean ``mu`` and concentration ``kappa``."""

    mu: np.ndarray
    kappa: float

    def __post_init__(self):
        mu = as_unit_vectors(self.mu, tol=UNIT_TOL)[0]
        object.__setattr__(self, "mu", mu)
        if not self.kappa >= 0:
            raise DomainError("kappa must be nonnegative")
        object.__setattr__(self, "kappa", float(self.kappa))

    @property
    def q(self) -> int:
        return self.mu.shape[0] - 1

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.mu.shape[0]:
            raise DomainError(f"dimension mismatch: {x.shape[-1]} vs {self.mu.shape[0]}")
        return log_cq(self.q, self.kappa) + self.kappa * (x @ self.mu)

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def sample(self, n: int, rng=None) -> np.ndarray:
        return vmf_sample(self, n, rng)


@dataclass(frozen=True)
class VmfMixture:
    """Finite mixture of vMF components sharing one sphere."""

    weights: tuple
    components: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if len(w) != len(self.components) or len(w) == 0:
            raise DomainError("need one weight per component")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise DomainError("mixture weights must be nonnegative and sum to 1")
        if len({c.q for c in self.components}) != 1:
            raise DomainError("mixture components live on different spheres")
        object.__setattr__(self, "weights", tuple(float(v) for v in w))
        object.__setattr__(self, "components", tuple(self.components))

    @property
    def q(self) -> int:
        return self.components[0].q

    def pdf(self, x):
        return sum(w * c.pdf(x) for w, c in zip(self.weights, self.components))

    def sample(self, n: int, rng=None) -> np.ndarray:
        rng = np.random.default_rng(rng)
        labels = rng.choice(len(self.weights), size=n, p=self.weights)
        out = np.empty((n, self.q + 1))
        for k, comp in enumerate(self.components):
            idx = np.flatnonzero(labels == k)
            if idx.size:
                out[idx] = comp.sample(idx.size, rng)
        return out


def vmf_density(d: VonMisesFisher, x):
    """``C_q(kappa) exp(kappa x'mu)`` evaluated through log space."""
    return d.pdf(x)


def _sample_polar_cosine(q: int, kappa: float, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``w = x'mu`` by Wood's envelope rejection; also returns ``1 - w``."""
    # b computed in the cancellation-free form
    b = q / (math.sqrt(4.0 * kappa**2 + q**2) + 2.0 * kappa)
    x0 = (1.0 - b) / (1.0 + b)
    one_minus_x0 = 2.0 * b / (1.0 + b)
    c = kappa * x0 + q * math.log(one_minus_x0 * (1.0 + x0))
    w = np.empty(n)
    one_minus_w = np.empty(n)
    todo = np.arange(n)
    while todo.size:
        m = todo.size
        zb = rng.beta(q / 2.0, q / 2.0, size=m)
        denom = 1.0 - (1.0 - b) * zb
        wc = (1.0 - (1.0 + b) * zb) / denom
        omw = 2.0 * b * zb / denom
        u = rng.uniform(size=m)
        # 1 - x0 w, written to stay accurate when both are close to 1
        one_minus_x0w = one_minus_x0 + x0 * omw
        with np.errstate(divide="ignore"):
            ok = kappa * wc + q * np.log(one_minus_x0w) - c >= np.log(u)
        w[todo[ok]] = wc[ok]
        one_minus_w[todo[ok]] = omw[ok]
        todo = todo[~ok]
    return w, one_minus_w


def sample_vmf_rows(mu, kappa: float, rng=None) -> np.ndarray:
    """One vMF draw per row of ``mu`` (shape ``(n, q+1)``), common concentration."""
    rng = np.random.default_rng(rng)
    mu = np.atleast_2d(np.asarray(mu, dtype=float))
    n, d = mu.shape
    q = d - 1
    if not kappa >= 0:
        raise DomainError("kappa must be nonnegative")
    w, omw = _sample_polar_cosine(q, float(kappa), n, rng)
    v = rng.standard_normal((n, d))
    v -= np.sum(v * mu, axis=1, keepdims=True) * mu
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    s = np.sqrt(np.clip(omw * (1.0 + w), 0.0, None))
    x = w[:, None] * mu + s[:, None] * v
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def vmf_sample(d: VonMisesFisher, n: int, rng=None) -> np.ndarray:
    """``n`` i.i.d. draws from ``d`` via the tangent-normal decomposition."""
    if int(n) != n or n < 1:
        raise DomainError("n must be a positive integer")
    return sample_vmf_rows(np.tile(d.mu, (int(n), 1)), d.kappa, rng)


@dataclass(frozen=True)
class AxialOrientation:
    """Undirected axis: planar angle ``theta`` in [0, pi), optional inclination ``phi``.

    ``phi = pi/2`` is a flat (horizontal) axis and ``phi = 0`` a vertical one.
    """

    theta: float
    phi: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.theta < math.pi:
            raise DomainError(f"theta must lie in [0, pi), got {self.theta!r}")
        if self.phi is not None and not 0.0 <= self.phi <= math.pi / 2:
            raise DomainError(f"phi must lie in [0, pi/2], got {self.phi!r}")


def encode_axial(a: AxialOrientation) -> np.ndarray:
    """Embed an axis as a direction by doubling its planar angle.

    2-D axes map to ``(cos 2theta, sin 2theta)``; 3-D axes to the upper
    hemisphere point with spherical coordinates ``(2theta, phi)``.
    """
    c, s = math.cos(2.0 * a.theta), math.sin(2.0 * a.theta)
    if a.phi is None:
        return np.array([c, s])
    sp = math.sin(a.phi)
    return np.array([sp * c, sp * s, math.cos(a.phi)])


def encode_axial_array(theta, phi=None) -> np.ndarray:
    """Vectorized :func:`encode_axial` for arrays of angles."""
    theta = np.asarray(theta, dtype=float)
    c, s = np.cos(2.0 * theta), np.sin(2.0 * theta)
    if phi is None:
        return np.stack([c, s], axis=-1)
    phi = np.asarray(phi, dtype=float)
    sp = np.sin(phi)
    return np.stack([sp * c, sp * s, np.cos(phi)], axis=-1)


def _wrap_pi(theta: float) -> float:
    t = math.fmod(theta, math.pi)
    if t < 0:
        t += math.pi
    if t >= math.pi:
        t = 0.0
    return t


def pca_orientation(vertices, rel_tol: float = 1e-9) -> AxialOrientation:
    """Axis of the first principal component of a vertex cloud in R^2 or R^3.

    Vertices are centred and weighted equally.  Raises
    :class:`DegenerateOrientation` when the two leading covariance eigenvalues
    agree to ``rel_tol`` (no preferred axis).
    """
    v = np.asarray(vertices, dtype=float)
    if v.ndim != 2 or v.shape[1] not in (2, 3):
        raise DomainError("vertices must be an (m, 2) or (m, 3) array")
    centred = v - v.mean(axis=0)
    cov = centred.T @ centred / len(v)
    evals, evecs = np.linalg.eigh(cov)
    top, second = evals[-1], evals[-2]
    if not top > 0 or top - second <= rel_tol * top:
        raise DegenerateOrientation("leading principal axes have equal variance")
    axis = evecs[:, -1]
    theta = _wrap_pi(math.atan2(axis[1], axis[0]))
    if v.shape[1] == 2:
        return AxialOrientation(theta)
    phi = math.acos(min(1.0, abs(axis[2])))
    return AxialOrientation(theta, min(phi, math.pi / 2))
