"""Directional-linear simulation models and the Monte Carlo size/power harness."""

from __future__ import annotations

import csv
import io
import json
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy
from scipy import stats

from .directional import VmfMixture, VonMisesFisher, circle_to_angles, north_pole
from .errors import DirlinError, DomainError
from .independence import (baseline_r2, baseline_rank_u, bootstrap_test, independence_test)
from .kde import DirLinSample
from .numerics import LOG_2PI

MODEL_IDS = (1, 2, 3, 4, 5, 6)
READINGS = ("table", "display")
STUDY_METHODS = ("T-LCV", "T-BLCV", "T-boot", "R2", "U")
CIRCULAR_ONLY = ("R2", "U")


def _first_axis(q):
    """``(-1, 0_q)``."""
    v = np.zeros(q + 1)
    v[0] = -1.0
    return v


@dataclass(frozen=True)
class ModelSpec:
    """One of the six benchmark models at deviation ``delta`` on the q-sphere.

    Models 3 and 6 mix a log-normal and a normal conditional law with weights
    ``r`` and ``1 - r``.  ``reading="display"`` puts ``r`` on the log-normal
    term; the default ``"table"`` puts it on the normal term.
    """

    id: int
    delta: float = 0.0
    q: int = 1
    reading: str = "table"

    def __post_init__(self):
        if self.id not in MODEL_IDS:
            raise DomainError(f"model id must be one of {MODEL_IDS}, got {self.id!r}")
        if not (self.delta >= 0 and math.isfinite(self.delta)):
            raise DomainError("delta must be nonnegative")
        if self.q not in (1, 2):
            raise DomainError("models are defined for q in {1, 2}")
        if self.reading not in READINGS:
            raise DomainError(f"reading must be one of {READINGS}")
        object.__setattr__(self, "delta", float(self.delta))

    def directional(self):
        """The directional factor (a vMF or a two-component vMF mixture)."""
        q = self.q
        up = north_pole(q)
        if self.id in (1, 4, 6):
            return VonMisesFisher(up, 1.0)
        if self.id == 2:
            return VonMisesFisher(_first_axis(q), 0.0)
        if self.id == 3:
            return VmfMixture((0.75, 0.25), (VonMisesFisher(up, 2.0), VonMisesFisher(-up, 1.0)))
        return VmfMixture((0.5, 0.5), (VonMisesFisher(up, 2.0), VonMisesFisher(-up, 2.0)))

    def linear_components(self, x):
        """Conditional law of ``Z`` given directions ``x`` (rows).

        Returns a list of ``(weight, family, loc, scale)`` with ``family`` in
        ``{"normal", "lognormal"}`` and ``loc``/``scale`` arrays over rows; for
        the log-normal ``loc`` is the log-scale and ``scale`` the shape.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        d = self.delta
        t_up = x[:, -1]            # x'(0_q, 1)
        t_r = -x[:, 0]             # x'(-1, 0_q)
        one = np.ones(len(x))
        if self.id == 1:
            return [(1.0, "normal", d * (2.0 + t_up), one)]
        if self.id == 2:
            return [(1.0, "lognormal", d * (1.0 + t_r**2), 0.25 * one)]
        if self.id == 3:
            w = 0.25 if self.reading == "display" else 0.75
            return [(w, "lognormal", d * (1.0 + t_up**3), 0.25 * one),
                    (1.0 - w, "normal", one, 0.25 * one)]
        if self.id == 4:
            return [(1.0, "normal", 0.0 * one, 0.25 + d * (1.0 - t_r**3))]
        if self.id == 5:
            # x'mu_2 = -x'mu_1
            return [(1.0, "lognormal", 0.0 * one, 1.0 / (5.0 + d * (-3.0 * t_up - t_up)))]
        w = 0.75 if self.reading == "display" else 0.25
        return [(w, "lognormal", 0.0 * one, 0.5 * one),
                (1.0 - w, "normal", d * (2.0 + t_r), 0.25 + d * t_r**2)]


def _component_logpdf(family, loc, scale, z):
    if family == "normal":
        return -0.5 * ((z - loc) / scale) ** 2 - 0.5 * LOG_2PI - np.log(scale)
    with np.errstate(divide="ignore", invalid="ignore"):
        lz = np.log(np.where(z > 0, z, 1.0))
        out = -0.5 * ((lz - loc) / scale) ** 2 - 0.5 * LOG_2PI - np.log(scale) - lz
    return np.where(z > 0, out, -np.inf)


def model_density(spec: ModelSpec, x, z):
    """Joint density of the model at paired directions ``x`` and values ``z``."""
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 1
    x2 = np.atleast_2d(x)
    z = np.broadcast_to(np.asarray(z, dtype=float), (len(x2),))
    lin = np.zeros(len(x2))
    for w, family, loc, scale in spec.linear_components(x2):
        lin += w * np.exp(_component_logpdf(family, loc, scale, z))
    out = lin * np.asarray(spec.directional().pdf(x2))
    return float(out[0]) if scalar else out


def model_sample(spec: ModelSpec, n: int, rng=None) -> DirLinSample:
    """Draw ``X`` from the directional factor, then ``Z`` given the drawn ``X``."""
    if int(n) != n or n < 1:
        raise DomainError("n must be a positive integer")
    rng = np.random.default_rng(rng)
    xs = spec.directional().sample(int(n), rng)
    comps = spec.linear_components(xs)
    if len(comps) == 1:
        label = np.zeros(n, dtype=int)
    else:
        label = (rng.random(n) >= comps[0][0]).astype(int)
    eps = rng.standard_normal(n)
    zs = np.empty(n)
    for k, (_, family, loc, scale) in enumerate(comps):
        sel = label == k
        if np.any(scale[sel] <= 0):
            raise DomainError(f"model {spec.id} at delta={spec.delta} has a nonpositive scale")
        draw = loc[sel] + scale[sel] * eps[sel]
        zs[sel] = np.exp(draw) if family == "lognormal" else draw
    return DirLinSample(xs, zs)


@dataclass(frozen=True)
class StudyConfig:
    """A grid of (model, delta) x q x n x method cells, each with ``M`` replicates."""

    models: tuple = ((1, 0.0),)
    ns: tuple = (50,)
    M: int = 1000
    B: int = 1000
    alpha: float = 0.05
    methods: tuple = ("T-LCV",)
    seed: int = 0
    qs: tuple = (1,)
    correction: bool = False

    def __post_init__(self):
        if int(self.M) != self.M or self.M < 1:
            raise DomainError("M must be a positive integer")
        if int(self.B) != self.B or self.B < 1:
            raise DomainError("B must be a positive integer")
        if not 0.0 < self.alpha <= 1.0:
            raise DomainError("alpha must lie in (0, 1]")
        for m in self.methods:
            if m not in STUDY_METHODS:
                raise DomainError(f"unknown study method {m!r}")
        models = tuple((int(i), float(d)) for i, d in self.models)
        for i, d in models:
            ModelSpec(i, d, 1)
        for n in self.ns:
            if int(n) != n or n < 2:
                raise DomainError("sample sizes must be integers >= 2")
        object.__setattr__(self, "models", models)
        object.__setattr__(self, "ns", tuple(int(n) for n in self.ns))
        object.__setattr__(self, "qs", tuple(int(q) for q in self.qs))
        object.__setattr__(self, "methods", tuple(self.methods))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["models"] = [list(m) for m in self.models]
        for key in ("ns", "methods", "qs"):
            d[key] = list(d[key])
        return d


@dataclass
class StudyRow:
    model: int
    delta: float
    q: int
    n: int
    method: str
    rejections: int
    M: int
    proportion: float
    se: float
    seconds: float | None
    failed: int = 0


@dataclass
class StudyTable:
    rows: list = field(default_factory=list)

    COLUMNS = ("model", "delta", "q", "n", "method", "rejections", "M", "proportion", "se",
               "seconds", "failed")

    def cell(self, model, delta, q, n, method) -> StudyRow:
        for r in self.rows:
            if (r.model, r.delta, r.q, r.n, r.method) == (model, float(delta), q, n, method):
                return r
        raise KeyError((model, delta, q, n, method))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for r in self.rows:
            w.writerow([r.model, repr(r.delta), r.q, r.n, r.method, r.rejections, r.M,
                        repr(r.proportion), repr(r.se),
                        "" if r.seconds is None else f"{r.seconds:.3f}", r.failed])
        return buf.getvalue()


def _replicate_seed(seed, model, delta, q, n, rep, salt=0):
    return np.random.SeedSequence([int(seed), model, int(round(delta * 1_000_000)), q, n, rep, salt])


def _run_replicate(task):
    """One sample and every requested method; returns ``[(p or None, seconds)]``."""
    cfg, model, delta, q, n, rep, methods = task
    sample = model_sample(ModelSpec(model, delta, q), n,
                          np.random.default_rng(_replicate_seed(cfg.seed, model, delta, q, n, rep)))
    out = []
    for method in methods:
        # method streams are keyed by the method's position in STUDY_METHODS
        rng = np.random.default_rng(_replicate_seed(cfg.seed, model, delta, q, n, rep,
                                                    1 + STUDY_METHODS.index(method)))
        t0 = time.perf_counter()
        try:
            p = _method_p_value(method, sample, cfg.B, rng, cfg.correction)
        except (DirlinError, ValueError, ArithmeticError):
            p = None
        out.append((p, time.perf_counter() - t0))
    return out


def _method_p_value(method, sample, B, rng, correction):
    if method == "T-LCV":
        return independence_test(sample, "permutation", "LCV", B, rng, correction=correction).p_value
    if method == "T-BLCV":
        return independence_test(sample, "permutation", "BLCV", B, rng, correction=correction).p_value
    if method == "T-boot":
        return bootstrap_test(sample, B, rng, correction=correction).p_value
    thetas = circle_to_angles(sample.xs)
    if method == "R2":
        return baseline_r2(thetas, sample.zs, B, rng, correction).p_value
    return baseline_rank_u(thetas, sample.zs, B, rng, correction).p_value


def run_study(config: StudyConfig, workers: int = 1, timings: bool = False) -> StudyTable:
    """Rejection proportions at level ``alpha`` for every cell of ``config``.

    A test rejects when its p-value is at most ``alpha``.  Replicates whose
    selector or calibration fails are excluded and counted in ``failed``.
    Results do not depend on ``workers``: every replicate draws from a stream
    keyed by (seed, model, delta, q, n, replicate).  ``seconds`` (total time
    spent in each cell's tests) is only filled in when ``timings`` is set.
    """
    cells, tasks = [], []
    for q in config.qs:
        methods = tuple(m for m in config.methods if q == 1 or m not in CIRCULAR_ONLY)
        if not methods:
            continue
        for model, delta in config.models:
            for n in config.ns:
                cells.append((model, delta, q, n, methods))
                tasks.extend((config, model, delta, q, n, rep, methods) for rep in range(config.M))
    if workers <= 1:
        results = [_run_replicate(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_replicate, tasks, chunksize=max(1, len(tasks) // (8 * workers))))
    table = StudyTable()
    for c, (model, delta, q, n, methods) in enumerate(cells):
        block = results[c * config.M:(c + 1) * config.M]
        for k, method in enumerate(methods):
            ps = [rep[k][0] for rep in block]
            ok = [p for p in ps if p is not None]
            failed = len(ps) - len(ok)
            rejections = sum(p <= config.alpha for p in ok)
            used = len(ok)
            prop = rejections / used if used else math.nan
            se = math.sqrt(prop * (1.0 - prop) / used) if used else math.nan
            seconds = sum(rep[k][1] for rep in block) if timings else None
            table.rows.append(StudyRow(model, delta, q, n, method, int(rejections), config.M,
                                       prop, se, seconds, failed))
    return table


def run_studies(configs, workers: int = 1, timings: bool = False) -> StudyTable:
    """Concatenate the tables of several configurations, in order."""
    table = StudyTable()
    for cfg in configs:
        table.rows.extend(run_study(cfg, workers, timings).rows)
    return table


def binomial_band(alpha: float, M: int, level: float = 0.99) -> tuple[float, float]:
    """Central ``level`` band of ``Binomial(M, alpha) / M``."""
    tail = (1.0 - level) / 2.0
    lo = stats.binom.ppf(tail, M, alpha) / M
    hi = stats.binom.ppf(1.0 - tail, M, alpha) / M
    return float(lo), float(hi)


def _preset_table1_desk(seed):
    return [
        StudyConfig(models=((1, 0.0),), ns=(50,), M=200, B=199, methods=("T-LCV",), seed=seed),
        StudyConfig(models=((3, 0.5),), ns=(100,), M=100, B=199, methods=("T-LCV",), seed=seed),
        StudyConfig(models=((2, 0.5),), ns=(100,), M=100, B=199, methods=("T-LCV", "R2"), seed=seed),
        StudyConfig(models=((1, 0.5),), ns=(100,), M=100, B=199, methods=("T-LCV",), seed=seed, qs=(2,)),
        StudyConfig(models=((3, 0.0),), ns=(50,), M=200, B=199, methods=("T-boot",), seed=seed),
    ]


PRESETS = {"table1-desk": _preset_table1_desk}


def study_manifest(configs, timings: bool, preset: str | None = None) -> dict:
    """Configuration, seed and library versions of a study run."""
    from . import __version__
    return {
        "preset": preset,
        "configs": [c.to_dict() for c in configs],
        "timings": timings,
        "versions": {"dirlin": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
    }


def write_manifest(path, manifest: dict):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
