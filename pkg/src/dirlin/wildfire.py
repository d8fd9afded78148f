"""Orientation-versus-size analysis of fire perimeters, per watershed.

Each fire's orientation is the first principal axis of its perimeter
vertices, embedded on the circle (planar axis, angle doubled) or on the
sphere (axis with inclination).  The response is the log burnt area.
"""

from __future__ import annotations

import csv
import json
import math
import os
import zlib
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .directional import encode_axial, pca_orientation
from .errors import DegenerateOrientation, DirlinError, DomainError, SchemaError
from .independence import independence_test
from .kde import DirLinSample
from .simulation import ModelSpec, model_sample

FIRE_COLUMNS = ("fire_id", "watershed_id", "vertex_index", "lon", "lat", "alt", "burnt_area_ha")
MIN_FIRES = 25
DIM_NAMES = {2: "circular", 3: "spherical"}


@dataclass(frozen=True, eq=False)
class FireRecord:
    fire_id: str
    watershed_id: str
    vertices: np.ndarray
    burnt_area: float

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] not in (2, 3) or v.shape[0] < 3:
            raise DomainError(f"fire {self.fire_id}: need at least 3 vertices in 2-D or 3-D")
        if not self.burnt_area > 0:
            raise DomainError(f"fire {self.fire_id}: burnt area must be positive")
        object.__setattr__(self, "vertices", v)

    @property
    def has_altitude(self) -> bool:
        return self.vertices.shape[1] == 3


@dataclass
class FireDataset:
    """Validated fires plus the ids of the fires skipped, by reason."""

    records: list
    skipped: dict = field(default_factory=dict)

    @property
    def n_input(self) -> int:
        return len(self.records) + sum(len(v) for v in self.skipped.values())


def _parse_float(text, name, line):
    try:
        return float(text)
    except ValueError:
        raise SchemaError(f"column {name!r} is not a number: {text!r}", line) from None


def load_fires(path, format: str = "vertex-csv") -> FireDataset:
    """Read a vertex CSV (one row per perimeter vertex).

    Fires with fewer than 3 vertices or a nonpositive area are skipped and
    reported.  Duplicate ``(fire_id, vertex_index)`` keys, an area or
    watershed that changes within a fire, or a malformed row raise
    :class:`SchemaError` with the offending line number.
    """
    if format != "vertex-csv":
        raise DomainError(f"unsupported fire format {format!r}")
    rows = defaultdict(dict)
    meta = {}
    order = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in FIRE_COLUMNS if c != "alt" and c not in header]
        if missing:
            raise SchemaError(f"missing columns {missing}", 1)
        for rec in reader:
            line = reader.line_num
            fid = (rec.get("fire_id") or "").strip()
            wid = (rec.get("watershed_id") or "").strip()
            if not fid or not wid:
                raise SchemaError("empty fire_id or watershed_id", line)
            try:
                idx = int(rec["vertex_index"])
            except (TypeError, ValueError):
                raise SchemaError(f"vertex_index is not an integer: {rec['vertex_index']!r}", line) from None
            lon = _parse_float(rec["lon"], "lon", line)
            lat = _parse_float(rec["lat"], "lat", line)
            alt_text = (rec.get("alt") or "").strip()
            alt = _parse_float(alt_text, "alt", line) if alt_text else None
            area = _parse_float(rec["burnt_area_ha"], "burnt_area_ha", line)
            if not all(map(math.isfinite, (lon, lat, area))) or (alt is not None and not math.isfinite(alt)):
                raise SchemaError("non-finite value", line)
            if idx in rows[fid]:
                raise SchemaError(f"duplicate vertex ({fid}, {idx})", line)
            if fid in meta:
                if meta[fid][0] != wid:
                    raise SchemaError(f"fire {fid} changes watershed", line)
                if meta[fid][1] != area:
                    raise SchemaError(f"fire {fid} has inconsistent burnt area", line)
            else:
                meta[fid] = (wid, area)
                order.append(fid)
            rows[fid][idx] = (lon, lat, alt)
    records, skipped = [], defaultdict(list)
    for fid in order:
        wid, area = meta[fid]
        verts = [rows[fid][k] for k in sorted(rows[fid])]
        if len(verts) < 3:
            skipped["too_few_vertices"].append(fid)
            continue
        if not area > 0:
            skipped["nonpositive_area"].append(fid)
            continue
        with_alt = all(v[2] is not None for v in verts)
        arr = np.array([v if with_alt else v[:2] for v in verts], dtype=float)
        records.append(FireRecord(fid, wid, arr, area))
    return FireDataset(records, dict(skipped))


def write_fires(fires, path):
    """Write fires in the vertex CSV layout read by :func:`load_fires`."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIRE_COLUMNS)
        for f in fires:
            for k, v in enumerate(f.vertices):
                alt = repr(float(v[2])) if f.has_altitude else ""
                w.writerow([f.fire_id, f.watershed_id, k, repr(float(v[0])), repr(float(v[1])),
                            alt, repr(float(f.burnt_area))])


@dataclass(frozen=True, eq=False)
class OrientationSample:
    """Directions and log areas of the fires whose orientation is defined."""

    sample: DirLinSample | None
    fire_ids: tuple
    excluded: tuple
    phi: np.ndarray | None = None


def build_orientation_sample(fires, dims: int = 2, response: str = "log_burnt_area") -> OrientationSample:
    """Encode each fire's principal axis on the circle (``dims=2``) or sphere (``dims=3``).

    Fires without a preferred axis are excluded and listed.  Raises
    :class:`DegenerateOrientation` when no fire is left.
    """
    if dims not in (2, 3):
        raise DomainError("dims must be 2 or 3")
    if response != "log_burnt_area":
        raise DomainError(f"unsupported response {response!r}")
    fires = list(fires)
    if not fires:
        raise DomainError("no fires")
    xs, zs, ids, excluded, phis = [], [], [], [], []
    for f in fires:
        if dims == 3 and not f.has_altitude:
            raise DomainError(f"fire {f.fire_id} has no altitude for a 3-D orientation")
        try:
            axis = pca_orientation(f.vertices[:, :dims])
        except DegenerateOrientation:
            excluded.append(f.fire_id)
            continue
        xs.append(encode_axial(axis))
        zs.append(math.log(f.burnt_area))
        ids.append(f.fire_id)
        if dims == 3:
            phis.append(axis.phi)
    if not ids:
        raise DegenerateOrientation("every fire has a degenerate orientation")
    return OrientationSample(DirLinSample(np.array(xs), np.array(zs)), tuple(ids), tuple(excluded),
                             np.array(phis) if dims == 3 else None)


def by_adjust(pvalues) -> np.ndarray:
    """Benjamini--Yekutieli adjusted p-values (step-up with monotonicity, capped at 1)."""
    p = np.asarray(pvalues, dtype=float)
    if p.size == 0:
        return p.copy()
    return stats.false_discovery_control(p, method="by")


@dataclass
class WatershedResult:
    watershed_id: str
    n_fires: int
    p_circular: float | None = None
    p_spherical: float | None = None
    adjusted_circular: float | None = None
    adjusted_spherical: float | None = None
    rejected_circular: bool | None = None
    rejected_spherical: bool | None = None
    bandwidths: dict = field(default_factory=dict)


@dataclass
class WatershedAnalysis:
    results: list
    config: dict
    small_watersheds: dict
    exclusions: dict
    global_p: dict
    combined_p: dict
    n_input: int
    n_analyzed: int
    scatter: list = field(default_factory=list)


def _stream(seed, key: str, dims: int):
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(key.encode("utf-8")), dims]))


def _test_task(args):
    key, xs, zs, dims, selector, B, seed = args
    sample = DirLinSample(xs, zs)
    try:
        rep = independence_test(sample, "permutation", selector, B, _stream(seed, key, dims))
    except (DirlinError, ValueError, ArithmeticError) as exc:
        return key, dims, None, None, f"{type(exc).__name__}: {exc}"
    return key, dims, rep.p_value, (rep.bandwidths.h, rep.bandwidths.g), None


def watershed_analysis(fires, dims=(2, 3), selector: str = "BLCV", B: int = 1000, alpha: float = 0.05,
                       seed: int = 0, min_fires: int = MIN_FIRES, global_test: bool = True,
                       workers: int = 1, skipped: dict | None = None) -> WatershedAnalysis:
    """Permutation tests per watershed and on the pooled data, with BY adjustment.

    Watersheds with fewer than ``min_fires`` usable fires are excluded and
    listed.  The combined p-value of each dimension is the smallest adjusted
    p-value across watersheds.  ``skipped`` carries fires already dropped at
    load time so the exclusion accounting covers the whole input.
    """
    dims = tuple(sorted(set(int(d) for d in ((dims,) if np.isscalar(dims) else dims))))
    if not dims or any(d not in (2, 3) for d in dims):
        raise DomainError("dims must be drawn from {2, 3}")
    if not 0.0 < alpha <= 1.0:
        raise DomainError("alpha must lie in (0, 1]")
    fires = list(fires)
    if not fires:
        raise DomainError("no fires")
    exclusions = {k: list(v) for k, v in (skipped or {}).items()}
    by_ws = defaultdict(list)
    for f in fires:
        by_ws[f.watershed_id].append(f)

    # orientation per dimension; a fire degenerate in any requested dimension is dropped everywhere
    degenerate = set()
    for d in dims:
        degenerate.update(build_orientation_sample_ids(fires, d))
    if degenerate:
        exclusions["degenerate_orientation"] = sorted(degenerate)
    usable = {w: [f for f in fs if f.fire_id not in degenerate] for w, fs in by_ws.items()}
    small = {w: len(fs) for w, fs in sorted(usable.items()) if len(fs) < min_fires}
    if small:
        exclusions["small_watershed"] = sorted(f.fire_id for w in small for f in usable[w])
    analyzed = {w: fs for w, fs in sorted(usable.items()) if w not in small}

    tasks, pooled = [], {}
    for d in dims:
        for w, fs in analyzed.items():
            os_ = build_orientation_sample(fs, d)
            tasks.append((w, os_.sample.xs, os_.sample.zs, d, selector, B, seed))
        if global_test:
            all_fs = [f for fs in usable.values() for f in fs]
            if len(all_fs) >= 2:
                pooled[d] = build_orientation_sample(all_fs, d)
                tasks.append(("\0global", pooled[d].sample.xs, pooled[d].sample.zs, d, selector, B, seed))
    if workers <= 1:
        outcomes = [_test_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_test_task, tasks))

    results = {w: WatershedResult(w, len(fs)) for w, fs in analyzed.items()}
    global_p, failures = {}, {}
    for key, d, p, bw, err in outcomes:
        name = DIM_NAMES[d]
        if key == "\0global":
            global_p[name] = p
            continue
        if err is not None:
            failures.setdefault(name, {})[key] = err
            continue
        setattr(results[key], f"p_{name}", p)
        results[key].bandwidths[name] = list(bw)
    combined = {}
    for d in dims:
        name = DIM_NAMES[d]
        keys = [w for w in results if getattr(results[w], f"p_{name}") is not None]
        adj = by_adjust([getattr(results[w], f"p_{name}") for w in keys])
        for w, a in zip(keys, adj):
            setattr(results[w], f"adjusted_{name}", float(a))
            setattr(results[w], f"rejected_{name}", bool(a <= alpha))
        combined[name] = float(adj.min()) if len(adj) else None
    if failures:
        exclusions["test_failed"] = {k: v for k, v in sorted(failures.items())}

    scatter = []
    if 3 in dims:
        for w, fs in analyzed.items():
            os_ = build_orientation_sample(fs, 3)
            for fid, phi, z in zip(os_.fire_ids, os_.phi, os_.sample.zs):
                scatter.append((w, fid, float(phi), float(z)))

    config = {"dims": list(dims), "selector": selector, "B": int(B), "alpha": alpha, "seed": int(seed),
              "min_fires": int(min_fires), "global_test": bool(global_test)}
    n_input = len(fires) + sum(len(v) for v in (skipped or {}).values())
    n_analyzed = sum(len(fs) for fs in analyzed.values())
    return WatershedAnalysis(list(results.values()), config, small, exclusions, global_p, combined,
                             n_input, n_analyzed, scatter)


def build_orientation_sample_ids(fires, dims) -> list:
    """Ids of the fires without a preferred axis in ``dims`` dimensions."""
    bad = []
    for f in fires:
        if dims == 3 and not f.has_altitude:
            raise DomainError(f"fire {f.fire_id} has no altitude for a 3-D orientation")
        try:
            pca_orientation(f.vertices[:, :dims])
        except DegenerateOrientation:
            bad.append(f.fire_id)
    return bad


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(float(v))


def emit_reports(analysis: WatershedAnalysis, out_dir) -> dict:
    """Write the per-watershed table, choropleth and scatter CSVs and a JSON manifest.

    Returns the paths written, keyed by report name.
    """
    if not analysis.results:
        raise DomainError("no watershed was analysed")
    os.makedirs(out_dir, exist_ok=True)
    names = [DIM_NAMES[d] for d in analysis.config["dims"]]
    paths = {}

    paths["watersheds"] = os.path.join(out_dir, "watersheds.csv")
    with open(paths["watersheds"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = ["watershed_id", "n_fires"]
        for nm in names:
            head += [f"p_{nm}", f"adjusted_p_{nm}", f"rejected_{nm}"]
        w.writerow(head)
        for r in analysis.results:
            row = [r.watershed_id, r.n_fires]
            for nm in names:
                rej = getattr(r, f"rejected_{nm}")
                row += [_fmt(getattr(r, f"p_{nm}")), _fmt(getattr(r, f"adjusted_{nm}")),
                        _fmt(bool(rej)) if rej is not None else ""]
            w.writerow(row)

    paths["choropleth"] = os.path.join(out_dir, "choropleth.csv")
    with open(paths["choropleth"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["watershed_id", "dimension", "p_value", "adjusted_p"])
        for nm in names:
            for r in analysis.results:
                w.writerow([r.watershed_id, nm, _fmt(getattr(r, f"p_{nm}")),
                            _fmt(getattr(r, f"adjusted_{nm}"))])

    if analysis.scatter:
        paths["scatter"] = os.path.join(out_dir, "slope_scatter.csv")
        with open(paths["scatter"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["watershed_id", "fire_id", "phi", "log_area"])
            for ws, fid, phi, z in analysis.scatter:
                w.writerow([ws, fid, _fmt(phi), _fmt(z)])

    paths["manifest"] = os.path.join(out_dir, "manifest.json")
    manifest = {
        "config": analysis.config,
        "n_input": analysis.n_input,
        "n_analyzed": analysis.n_analyzed,
        "small_watersheds": analysis.small_watersheds,
        "exclusions": analysis.exclusions,
        "global_p": analysis.global_p,
        "combined_p": analysis.combined_p,
    }
    with open(paths["manifest"], "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths


def perimeter(theta: float, center, length: float = 0.02, aspect: float = 0.4, n_vertices: int = 16,
              alt: float | None = None) -> np.ndarray:
    """Elliptical perimeter with major axis at planar angle ``theta``."""
    t = 2.0 * np.pi * np.arange(n_vertices) / n_vertices
    local = np.column_stack([length * np.cos(t), aspect * length * np.sin(t)])
    c, s = math.cos(theta), math.sin(theta)
    pts = local @ np.array([[c, s], [-s, c]]) + np.asarray(center, dtype=float)
    if alt is None:
        return pts
    return np.column_stack([pts, np.full(n_vertices, float(alt))])


def synthetic_atlas(n_watersheds: int = 10, dependent=(0, 1, 2), n_fires: int = 100, model: int = 3,
                    delta: float = 0.5, rng=None) -> list:
    """Fires whose doubled-angle orientation and log area follow a benchmark model.

    Watersheds listed in ``dependent`` draw from ``model`` at ``delta``; the
    rest from the same model at ``delta = 0`` (independence).  Ids are
    ``W00``, ``W01``, ...; perimeters are flat ellipses at constant altitude.
    """
    rng = np.random.default_rng(rng)
    fires = []
    for k in range(n_watersheds):
        spec = ModelSpec(model, delta if k in dependent else 0.0, 1)
        smp = model_sample(spec, n_fires, rng)
        center = np.array([-8.0 + 0.5 * k, 42.0])
        for i, (x, z) in enumerate(zip(smp.xs, smp.zs)):
            theta = (math.atan2(x[1], x[0]) / 2.0) % math.pi
            verts = perimeter(theta, center + rng.normal(scale=0.1, size=2), alt=100.0)
            fires.append(FireRecord(f"F{k:02d}-{i:04d}", f"W{k:02d}", verts, math.exp(z)))
    return fires
