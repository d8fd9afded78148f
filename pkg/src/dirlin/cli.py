"""Command-line interface: ``dirlin {test,bandwidth,simulate,wildfire,atlas}``.

Exit codes: 0 on success, 2 for input or validation errors, 3 for numerical
failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import warnings

import numpy as np

from . import __version__
from .directional import angles_to_circle, encode_axial_array
from .errors import DirlinError, NonFiniteObjective, SchemaError
from .independence import (baseline_r2, baseline_rank_u, independence_test, sample_angles,
                           select_bandwidths)
from .kde import BandwidthPair, DirLinSample
from .simulation import (PRESETS, STUDY_METHODS, StudyConfig, run_studies, study_manifest,
                         write_manifest)
from .wildfire import MIN_FIRES, emit_reports, load_fires, synthetic_atlas, watershed_analysis, write_fires

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
UNIT_TOL = 1e-6
RENORMALIZE_TOL = 1e-3


class InputError(DirlinError):
    """Invalid command-line input (reported with exit code 2)."""


def read_sample(path) -> DirLinSample:
    """Read ``theta,z`` (circle), ``theta,phi,z`` (axial, sphere) or ``x1..xk,z`` rows.

    Unit vectors off by more than 1e-6 are renormalized with a warning up to
    1e-3 and rejected beyond that, naming the line.
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError("empty file", 1) from None
        rows, lines = [], []
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise SchemaError(f"expected {len(header)} fields, got {len(row)}", reader.line_num)
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise SchemaError("non-numeric field", reader.line_num) from None
            if not all(map(math.isfinite, rows[-1])):
                raise SchemaError("non-finite field", reader.line_num)
            lines.append(reader.line_num)
    if not rows:
        raise SchemaError("no data rows", 2)
    data = np.array(rows)
    cols = {name: k for k, name in enumerate(header)}
    if "z" not in cols:
        raise SchemaError("missing column 'z'", 1)
    zs = data[:, cols["z"]]
    if header == ["theta", "z"]:
        xs = angles_to_circle(data[:, 0])
    elif header == ["theta", "phi", "z"]:
        xs = encode_axial_array(data[:, 0], data[:, 1])
    else:
        k = len(header) - 1
        names = [f"x{i}" for i in range(1, k + 1)]
        if k < 2 or header[:k] != names or header[k] != "z":
            raise SchemaError("header must be 'theta,z', 'theta,phi,z' or 'x1,...,xk,z'", 1)
        xs = data[:, :k]
        norms = np.linalg.norm(xs, axis=1)
        off = np.abs(norms - 1.0)
        bad = np.flatnonzero(off > RENORMALIZE_TOL)
        if bad.size:
            raise SchemaError(f"vector norm {norms[bad[0]]:.6g} is not 1", lines[bad[0]])
        fixed = np.flatnonzero(off > UNIT_TOL)
        if fixed.size:
            warnings.warn(f"renormalized {fixed.size} vectors (first on line {lines[fixed[0]]})",
                          RuntimeWarning, stacklevel=2)
        xs = xs / norms[:, None]
    return DirLinSample(xs, zs)


def _dump(obj, path=None):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _config(args, *skip) -> dict:
    drop = {"func", "workers", "output"} | set(skip)
    return {k: v for k, v in sorted(vars(args).items()) if k not in drop}


def cmd_test(args) -> int:
    sample = read_sample(args.input)
    method = args.method
    if method in ("baseline-r2", "baseline-u"):
        fn = baseline_r2 if method == "baseline-r2" else baseline_rank_u
        report = fn(sample_angles(sample), sample.zs, args.B, args.seed, args.correction)
    else:
        fixed = None
        if args.selector == "fixed":
            if args.h is None or args.g is None:
                raise InputError("--selector fixed needs --h and --g")
            fixed = BandwidthPair(args.h, args.g)
        report = independence_test(sample, method, args.selector, args.B, args.seed,
                                   bandwidths=fixed, correction=args.correction, workers=args.workers)
    out = report.to_dict()
    out["config"] = _config(args)
    out["version"] = __version__
    _dump(out, args.output)
    return EXIT_OK


def cmd_bandwidth(args) -> int:
    sample = read_sample(args.input)
    bw, pilots = select_bandwidths(sample, args.selector)
    out = {"selector": args.selector.upper(), "h": bw.h, "g": bw.g, "n": sample.n, "q": sample.q,
           "pilots": None if pilots is None else {"h_p": pilots.h_p, "g_p": pilots.g_p},
           "config": _config(args), "version": __version__}
    _dump(out, args.output)
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.preset:
        configs = PRESETS[args.preset](args.seed)
    else:
        models = tuple((m, d) for m in args.models for d in args.delta)
        configs = [StudyConfig(models=models, ns=tuple(args.n), M=args.M, B=args.B, alpha=args.alpha,
                               methods=tuple(args.methods), seed=args.seed, qs=tuple(args.q),
                               correction=args.correction)]
    table = run_studies(configs, workers=args.workers, timings=args.timings)
    text = table.to_csv()
    if args.output:
        with open(args.output, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        manifest_path = args.manifest or args.output + ".json"
    else:
        sys.stdout.write(text)
        manifest_path = args.manifest
    if manifest_path:
        write_manifest(manifest_path, study_manifest(configs, args.timings, args.preset))
    return EXIT_OK


def cmd_wildfire(args) -> int:
    try:
        data = load_fires(args.input)
    except OSError as exc:
        raise InputError(f"cannot read {args.input}: {exc.strerror}") from None
    analysis = watershed_analysis(data.records, dims=tuple(args.dims), selector=args.selector, B=args.B,
                                  alpha=args.alpha, seed=args.seed, min_fires=args.min_fires,
                                  global_test=not args.no_global, workers=args.workers,
                                  skipped=data.skipped)
    paths = emit_reports(analysis, args.out)
    _dump({name: paths[name] for name in sorted(paths)})
    return EXIT_OK


def cmd_atlas(args) -> int:
    dependent = tuple(range(args.dependent))
    fires = synthetic_atlas(args.watersheds, dependent, args.fires, delta=args.delta, rng=args.seed)
    write_fires(fires, args.output)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dirlin", description="Directional-linear independence testing.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, default_B=1000):
        sp.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
        sp.add_argument("--workers", type=_positive_int, default=1, help="parallel worker processes")
        sp.add_argument("--B", type=_positive_int, default=default_B, help="permutation or bootstrap resamples")

    t = sub.add_parser("test", help="test independence on a CSV sample")
    t.add_argument("input")
    t.add_argument("--method", choices=("permutation", "bootstrap", "baseline-r2", "baseline-u"),
                   default="permutation")
    t.add_argument("--selector", type=str.lower, choices=("lcv", "lscv", "blcv", "blscv", "bo", "fixed"),
                   default="lcv")
    t.add_argument("--h", type=float)
    t.add_argument("--g", type=float)
    t.add_argument("--correction", action="store_true", help="use (count + 1) / (B + 1) p-values")
    t.add_argument("--output", help="write the JSON report here instead of stdout")
    common(t)
    t.set_defaults(func=cmd_test)

    b = sub.add_parser("bandwidth", help="select (h, g) for a CSV sample")
    b.add_argument("input")
    b.add_argument("--selector", type=str.lower, choices=("lcv", "lscv", "blcv", "blscv", "bo"), default="lcv")
    b.add_argument("--output")
    common(b)
    b.set_defaults(func=cmd_bandwidth)

    s = sub.add_parser("simulate", help="Monte Carlo size/power study")
    s.add_argument("--preset", choices=sorted(PRESETS))
    s.add_argument("--models", type=int, nargs="+", default=[1])
    s.add_argument("--delta", type=float, nargs="+", default=[0.0])
    s.add_argument("--n", type=int, nargs="+", default=[50])
    s.add_argument("--q", type=int, nargs="+", default=[1])
    s.add_argument("--M", type=_positive_int, default=1000)
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--methods", nargs="+", choices=STUDY_METHODS, default=["T-LCV"])
    s.add_argument("--correction", action="store_true")
    s.add_argument("--timings", action="store_true", help="fill the seconds column (not reproducible)")
    s.add_argument("--output", help="CSV path (default stdout)")
    s.add_argument("--manifest", help="JSON manifest path (default OUTPUT.json)")
    common(s)
    s.set_defaults(func=cmd_simulate)

    w = sub.add_parser("wildfire", help="per-watershed orientation/size tests")
    w.add_argument("input")
    w.add_argument("--out", required=True, help="output directory")
    w.add_argument("--dims", type=int, nargs="+", choices=(2, 3), default=[2, 3])
    w.add_argument("--selector", type=str.upper, choices=("LCV", "LSCV", "BLCV", "BLSCV"), default="BLCV")
    w.add_argument("--alpha", type=float, default=0.05)
    w.add_argument("--min-fires", type=int, default=MIN_FIRES)
    w.add_argument("--no-global", action="store_true", help="skip the pooled-sample test")
    common(w)
    w.set_defaults(func=cmd_wildfire)

    a = sub.add_parser("atlas", help="write a synthetic fire atlas")
    a.add_argument("output")
    a.add_argument("--watersheds", type=_positive_int, default=10)
    a.add_argument("--dependent", type=int, default=3, help="the first DEPENDENT watersheds are dependent")
    a.add_argument("--fires", type=_positive_int, default=100)
    a.add_argument("--delta", type=float, default=0.5)
    a.add_argument("--seed", type=int, default=0)
    a.set_defaults(func=cmd_atlas)
    return p


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    warnings.simplefilter("default")
    try:
        return args.func(args)
    except NonFiniteObjective as exc:
        print(f"dirlin: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DirlinError, ValueError) as exc:
        parser.print_usage(sys.stderr)
        print(f"dirlin: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ArithmeticError as exc:
        print(f"dirlin: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
