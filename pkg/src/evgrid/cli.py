"""Command-line entry point.

Exit codes: 0 success, 1 domain violation or infeasibility, 2 I/O or usage error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .charging import (DEFAULT_BEHAVIOR, BehaviorSpec, aggregate_ev_load, generate_sessions, unmanaged_schedule,
                       write_sessions_csv)
from .clustering import cluster_feeders, extract_features, read_features_csv, write_features_csv
from .grid import (FeederFormatError, FeederSpec, FeederValidationError, generate_synthetic_feeder, load_feeder,
                   save_feeder, validate)
from .powerflow import DAY_TYPES, ProfileStore
from .study import (TABLE_COLUMNS, StudyConfig, input_files, load_feeders, reduction_pct, run_study, subseed,
                    write_artifacts, write_manifest, write_table)

OK, DOMAIN, USAGE = 0, 1, 2
log = logging.getLogger("evgrid")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# validate


def cmd_validate(args) -> int:
    code = OK
    for path in args.feeders:
        try:
            feeder = load_feeder(path, validate_feeder=False)
        except OSError as exc:
            print(f"{path}: cannot read: {exc.strerror or exc}", file=sys.stderr)
            return USAGE
        except FeederFormatError as exc:
            print(f"{path}: {exc}")
            code = max(code, DOMAIN)
            continue
        problems = validate(feeder)
        if problems:
            code = max(code, DOMAIN)
            for v in problems:
                print(f"{path}: {v}")
        else:
            print(f"{path}: ok ({len(feeder.buses)} buses, {len(feeder.transformers)} transformers)")
    return code


# ---------------------------------------------------------------------------
# generate

_SPEC_FIELDS = {f.name for f in fields(FeederSpec)}


def _corpus_specs(spec: dict, seed: int) -> list[FeederSpec]:
    out = []
    for i, entry in enumerate(spec.get("feeders") or []):
        entry = dict(entry)
        fid = entry.pop("id", None) or f"feeder{i + 1:02d}"
        unknown = sorted(set(entry) - _SPEC_FIELDS)
        if unknown:
            raise UsageError(f"feeders[{i}]: unknown key(s) {unknown}")
        entry.setdefault("seed", subseed(seed, fid))
        for k in ("utilization", "segment_length_mi", "line_margin"):
            if k in entry:
                entry[k] = tuple(entry[k])
        out.append(FeederSpec(feeder_id=fid, **entry))
    rnd = spec.get("random")
    if rnd:
        rng = np.random.default_rng(subseed(seed, "random-corpus"))
        lo, hi = rnd.get("n_buses", (8, 40))
        classes = list(rnd.get("classes", ("residential", "commercial", "industrial", "mixed")))
        for i in range(int(rnd.get("count", 0))):
            mix = rng.dirichlet(np.ones(len(classes)))
            mix = {c: float(v) for c, v in zip(classes, mix)}
            mix[classes[-1]] = 1.0 - sum(v for c, v in mix.items() if c != classes[-1])
            fid = f"{rnd.get('prefix', 'syn')}{i + 1:03d}"
            out.append(FeederSpec(int(rng.integers(lo, hi + 1)), class_mix=mix, seed=subseed(seed, fid),
                                  feeder_id=fid, three_phase_fraction=float(rng.uniform(0.1, 0.4))))
    unknown = sorted(set(spec) - {"seed", "feeders", "random", "sessions"})
    if unknown:
        raise UsageError(f"unknown corpus key(s) {unknown}")
    return out


def cmd_generate(args) -> int:
    try:
        with open(args.spec) as fh:
            spec = yaml.safe_load(fh) or {}
    except OSError as exc:
        print(f"{args.spec}: cannot read: {exc.strerror or exc}", file=sys.stderr)
        return USAGE
    if not isinstance(spec, dict):
        print(f"{args.spec}: corpus spec must be a mapping", file=sys.stderr)
        return USAGE
    seed = args.seed if args.seed is not None else int(spec.get("seed", 0))
    out = Path(args.out_dir or "corpus")
    try:
        specs = _corpus_specs(spec, seed)
        for s in specs:
            s.check()
    except (UsageError, ValueError, TypeError) as exc:
        print(f"{args.spec}: {exc}", file=sys.stderr)
        return USAGE
    feeders_dir = out / "feeders"
    feeders_dir.mkdir(parents=True, exist_ok=True)
    ProfileStore.default().write_csv(out / "profiles.csv")
    sess = spec.get("sessions")
    for s in specs:
        feeder = generate_synthetic_feeder(s)
        save_feeder(feeder, feeders_dir / f"{feeder.id}.json")
        if sess:
            behavior = BehaviorSpec.from_dict(sess.get("behavior", DEFAULT_BEHAVIOR))
            count = int(round(float(sess["ev_per_100kw"]) * sum(ld.peak_kw for ld in feeder.loads) / 100.0))
            (out / "sessions").mkdir(exist_ok=True)
            for d in DAY_TYPES:
                write_sessions_csv(generate_sessions(feeder, count, behavior, subseed(seed, feeder.id, "sessions"), d),
                                   out / "sessions" / f"{feeder.id}_{d}.csv")
    print(f"wrote {len(specs)} feeder(s) to {feeders_dir}")
    return OK


# ---------------------------------------------------------------------------
# cluster


def _features_from_inputs(paths, profiles: ProfileStore, ev_per_100kw: float, seed: int):
    feats = []
    behavior = BehaviorSpec.from_dict(DEFAULT_BEHAVIOR)
    for p in paths:
        if str(p).endswith(".csv"):
            feats.extend(read_features_csv(p))
            continue
        for feeder in load_feeders([p]):
            count = int(round(ev_per_100kw * sum(ld.peak_kw for ld in feeder.loads) / 100.0))
            ev = {}
            for d in DAY_TYPES:
                sched = [unmanaged_schedule(s) for s in
                         generate_sessions(feeder, count, behavior, subseed(seed, feeder.id, "sessions"), d)]
                ev[d] = sum(aggregate_ev_load(sched).values(), np.zeros(24))
            feats.append(extract_features(feeder, profiles, ev))
    return feats


def cmd_cluster(args) -> int:
    seed = args.seed if args.seed is not None else 0
    try:
        profiles = ProfileStore.read_csv(args.profiles) if args.profiles else ProfileStore.default()
        feats = _features_from_inputs(args.inputs, profiles, args.ev_per_100kw, seed)
    except OSError as exc:
        print(f"cannot read input: {exc}", file=sys.stderr)
        return USAGE
    except (FeederFormatError, FeederValidationError) as exc:
        print(str(exc), file=sys.stderr)
        return DOMAIN
    try:
        report = cluster_feeders(feats, range(args.k_min, args.k_max + 1), seed, args.variance)
    except ValueError as exc:
        print(f"cannot cluster: {exc}", file=sys.stderr)
        return DOMAIN
    out = Path(args.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "clusters.csv")
    write_features_csv(feats, out / "features.csv")
    print(f"PCA components kept: {report.pca.n_components}")
    print("k,wcss")
    for k, w in zip(report.elbow.ks, report.elbow.wcss):
        print(f"{k},{w:.6g}")
    print(f"chosen k = {report.elbow.k}")
    for r in report.representatives:
        print(f"cluster {r.cluster}: representative {r.feeder_id} ({r.size} member(s))")
    return OK


# ---------------------------------------------------------------------------
# run


def cmd_run(args) -> int:
    try:
        config = StudyConfig.load(args.config)
        if args.seed is not None:
            config = replace(config, seed=args.seed)
        feeders = load_feeders(config.feeders)
        if not feeders:
            raise UsageError("config lists no feeders")
    except OSError as exc:
        print(f"cannot read input: {exc}", file=sys.stderr)
        return USAGE
    except (UsageError, ValueError, TypeError) as exc:
        if isinstance(exc, FeederValidationError):
            print(str(exc), file=sys.stderr)
            return DOMAIN
        print(f"{args.config}: {exc}", file=sys.stderr)
        return USAGE
    out = Path(args.out_dir or Path("runs") / Path(args.config).stem)
    try:
        result = run_study(feeders, config, jobs=args.jobs)
    except Exception as exc:
        out.mkdir(parents=True, exist_ok=True)
        write_manifest(config, out, input_files(config), complete=False)
        print(f"study failed: {exc}", file=sys.stderr)
        return DOMAIN
    manifest = write_artifacts(result, out, input_files(config))
    _print_table(result.table)
    residual = sum(len(c.residuals) for c in result.cells)
    print(f"{len(result.cells)} cell(s), {residual} residual violation(s); manifest {manifest}")
    return OK


def _print_table(rows) -> None:
    if not rows:
        return
    print(",".join(TABLE_COLUMNS))
    for r in rows:
        print(",".join([r["feeder_id"], r["strategy"], *[f"{float(r[k]):g}" for k in TABLE_COLUMNS[2:]]]))


# ---------------------------------------------------------------------------
# report


def _read_summary(path: Path) -> dict[str, dict]:
    with open(path, newline="") as fh:
        return {r["feeder_id"]: r for r in csv.DictReader(fh)}


def cmd_report(args) -> int:
    run = Path(args.run_dir)
    try:
        manifest = json.loads((run / "manifest.json").read_text())
    except (OSError, ValueError) as exc:
        print(f"{run}: not a run directory: {exc}", file=sys.stderr)
        return USAGE
    if not manifest.get("complete", False):
        print(f"{run}: run is marked incomplete", file=sys.stderr)
        return DOMAIN
    cfg = manifest["config"]
    rows = []
    try:
        for strat in cfg["strategies"]:
            base = _read_summary(run / "metrics" / f"{strat}_scenario{args.baseline}_summary.csv")
            comp = _read_summary(run / "metrics" / f"{strat}_scenario{args.compare}_summary.csv")
            for fid in sorted(comp):
                b, c = base[fid], comp[fid]
                vals = [reduction_pct(float(b[k]), float(c[k])) for k in
                        ("peak_load_kw", "overloaded_transformers", "transformer_cost_usd", "line_cost_usd", "npv_usd")]
                rows.append(dict(zip(TABLE_COLUMNS, [fid, strat, *[round(v, args.digits) for v in vals]])))
    except (OSError, KeyError) as exc:
        print(f"{run}: missing metrics for the requested scenarios: {exc}", file=sys.stderr)
        return USAGE
    rows.sort(key=lambda r: (r["feeder_id"], r["strategy"]))
    _print_table(rows)
    if args.out_dir:
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        write_table(rows, Path(args.out_dir) / f"table_s{args.baseline}_vs_s{args.compare}.csv")
    return OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    # global flags are accepted before or after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override the random seed")
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS, help="worker processes (default: all cores)")
    common.add_argument("--out-dir", default=argparse.SUPPRESS, help="output directory")

    p = argparse.ArgumentParser(prog="evgrid", description="EV impact studies on radial feeders",
                                parents=[common])
    p.add_argument("--version", action="version", version=f"evgrid {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", parents=[common], help="check feeder files")
    s.add_argument("feeders", nargs="+")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("generate", parents=[common], help="generate a synthetic corpus from a YAML spec")
    s.add_argument("spec")
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("cluster", parents=[common], help="cluster feeders and pick representatives")
    s.add_argument("inputs", nargs="+", help="feeder files, directories, or a features CSV")
    s.add_argument("--k-min", type=int, default=1)
    s.add_argument("--k-max", type=int, default=8)
    s.add_argument("--variance", type=float, default=0.95, help="PCA cumulative variance to keep")
    s.add_argument("--profiles", help="load profile CSV (default: bundled)")
    s.add_argument("--ev-per-100kw", type=float, default=20.0)
    s.set_defaults(func=cmd_cluster)

    s = sub.add_parser("run", parents=[common], help="run a study from a YAML config")
    s.add_argument("config")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("report", parents=[common], help="reduction table from a finished run")
    s.add_argument("run_dir")
    s.add_argument("--baseline", type=int, default=1)
    s.add_argument("--compare", type=int, default=4)
    s.add_argument("--digits", type=int, default=2)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE if exc.code else OK
    for k in ("seed", "jobs", "out_dir"):
        if not hasattr(args, k):
            setattr(args, k, None)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
