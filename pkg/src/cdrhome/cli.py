"""Command-line pipeline: generate | detect | compare | validate | filter | hotspot | stats.

Exit codes: 0 ok, 1 usage or configuration error, 2 data error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from datetime import date
from pathlib import Path

import numpy as np

from . import csvio
from .aggregate import ReadStats, detect_all, read_cdr_table
from .cdr_core import TowerNetwork, month_windows
from .errors import ConfigError, DataError
from .experiments import by_month, compare_rows, filter_rows, su_csm_points, validate_rows
from .hda import AlgorithmSpec, DetectionCounts, parse_algorithms, share_percentiles
from .metrics import PopulationVector, su_csm_correlation, truth_vector
from .spatial_stats import DEFAULT_BAND_M, Z_CRIT, gi_star
from .synthgen import GeneratorConfig, generate_network, generate_users, write_cdr_csv
from .uncertainty import DEFAULT_THRESHOLDS_KM, su_by_tower, su_summary

log = logging.getLogger("cdrhome")


class UsageParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _date(text: str) -> date:
    try:
        return date.fromisoformat(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected YYYY-MM-DD, got {text!r}") from None


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _prepare_out(out: Path, force: bool) -> Path:
    if out.exists() and not out.is_dir():
        raise ConfigError(f"--out {out} is not a directory")
    if out.exists() and any(out.iterdir()) and not force:
        raise ConfigError(f"output directory {out} is not empty (use --force)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_run(out: Path, command: str, inputs: dict, config: dict, counters: dict) -> None:
    """Reproducibility snapshot; holds nothing that varies between identical runs."""
    run = {"command": command, "inputs": inputs, "config": config, "counters": counters}
    with open(out / "run.json", "w", encoding="utf-8", newline="") as fh:
        json.dump(run, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_detections(paths) -> dict[str, list]:
    out = {}
    for p in paths:
        dets = csvio.read_detections(p)
        algo = csvio.algorithm_of(Path(p), dets)
        if algo in out:
            raise ConfigError(f"algorithm {algo} given twice")
        out[algo] = dets
    return out


def _reference(args, network: TowerNetwork):
    """(reference vector, homes-or-None) from --truth or --reference."""
    if getattr(args, "truth", None):
        homes = csvio.read_ground_truth(args.truth)
        return truth_vector(homes, network), homes
    if getattr(args, "reference", None):
        return PopulationVector.from_mapping(csvio.read_vector(args.reference), network), None
    raise ConfigError("need --truth or --reference")


# ------------------------------------------------------------------ commands


def cmd_generate(args) -> None:
    config = GeneratorConfig.from_file(args.config, seed=args.seed)
    out = _prepare_out(Path(args.out), args.force)
    t0 = time.perf_counter()
    network = generate_network(config)
    truth = generate_users(config, network)
    network.to_csv(out / "towers.csv")
    truth.to_csv(out / "ground_truth.csv")
    truth.holidays_to_csv(out / "holidays.csv")
    n = write_cdr_csv(out / "cdr.csv", config, truth, threads=args.threads)
    (out / "config.txt").write_text(config.to_text(), encoding="utf-8")
    _write_run(out, "generate", {"config": str(args.config)}, {"seed": config.seed},
               {"records": n, "users": config.n_users, "towers": config.n_towers,
                "displaced_users": len(truth.displaced())})
    log.info("generated %d records for %d users in %.1fs", n, config.n_users, time.perf_counter() - t0)


def cmd_detect(args) -> None:
    network = TowerNetwork.from_csv(args.towers)
    windows = month_windows(args.date_from, args.date_to)
    variants = parse_algorithms(args.algorithms)
    specs = [AlgorithmSpec(v, args.night_start, args.night_end, args.radius_m) for v in variants]
    out = _prepare_out(Path(args.out), args.force)
    t0 = time.perf_counter()
    stats = ReadStats()
    table = read_cdr_table(args.cdr, network, windows, args.night_start, args.night_end, stats=stats)
    for err in stats.errors[:10]:
        log.warning("line %d: %s %s", err.line_no, err.reason, err.line)
    if stats.n_errors:
        log.warning("%d malformed lines skipped", stats.n_errors)
        csvio.write_rows(out / "parse_errors.csv", ("line_no", "reason", "line"),
                         ((e.line_no, e.reason, e.line) for e in stats.errors))
    active = set(np.unique(table.month).tolist())
    for k, w in enumerate(windows):
        if k not in active:
            log.warning("month %s has no records", w.label)
    results = detect_all(table, specs, threads=args.threads)
    summary, counts = [], []
    for spec in specs:
        dt = results[spec.name]
        csvio.write_detection_table(out / f"detections_{spec.name}.csv", dt, table)
        counts.append((spec.name, *_counts_row(DetectionCounts(
            len(dt), int((dt.towers[:, 1] >= 0).sum()), int((dt.towers[:, 2] >= 0).sum())))))
        for k, w in enumerate(windows):
            su = dt.su[dt.month == k]
            if len(su):
                summary.append((spec.name, w.label, float(np.median(su)), len(su)))
    csvio.write_rows(out / "su_summary.csv", ("algorithm", "month", "median_su_m", "n"), summary)
    csvio.write_rows(out / "detection_counts.csv", COUNTS_HEADER, counts)
    _write_run(out, "detect", {"cdr": str(args.cdr), "towers": str(args.towers)},
               {"algorithms": [s.name for s in specs], "from": args.date_from.isoformat(),
                "to": args.date_to.isoformat(), "night_start_h": args.night_start,
                "night_end_h": args.night_end, "radius_m": args.radius_m},
               {"lines": stats.n_lines, "records": stats.n_records, "malformed": stats.n_errors,
                "dropped_out_of_window": stats.dropped_out_of_window,
                "user_months": table.n_user_months,
                "detections": {s.name: len(results[s.name]) for s in specs}})
    log.info("detect: %d records, %d user-months in %.1fs", stats.n_records, table.n_user_months,
             time.perf_counter() - t0)


COUNTS_HEADER = ("algorithm", "homes", "with_l2", "pct_l2", "with_l3", "pct_l3")


def _counts_row(c: DetectionCounts) -> tuple:
    return c.homes, c.with_l2, round(c.pct_l2, 4), c.with_l3, round(c.pct_l3, 4)


def cmd_compare(args) -> None:
    detections = _load_detections(args.detections)
    if len(detections) < 2:
        raise ConfigError("compare needs at least two detection files")
    rows = compare_rows(detections)
    out = _prepare_out(Path(args.out), args.force)
    csvio.write_rows(out / "comparison.csv", ("month", "algo_a", "algo_b", "smc", "n_common"), rows)


VALIDATION_HEADER = ("month", "algorithm", "csm_deg", "n_detections", "accuracy")


def cmd_validate(args) -> None:
    network = TowerNetwork.from_csv(args.towers)
    reference, homes = _reference(args, network)
    detections = _load_detections(args.detections)
    rows = validate_rows(detections, reference, network, homes)
    out = _prepare_out(Path(args.out), args.force)
    csvio.write_rows(out / "validation.csv", VALIDATION_HEADER, rows)


def _km_label(thr: float) -> str:
    return f"{thr:g}"


def cmd_filter(args) -> None:
    detections = _load_detections(args.detections)
    thresholds = sorted(set(args.threshold_km), reverse=True)
    if any(t <= 0 for t in thresholds):
        raise ConfigError("thresholds must be positive")
    kept, report = filter_rows(detections, thresholds)
    out = _prepare_out(Path(args.out), args.force)
    for (algo, thr), dets in kept.items():
        csvio.write_detections(out / f"detections_{algo}_su{_km_label(thr)}km.csv", dets)
    csvio.write_rows(out / "filter_report.csv", ("algorithm", "month", "threshold_km", "kept", "dropped"),
                     report)
    if args.towers and (args.truth or args.reference):
        network = TowerNetwork.from_csv(args.towers)
        reference, homes = _reference(args, network)
        rows = []
        for algo, dets in detections.items():
            rows += [(m, a, "none", *rest) for m, a, *rest in validate_rows({algo: dets}, reference, network, homes)]
            for thr in thresholds:
                if kept[(algo, thr)]:
                    rows += [(m, a, _km_label(thr), *rest)
                             for m, a, *rest in validate_rows({algo: kept[(algo, thr)]}, reference,
                                                              network, homes)]
        csvio.write_rows(out / "filter_validation.csv",
                         ("month", "algorithm", "threshold_km", "csm_deg", "n_detections", "accuracy"), rows)


def cmd_hotspot(args) -> None:
    network = TowerNetwork.from_csv(args.towers)
    if args.vector:
        values = csvio.read_vector(args.vector)
        fill = 0.0 if args.fill_missing else None
    else:
        dets = csvio.read_detections(args.detections)
        if args.month:
            dets = [d for d in dets if d.month == args.month]
        if not dets:
            raise DataError("no detections for hotspot analysis")
        if args.value == "count":
            values = {}
            for d in dets:
                values[d.l1] = values.get(d.l1, 0.0) + 1.0
            fill = 0.0
        else:
            values = {t: med for t, (med, _) in su_by_tower(dets).items()}
            fill = None
    if fill is None:
        sub = network.subset(values)
        vector = PopulationVector(sub.ids, np.array([values[t] for t in sub.ids]))
    else:
        vector = PopulationVector.from_mapping(values, network, fill)
        sub = network
    result = gi_star(vector, sub, args.band_m, args.confidence)
    out = _prepare_out(Path(args.out), args.force)
    csvio.write_rows(out / "hotspots.csv", ("tower_id", "value", "z", "classification"),
                     zip(result.towers, result.values.tolist(), result.z.tolist(), result.classification))


def cmd_stats(args) -> None:
    detections = _load_detections(args.detections)
    out = _prepare_out(Path(args.out), args.force)
    csvio.write_rows(out / "detection_counts.csv", COUNTS_HEADER,
                     ((a, *_counts_row(DetectionCounts.of(d))) for a, d in detections.items()))
    all_dets = [d for ds in detections.values() for d in ds]
    csvio.write_rows(out / "su_summary.csv", ("algorithm", "month", "median_su_m", "n"),
                     ((a, m, med, n) for (a, m), (med, n) in su_summary(all_dets).items()))
    csvio.write_rows(out / "su_by_tower.csv", ("tower_id", "value", "n", "algorithm", "month"),
                     ((t, med, n, a, m)
                      for a, ds in detections.items()
                      for m, dm in by_month(ds).items()
                      for t, (med, n) in su_by_tower(dm).items()))
    network = TowerNetwork.from_csv(args.towers) if args.towers else None
    if args.cdr:
        if network is None or not (args.date_from and args.date_to):
            raise ConfigError("--cdr needs --towers, --from and --to")
        table = read_cdr_table(args.cdr, network, month_windows(args.date_from, args.date_to))
        shares = share_percentiles(table.top_shares())
        csvio.write_rows(out / "top_share_percentiles.csv", ("rank", "percentile", "share"),
                         ((r, p, v) for r, table_r in shares.items() for p, v in table_r.items()))
    if args.truth or args.reference:
        if network is None:
            raise ConfigError("correlation needs --towers")
        reference, _ = _reference(args, network)
        points = su_csm_points(detections, reference, network)
        csvio.write_rows(out / "su_csm_points.csv", ("algorithm", "month", "median_su_m", "csm_deg"),
                         ((a, m, su, c) for (a, m), (su, c) in points.items()))
        excluded = args.exclude or []
        r, n = su_csm_correlation(points, excluded)
        csvio.write_rows(out / "su_csm_correlation.csv", ("r", "n_points", "excluded"),
                         [(r, n, ";".join(excluded))])


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = UsageParser(add_help=False)
    common.add_argument("--threads", type=_positive_int, default=1, help="worker threads (output is identical)")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--force", action="store_true", help="allow a non-empty output directory")

    parser = UsageParser(prog="cdrhome", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=UsageParser)

    p = sub.add_parser("generate", parents=[common], help="write a synthetic CDR dataset with ground truth")
    p.add_argument("--config", required=True, help="key=value generator config")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("detect", parents=[common], help="detect homes with one or more algorithms")
    p.add_argument("--cdr", required=True)
    p.add_argument("--towers", required=True)
    p.add_argument("--algorithms", default="all", help="'all' or a comma list of names or numbers 1-5")
    p.add_argument("--from", dest="date_from", type=_date, required=True)
    p.add_argument("--to", dest="date_to", type=_date, required=True)
    p.add_argument("--night-start", type=int, default=19)
    p.add_argument("--night-end", type=int, default=9)
    p.add_argument("--radius-m", type=float, default=1000.0)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("compare", parents=[common], help="pairwise SMC between detection files")
    p.add_argument("--detections", nargs="+", required=True)
    p.set_defaults(func=cmd_compare)

    def reference_args(p, required=True):
        g = p.add_mutually_exclusive_group(required=required)
        g.add_argument("--truth", help="ground_truth.csv (user_id,home_tower_id)")
        g.add_argument("--reference", help="reference population vector CSV (tower_id,value)")

    p = sub.add_parser("validate", parents=[common], help="CSM (and accuracy) against a reference")
    p.add_argument("--detections", nargs="+", required=True)
    p.add_argument("--towers", required=True)
    reference_args(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("filter", parents=[common], help="drop detections with high spatial uncertainty")
    p.add_argument("--detections", nargs="+", required=True)
    p.add_argument("--threshold-km", type=float, nargs="+", default=list(DEFAULT_THRESHOLDS_KM))
    p.add_argument("--towers", help="re-validate the filtered sets (needs --truth or --reference)")
    reference_args(p, required=False)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("hotspot", parents=[common], help="Getis-Ord Gi* hot and cold spots")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--vector", help="tower_id,value CSV")
    src.add_argument("--detections", help="detection CSV to aggregate per L1 tower")
    p.add_argument("--value", choices=("count", "median_su"), default="count")
    p.add_argument("--month", help="restrict --detections to one month label")
    p.add_argument("--fill-missing", action="store_true",
                   help="give towers absent from --vector the value 0 instead of leaving them out")
    p.add_argument("--towers", required=True)
    p.add_argument("--band-m", type=float, default=DEFAULT_BAND_M)
    p.add_argument("--confidence", type=float, default=0.90, choices=sorted(Z_CRIT))
    p.set_defaults(func=cmd_hotspot)

    p = sub.add_parser("stats", parents=[common], help="detection counts, SU summaries, shares, SU-CSM correlation")
    p.add_argument("--detections", nargs="+", required=True)
    p.add_argument("--towers")
    p.add_argument("--cdr", help="CDR CSV for top-3 share percentiles")
    p.add_argument("--from", dest="date_from", type=_date)
    p.add_argument("--to", dest="date_to", type=_date)
    reference_args(p, required=False)
    p.add_argument("--exclude", nargs="*", help="month or algorithm labels left out of the correlation")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"cdrhome {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:
        print(f"cdrhome {args.command}: data error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
