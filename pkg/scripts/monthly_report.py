"""Per-month summary of a synthetic run: detection counts, top-3 shares, SMC, CSM and median SU.

    python3 scripts/monthly_report.py --config configs/summer.cfg --out /tmp/report
"""
import argparse
from pathlib import Path

from cdrhome import csvio
from cdrhome.aggregate import detect_all
from cdrhome.experiments import compare_rows, validate_rows
from cdrhome.hda import ALL_VARIANTS, AlgorithmSpec, detection_counts, share_percentiles
from cdrhome.metrics import truth_vector
from cdrhome.synthgen import GeneratorConfig, simulate
from cdrhome.uncertainty import su_summary


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", required=True)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out", required=True)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    cfg = GeneratorConfig.from_file(args.config, args.seed)
    net, truth, table = simulate(cfg)
    dets = {k: v.to_detections(table) for k, v in
            detect_all(table, [AlgorithmSpec(v) for v in ALL_VARIANTS]).items()}
    all_dets = [d for ds in dets.values() for d in ds]

    counts = detection_counts(all_dets, list(dets))
    csvio.write_rows(out / "detection_counts.csv", ("algorithm", "homes", "with_l2", "pct_l2", "with_l3", "pct_l3"),
                     [(a, c.homes, c.with_l2, c.pct_l2, c.with_l3, c.pct_l3) for a, c in counts.items()])
    shares = share_percentiles(table.top_shares(3))
    csvio.write_rows(out / "top_share_percentiles.csv", ("rank", "percentile", "share"),
                     [(r, p, v) for r, row in shares.items() for p, v in row.items()])
    csvio.write_rows(out / "comparison.csv", ("month", "algo_a", "algo_b", "smc", "n_common"), compare_rows(dets))
    csvio.write_rows(out / "validation.csv", ("month", "algorithm", "csm_deg", "n_detections", "accuracy"),
                     validate_rows(dets, truth_vector(truth.homes(), net), net, truth.homes()))
    csvio.write_rows(out / "su_summary.csv", ("algorithm", "month", "median_su_m", "n"),
                     [(a, m, med, n) for (a, m), (med, n) in su_summary(all_dets).items()])

    print(f"{len(all_dets)} detections over {table.n_user_months} user-months; top-1 share median "
          f"{shares[1][50]:.3f}")
    for row in validate_rows(dets, truth_vector(truth.homes(), net), net, truth.homes()):
        print("{:8s} {:28s} csm {:6.2f} deg  n {:6d}  accuracy {:.3f}".format(*row))


if __name__ == "__main__":
    main()
