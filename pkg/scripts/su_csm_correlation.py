"""Median SU against CSM-vs-truth per (algorithm, month) on a holiday run, with Pearson R.

    python3 scripts/su_csm_correlation.py --seeds 1 2 3
"""
import argparse
from datetime import date

from cdrhome.aggregate import detect_all
from cdrhome.experiments import su_csm_points
from cdrhome.hda import ALL_VARIANTS, AlgorithmSpec
from cdrhome.metrics import su_csm_correlation, truth_vector
from cdrhome.synthgen import GeneratorConfig, simulate

# sparse traces (one event per user-day) and long summer holidays for a large
# share of users, May to October
HOLIDAY_RUN = GeneratorConfig(n_users=20_000, start=date(2007, 5, 1), end=date(2007, 10, 31),
                              events_per_user_day=1.0, holiday="summer",
                              holiday_displaced_fraction=0.6, holiday_min_days=14, holiday_max_days=28)


def points(config):
    net, truth, table = simulate(config)
    dets = {k: v.to_detections(table) for k, v in
            detect_all(table, [AlgorithmSpec(v) for v in ALL_VARIANTS]).items()}
    return su_csm_points(dets, truth_vector(truth.homes(), net), net)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[1])
    ap.add_argument("--fraction", type=float, default=HOLIDAY_RUN.holiday_displaced_fraction)
    ap.add_argument("--start", type=date.fromisoformat, default=HOLIDAY_RUN.start)
    ap.add_argument("--end", type=date.fromisoformat, default=HOLIDAY_RUN.end)
    ap.add_argument("--events", type=float, default=HOLIDAY_RUN.events_per_user_day)
    ap.add_argument("--home-bias", type=float, default=HOLIDAY_RUN.home_bias)
    ap.add_argument("--users", type=int, default=HOLIDAY_RUN.n_users)
    ap.add_argument("--exclude", nargs="*", default=[])
    args = ap.parse_args()
    for seed in args.seeds:
        cfg = HOLIDAY_RUN.replace(seed=seed, holiday_displaced_fraction=args.fraction,
                                  start=args.start, end=args.end, events_per_user_day=args.events,
                                  home_bias=args.home_bias, n_users=args.users)
        pts = points(cfg)
        for (algo, month), (su, angle) in sorted(pts.items()):
            print(f"{seed},{algo},{month},{su:.1f},{angle:.3f}")
        r, n = su_csm_correlation(pts, args.exclude)
        print(f"# seed {seed}: R={r:.3f} over {n} points", flush=True)


if __name__ == "__main__":
    main()
