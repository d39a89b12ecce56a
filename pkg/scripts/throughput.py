"""Time `cdrhome detect --algorithms all` on a generated CDR file and report peak memory.

    python3 scripts/throughput.py --users 27200 --workdir /tmp/bench
"""
import argparse
import resource
import subprocess
import sys
import time
from pathlib import Path


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--users", type=int, default=27_200, help="27,200 users over 92 days is about 10M records")
    ap.add_argument("--workdir", default="/tmp/cdrhome-bench")
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    work = Path(args.workdir)
    work.mkdir(parents=True, exist_ok=True)
    cfg = work / "bench.cfg"
    cfg.write_text(f"seed=9\nn_towers=500\nextent_m=300000\nn_users={args.users}\n"
                   "start=2007-06-01\nend=2007-08-31\n")
    base = [sys.executable, "-m", "cdrhome.cli"]
    t0 = time.perf_counter()
    subprocess.run(base + ["generate", "--config", str(cfg), "--out", str(work / "gen"), "--force"], check=True)
    print(f"generate: {time.perf_counter() - t0:.1f}s")
    t0 = time.perf_counter()
    subprocess.run(base + ["detect", "--algorithms", "all", "--threads", str(args.threads),
                           "--cdr", str(work / "gen/cdr.csv"), "--towers", str(work / "gen/towers.csv"),
                           "--from", "2007-06-01", "--to", "2007-08-31", "--out", str(work / "det"), "--force"],
                   check=True)
    elapsed = time.perf_counter() - t0
    rss = resource.getrusage(resource.RUSAGE_CHILDREN).ru_maxrss / 2**20
    with open(work / "gen/cdr.csv", "rb") as fh:
        n = sum(1 for _ in fh) - 1
    print(f"detect: {n:,} records in {elapsed:.1f}s ({n / elapsed / 1e6:.2f} M records/s), peak child RSS {rss:.2f} GB")


if __name__ == "__main__":
    main()
