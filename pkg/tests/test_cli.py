import csv
import random

import numpy as np
import pytest

from cdrhome.cli import main
from cdrhome.csvio import read_detections, read_ground_truth

from conftest import write_cdr

SMALL_CFG = """seed=42
n_towers=60
extent_m=250000
n_users=150
start=2007-06-01
end=2007-08-31
holiday=summer
holiday_displaced_fraction=0.3
holiday_displacement_min_m=50000
"""


def run(*argv):
    return main([str(a) for a in argv])


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "small.cfg").write_text(SMALL_CFG)
    assert run("generate", "--config", root / "small.cfg", "--out", root / "gen") == 0
    assert run("detect", "--cdr", root / "gen/cdr.csv", "--towers", root / "gen/towers.csv",
               "--from", "2007-06-01", "--to", "2007-08-31", "--out", root / "det") == 0
    return root


def dets(root):
    return sorted((root / "det").glob("detections_*.csv"))


def test_generate_is_reproducible(dataset, tmp_path):
    assert run("generate", "--config", dataset / "small.cfg", "--out", tmp_path / "again") == 0
    for name in ("towers.csv", "cdr.csv", "ground_truth.csv", "holidays.csv"):
        assert (tmp_path / "again" / name).read_bytes() == (dataset / "gen" / name).read_bytes()


def test_seed_override_changes_output(dataset, tmp_path):
    assert run("generate", "--config", dataset / "small.cfg", "--seed", 7, "--out", tmp_path / "s7") == 0
    assert (tmp_path / "s7/cdr.csv").read_bytes() != (dataset / "gen/cdr.csv").read_bytes()


def test_missing_key_is_named(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(SMALL_CFG.replace("n_users=150\n", ""))
    assert run("generate", "--config", cfg, "--out", tmp_path / "o") == 1
    assert "missing config key: n_users" in capsys.readouterr().err


def test_refuses_non_empty_out_without_force(dataset):
    assert run("generate", "--config", dataset / "small.cfg", "--out", dataset / "gen") == 1
    assert run("generate", "--config", dataset / "small.cfg", "--out", dataset / "gen", "--force") == 0


def test_detect_all_writes_five_files(dataset):
    names = [p.name for p in dets(dataset)]
    assert len(names) == 5 and "detections_NightWindowSpatialPerimeter.csv" in names
    for p in dets(dataset):
        for d in read_detections(p):
            assert d.su_m is not None and d.su_m >= 0


def test_detect_abc_fixture_su(tmp_path, abc_records):
    (tmp_path / "towers.csv").write_text(
        "tower_id,x_m,y_m\nA,0,0\nB,1000,0\nC,500,866.0254037844386\n")
    write_cdr(tmp_path / "cdr.csv", abc_records)
    assert run("detect", "--cdr", tmp_path / "cdr.csv", "--towers", tmp_path / "towers.csv",
               "--algorithms", "MaxActivities", "--from", "2007-06-01", "--to", "2007-06-30",
               "--out", tmp_path / "o") == 0
    (d,) = read_detections(tmp_path / "o/detections_MaxActivities.csv")
    assert d.ranked == (("A", 10), ("B", 5), ("C", 1))
    assert abs(d.su_m - 300.0) < 1e-9


def test_empty_month_header_only_with_warning(tmp_path, abc_records, caplog):
    (tmp_path / "towers.csv").write_text("tower_id,x_m,y_m\nA,0,0\nB,1000,0\nC,500,866\n")
    write_cdr(tmp_path / "cdr.csv", abc_records)
    assert run("detect", "--cdr", tmp_path / "cdr.csv", "--towers", tmp_path / "towers.csv",
               "--algorithms", "1", "--from", "2007-09-01", "--to", "2007-09-30", "--out", tmp_path / "o") == 0
    text = (tmp_path / "o/detections_MaxActivities.csv").read_text()
    assert text == "user_id,month,algorithm,l1,p1,l2,p2,l3,p3,su_m\n"
    assert "2007-09 has no records" in caplog.text


def test_unknown_tower_is_fatal(tmp_path, abc_records):
    (tmp_path / "towers.csv").write_text("tower_id,x_m,y_m\nA,0,0\nB,1000,0\n")
    write_cdr(tmp_path / "cdr.csv", abc_records)
    assert run("detect", "--cdr", tmp_path / "cdr.csv", "--towers", tmp_path / "towers.csv",
               "--from", "2007-06-01", "--to", "2007-06-30", "--out", tmp_path / "o") == 2


def test_malformed_lines_reported(tmp_path, abc_records):
    (tmp_path / "towers.csv").write_text("tower_id,x_m,y_m\nA,0,0\nB,1000,0\nC,500,866\n")
    write_cdr(tmp_path / "cdr.csv", abc_records)
    lines = (tmp_path / "cdr.csv").read_text().splitlines()
    lines.insert(3, "x,bad-time,A,out,call,3")
    lines.insert(6, "x,2007-06-02T10:00:00,A,out")
    lines.insert(9, "x,2007-06-02T10:00:00,A,out,text,12")
    (tmp_path / "cdr.csv").write_text("\n".join(lines) + "\n")
    assert run("detect", "--cdr", tmp_path / "cdr.csv", "--towers", tmp_path / "towers.csv",
               "--algorithms", "1", "--from", "2007-06-01", "--to", "2007-06-30", "--out", tmp_path / "o") == 0
    errs = rows(tmp_path / "o/parse_errors.csv")
    assert sorted(int(e["line_no"]) for e in errs) == [4, 7, 10]
    (d,) = read_detections(tmp_path / "o/detections_MaxActivities.csv")
    assert d.ranked == (("A", 10), ("B", 5), ("C", 1))


def test_compare(dataset, tmp_path):
    assert run("compare", "--detections", *dets(dataset), "--out", tmp_path / "c") == 0
    out = rows(tmp_path / "c/comparison.csv")
    pairs = {(r["algo_a"], r["algo_b"]) for r in out}
    assert len(pairs) == 10
    ma = dataset / "det/detections_MaxActivities.csv"
    assert run("compare", "--detections", ma, tmp_path / "c/../copy.csv", "--out", tmp_path / "c2") == 2


def test_compare_identity_and_disjoint(dataset, tmp_path):
    ma = dataset / "det/detections_MaxActivities.csv"
    lines = ma.read_text().splitlines()
    (tmp_path / "detections_Copy.csv").write_text("\n".join([lines[0]] + [
        l.replace("MaxActivities", "Copy") for l in lines[1:]]) + "\n")
    assert run("compare", "--detections", ma, tmp_path / "detections_Copy.csv", "--out", tmp_path / "c") == 0
    assert {float(r["smc"]) for r in rows(tmp_path / "c/comparison.csv")} == {1.0}
    (tmp_path / "detections_Other.csv").write_text(
        lines[0] + "\nzz,2007-06,Other,T000,1,,,,,0.0\n")
    assert run("compare", "--detections", ma, tmp_path / "detections_Other.csv", "--out", tmp_path / "d") == 2


def test_validate_against_own_detections(dataset, tmp_path):
    ma = dataset / "det/detections_MaxActivities.csv"
    d = [x for x in read_detections(ma) if x.month == "2007-06"]
    (tmp_path / "truth.csv").write_text("user_id,home_tower_id\n" + "".join(f"{x.user_id},{x.l1}\n" for x in d))
    (tmp_path / "det.csv").write_text("\n".join(
        [ma.read_text().splitlines()[0]] + [l for l in ma.read_text().splitlines() if ",2007-06," in l]) + "\n")
    assert run("validate", "--detections", tmp_path / "det.csv", "--towers", dataset / "gen/towers.csv",
               "--truth", tmp_path / "truth.csv", "--out", tmp_path / "v") == 0
    for r in rows(tmp_path / "v/validation.csv"):
        assert float(r["csm_deg"]) == 0.0 and float(r["accuracy"]) == 1.0


def test_shuffled_truth_accuracy_matches_expectation(tmp_path):
    """Accuracy against a permuted truth file averages sum_t a_t b_t / (n N).

    a_t counts detections at tower t, b_t true homes at t, n detections, N users.
    With homes spread evenly over towers this is 1/n_towers.
    """
    cfg = SMALL_CFG.replace("holiday=summer", "holiday=none").replace("n_users=150", "n_users=3000") \
        .replace("end=2007-08-31", "end=2007-06-30") + "density_profile=uniform\n"
    (tmp_path / "c.cfg").write_text(cfg)
    assert run("generate", "--config", tmp_path / "c.cfg", "--out", tmp_path / "g") == 0
    assert run("detect", "--cdr", tmp_path / "g/cdr.csv", "--towers", tmp_path / "g/towers.csv", "--algorithms", "1",
               "--from", "2007-06-01", "--to", "2007-06-30", "--out", tmp_path / "d") == 0
    det_path = tmp_path / "d/detections_MaxActivities.csv"
    homes = read_ground_truth(tmp_path / "g/ground_truth.csv")
    detections = read_detections(det_path)
    a = np.unique([d.l1 for d in detections], return_counts=True)
    b = dict(zip(*np.unique(list(homes.values()), return_counts=True)))
    expected = sum(n * b.get(t, 0) for t, n in zip(*a)) / (len(detections) * len(homes))
    users = list(homes)
    observed = []
    for seed in range(10):
        towers = list(homes.values())
        random.Random(seed).shuffle(towers)
        (tmp_path / "shuf.csv").write_text("user_id,home_tower_id\n" + "".join(
            f"{u},{t}\n" for u, t in zip(users, towers)))
        assert run("validate", "--detections", det_path, "--towers", tmp_path / "g/towers.csv",
                   "--truth", tmp_path / "shuf.csv", "--out", tmp_path / f"v{seed}") == 0
        observed.append(float(rows(tmp_path / f"v{seed}/validation.csv")[-1]["accuracy"]))
    se = np.sqrt(expected * (1 - expected) / len(detections) / len(observed))
    assert abs(np.mean(observed) - expected) < 4 * se
    assert 0.5 / 60 < expected < 2.0 / 60


def test_validate_zero_detections_errors(dataset, tmp_path):
    (tmp_path / "detections_X.csv").write_text("user_id,month,algorithm,l1,p1,l2,p2,l3,p3,su_m\n")
    assert run("validate", "--detections", tmp_path / "detections_X.csv", "--towers", dataset / "gen/towers.csv",
               "--truth", dataset / "gen/ground_truth.csv", "--out", tmp_path / "v") == 2


def test_filter_nesting_and_report(dataset, tmp_path):
    assert run("filter", "--detections", *dets(dataset), "--towers", dataset / "gen/towers.csv",
               "--truth", dataset / "gen/ground_truth.csv", "--out", tmp_path / "f") == 0
    for algo in ("MaxActivities", "SpatialPerimeter"):
        k10 = {d.key for d in read_detections(tmp_path / f"f/detections_{algo}_su10km.csv")}
        k70 = {d.key for d in read_detections(tmp_path / f"f/detections_{algo}_su70km.csv")}
        assert k10 <= k70
    report = rows(tmp_path / "f/filter_report.csv")
    total = len(read_detections(dataset / "det/detections_MaxActivities.csv"))
    kept_dropped = [int(r["kept"]) + int(r["dropped"]) for r in report
                    if r["algorithm"] == "MaxActivities" and float(r["threshold_km"]) == 10]
    assert sum(kept_dropped) == total
    assert (tmp_path / "f/filter_validation.csv").exists()


def test_hotspot(dataset, tmp_path):
    ma = dataset / "det/detections_MaxActivities.csv"
    assert run("hotspot", "--detections", ma, "--towers", dataset / "gen/towers.csv", "--band-m", 30000,
               "--out", tmp_path / "h") == 0
    out = rows(tmp_path / "h/hotspots.csv")
    assert len(out) == 60 and {r["classification"] for r in out} <= {"hot", "cold", "neutral"}
    assert run("hotspot", "--detections", ma, "--value", "median_su", "--towers", dataset / "gen/towers.csv",
               "--out", tmp_path / "h2") == 0
    with pytest.raises(SystemExit) as exc:
        run("hotspot", "--detections", ma, "--towers", dataset / "gen/towers.csv", "--confidence", "0.8",
            "--out", tmp_path / "h3")
    assert exc.value.code == 1


def test_stats(dataset, tmp_path):
    assert run("stats", "--detections", *dets(dataset), "--towers", dataset / "gen/towers.csv",
               "--cdr", dataset / "gen/cdr.csv", "--from", "2007-06-01", "--to", "2007-08-31",
               "--truth", dataset / "gen/ground_truth.csv", "--out", tmp_path / "s") == 0
    for name in ("detection_counts.csv", "su_summary.csv", "su_by_tower.csv", "top_share_percentiles.csv",
                 "su_csm_points.csv", "su_csm_correlation.csv"):
        assert (tmp_path / "s" / name).exists()
    counts = rows(tmp_path / "s/detection_counts.csv")
    assert len(counts) == 5


def test_usage_errors_exit_1():
    with pytest.raises(SystemExit) as exc:
        run("detect", "--out", "x")
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        run("nonsense")
    assert exc.value.code == 1
