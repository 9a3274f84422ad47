import csv
import json

import pytest

from camspoof import scenario
from camspoof.analytics import n_stop, p_run
from camspoof.cli import main
from camspoof.detectors import DETECTOR_NAMES
from camspoof.scenario import ScenarioError


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def static_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("static")
    assert main(["simulate", "--scenario", str(scenario.bundled("fullframe_static.json")), "--out-dir", str(out)]) == 0
    return out


def test_bundled_scenarios_parse():
    names = scenario.list_bundled()
    assert {"clean.json", "fullframe_static.json", "fullframe_sniff.json", "patch_defended.json"} <= set(names)
    for name in names:
        scenario.load(scenario.bundled(name))


def test_missing_scene_seed_names_field(tmp_path):
    doc = json.loads(scenario.bundled("clean.json").read_text())
    del doc["sim"]["scene"]["seed"]
    with pytest.raises(ScenarioError) as info:
        scenario.from_dict(doc)
    assert info.value.path == "sim.scene.seed"
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    assert main(["simulate", "--scenario", str(path), "--out-dir", str(tmp_path / "o")]) == 1


def test_unknown_field_names_field():
    doc = json.loads(scenario.bundled("clean.json").read_text())
    doc["sim"]["fsp"] = 20
    with pytest.raises(ScenarioError) as info:
        scenario.from_dict(doc)
    assert info.value.path == "sim.fsp"


def test_simulate_clean_has_no_alerts(tmp_path):
    assert main(["simulate", "--scenario", str(scenario.bundled("clean.json")), "--out-dir", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["frames"] == 40
    assert summary["combined_alerts"] == 0
    assert summary["seed"] == 1
    assert summary["config"]["sim"]["scene"]["seed"] == 1
    rows = read_csv(tmp_path / "verdicts.csv")
    assert len(rows) == 40 and all(r["combined"] == "0" for r in rows)


def test_simulate_static_pattern(static_run):
    rows = read_csv(static_run / "verdicts.csv")
    flagged = {name: {int(r["frame_index"]) for r in rows if r[name] == "1"} for name in DETECTOR_NAMES}
    assert set(range(11, 30)) <= flagged["mse"]
    assert {10, 30} <= flagged["histogram"] & flagged["optical_flow"]
    assert flagged["timestamp_rate"] & set(range(11, 30))
    assert not flagged["constant_meta"]


def test_replay_equals_live_and_stricter_mse_only_adds_mse(static_run, tmp_path):
    cap = str(static_run / "capture.gvsc")
    assert main(["replay", "--capture", cap, "--out-dir", str(tmp_path / "same")]) == 0
    for name in ("verdicts.csv", "width_verdicts.csv"):
        assert (tmp_path / "same" / name).read_bytes() == (static_run / name).read_bytes()
    assert main(["replay", "--capture", cap, "--mse-threshold", "2000", "--out-dir", str(tmp_path / "strict")]) == 0
    base = read_csv(static_run / "verdicts.csv")
    strict = read_csv(tmp_path / "strict" / "verdicts.csv")
    gained = 0
    for a, b in zip(base, strict):
        for name in DETECTOR_NAMES:
            if name == "mse":
                assert int(b[name]) >= int(a[name])
                gained += int(b[name]) - int(a[name])
            else:
                assert a[name] == b[name]
    assert gained > 0


def test_replay_rejects_corrupt_capture(static_run, tmp_path):
    blob = bytearray((static_run / "capture.gvsc").read_bytes())
    blob[:4] = b"JUNK"
    bad = tmp_path / "bad.gvsc"
    bad.write_bytes(bytes(blob))
    assert main(["replay", "--capture", str(bad), "--out-dir", str(tmp_path / "o")]) == 1
    assert main(["replay", "--capture", str(tmp_path / "missing.gvsc")]) == 1


def test_export_csv(static_run, tmp_path):
    out = tmp_path / "records.csv"
    assert main(["export", "--capture", str(static_run / "capture.gvsc"), "-o", str(out)]) == 0
    rows = read_csv(out)
    assert {r["link"] for r in rows} == {"CameraToAdas", "AttackerToAdas", "AttackerToCamera"}


def test_simulate_twice_is_bytewise_identical(tmp_path):
    path = str(scenario.bundled("patch_defended.json"))
    for name in ("a", "b"):
        assert main(["simulate", "--scenario", path, "--out-dir", str(tmp_path / name)]) == 0
    for f in ("capture.gvsc", "verdicts.csv", "width_verdicts.csv", "summary.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert main(["simulate", "--scenario", path, "--seed", "9", "--out-dir", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c" / "capture.gvsc").read_bytes() != (tmp_path / "a" / "capture.gvsc").read_bytes()


def test_analyze_prob_matches_direct_evaluation(tmp_path):
    assert main(["analyze", "prob", "--b", "1,2,3", "--tstop", "0.25", "--fps", "20",
                 "--tattack-max", "5", "--tattack-step", "1", "--out-dir", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "prob_curve.csv")
    assert len(rows) == 18
    r = n_stop(0.25, 20)
    for row in rows:
        assert int(row["r"]) == r
        assert float(row["p_run"]) == p_run(int(row["n"]), r, float(row["p"]))
    report = json.loads((tmp_path / "prob_report.json").read_text())
    assert report["params"]["b"] == "1,2,3" and report["params"]["seed"] == 0


def test_analyze_runs_small(tmp_path):
    args = ["analyze", "runs", "--b", "3", "--frames", "2000", "--trials", "4", "--seed", "1"]
    assert main(args + ["--out-dir", str(tmp_path / "a")]) == 0
    assert main(args + ["--out-dir", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "runs_report.json").read_bytes()
    assert a == (tmp_path / "b" / "runs_report.json").read_bytes()
    rep = json.loads(a)["reports"]["3"]
    assert rep["attack_frames"] == 2000
    assert rep["field_detection_rate"] == "0.69-0.75"
    assert "max_run_seconds" in rep and "max_run_probability" in rep


def test_analyze_det_from_files(tmp_path):
    (tmp_path / "n.txt").write_text("0.1\n0.2\n")
    (tmp_path / "a.txt").write_text("0.8\n0.9\n")
    assert main(["analyze", "det", "--normal", str(tmp_path / "n.txt"), "--attack", str(tmp_path / "a.txt"),
                 "--thresholds", "0.1:0.9:0.1", "--out-dir", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "det_report.json").read_text())
    assert report["zero_error_thresholds"] == [0.2, 0.3, 0.4, 0.5, 0.6, 0.7]
    assert len(read_csv(tmp_path / "det_curve.csv")) == 9


def test_analyze_protect_small(tmp_path):
    assert main(["analyze", "protect", "--b", "1", "--injections", "6", "--out-dir", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "protection.csv")
    assert [int(r["width_difference"]) for r in rows] == [-2, 0, 2]


def test_bad_thresholds_exit_nonzero(tmp_path):
    assert main(["analyze", "det", "--thresholds", "oops", "--out-dir", str(tmp_path)]) == 1
