import json
import shutil

import pytest

from pollitrack.cli import main
from pollitrack.dataset import TRUTH_FILES


def _tree(path):
    return {p.relative_to(path).as_posix(): p.read_bytes() for p in sorted(path.rglob("*")) if p.is_file()}


SIM = ["--frame-count", "600", "--width", "640", "--height", "360", "--flowers", "3", "--insects", "honeybee=2"]


def test_simulate_twice_is_byte_identical(tmp_path):
    assert main(["simulate", "--seed", "42", "--out", str(tmp_path / "a")] + SIM) == 0
    assert main(["simulate", "--seed", "42", "--out", str(tmp_path / "b")] + SIM) == 0
    a, b = _tree(tmp_path / "a"), _tree(tmp_path / "b")
    assert a == b and "sim42_detections.jsonl" in a


def test_evaluate_identical_is_perfect(tmp_path, capsys):
    truth = tmp_path / "truth"
    assert main(["simulate", "--seed", "3", "--out", str(truth)] + SIM) == 0
    pred = tmp_path / "pred"
    pred.mkdir()
    for key in ("tracks", "visits", "flowers"):
        shutil.copy(truth / TRUTH_FILES[key], pred / f"v_{key}.csv")
    capsys.readouterr()
    assert main(["evaluate", str(pred), str(truth), "--json"]) == 0
    result = json.loads(capsys.readouterr().out)
    assert result["tracks"] and all(r["f_score"] == 1.0 for r in result["tracks"])
    assert result["tracks_total"]["is"] == 0
    assert result["visits"][-1]["f_score"] == 1.0
    assert result["flowers"]["fn"] == 0


def test_track_then_evaluate(tmp_path, capsys):
    sim = tmp_path / "sim"
    assert main(["simulate", "--seed", "5", "--out", str(sim)] + SIM) == 0
    out = tmp_path / "out"
    assert main(["track", str(sim / "manifest.txt"), "--out", str(out)]) == 0
    first = _tree(out)
    assert main(["track", str(sim / "manifest.txt"), "--out", str(out)]) == 0
    assert _tree(out) == first
    capsys.readouterr()
    assert main(["evaluate", str(out), str(sim), "--out", str(tmp_path / "eval")]) == 0
    text = capsys.readouterr().out
    assert "f_score" in text and "1.00" in text
    header = (tmp_path / "eval" / "sim5_eval_tracks.csv").read_text().splitlines()[0]
    assert header == "species,observed,visible_frames,tracklets,tp,fn,fp,is,precision,recall,f_score"


def test_report_writes_svg(tmp_path, capsys):
    sim = tmp_path / "sim"
    main(["simulate", "--seed", "6", "--out", str(sim)] + SIM)
    main(["track", str(sim / "manifest.txt"), "--out", str(tmp_path / "out")])
    capsys.readouterr()
    assert main(["report", str(tmp_path / "out"), "--out", str(tmp_path / "rep")]) == 0
    text = capsys.readouterr().out
    assert text.startswith("location,tracks,visits,visits_per_track")
    assert sorted(p.name for p in (tmp_path / "rep").glob("*.svg")) == [
        "report_bars.svg", "report_species.svg", "report_trajectories.svg"]


def test_bench_json(tmp_path, capsys):
    assert main(["bench", "--frame-count", "120", "--json", "--out", str(tmp_path)]) == 0
    result = json.loads(capsys.readouterr().out)
    assert result["frames"] == 120
    assert result["fullres_fps"] > 0 and result["lowres_fps"] > 0
    assert result["ratio"] == pytest.approx(result["lowres_fps"] / result["fullres_fps"])
    assert (tmp_path / "bench.json").exists()


def test_config_flag_overrides_file(tmp_path, capsys):
    sim = tmp_path / "sim"
    main(["simulate", "--seed", "7", "--out", str(sim)] + SIM)
    cfg = tmp_path / "engine.cfg"
    cfg.write_text("visit_dwell_frames = 9\ntrack_timeout_frames = 20\n")
    out = tmp_path / "out"
    assert main(["track", str(sim / "manifest.txt"), "--out", str(out), "--config", str(cfg),
                 "--visit_dwell_frames", "7"]) == 0
    summary = json.loads((out / "sim7_summary.json").read_text())
    assert summary["config"]["visit_dwell_frames"] == 7
    assert summary["config"]["track_timeout_frames"] == 20


def test_invalid_config_value_exits_2(tmp_path):
    sim = tmp_path / "sim"
    main(["simulate", "--seed", "1", "--out", str(sim)] + SIM)
    assert main(["track", str(sim / "manifest.txt"), "--out", str(tmp_path / "o"),
                 "--visit_dwell_frames", "zero"]) == 2


def test_failed_video_gives_exit_1(tmp_path):
    sim = tmp_path / "sim"
    main(["simulate", "--seed", "1", "--out", str(sim)] + SIM)
    (sim / "sim1_detections.jsonl").write_text("{broken\n")
    assert main(["track", str(sim / "manifest.txt"), "--out", str(tmp_path / "o")]) == 1


@pytest.mark.parametrize("argv", [["explode"], ["simulate", "--out", "x", "--bogus"], []])
def test_usage_errors(argv):
    with pytest.raises(SystemExit) as err:
        main(argv)
    assert err.value.code != 0
