import json

import pytest

from bevlab.cli import main


def run(argv):
    return main(argv)


def test_gen_is_byte_deterministic(tmp_path):
    a = tmp_path / "a.json"
    b = tmp_path / "b.json"
    assert run(["gen", "--seed", "7", "--out", str(a)]) == 0
    assert run(["gen", "--seed", "7", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_gen_emit_pred_and_self_eval(tmp_path, capsys):
    scene = tmp_path / "scene.json"
    pred = tmp_path / "pred.json"
    metrics = tmp_path / "metrics.json"
    assert run(["gen", "--seed", "3", "--out", str(scene), "--emit-pred", str(pred)]) == 0
    assert run(["eval", "--pred", str(pred), "--gt", str(scene), "--out", str(metrics)]) == 0
    report = json.loads(metrics.read_text())
    assert report["det_l"] == 100.0
    assert report["det_l_ch"] == 100.0
    assert report["top_ll"] == 100.0
    out = capsys.readouterr().out
    assert "DET_l" in out and "OLS_l" in out


def test_forward_then_eval_runs(tmp_path):
    scene = tmp_path / "scene.json"
    fwd = tmp_path / "fwd.json"
    metrics = tmp_path / "m.json"
    assert run(["gen", "--seed", "1", "--out", str(scene)]) == 0
    assert run(["forward", "--scene", str(scene), "--out", str(fwd), "--with-loss"]) == 0
    body = json.loads(fwd.read_text())
    pred = tmp_path / "pred.json"
    pred.write_text(json.dumps(body["prediction"]))
    assert run(["eval", "--pred", str(pred), "--gt", str(scene), "--out", str(metrics)]) == 0
    report = json.loads(metrics.read_text())
    assert 0.0 <= report["ols_l"] <= 100.0


def test_match_cli(tmp_path):
    scene = tmp_path / "scene.json"
    pred = tmp_path / "pred.json"
    out = tmp_path / "assignment.json"
    assert run(["gen", "--seed", "4", "--out", str(scene), "--emit-pred", str(pred)]) == 0
    assert run(["match", "--pred", str(pred), "--gt", str(scene), "--out", str(out)]) == 0
    body = json.loads(out.read_text())
    # GT matched against itself pairs identically
    assert sorted(body["pairs"]) == [[i, i] for i in range(len(body["pairs"]))]


def test_gradcheck_cli(tmp_path, capsys):
    assert run(["gradcheck", "--seed", "3", "--rounds", "2"]) == 0
    out = capsys.readouterr().out
    assert "gradcheck passed" in out


def test_bench_cli(tmp_path):
    out = tmp_path / "bench.json"
    assert run(["bench", "--repeats", "2", "--out", str(out)]) == 0
    rows = {r["variant"]: r for r in json.loads(out.read_text())["rows"]}
    assert rows["bda"]["multiply_accumulates"] <= rows["spda"]["multiply_accumulates"]
    assert rows["mpda"]["multiply_accumulates"] < rows["mpda16"]["multiply_accumulates"]
    assert rows["mpda16"]["multiply_accumulates"] < rows["sa"]["multiply_accumulates"]


def test_fit_cli(tmp_path, capsys):
    out = tmp_path / "fit.json"
    assert run(["fit", "--seed", "5", "--n-instances", "2", "--out", str(out)]) == 0
    body = json.loads(out.read_text())
    assert body["final_mean_l1"] < 1e-3


def test_unknown_subcommand_exits_1(capsys):
    with pytest.raises(SystemExit) as exc:
        run(["definitely-not-a-command"])
    assert exc.value.code == 1
    assert "usage" in capsys.readouterr().err.lower()


def test_missing_file_is_io_error(tmp_path):
    assert run(["eval", "--pred", str(tmp_path / "nope.json"), "--gt", str(tmp_path / "alsonope.json")]) == 2


def test_malformed_json_is_validation_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    scene = tmp_path / "scene.json"
    assert run(["gen", "--seed", "1", "--out", str(scene)]) == 0
    assert run(["eval", "--pred", str(bad), "--gt", str(scene)]) == 1


def test_inconsistent_prediction_polyline_rejected(tmp_path):
    scene = tmp_path / "scene.json"
    pred = tmp_path / "pred.json"
    assert run(["gen", "--seed", "2", "--out", str(scene), "--emit-pred", str(pred)]) == 0
    body = json.loads(pred.read_text())
    body["instances"][0]["polyline"][2][0] += 0.001
    pred.write_text(json.dumps(body))
    assert run(["eval", "--pred", str(pred), "--gt", str(scene)]) == 1


def test_out_dir_env(tmp_path, monkeypatch):
    monkeypatch.setenv("BEVLAB_OUT_DIR", str(tmp_path))
    assert run(["gen", "--seed", "11"]) == 0
    assert (tmp_path / "scene_11.json").exists()


def test_empty_scene_self_eval_is_perfect(tmp_path):
    scene = tmp_path / "scene.json"
    pred = tmp_path / "pred.json"
    metrics = tmp_path / "m.json"
    assert run(["gen", "--seed", "6", "--n-instances", "0", "--out", str(scene), "--emit-pred", str(pred)]) == 0
    assert run(["eval", "--pred", str(pred), "--gt", str(scene), "--out", str(metrics)]) == 0
    report = json.loads(metrics.read_text())
    assert report["det_l"] == 100.0 and report["top_ll"] == 100.0
