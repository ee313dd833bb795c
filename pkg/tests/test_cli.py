import json

import pytest

from hypercs.cli import main

SUBCOMMANDS = ["gen", "sample", "reconstruct", "detect", "threshold", "compare", "sweep", "run"]
SCENE = {
    "n1": 8, "n2": 8, "b": 5, "frames": 8, "seed": 2,
    "plume": {"center": [4, 4], "sigma": 2, "schedule": [{"start": 4, "stop": 7, "strength": 5.0}]},
}


@pytest.mark.parametrize("sub", SUBCOMMANDS)
def test_help(sub, capsys):
    assert main([sub, "--help"]) == 0
    assert "usage" in capsys.readouterr().out


def test_bad_arguments_exit_1(capsys):
    assert main([]) == 1
    assert main(["nope"]) == 1
    assert main(["sample", "--input", "/nonexistent", "--out", "/tmp/x"]) == 1
    assert "error" in capsys.readouterr().err


def test_internal_error_exit_2(monkeypatch, tmp_path):
    import hypercs.cli as cli

    def boom(*a, **k):
        raise RuntimeError("boom")

    monkeypatch.setattr(cli, "generate_scene", boom)
    assert main(["gen", "--out", str(tmp_path / "g")]) == 2


def test_stepwise_workflow(tmp_path, capsys):
    scene = tmp_path / "scene.json"
    scene.write_text(json.dumps(SCENE))
    d = tmp_path
    assert main(["gen", "--config", str(scene), "--out", str(d / "seq")]) == 0
    assert main(["sample", "--input", str(d / "seq"), "--compression", "0.5", "--training", "0-3",
                 "--out", str(d / "meas")]) == 0
    assert main(["reconstruct", "--plan", str(d / "meas" / "plan.json"), "--measurements", str(d / "meas"),
                 "--method", "tv", "--out", str(d / "rec")]) == 0
    assert (d / "rec" / "frame_0000.hsc.json").exists()
    for src, out in (("seq", "raw_maps"), ("rec", "rec_maps")):
        assert main(["detect", "--input", str(d / src), "--signature", str(d / "seq" / "signature.csv"),
                     "--background", "0-3", "--out", str(d / out)]) == 0
    assert main(["threshold", "--maps", str(d / "raw_maps" / "bulk"), "--background", "0-3",
                 "--out", str(d / "t_raw.json")]) == 0
    assert main(["threshold", "--maps", str(d / "rec_maps" / "bulk"), "--background", "0-3", "--beta", "2",
                 "--out", str(d / "t_rec.json")]) == 0
    assert json.loads((d / "t_rec.json").read_text())["beta"] == 2.0
    assert main(["compare", "--raw", str(d / "raw_maps" / "bulk"), "--recon", str(d / "rec_maps" / "bulk"),
                 "--raw-threshold", str(d / "t_raw.json"), "--recon-threshold", str(d / "t_rec.json"),
                 "--persist", "--out", str(d / "cmp.csv")]) == 0
    lines = (d / "cmp.csv").read_text().splitlines()
    assert lines[0] == "frame,count_raw,count_recon" and len(lines) == 9
    capsys.readouterr()
    assert main(["sweep", "--maps", str(d / "raw_maps" / "ace"), "--threshold", str(d / "t_raw.json")]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "frame,multiplier,threshold,count" and len(out) == 1 + 8 * 7


def test_run(tmp_path):
    cfg = tmp_path / "exp.json"
    cfg.write_text(json.dumps({"scene": SCENE, "background_frames": [0, 3], "fov_size": None,
                               "solver": {"max_outer": 20}}))
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 0
    assert (tmp_path / "out" / "report.csv").exists()
    assert (tmp_path / "out" / "tv_bulk_persist.svg").exists()
    cfg.write_text("{not json")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o2")]) == 1
