import csv
import json

import numpy as np
import pytest

from hypercs.detection import read_map
from hypercs.errors import HyperCSError
from hypercs.pipeline import CSV_HEADER, ExperimentConfig, emit_report, report_csv, run_pipeline
from hypercs.threshold import SWEEP_MULTIPLIERS, count_over

SCENE = {
    "n1": 16, "n2": 16, "b": 8, "frames": 14, "seed": 3,
    "plume": {"center": [8, 8], "sigma": 3, "schedule": [{"start": 6, "stop": 13, "strength": 6.0}]},
}


def small_config(**kw):
    d = dict(scene=SCENE, background_frames=[0, 4], fov_size=None, solver={"max_outer": 30})
    d.update(kw)
    return ExperimentConfig.from_dict(d)


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    report = run_pipeline(small_config(), out)
    emit_report(report, out)
    return report, out


def test_config_validation():
    with pytest.raises(HyperCSError):
        ExperimentConfig()
    with pytest.raises(HyperCSError):
        ExperimentConfig(preset="release", methods=())
    with pytest.raises(HyperCSError):
        ExperimentConfig(preset="release", compression=1.0)
    with pytest.raises(HyperCSError):
        ExperimentConfig.from_dict({"preset": "release", "bogus": 1})
    with pytest.raises(HyperCSError):
        ExperimentConfig(preset="release", solver={"mu": -1})
    with pytest.raises(HyperCSError):
        ExperimentConfig(input="x")
    c = ExperimentConfig(preset="release")
    assert (c.compression, c.beta_raw, c.beta_recon, c.alpha) == (0.9, 1.0, 2.0, 99.0)
    assert ExperimentConfig.from_dict(c.to_dict()).digest() == c.digest()


def test_csv_schema_and_grid(small_run):
    report, out = small_run
    text = (out / "report.csv").read_bytes().decode("utf-8")
    assert "\r" not in text
    rows = list(csv.reader(text.splitlines()))
    assert tuple(rows[0]) == CSV_HEADER
    body = rows[1:]
    assert len(body) == 14 * 2 * 3 * 7
    cells = {(r[0], r[1], r[2], r[3]) for r in body}
    assert len(cells) == len(body)
    assert all(int(r[5]) >= 0 and int(r[6]) >= 0 for r in body)


def test_single_frame_cardinality():
    scene = dict(SCENE, frames=1, plume={})
    report = run_pipeline(small_config(scene=scene, background_frames=[0, 0]), None)
    lines = report_csv(report).splitlines()
    assert len(lines) == 1 + 2 * 3 * 7


def test_counts_match_persisted_maps(small_run):
    report, out = small_run
    meta = json.loads((out / "report.json").read_text())
    i1 = SWEEP_MULTIPLIERS.index(1.0)
    for method in report.methods:
        for stat in report.statistics:
            base = "bulk" if stat == "bulk_persist" else stat
            T_rec = report.thresholds[method][base]
            T_raw = meta["thresholds"]["raw"][base]["T"]
            for t in range(report.frames):
                m = read_map(out / "maps" / method / stat / f"frame_{t:04d}.csv")
                r = read_map(out / "maps" / "raw" / stat / f"frame_{t:04d}.csv")
                assert report.counts_recon[(method, stat, i1, t)] == count_over(m, T_rec)
                assert report.counts_raw[(method, stat, i1, t)] == count_over(r, T_raw)


def test_sweep_monotone(small_run):
    report, _ = small_run
    for method in report.methods:
        for stat in report.statistics:
            for t in range(report.frames):
                for src in (report.counts_raw, report.counts_recon):
                    c = [src[(method, stat, i, t)] for i in range(7)]
                    assert all(a >= b for a, b in zip(c, c[1:]))


def test_beta_metadata(small_run):
    report, out = small_run
    meta = json.loads((out / "report.json").read_text())
    assert meta["beta"] == {"raw": 1.0, "l1": 2.0, "tv": 2.0}
    for name, beta in meta["beta"].items():
        for stat in ("ace", "bulk"):
            spec = meta["thresholds"][name][stat]
            assert spec["beta"] == beta
            xs = [p["x"] for p in spec["provenance"]]
            assert spec["T"] == pytest.approx(beta * np.median(xs), rel=1e-15)
            assert [p["id"] for p in spec["provenance"]] == [0, 1, 2, 3, 4]
    assert set(meta["convergence"]) == {"l1", "tv"}
    assert len(meta["plan_sha256"]) == 64 and len(meta["config_sha256"]) == 64


def test_artifacts_hashed(small_run):
    import hashlib

    _, out = small_run
    meta = json.loads((out / "report.json").read_text())
    arts = meta["artifacts"]
    assert any(k.startswith("recon/l1/") for k in arts)
    assert any(k.startswith("measurements/") for k in arts)
    for rel_path, digest in list(arts.items())[:20]:
        assert hashlib.sha256((out / rel_path).read_bytes()).hexdigest() == digest
    assert (out / "plan.json").exists() and (out / "signature.csv").exists()


def test_svgs(small_run):
    _, out = small_run
    for method in ("l1", "tv"):
        for stat in ("ace", "bulk", "bulk_persist"):
            text = (out / f"{method}_{stat}.svg").read_text()
            assert text.startswith("<svg") and text.rstrip().endswith("</svg>")
            assert "href" not in text


def test_deterministic_csv(tmp_path):
    c = small_config()
    a = run_pipeline(c, tmp_path / "a")
    emit_report(a, tmp_path / "a", ("csv",))
    b = run_pipeline(c, tmp_path / "b")
    emit_report(b, tmp_path / "b", ("csv",))
    assert (tmp_path / "a" / "report.csv").read_bytes() == (tmp_path / "b" / "report.csv").read_bytes()


def test_parallel_matches_serial(tmp_path, monkeypatch):
    c = small_config(persist=False)
    serial = report_csv(run_pipeline(c, None))
    monkeypatch.setenv("HYPERCS_WORKERS", "2")
    assert report_csv(run_pipeline(c, None)) == serial


def test_background_only_raw_persistence_quiet():
    scene = dict(SCENE, frames=30, plume={})
    report = run_pipeline(small_config(scene=scene, background_frames=[0, 9], methods=["l1"]), None)
    raw = report.series("l1", "bulk_persist", 1.0, "raw")
    assert sum(c == 0 for c in raw) >= 0.95 * len(raw)


def test_input_sequence_path(tmp_path):
    from hypercs.cube import write_sequence
    from hypercs.detection import write_signature
    from hypercs.synthdata import SceneSpec, generate_scene

    seq, sig = generate_scene(SceneSpec.from_dict(SCENE))
    write_sequence(seq, tmp_path / "seq")
    write_signature(sig, tmp_path / "sig.csv")
    cfg = ExperimentConfig(input=str(tmp_path / "seq"), signature=str(tmp_path / "sig.csv"),
                           background_frames=(0, 4), fov_size=None, solver={"max_outer": 30}, persist=False)
    assert report_csv(run_pipeline(cfg, None)) == report_csv(run_pipeline(small_config(persist=False), None))


def test_errors_have_context(tmp_path):
    with pytest.raises(HyperCSError, match="background frames"):
        run_pipeline(small_config(background_frames=[0, 40]), None)
    with pytest.raises(HyperCSError, match="unknown preset"):
        run_pipeline(ExperimentConfig(preset="nope"), None)
    blocker = tmp_path / "file"
    blocker.write_text("x")
    report = run_pipeline(small_config(persist=False, methods=["l1"]), None)
    with pytest.raises(HyperCSError):
        emit_report(report, blocker / "sub")
