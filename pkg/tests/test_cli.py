import csv
import json

import numpy as np
import pytest

from bodyfit import cli
from bodyfit.io import read_cloud, write_volume
from bodyfit.simulator import ScanConfig, simulate_volume
from bodyfit.synthetic import synthetic_model

QUICK = ["--samples-per-area", "3000", "--max-iters", "30"]


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def fitted(tmp_path_factory):
    d = tmp_path_factory.mktemp("fit")
    assert run("simulate", "--beta", "0,0.2,0,0", "--samples-per-area", "3000", "--seed", "3",
               "-o", d / "scan.ply") == 0
    assert run("fit", d / "scan.ply", "--max-iters", "30", "-o", d / "fit.json") == 0
    return d


def test_ingest_merges_panel_volumes(tmp_path, model):
    from bodyfit.body_model import pose_mesh
    mesh = pose_mesh(model, model.prior_params())
    names = []
    for vol in simulate_volume(mesh, ScanConfig(), 0.02):
        write_volume(vol, tmp_path / vol.panel_id)
        names.append(tmp_path / f"{vol.panel_id}.f32raw")
    assert run("ingest", *names, "--spacing", "0.02", "-o", tmp_path / "cloud.ply") == 0
    cloud = read_cloud(tmp_path / "cloud.ply")
    assert len(cloud) > 500
    assert {"front", "back"} <= set(cloud.source_panel)
    manifest = json.loads((tmp_path / "cloud.manifest.json").read_text())
    assert manifest["command"] == "ingest"
    assert len(manifest["inputs"]) == 4


def test_ingest_missing_sidecar(tmp_path, capsys):
    (tmp_path / "lonely.f32raw").write_bytes(b"\0" * 108)
    assert run("ingest", tmp_path / "lonely.f32raw", "-o", tmp_path / "c.ply") == 2
    assert "lonely.json" in capsys.readouterr().err


def test_fit_document(fitted):
    doc = json.loads((fitted / "fit.json").read_text())
    assert doc["format"] == "bodyfit-fit/1"
    assert doc["result"]["converged_by"] in ("patience", "max_iters")
    assert doc["config"]["max_iters"] == 30
    assert len(doc["result"]["params"]["beta"]) == 4
    assert (fitted / "fit.obj").exists()
    assert (fitted / "fit.manifest.json").exists()


def test_fit_bad_model_path(tmp_path, fitted, capsys):
    rc = run("fit", fitted / "scan.ply", "--model", tmp_path / "none.json", "-o", tmp_path / "f.json")
    assert rc == 2
    assert "none.json" in capsys.readouterr().err


def test_fit_empty_cloud(tmp_path):
    (tmp_path / "e.xyz").write_text("")
    assert run("fit", tmp_path / "e.xyz", "-o", tmp_path / "f.json") == 2


def test_measure_fit_json_and_csv(fitted):
    out = fitted / "report.json"
    assert run("measure", fitted / "fit.json", "--csv", "-o", out) == 0
    report = json.loads(out.read_text())
    for key in ("chest", "waist", "hip", "height"):
        assert 0 < report[key] < 3
    rows = list(csv.reader((fitted / "report.csv").open()))
    assert rows[0] == ["name", "value_m", "height_m", "slices"]


def test_measure_obj_needs_model(fitted, tmp_path):
    assert run("measure", fitted / "fit.obj", "-o", tmp_path / "r.json") == 2
    assert run("measure", fitted / "fit.obj", "--model", "builtin", "-o", tmp_path / "r.json") == 0
    assert "as given" in json.loads((tmp_path / "r.json").read_text())["pose"]


def test_measure_custom_model_file(tmp_path):
    from bodyfit.body_model import save_model
    small = synthetic_model(torso_segments=16, torso_rings=8, limb_segments=6, head_segments=6,
                            limb_subdiv=0)
    save_model(small, tmp_path / "m.json")
    assert run("simulate", "--model", tmp_path / "m.json", "--samples-per-area", "2000",
               "-o", tmp_path / "s.ply") == 0
    assert run("fit", tmp_path / "s.ply", "--model", tmp_path / "m.json", "--max-iters", "5",
               "-o", tmp_path / "f.json") == 0
    assert run("measure", tmp_path / "f.json", "-o", tmp_path / "r.json") == 0


def test_simulate_seed_is_reproducible(tmp_path):
    args = ["simulate", "--beta", "0,0.1,0,0", "--noise-sigma", "0.003", "--dropout", "0.2",
            "--samples-per-area", "2000", "--seed", "7"]
    assert run(*args, "-o", tmp_path / "a.ply") == 0
    assert run(*args, "-o", tmp_path / "b.ply") == 0
    assert (tmp_path / "a.ply").read_bytes() == (tmp_path / "b.ply").read_bytes()


def test_simulate_emit_volume(tmp_path):
    assert run("simulate", "--samples-per-area", "1000", "--emit-volume", "--voxel-spacing", "0.02",
               "-o", tmp_path / "scan.ply") == 0
    for panel in ("front", "back"):
        assert (tmp_path / f"scan_{panel}.f32raw").exists()
        assert (tmp_path / f"scan_{panel}.json").exists()


def test_simulate_from_mesh(tmp_path, fitted):
    assert run("simulate", "--mesh", fitted / "fit.obj", "--samples-per-area", "1000",
               "-o", tmp_path / "m.xyz") == 0
    assert len(read_cloud(tmp_path / "m.xyz")) > 100


def test_manifest_contents(fitted):
    m = json.loads((fitted / "fit.manifest.json").read_text())
    assert m["command"] == "fit"
    assert m["config"]["fit"]["max_iters"] == 30
    assert set(m["outputs"]) == {str(fitted / "fit.json"), str(fitted / "fit.obj")}
    assert all(len(v) == 64 for v in m["outputs"].values())
    assert m["started_at"] <= m["finished_at"]


def test_replay_reproduces_outputs(tmp_path, fitted):
    out = tmp_path / "again"
    assert run("replay", fitted / "fit.manifest.json", "--out-dir", out) == 0
    assert (out / "fit.json").read_bytes() == (fitted / "fit.json").read_bytes()
    assert (out / "fit.obj").read_bytes() == (fitted / "fit.obj").read_bytes()


def test_replay_rejects_other_json(tmp_path, fitted):
    assert run("replay", fitted / "fit.json") == 2
    assert run("replay", tmp_path / "missing.json") == 2


def test_config_file_overrides_flags(tmp_path, fitted):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"fit": {"max-iters": 3, "lambda_ground": 0.25}}))
    assert run("fit", fitted / "scan.ply", "--max-iters", "50", "--config", cfg,
               "-o", tmp_path / "f.json") == 0
    doc = json.loads((tmp_path / "f.json").read_text())
    assert doc["config"]["max_iters"] == 3
    assert doc["config"]["lambda_ground"] == 0.25
    assert doc["result"]["iterations_run"] <= 3


def test_unknown_config_key(tmp_path, fitted, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"learning_speed": 2}))
    assert run("fit", fitted / "scan.ply", "--config", cfg, "-o", tmp_path / "f.json") == 2
    assert "learning_speed" in capsys.readouterr().err


def test_invalid_flag_value(tmp_path, fitted):
    assert run("fit", fitted / "scan.ply", "--patience", "0", "-o", tmp_path / "f.json") == 2


def test_small_pipeline_via_volume(tmp_path):
    rc = run("pipeline", "--via-volume", "--voxel-spacing", "0.02", "--spacing", "0.02",
             "--max-iters", "20", "--out-dir", tmp_path)
    assert rc == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert set(report["ground_truth"]) >= {"chest", "waist", "hip", "height"}
    for name in ("cloud.ply", "fit.json", "fit.obj", "manifest.json"):
        assert (tmp_path / name).exists()


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["--version"])
    assert exc.value.code == 0
    assert "bodyfit" in capsys.readouterr().out


def test_module_entry_point():
    import subprocess
    import sys
    r = subprocess.run([sys.executable, "-m", "bodyfit", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    assert "pipeline" in r.stdout
