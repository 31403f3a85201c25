import json

import numpy as np
import pytest

from lsmdetect.cli import main
from lsmdetect.core import read_grid
from lsmdetect.detect import DetectionResult
from lsmdetect.evaluation import REPORT_COLUMNS, read_report_csv
from lsmdetect.synth import Scene


def _synth(out, seed=3, extra=()):
    return main(["synth", "--L", "128", "--B", "16", "--M", "5", "--density", "0.2", "--delta", "3",
                 "--snr", "20", "--seed", str(seed), "--out", str(out), *extra])


def test_help_and_usage_errors(capsys):
    assert main(["--help"]) == 0
    assert main([]) == 1
    assert main(["synth", "--B", "16"]) == 1
    assert main(["bogus"]) == 1


def test_synth_is_deterministic(tmp_path):
    assert _synth(tmp_path / "a") == 0
    assert _synth(tmp_path / "b") == 0
    for name in ("scene.json", "x.grid", "y.grid", "basis.grid"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert _synth(tmp_path / "c", seed=4) == 0
    assert (tmp_path / "a" / "y.grid").read_bytes() != (tmp_path / "c" / "y.grid").read_bytes()


def test_infeasible_density_fails(tmp_path):
    rc = main(["synth", "--L", "48", "--B", "16", "--M", "5", "--density", "0.9", "--delta", "3",
               "--out", str(tmp_path)])
    assert rc != 0


def test_pipeline_recovers_objects(tmp_path):
    assert _synth(tmp_path) == 0
    table = tmp_path / "table.grid"
    cfg = tmp_path / "run.cfg"
    cfg.write_text("snr = 20\ndelta = 3\nn_sim = 2000\n")
    assert main(["calibrate", "--config", str(cfg), "--basis", str(tmp_path / "basis.grid"),
                 "--seed", "1", "--threads", "2", "--out", str(table)]) == 0
    det = tmp_path / "det.csv"
    assert main(["detect", str(tmp_path / "y.grid"), "--table", str(table), "--config", str(cfg),
                 "--basis", str(tmp_path / "basis.grid"), "--out", str(det)]) == 0
    rows = DetectionResult.read_csv(det)
    scene = Scene.load(tmp_path / "scene.json")
    pts = np.array([[int(r["coord_0"]), int(r["coord_1"])] for r in rows if r["accepted"] == "1"])
    assert len(pts) == scene.N
    d = np.max(np.abs(pts[:, None] - scene.centers[None]), axis=2)
    assert np.all(d.min(axis=1) < 3)

    # table built for another box or statistic is rejected
    assert main(["detect", str(tmp_path / "y.grid"), "--table", str(table), "--config", str(cfg),
                 "--basis", str(tmp_path / "basis.grid"), "--r", "60", "--out", str(det)]) != 0
    assert main(["detect", str(tmp_path / "y.grid"), "--table", str(table), "--config", str(cfg),
                 "--basis", str(tmp_path / "basis.grid"), "--statistic", "s_z", "--out", str(det)]) != 0
    assert main(["detect", str(tmp_path / "y.grid"), "--table", str(tmp_path / "missing.grid"),
                 "--config", str(cfg), "--basis", str(tmp_path / "basis.grid")]) != 0


def test_evaluate_writes_report(tmp_path):
    cfg = tmp_path / "eval.cfg"
    cfg.write_text("L = 96\nB = 16\nM = 5\ndensity = 0.15\ndelta = 3\nsnr = 50, 2\nn_trials = 2\nn_sim = 2000\n")
    out = tmp_path / "report.csv"
    assert main(["evaluate", "--config", str(cfg), "--seed", "5", "--out", str(out),
                 "--trials-out", str(tmp_path / "trials.csv")]) == 0
    rows = read_report_csv(out)
    assert tuple(rows[0]) == REPORT_COLUMNS
    assert len(rows) == 4
    assert (tmp_path / "trials.csv").exists()


def test_estimate_delta_dirac(tmp_path):
    from lsmdetect.core import write_grid
    from lsmdetect.core import BasisSet

    write_grid(BasisSet(np.ones((1, 1, 1))).as_field(), tmp_path / "dirac.grid")
    out = tmp_path / "delta.json"
    assert main(["estimate-delta", "--basis", str(tmp_path / "dirac.grid"), "--out", str(out)]) == 0
    assert json.loads(out.read_text())["delta"] == 1


def test_bad_config_value(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("L = lots\n")
    assert main(["synth", "--config", str(cfg), "--B", "16", "--M", "5", "--density", "0.2",
                 "--out", str(tmp_path)]) == 1
