import csv
import json

import pytest

from cvqkdsim.cli import build_parser, main


def test_run_writes_outputs(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "--link", "L1", "--rounds", "1", "--seed", "3",
                 "--recon-frames", "0", "--out", str(out)]) == 0
    assert "round 0:" in capsys.readouterr().out
    for name in ("rounds.csv", "round_00.json", "relative_snr.csv", "summary.json"):
        assert (out / name).exists()
    rows = list(csv.DictReader(open(out / "rounds.csv")))
    assert len(rows) == 1
    summary = json.loads((out / "summary.json").read_text())
    assert (summary["link"], summary["seed"], summary["rounds"]) == ("L1", 3, 1)


def test_run_requires_out():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["run"])


def test_calibrate(tmp_path, capsys):
    path = tmp_path / "cal.json"
    assert main(["calibrate", "--samples", "1000000", "--gain", "2.0", "--out", str(path)]) == 0
    cal = json.loads(path.read_text())
    assert cal == json.loads(capsys.readouterr().out)
    assert cal["snu_factor"] == pytest.approx(4.0, rel=0.01)
    assert cal["v_el"] == pytest.approx(0.1, abs=0.005)


def test_optimize_sop(tmp_path, capsys):
    path = tmp_path / "trace.csv"
    assert main(["optimize-sop", "--iters", "10", "--seed", "1", "--out", str(path)]) == 0
    assert "of R_max" in capsys.readouterr().out
    assert len(path.read_text().splitlines()) == 12


def test_reconcile_high_snr(tmp_path):
    path = tmp_path / "recon.json"
    assert main(["reconcile", "--snr", "2.0", "--frames", "1", "--out", str(path)]) == 0
    report = json.loads(path.read_text())
    assert report["frames_decoded"] == report["frames_attempted"] == 1
    assert report["residual_ber"] == 0.0


def test_unknown_command():
    with pytest.raises(SystemExit):
        main(["teleport"])
