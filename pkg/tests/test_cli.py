import json

import pytest
import yaml

from diracspec.cli import main


def _run(tmp_path, cmd, cfg=None, *extra):
    args = [cmd, "--out", str(tmp_path / "out"), *extra]
    if cfg is not None:
        p = tmp_path / "run.yaml"
        p.write_text(yaml.safe_dump(cfg))
        args += ["--config", str(p)]
    return main(args)


def _summary(tmp_path, cmd):
    return json.loads((tmp_path / "out" / f"{cmd}.json").read_text())


def test_classify_dirichlet(tmp_path):
    assert _run(tmp_path, "classify") == 0
    d = _summary(tmp_path, "classify")
    assert d["command"] == "classify"
    assert d["summary"]["kind"] == "StronglyRegular"
    assert d["config"]["boundary"]["preset"] == "dirichlet"
    csv = (tmp_path / "out" / "classify.csv").read_text().splitlines()
    assert csv[0].startswith("coefficient[-]")


def test_spectrum0_periodic(tmp_path):
    cfg = {"command": {"n_range": [-2, 2]}}
    assert _run(tmp_path, "spectrum0", cfg, "--preset", "periodic") == 0
    rows = (tmp_path / "out" / "spectrum0.csv").read_text().splitlines()[1:]
    for line in rows:
        n, re, im, m = line.split(",")
        assert float(re) == pytest.approx(2 * int(n)) and float(im) == 0 and int(m) == 2


def test_malformed_matrix(tmp_path, capsys):
    cfg = {"boundary": {"matrix": [[1, 0, 0], [0, 0, 1]]}}
    assert _run(tmp_path, "classify", cfg) == 2
    assert "boundary.matrix" in capsys.readouterr().err


def test_unknown_key(tmp_path, capsys):
    assert _run(tmp_path, "classify", {"solver": {"tolerance": 1}}) == 2
    assert "solver.tolerance" in capsys.readouterr().err


def test_spectrum_is_deterministic(tmp_path):
    cfg = {"potential": {"q1": "0.3*cos(x)", "q4": "-0.3*cos(x)", "q2": "0.2j"},
           "command": {"n_range": [-3, 3]}}
    assert _run(tmp_path, "spectrum", cfg) == 0
    first = (tmp_path / "out" / "spectrum.csv").read_text()
    assert _run(tmp_path, "spectrum", cfg) == 0
    assert (tmp_path / "out" / "spectrum.csv").read_text() == first


def test_pruefer_outside_domain_exit_1(tmp_path):
    cfg = {"potential": {"q1": "cos(x)", "q4": "-cos(x)"}, "command": {"lambdas": [10.0]}}
    assert _run(tmp_path, "pruefer", cfg) == 1
