from __future__ import annotations

import subprocess
import sys

import pytest

from efpp import cli
from efpp.point_process import import_snapshot
from efpp.verification import CheckResult, check_gradients, mutated_phi_derivative

TINY = "n_values = 8\nreplicates = 2\ntargets = T_PP\nseed = 4\n"


@pytest.fixture
def config(tmp_path):
    p = tmp_path / "tiny.cfg"
    p.write_text(TINY)
    return str(p)


def test_sample_writes_a_snapshot(config, tmp_path, capsys):
    assert cli.main(["sample", "--config", config, "--replicate", "1"]) == 0
    env = import_snapshot(capsys.readouterr().out)
    out = tmp_path / "env.txt"
    assert cli.main(["sample", "--config", config, "--replicate", "1", "--raw", "--out", str(out)]) == 0
    raw = import_snapshot(out.read_text())
    assert env.n_points <= raw.n_points


@pytest.mark.parametrize("target", ["T", "T_PRIME", "T_PP"])
def test_geodesic_prints_path(config, capsys, target):
    assert cli.main(["geodesic", "--config", config, "--target", target]) == 0
    text = capsys.readouterr().out
    assert text.startswith(f"target {target}: passage time") and "boxes touched" in text


def test_variance_then_plot(config, tmp_path):
    out = tmp_path / "run"
    assert cli.main(["variance", "--config", config, "--out", str(out), "--seed", "7"]) == 0
    assert (out / "results.csv").read_text().count("T_PP") == 3
    assert "seed = 7" in (out / "config.txt").read_text()
    assert cli.main(["plot", str(out / "results.csv")]) == 0
    assert (out / "plots" / "var_T_PP.svg").exists()


def test_bad_config_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("alpha = 0.5\nwhat = 1\n")
    assert cli.main(["run", "--config", str(bad)]) == 2
    err = capsys.readouterr().err
    assert "alpha" in err and "what" in err
    assert cli.main(["run", "--config", str(tmp_path / "missing.cfg")]) == 1


def test_verify_exit_code_follows_results(monkeypatch):
    seen = {}

    def fake(mutate_phi_derivative=False):
        seen["mutate"] = mutate_phi_derivative
        return [CheckResult("x", not mutate_phi_derivative, 1, int(mutate_phi_derivative))]

    monkeypatch.setattr(cli, "verify_suite", fake)
    assert cli.main(["verify"]) == 0 and seen["mutate"] is False
    assert cli.main(["verify", "--mutate-phi-derivative"]) == 1 and seen["mutate"] is True


def test_gradient_check_catches_sign_mutation():
    assert check_gradients(n_vertices=30).passed
    with mutated_phi_derivative():
        res = check_gradients(n_vertices=30)
    assert not res.passed and res.violations == res.count
    assert check_gradients(n_vertices=30).passed


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "efpp.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "verify" in r.stdout
