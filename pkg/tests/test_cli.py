import json
import math
from pathlib import Path

import pytest

from npns_lab import cli
from npns_lab.io import read_columns

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(autouse=True)
def _no_env_override(monkeypatch):
    monkeypatch.delenv(cli.OUT_ENV, raising=False)


def test_pb_solve_us2_trivial(tmp_path):
    assert _run("pb-solve", "--config", CONFIGS / "us2_trivial.toml", "--out", tmp_path) == 0
    cols = read_columns((tmp_path / "pb_solve.csv").read_text(encoding="utf-8"))
    assert len(cols["eps"]) == 1
    assert float(cols["interior_sup_rho"][0]) <= 1e-12
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["status"] == "ok" and manifest["command"] == "pb-solve"
    assert manifest["outputs"] == ["pb_solve.csv", "pb_profile.csv", "pb_profile.svg"]
    assert len(manifest["grid_hash"]) > 0 and manifest["config"]["bc"]["family"] == "US"


def test_sweep_five_rows(tmp_path):
    assert _run("sweep", "--config", CONFIGS / "sweep_us2.toml", "--out", tmp_path) == 0
    cols = read_columns((tmp_path / "sweep.csv").read_text(encoding="utf-8"))
    eps = [float(v) for v in cols["eps"]]
    assert len(eps) == 5 and eps == sorted(eps, reverse=True)
    sup = [float(v) for v in cols["interior_sup_rho"]]
    assert all(b < a for a, b in zip(sup, sup[1:]))


def test_decay_study_matches_linearized_rate(tmp_path):
    assert _run("decay-study", "--config", CONFIGS / "en_decay.toml", "--out", tmp_path) == 0
    cols = read_columns((tmp_path / "decay_fit.csv").read_text(encoding="utf-8"))
    rate, oracle = float(cols["rate"][0]), float(cols["linearized_rate"][0])
    assert oracle == pytest.approx(math.pi**2 + 20, rel=1e-12)
    assert abs(rate - oracle) <= 0.05 * oracle
    traj = read_columns((tmp_path / "trajectory.csv").read_text(encoding="utf-8"))
    assert list(traj) == ["t", "mass1", "mass2", "rho_l1", "rho_l2", "rho_linf", "rho_intsup", "max_c1", "max_c2", "q", "q1", "r", "p", "ke", "lininv"]


def test_env_overrides_out(tmp_path, monkeypatch):
    target = tmp_path / "from_env"
    monkeypatch.setenv(cli.OUT_ENV, str(target))
    assert _run("pb-solve", "--config", CONFIGS / "us2_trivial.toml", "--out", tmp_path / "ignored") == 0
    assert (target / "pb_solve.csv").exists() and not (tmp_path / "ignored").exists()


def test_manifest_written_before_outputs(tmp_path, monkeypatch):
    seen = {}

    def driver(cfg, run, workers):
        seen["manifest"] = json.loads((run.out / "manifest.json").read_text())
        seen["files"] = sorted(p.name for p in run.out.iterdir())
        run.write("x.csv", "a\n1\n")

    monkeypatch.setitem(cli.DRIVERS, "simulate", driver)
    assert _run("simulate", "--config", CONFIGS / "en_decay.toml", "--out", tmp_path) == 0
    assert seen["files"] == ["manifest.json"] and seen["manifest"]["status"] == "running"
    assert json.loads((tmp_path / "manifest.json").read_text())["outputs"] == ["x.csv"]


def test_failed_run_flagged(tmp_path, monkeypatch):
    def driver(cfg, run, workers):
        run.write("partial.csv", "t\n0\n")
        raise cli.RunFailed("simulation stopped early: test")

    monkeypatch.setitem(cli.DRIVERS, "simulate", driver)
    assert _run("simulate", "--config", CONFIGS / "en_decay.toml", "--out", tmp_path) == 1
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["status"] == "failed" and "stopped early" in manifest["message"]
    assert manifest["outputs"] == ["partial.csv"]


def test_bad_config_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text('[domain]\ndim = 1\nextents = [1.0]\ncells = [16]\n[bc]\nfamily = "BL"\n[params]\nepsilon = -1.0\n', encoding="utf-8")
    assert _run("simulate", "--config", bad, "--out", tmp_path / "o") == 2
    assert "params.epsilon" in capsys.readouterr().err
    assert _run("simulate", "--config", tmp_path / "missing.toml", "--out", tmp_path / "o") == 2
    assert _run("simulate", "--config", bad, "--workers", "0") == 2


def test_check_subcommand(capsys):
    assert _run("check", "--seed", "3") == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.strip().endswith("invariants hold")


def test_check_reports_failures(monkeypatch, capsys):
    def broken(rng):
        raise AssertionError("deliberately broken")

    monkeypatch.setattr(cli.checks, "CHECKS", (("grid", broken),))
    assert _run("check") == 1
    assert "FAIL" in capsys.readouterr().out


def test_plot_rerenders(tmp_path):
    assert _run("sweep", "--config", CONFIGS / "sweep_us2.toml", "--out", tmp_path) == 0
    (tmp_path / "sweep.svg").unlink()
    assert _run("plot", "--out", tmp_path) == 0
    assert (tmp_path / "sweep.svg").read_text().startswith("<svg")
    assert json.loads((tmp_path / "manifest.json").read_text())["command"] == "sweep"
    assert json.loads((tmp_path / "plot_manifest.json").read_text())["status"] == "ok"


def test_plot_empty_directory_fails(tmp_path):
    assert _run("plot", "--out", tmp_path) == 1


def test_csv_encoding(tmp_path):
    assert _run("pb-solve", "--config", CONFIGS / "us2_trivial.toml", "--out", tmp_path) == 0
    raw = (tmp_path / "pb_profile.csv").read_bytes()
    assert b"\r" not in raw and raw.endswith(b"\n")
    raw.decode("utf-8")
