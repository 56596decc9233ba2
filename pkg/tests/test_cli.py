import csv
import dataclasses
import json
from pathlib import Path

import pytest

from arw1d import cli
from arw1d.stacks import derive_trial_seed

SMOKE_ARGS = {
    "abelian-check": ["--instances", "5", "--max-particles", "5"],
    "least-action-check": ["--trials", "3", "--n", "20"],
    "smp-check": ["--trials", "30", "--probes", "10", "--stop-rule", "none"],
    "spread": ["--trials", "3", "--n", "50"],
    "inner": ["--trials", "5", "--interval", "32"],
    "outer": ["--trials", "10", "--grid", "0.2", "--L0", "32",
              "--Lmax", "256", "--window-cap", "100000"],
    "chain": ["--trials", "2", "--interval", "16", "--steps", "200",
              "--burn-in", "50"],
    "idla-shape": ["--trials", "5", "--n", "100"],
    "idla-fill": ["--trials", "5", "--n", "100"],
    "percolated-idla": ["--trials", "3", "--n", "100"],
    "couple": ["--trials", "5", "--n", "30", "--interval=-5:5"],
    "decompose": ["--trials", "2", "--n", "30", "--zeta", "0.5",
                  "--L", "256"],
    "trap-odometer": ["--trials", "3", "--n", "30"],
}


def read_rows(out: Path, name="trials.csv"):
    with open(out / name, newline="", encoding="utf-8") as f:
        return list(csv.reader(f))


@pytest.mark.parametrize("command", sorted(cli._SPECS))
def test_every_command_runs_and_writes_artifacts(command, tmp_path):
    out = tmp_path / "out"
    rc = cli.run([command, *SMOKE_ARGS[command], "--out", str(out)])
    assert rc == 0
    for artifact in ("trials.csv", "summary.csv", "manifest.json"):
        assert (out / artifact).exists()
    rows = read_rows(out)
    assert tuple(rows[0]) == cli._SPECS[command].trial_header
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == command
    assert manifest["trials_written"] == len(rows) - 1
    assert "seed_rule" in manifest and "summary" in manifest


def test_reruns_are_byte_identical(tmp_path):
    args = ["couple", "--trials", "10", "--n", "30", "--interval=-5:5",
            "--seed", "7"]
    assert cli.run([*args, "--out", str(tmp_path / "a")]) == 0
    assert cli.run([*args, "--out", str(tmp_path / "b")]) == 0
    for name in ("trials.csv", "summary.csv"):
        assert (tmp_path / "a" / name).read_bytes() == \
            (tmp_path / "b" / name).read_bytes()


@pytest.mark.parametrize("workers", [4, 16])
def test_worker_count_does_not_change_artifacts(workers, tmp_path, monkeypatch):
    monkeypatch.delenv("ARW_WORKERS", raising=False)
    args = ["trap-odometer", "--trials", "8", "--n", "25"]
    assert cli.run([*args, "--out", str(tmp_path / "serial"),
                    "--workers", "1"]) == 0
    assert cli.run([*args, "--out", str(tmp_path / "pool"),
                    "--workers", str(workers)]) == 0
    for name in ("trials.csv", "summary.csv"):
        assert (tmp_path / "serial" / name).read_bytes() == \
            (tmp_path / "pool" / name).read_bytes()


def test_workers_env_var_overrides_flag(tmp_path, monkeypatch):
    monkeypatch.setenv("ARW_WORKERS", "3")
    out = tmp_path / "out"
    rc = cli.run(["spread", "--trials", "4", "--n", "40", "--out", str(out),
                  "--workers", "1"])
    assert rc == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["workers"] == 3


def test_manifest_reproduces_the_run(tmp_path):
    first = tmp_path / "first"
    rc = cli.run(["couple", "--trials", "6", "--n", "25", "--interval=-4:4",
                  "--seed", "11", "--out", str(first)])
    assert rc == 0
    second = tmp_path / "second"
    rc = cli.run(["couple", "--config", str(first / "manifest.json"),
                  "--out", str(second)])
    assert rc == 0
    assert (first / "trials.csv").read_bytes() == \
        (second / "trials.csv").read_bytes()


def test_explicit_flags_beat_config_defaults(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"trials": 3, "n": 20, "base_seed": 5}))
    out = tmp_path / "out"
    rc = cli.run(["trap-odometer", "--config", str(cfg), "--trials", "2",
                  "--out", str(out)])
    assert rc == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["trials"] == 2
    assert manifest["config"]["n"] == 20
    assert manifest["config"]["base_seed"] == 5


def test_manifest_for_wrong_command_is_rejected(tmp_path):
    first = tmp_path / "first"
    assert cli.run(["spread", "--trials", "2", "--n", "30",
                    "--out", str(first)]) == 0
    rc = cli.run(["inner", "--config", str(first / "manifest.json"),
                  "--out", str(tmp_path / "x")])
    assert rc == 3


def test_unknown_config_key_is_rejected(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"walkers": 10}))
    rc = cli.run(["spread", "--config", str(cfg),
                  "--out", str(tmp_path / "x")])
    assert rc == 3


def test_missing_config_file_is_rejected(tmp_path):
    rc = cli.run(["spread", "--config", str(tmp_path / "nope.json"),
                  "--out", str(tmp_path / "x")])
    assert rc == 3


@pytest.mark.parametrize("argv", [
    ["no-such-command"],
    ["spread", "--n", "0"],
    ["spread", "--trials", "-2"],
    ["couple", "--interval", "oops"],
    ["outer", "--grid", "1.5"],
    ["outer", "--grid", "0.5:0.1:0.1"],
    ["smp-check", "--stop-rule", "weird"],
    ["inner", "--q", "2.0"],
])
def test_bad_configuration_exits_three(argv, tmp_path):
    assert cli.run([*argv, "--out", str(tmp_path / "x")]) == 3


def test_trial_seeds_follow_the_derivation_rule(tmp_path):
    out = tmp_path / "out"
    assert cli.run(["trap-odometer", "--trials", "5", "--n", "25",
                    "--seed", "42", "--out", str(out)]) == 0
    rows = read_rows(out)[1:]
    got = [int(r[1]) for r in rows]
    assert got == [derive_trial_seed(42, i) for i in range(5)]


def test_summary_violations_exit_two(tmp_path, monkeypatch, capsys):
    spec = cli._SPECS["abelian-check"]

    def disagreeing_trial(cfg, i):
        return (i, derive_trial_seed(cfg["base_seed"], i), 1.0, "line", 3, 0)

    monkeypatch.setitem(cli._SPECS, "abelian-check",
                        dataclasses.replace(spec, trial=disagreeing_trial))
    rc = cli.run(["abelian-check", "--instances", "3",
                  "--out", str(tmp_path / "out")])
    assert rc == 2
    assert "violation" in capsys.readouterr().err


def test_mid_run_failure_exits_two(tmp_path, monkeypatch, capsys):
    spec = cli._SPECS["spread"]

    def exploding_trial(cfg, i):
        raise RuntimeError("stack storage vanished")

    monkeypatch.setitem(cli._SPECS, "spread",
                        dataclasses.replace(spec, trial=exploding_trial))
    rc = cli.run(["spread", "--trials", "2", "--n", "30",
                  "--out", str(tmp_path / "out")])
    assert rc == 2
    assert "run failed" in capsys.readouterr().err


def test_exact_and_sampler_routes_share_a_trial_shape(tmp_path):
    out = tmp_path / "exact"
    rc = cli.run(["idla-shape", "--trials", "2", "--n", "60", "--exact",
                  "--out", str(out)])
    assert rc == 0
    rows = read_rows(out)
    assert len(rows) == 3
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["exact"] is True
