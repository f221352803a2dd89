import json

import pytest
import yaml

from gullyfire import cli

EXPECTED_SNAPSHOTS = 51  # T = 0.05 at dt = 1e-3, every step written


@pytest.fixture
def zero_yaml(scenarios_dir):
    return scenarios_dir / "zero.yaml"


def test_simulate_writes_snapshots_and_report(tmp_path, zero_yaml):
    out = tmp_path / "run"
    assert cli.main(["simulate", "--scenario", str(zero_yaml), "--out", str(out)]) == cli.EXIT_PASS

    snapshots = sorted((out / "snapshots").glob("t*.csv"))
    assert len(snapshots) == EXPECTED_SNAPSHOTS
    lines = snapshots[-1].read_text().splitlines()
    assert lines[0] == "sigma,s,u"
    assert len(lines) == 1 + 41 * 5
    assert all(line.endswith(",0") for line in lines[1:])

    times = json.loads((out / "snapshots" / "times.json").read_text())
    assert times["epsilon"] == 0.2
    assert times["times"][-1]["t"] == pytest.approx(0.05)

    report = json.loads((out / "run.json").read_text())
    assert report["command"] == "simulate"
    assert report["passed"] is True and report["exit_status"] == 0
    assert report["outputs"][0] == "snapshots/t00000.csv"
    assert report["outputs"][-2:] == ["snapshots/times.json", "run.json"]
    assert report["settings"]["numerics"]["n_sigma"] == 41
    assert report["settings"]["analysis"]["lambda"] == 0.2
    assert len(report["scenario_digest"]) == 64


def test_reruns_are_byte_identical(tmp_path, scenarios_dir):
    scenario = str(scenarios_dir / "straight.yaml")
    for name in ("first", "second"):
        assert cli.main(["simulate", "--scenario", scenario, "--out", str(tmp_path / name), "--epsilon-index", "1"]) == 0
    first = sorted(p.relative_to(tmp_path / "first") for p in (tmp_path / "first").rglob("*") if p.is_file())
    second = sorted(p.relative_to(tmp_path / "second") for p in (tmp_path / "second").rglob("*") if p.is_file())
    assert first == second
    for rel in first:
        a, b = (tmp_path / "first" / rel).read_bytes(), (tmp_path / "second" / rel).read_bytes()
        if rel.name == "run.json":
            a, b = json.loads(a), json.loads(b)
            a.pop("elapsed_seconds"), b.pop("elapsed_seconds")
        assert a == b, rel


def test_reduce_uses_the_output_root(tmp_path, monkeypatch, zero_yaml):
    monkeypatch.setenv("GULLYFIRE_OUTPUT_ROOT", str(tmp_path))
    assert cli.main(["reduce", "--scenario", str(zero_yaml)]) == cli.EXIT_PASS
    run = tmp_path / "reduce-zero"
    assert (run / "reduced" / "t00000.csv").read_text().splitlines()[0] == "sigma,u"
    assert json.loads((run / "run.json").read_text())["command"] == "reduce"


def test_verify_writes_the_suite_report(tmp_path, scenarios_dir):
    out = tmp_path / "verify"
    status = cli.main(["verify-geometry", "--scenario", str(scenarios_dir / "circle.yaml"), "--out", str(out)])
    assert status == cli.EXIT_PASS
    suite = json.loads((out / "verify-geometry.json").read_text())
    assert suite["suite"] == "geometry" and suite["passed"] is True
    assert json.loads((out / "run.json").read_text())["command"] == "verify-geometry"


def test_missing_scenario_is_a_usage_error(tmp_path, capsys):
    status = cli.main(["simulate", "--scenario", str(tmp_path / "absent.yaml"), "--out", str(tmp_path / "out")])
    assert status == cli.EXIT_USAGE
    assert "Cannot read scenario" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_epsilon_index_out_of_range(tmp_path, zero_yaml, capsys):
    status = cli.main(["simulate", "--scenario", str(zero_yaml), "--epsilon-index", "3", "--out", str(tmp_path)])
    assert status == cli.EXIT_USAGE
    assert "outside 0..2" in capsys.readouterr().err


def test_bad_thread_setting(tmp_path, monkeypatch, zero_yaml, capsys):
    monkeypatch.setenv("GULLYFIRE_THREADS", "many")
    status = cli.main(["converge", "--scenario", str(zero_yaml), "--out", str(tmp_path)])
    assert status == cli.EXIT_USAGE
    assert "GULLYFIRE_THREADS must be an integer" in capsys.readouterr().err


def test_kernel_refusal_is_a_usage_error(tmp_path, make_document, capsys):
    path = tmp_path / "heavy.yaml"
    path.write_text(yaml.safe_dump(make_document(kernel={"A": 10.0})), encoding="utf-8")
    assert cli.main(["reduce", "--scenario", str(path), "--out", str(tmp_path / "out")]) == cli.EXIT_USAGE
    assert "refusing to run" in capsys.readouterr().err


def test_scenario_flag_is_required():
    with pytest.raises(SystemExit) as raised:
        cli.main(["simulate"])
    assert raised.value.code == 2
