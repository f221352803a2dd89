import json
import logging
from pathlib import Path
from unittest.mock import Mock

import pytest

from gullyfire.outputs import OutputError, RunDirectory
from gullyfire.reduction import InteriorWindow

RUN_ROOT = "/runs/simulate-zero"


@pytest.fixture
def run_dir(fs):
    """RunDirectory on a pyfakefs filesystem."""
    fs.create_dir("/runs")
    return RunDirectory(Path(RUN_ROOT))


def test_root_is_created(run_dir):
    assert Path(RUN_ROOT).is_dir()
    assert run_dir.emitted == []


def test_write_text_records_emission_order(run_dir):
    run_dir.write_text("b.txt", "second")
    run_dir.write_text("nested/a.txt", "first")
    run_dir.write_text("b.txt", "rewritten")
    assert run_dir.emitted == ["b.txt", "nested/a.txt"]
    assert (Path(RUN_ROOT) / "b.txt").read_text() == "rewritten"
    # no temporary files survive the replace
    assert sorted(p.name for p in Path(RUN_ROOT).iterdir()) == ["b.txt", "nested"]


@pytest.mark.parametrize("path", ["../escape.txt", "a/../../escape.txt", Path("..") / "x.csv", "/abs.txt"])
def test_paths_stay_inside_the_run(run_dir, path):
    with pytest.raises(OutputError, match="Path must be relative and not contain '..'"):
        run_dir.write_text(path, "nope")


def test_directory_in_the_way(run_dir, fs):
    fs.create_dir(f"{RUN_ROOT}/snapshots")
    with pytest.raises(OutputError, match="not a file"):
        run_dir.write_text("snapshots", "x")


def test_snapshot_rows(run_dir):
    path = run_dir.write_snapshot("t.csv", ["sigma", "u"], [(0.0, 1.0), (0.1, 1 / 3)])
    assert path.read_text().splitlines() == ["sigma,u", "0,1", "0.10000000000000001,0.33333333333333331"]
    with pytest.raises(OutputError, match="Row of 3 values under a 2-column header"):
        run_dir.write_snapshot("bad.csv", ["sigma", "u"], [(0.0, 1.0, 2.0)])


def test_report_is_sorted_json(run_dir):
    window = InteriorWindow(sigma_min=0.1, sigma_max=0.9, t0=0.01)
    path = run_dir.write_report("window.json", window)
    text = path.read_text()
    assert text.endswith("\n")
    assert list(json.loads(text)) == ["sigma_max", "sigma_min", "t0"]
    run_dir.write_report("plain.json", {"b": 1, "a": [1, 2]})
    assert json.loads((Path(RUN_ROOT) / "plain.json").read_text()) == {"a": [1, 2], "b": 1}


def test_post_write_hooks(fs):
    fs.create_dir("/runs")
    hook = Mock()
    run_dir = RunDirectory(Path(RUN_ROOT), post_write_hooks=[hook])
    written = run_dir.write_text("a.txt", "x")
    hook.assert_called_once_with(written)


def test_failing_hook_is_logged_not_raised(fs, caplog):
    fs.create_dir("/runs")

    def exploding(path):
        raise RuntimeError("boom")

    run_dir = RunDirectory(Path(RUN_ROOT), post_write_hooks=[exploding])
    with caplog.at_level(logging.ERROR):
        run_dir.write_text("a.txt", "x")
    assert "Post-write hook exploding failed" in caplog.text
    assert (Path(RUN_ROOT) / "a.txt").read_text() == "x"


def test_unwritable_root(fs):
    fs.create_file("/runs")
    with pytest.raises(OutputError, match="Cannot create run directory"):
        RunDirectory(Path("/runs/inner"))
