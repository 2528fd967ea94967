import csv
import subprocess
import sys

import numpy as np
import pytest

from rabifilter.cli import OUT_ENV, ConfigError, ExperimentConfig, main, parse_config
from rabifilter.filter import read_trace
from rabifilter.trajectory import read_record

SMALL = "scheme = direct\nn_records = 2\nduration = 1\n"


def write_cfg(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_parse_defaults_and_comments():
    cfg = parse_config("# comment\nscheme = homodyne_y  # trailing\n\nn_records=5\nepsilon=\n")
    assert cfg.scheme == "homodyne_y" and cfg.n_records == 5
    assert cfg.epsilon is None
    assert cfg.dt == 1e-3 and cfg.n_grid == 201 and cfg.omega_max == 10.0


@pytest.mark.parametrize("text", [
    "bogus = 1",
    "n_grid = 200",
    "scheme = photon",
    "duration = 1.0005",
    "n_records = two",
    "n_records = 1",
    "policy = excited",
    "dt = 0.001\ndt = 0.002",
    "no equals sign",
])
def test_parse_rejects_bad_configs(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_config_text_round_trip():
    cfg = parse_config("scheme = adaptive\nepsilon = 0.5\nphi = 0.25\n")
    assert parse_config(cfg.to_text()) == cfg


def test_ensemble_smoke_and_determinism(tmp_path):
    cfg = write_cfg(tmp_path, SMALL)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["ensemble", "--config", str(cfg), "--out", str(a)]) == 0
    assert sorted(p.name for p in a.iterdir()) == ["ensemble_stats.csv", "manifest.txt", "records.csv"]
    assert main(["ensemble", "--config", str(cfg), "--out", str(b), "--threads", "2"]) == 0
    for name in ("ensemble_stats.csv", "records.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_stats_schema(tmp_path):
    out = tmp_path / "o"
    assert main(["ensemble", "--config", str(write_cfg(tmp_path, SMALL)), "--out", str(out)]) == 0
    with open(out / "ensemble_stats.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["time", "p_mean", "p_se", "V_mean", "V_se", "dI_mean", "dI_se", "n"]
    data = np.array(rows[1:], dtype=float)
    assert data.shape == (11, 8)
    assert np.all((data[:, 1] >= 0.5) & (data[:, 1] <= 1.0))
    assert np.all(data[:, [2, 3, 4, 6]] >= 0)
    assert np.all(data[:, 7] == 2)


def test_manifest_reused_as_config(tmp_path):
    first, second = tmp_path / "first", tmp_path / "second"
    assert main(["ensemble", "--config", str(write_cfg(tmp_path, SMALL)), "--out", str(first)]) == 0
    manifest = first / "manifest.txt"
    assert "code_version" in manifest.read_text() and "wall_time_s" in manifest.read_text()
    assert main(["ensemble", "--config", str(manifest), "--out", str(second)]) == 0
    assert (first / "ensemble_stats.csv").read_bytes() == (second / "ensemble_stats.csv").read_bytes()


def test_seed_flag_overrides_config(tmp_path):
    cfg = write_cfg(tmp_path, SMALL + "seed = 1\n")
    a, b = tmp_path / "a", tmp_path / "b"
    main(["ensemble", "--config", str(cfg), "--out", str(a)])
    main(["ensemble", "--config", str(cfg), "--out", str(b), "--seed", "2"])
    assert (a / "ensemble_stats.csv").read_bytes() != (b / "ensemble_stats.csv").read_bytes()
    assert "seed = 2" in (b / "manifest.txt").read_text()


def test_env_var_sets_output_dir(tmp_path, monkeypatch):
    target = tmp_path / "from_env"
    monkeypatch.setenv(OUT_ENV, str(target))
    assert main(["ensemble", "--config", str(write_cfg(tmp_path, SMALL + "out_dir = ignored\n"))]) == 0
    assert (target / "ensemble_stats.csv").exists()
    flag = tmp_path / "from_flag"
    assert main(["ensemble", "--config", str(write_cfg(tmp_path, SMALL)), "--out", str(flag)]) == 0
    assert (flag / "ensemble_stats.csv").exists()


def test_keep_records_writes_traces(tmp_path):
    out = tmp_path / "o"
    cfg = write_cfg(tmp_path, SMALL + "keep_records = 1\n")
    assert main(["ensemble", "--config", str(cfg), "--out", str(out)]) == 0
    assert read_record(out / "record_0000.csv").n_steps == 1000
    assert len(read_trace(out / "filter_trace_0000.csv")) == 11


def test_trace_command(tmp_path):
    out = tmp_path / "t"
    cfg = write_cfg(tmp_path, "scheme = direct\nduration = 5\nomega_true = 5\n")
    assert main(["trace", "--config", str(cfg), "--out", str(out)]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["filter_trace.csv", "known_trajectory.csv", "manifest.txt", "record.csv"]
    trace = read_trace(out / "filter_trace.csv")
    assert np.max(np.abs(trace.best[:, 1])) <= 1e-12
    with open(out / "known_trajectory.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][0] == "time" and len(rows) == 52
    assert read_record(out / "record.csv").omega_true == 5.0


def test_config_error_exit_code(tmp_path):
    assert main(["ensemble", "--config", str(write_cfg(tmp_path, "bogus = 1\n"))]) == 2
    assert main(["ensemble", "--config", str(tmp_path / "missing.cfg")]) == 2
    assert main(["ensemble", "--threads", "0", "--config", str(write_cfg(tmp_path, SMALL))]) == 2
    assert main(["frobnicate"]) == 2


def test_runtime_error_exit_code_removes_partial_output(tmp_path):
    out = tmp_path / "o"
    # dt too large for the measurement operators: valid config, fails at run time
    cfg = write_cfg(tmp_path, "scheme = direct\nn_records = 2\nduration = 2\ndt = 1\ncheckpoint_interval = 1\n")
    assert main(["ensemble", "--config", str(cfg), "--out", str(out)]) == 3
    assert list(out.iterdir()) == []


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "rabifilter.cli", "ensemble", "--help"],
                         capture_output=True, text=True)
    assert res.returncode == 0
    for flag in ("--config", "--seed", "--threads", "--out"):
        assert flag in res.stdout


def test_default_config_is_valid():
    assert ExperimentConfig().validate().duration == 50.0
