import logging
from pathlib import Path

import numpy as np
import pytest

from ionflux.config import DEFAULTS, load_config, log_level_from_env, parse_config
from ionflux.errors import ConfigError, IoError
from ionflux.model_core import BumpGeometry, TabulatedGeometry


def test_defaults_fill_every_section():
    config = parse_config({"command": "solve"})
    assert config.command == "solve"
    assert config.model.ions.z1 == 1.0 and config.model.ions.z2 == -1.0
    assert config.model.epsilon == 1e-3
    assert config.solver.tol == 1e-10
    assert config.sweep.parameter == "V"
    assert len(config.sweep.grid) == 41
    assert config.oracle.d_grid[0] == 0.0
    assert config.zero_current.mode == "reversal"
    assert config.output.formats == ("csv", "json", "svg")
    assert set(DEFAULTS) <= set(config.raw)


def test_unknown_key_is_rejected():
    with pytest.raises(ConfigError, match="model.vv"):
        parse_config({"command": "solve", "model.vv": "1"})


@pytest.mark.parametrize("key,value", [
    ("model.V", "abc"),
    ("sweep.values", "0,1,0.5"),
    ("sweep.parameter", "h0"),
    ("solver.max_iter", "2.5"),
    ("model.l1", "-1"),
    ("zero_current.V_min", "30"),
    ("zero_current.mode", "sideways"),
    ("output.formats", "csv,png"),
    ("oracle.eps_grid", "1e-2,0"),
    ("geometry.kind", "cone"),
])
def test_invalid_values(key, value):
    with pytest.raises(ConfigError):
        parse_config({"command": "solve", key: value})


def test_command_is_required():
    with pytest.raises(ConfigError):
        parse_config({})
    with pytest.raises(ConfigError):
        parse_config({"command": "simulate"})


def test_command_line_overrides_the_file():
    config = parse_config({"command": "solve"}, command="sweep")
    assert config.command == "sweep"
    assert config.raw["command"] == "sweep"


def test_explicit_sweep_values():
    config = parse_config({"command": "sweep", "sweep.parameter": "Q", "sweep.values": "1,0.5,0"})
    assert config.sweep.parameter == "Q"
    assert np.array_equal(config.sweep.grid, [1.0, 0.5, 0.0])


def test_bump_geometry_from_keys():
    config = parse_config({"command": "solve", "geometry.kind": "bump", "geometry.depth": "0.3"})
    assert isinstance(config.model.geometry, BumpGeometry)
    assert config.model.geometry.depth == 0.3


def test_missing_file(tmp_path):
    with pytest.raises(IoError):
        load_config(tmp_path / "absent.env")


def test_load_file_with_output_override(write_config, tmp_path):
    path = write_config("run.env", ["# equilibrium check", "command=solve", "model.Q2=0.5", "output.dir=somewhere"])
    config = load_config(path, out_dir=str(tmp_path / "out"))
    assert config.model.Q == 0.5
    assert config.output.directory == tmp_path / "out"
    assert config.raw["output.dir"] == str(tmp_path / "out")
    assert config.source == Path(path)


def test_tabulated_geometry_relative_to_the_config(write_config, tmp_path):
    (tmp_path / "neck.csv").write_text("x,h\n0,2\n0.5,1\n1,2\n")
    path = write_config("table.env", ["command=solve", "geometry.kind=table", "geometry.table=neck.csv"])
    geometry = load_config(path).model.geometry
    assert isinstance(geometry, TabulatedGeometry)
    assert geometry.x_nodes == (0.0, 0.5, 1.0)
    assert geometry.H1 > 0.5


def test_tabulated_geometry_needs_x_and_h(write_config, tmp_path):
    (tmp_path / "bad.csv").write_text("position,area\n0,1\n1,1\n")
    path = write_config("table.env", ["command=solve", "geometry.kind=table", "geometry.table=bad.csv"])
    with pytest.raises(ConfigError):
        load_config(path)


def test_log_level_from_environment(monkeypatch):
    monkeypatch.delenv("IONFLUX_LOG_LEVEL", raising=False)
    assert log_level_from_env() == logging.INFO
    assert log_level_from_env(verbose=True) == logging.DEBUG
    monkeypatch.setenv("IONFLUX_LOG_LEVEL", "warning")
    assert log_level_from_env() == logging.WARNING
    monkeypatch.setenv("IONFLUX_LOG_LEVEL", "chatty")
    with pytest.raises(ConfigError):
        log_level_from_env()
