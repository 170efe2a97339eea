"""Experiment configuration: one key/value document with section prefixes, read with python-dotenv"""
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from dotenv import dotenv_values

from ionflux.bvp_oracle import BvpOptions
from ionflux.errors import ConfigError, IoError
from ionflux.matching_solver import SolverOptions
from ionflux.model_core import (BoundaryData, BumpGeometry, ChannelGeometry, ConstantGeometry, IonPair, ModelSpec,
                                PermanentCharge, TabulatedGeometry)

logger = logging.getLogger(__name__)

COMMANDS = ("solve", "sweep", "zero-current", "reversal", "validate")
SWEEP_PARAMETERS = ("V", "Q", "d", "lambda", "epsilon")
OUTPUT_FORMATS = ("csv", "json", "svg")

DEFAULTS: Dict[str, str] = {
    "model.z1": "1", "model.z2": "-1", "model.d": "0", "model.lambda": "1",
    "model.V": "0", "model.l1": "1", "model.l2": "1", "model.r1": "1", "model.r2": "1",
    "model.Q2": "0", "model.epsilon": "1e-3",
    "geometry.kind": "constant", "geometry.a": "0.3333333333333333", "geometry.b": "0.6666666666666666",
    "geometry.h0": "1", "geometry.depth": "0.5", "geometry.center": "0.5", "geometry.width": "0.1",
    "geometry.table": "",
    "solver.tol": "1e-10", "solver.max_iter": "60", "solver.profile_points": "256",
    "sweep.parameter": "V", "sweep.start": "-2", "sweep.stop": "2", "sweep.points": "41", "sweep.values": "",
    "oracle.eps_grid": "1e-2,3e-3,1e-3,3e-4", "oracle.d_grid": "0,0.01,0.02,0.04,0.08",
    "oracle.mesh_nodes": "2000", "oracle.tol": "1e-6", "oracle.max_relative_error": "0.02",
    "oracle.min_d_order": "1.8",
    "zero_current.mode": "reversal", "zero_current.V_min": "-20", "zero_current.V_max": "20",
    "zero_current.V_points": "400", "zero_current.fd_step": "1e-4",
    "output.dir": "results", "output.formats": "csv,json,svg",
}


@dataclass
class SweepConfig:
    parameter: str = "V"
    grid: np.ndarray = field(default_factory=lambda: np.linspace(-2.0, 2.0, 41))


@dataclass
class OracleConfig:
    eps_grid: List[float] = field(default_factory=lambda: [1e-2, 3e-3, 1e-3, 3e-4])
    d_grid: List[float] = field(default_factory=lambda: [0.0, 0.01, 0.02, 0.04, 0.08])
    bvp: BvpOptions = field(default_factory=BvpOptions)
    max_relative_error: float = 0.02
    min_d_order: float = 1.8


@dataclass
class ZeroCurrentConfig:
    mode: str = "reversal"
    V_grid: np.ndarray = field(default_factory=lambda: np.linspace(-20.0, 20.0, 400))
    fd_step: float = 1e-4


@dataclass
class OutputConfig:
    directory: Path = Path("results")
    formats: Tuple[str, ...] = OUTPUT_FORMATS


@dataclass
class ExperimentConfig:
    command: str
    model: ModelSpec
    solver: SolverOptions = field(default_factory=SolverOptions)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    zero_current: ZeroCurrentConfig = field(default_factory=ZeroCurrentConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    source: Optional[Path] = None
    raw: Dict[str, str] = field(default_factory=dict)


def _number(raw: Dict[str, str], key: str) -> float:
    try:
        return float(raw[key])
    except ValueError:
        raise ConfigError(f"{key} must be a number, got '{raw[key]}'")


def _integer(raw: Dict[str, str], key: str) -> int:
    value = _number(raw, key)
    if value != int(value) or value < 1:
        raise ConfigError(f"{key} must be a positive integer, got '{raw[key]}'")
    return int(value)


def _number_list(raw: Dict[str, str], key: str) -> List[float]:
    text = raw[key].strip()
    if not text:
        return []
    try:
        return [float(item) for item in text.split(",")]
    except ValueError:
        raise ConfigError(f"{key} must be a comma-separated list of numbers, got '{raw[key]}'")


def _monotone(values, key: str) -> np.ndarray:
    grid = np.asarray(values, dtype=float)
    steps = np.diff(grid)
    if grid.size > 1 and not (np.all(steps > 0) or np.all(steps < 0)):
        raise ConfigError(f"{key} must be strictly monotone")
    return grid


def load_geometry_table(path: Path) -> Tuple[Tuple[float, ...], Tuple[float, ...]]:
    try:
        table = pd.read_csv(path)
    except (OSError, pd.errors.ParserError) as e:
        raise IoError(f"cannot read geometry table {path}: {str(e)}")
    if not {"x", "h"} <= set(table.columns):
        raise ConfigError(f"geometry table {path} needs columns x,h (found {list(table.columns)})")
    return tuple(table["x"].astype(float)), tuple(table["h"].astype(float))


def build_geometry(raw: Dict[str, str], base_dir: Path) -> ChannelGeometry:
    kind = raw["geometry.kind"].strip()
    a, b = _number(raw, "geometry.a"), _number(raw, "geometry.b")
    if kind == "constant":
        return ConstantGeometry(a=a, b=b, h0=_number(raw, "geometry.h0"))
    if kind == "bump":
        return BumpGeometry(a=a, b=b, h0=_number(raw, "geometry.h0"), depth=_number(raw, "geometry.depth"),
                            center=_number(raw, "geometry.center"), width=_number(raw, "geometry.width"))
    if kind == "table":
        if not raw["geometry.table"].strip():
            raise ConfigError("geometry.kind=table needs geometry.table")
        path = Path(raw["geometry.table"])
        x, h = load_geometry_table(path if path.is_absolute() else base_dir / path)
        return TabulatedGeometry(a=a, b=b, x_nodes=x, h_nodes=h)
    raise ConfigError(f"geometry.kind must be constant, bump or table, got '{kind}'")


def build_model(raw: Dict[str, str], base_dir: Path = Path(".")) -> ModelSpec:
    ions = IonPair(z1=_number(raw, "model.z1"), z2=_number(raw, "model.z2"), d=_number(raw, "model.d"),
                   lam=_number(raw, "model.lambda"))
    boundary = BoundaryData(V=_number(raw, "model.V"), l1=_number(raw, "model.l1"), l2=_number(raw, "model.l2"),
                            r1=_number(raw, "model.r1"), r2=_number(raw, "model.r2"))
    return ModelSpec(ions=ions, boundary=boundary, geometry=build_geometry(raw, base_dir),
                     charge=PermanentCharge(Q2=_number(raw, "model.Q2")), epsilon=_number(raw, "model.epsilon"))


def parse_config(values: Dict[str, Optional[str]], source: Optional[Path] = None,
                 command: Optional[str] = None) -> ExperimentConfig:
    """Validate a raw key/value mapping against the schema and fill in defaults.

    A command given on the command line takes precedence over the `command` key.
    """
    unknown = sorted(k for k in values if k != "command" and k not in DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
    written = (values.get("command") or "").strip()
    if command and written and written != command:
        logger.warning(f"config asks for '{written}', running '{command}' as given on the command line")
    command = command or written
    if command not in COMMANDS:
        raise ConfigError(f"command must be one of {', '.join(COMMANDS)}, got '{command}'")
    raw = {**DEFAULTS, **{k: ("" if v is None else v) for k, v in values.items() if k != "command"}}
    base_dir = source.parent if source is not None else Path(".")

    model = build_model(raw, base_dir)
    solver = SolverOptions(tol=_number(raw, "solver.tol"), max_iter=_integer(raw, "solver.max_iter"),
                           profile_points=_integer(raw, "solver.profile_points"))

    parameter = raw["sweep.parameter"].strip()
    if parameter not in SWEEP_PARAMETERS:
        raise ConfigError(f"sweep.parameter must be one of {', '.join(SWEEP_PARAMETERS)}, got '{parameter}'")
    explicit = _number_list(raw, "sweep.values")
    if explicit:
        grid = _monotone(explicit, "sweep.values")
    else:
        grid = _monotone(np.linspace(_number(raw, "sweep.start"), _number(raw, "sweep.stop"),
                                     _integer(raw, "sweep.points")), "sweep grid")
    sweep = SweepConfig(parameter=parameter, grid=grid)

    eps_grid = _number_list(raw, "oracle.eps_grid")
    if not eps_grid or any(e <= 0 for e in eps_grid):
        raise ConfigError("oracle.eps_grid must list positive values")
    _monotone(eps_grid, "oracle.eps_grid")
    d_grid = _number_list(raw, "oracle.d_grid")
    if any(d < 0 for d in d_grid):
        raise ConfigError("oracle.d_grid must list non-negative values")
    _monotone(d_grid, "oracle.d_grid")
    oracle = OracleConfig(eps_grid=eps_grid, d_grid=d_grid,
                          bvp=BvpOptions(n=_integer(raw, "oracle.mesh_nodes"), tol=_number(raw, "oracle.tol")),
                          max_relative_error=_number(raw, "oracle.max_relative_error"),
                          min_d_order=_number(raw, "oracle.min_d_order"))

    mode = raw["zero_current.mode"].strip()
    if mode not in ("reversal", "verification"):
        raise ConfigError(f"zero_current.mode must be reversal or verification, got '{mode}'")
    V_min, V_max = _number(raw, "zero_current.V_min"), _number(raw, "zero_current.V_max")
    if not V_min < V_max:
        raise ConfigError("zero_current.V_min must be below zero_current.V_max")
    zero_current = ZeroCurrentConfig(mode=mode, V_grid=np.linspace(V_min, V_max, _integer(raw, "zero_current.V_points")),
                                     fd_step=_number(raw, "zero_current.fd_step"))

    formats = tuple(f.strip() for f in raw["output.formats"].split(",") if f.strip())
    bad = [f for f in formats if f not in OUTPUT_FORMATS]
    if bad:
        raise ConfigError(f"output.formats may only contain {', '.join(OUTPUT_FORMATS)}, got {', '.join(bad)}")
    output = OutputConfig(directory=Path(raw["output.dir"]), formats=formats)

    return ExperimentConfig(command=command, model=model, solver=solver, sweep=sweep, oracle=oracle,
                            zero_current=zero_current, output=output, source=source,
                            raw={"command": command, **raw})


def load_config(path, out_dir: Optional[str] = None, command: Optional[str] = None) -> ExperimentConfig:
    """Read and validate an experiment file; out_dir overrides output.dir"""
    path = Path(path)
    if not path.is_file():
        raise IoError(f"config file not found: {path}")
    try:
        values = dotenv_values(path)
        config = parse_config(dict(values), source=path, command=command)
    except ConfigError as e:
        logging.error(f"Invalid configuration {path}: {str(e)}")
        raise
    if out_dir is not None:
        config.output.directory = Path(out_dir)
        config.raw["output.dir"] = str(out_dir)
    logger.info(f"loaded {config.command} config from {path}")
    return config


def log_level_from_env(verbose: bool = False) -> int:
    """Root log level: --verbose forces DEBUG, otherwise IONFLUX_LOG_LEVEL (default INFO)"""
    if verbose:
        return logging.DEBUG
    name = os.getenv("IONFLUX_LOG_LEVEL", "INFO").upper()
    level = logging.getLevelName(name)
    if not isinstance(level, int):
        raise ConfigError(f"IONFLUX_LOG_LEVEL must be a logging level name, got '{name}'")
    return level
