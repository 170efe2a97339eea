import json

import pandas as pd
import pytest

from app import main
from ionflux.plotting import sign_changes

CHARGED_SALT = ["model.l1=2", "model.l2=2", "model.r1=1", "model.r2=1", "model.Q2=0.5"]


def _read_json(path):
    return json.loads(path.read_text())


def test_solve_equilibrium(write_config, tmp_path):
    path = write_config("eq.env", ["command=solve", "model.Q2=0.5", "model.d=0.05"])
    out = tmp_path / "eq"
    assert main(["solve", "--config", str(path), "--out", str(out)]) == 0
    fluxes = _read_json(out / "fluxes.json")
    assert fluxes["schema_version"] == 1
    for name in ("J10", "J20", "J11", "J21"):
        assert fluxes["fluxes"][name] == pytest.approx(0.0, abs=1e-8)
    for name in ("orbit.csv", "state.json", "profile.svg", "run_report.json"):
        assert (out / name).is_file(), name
    report = _read_json(out / "run_report.json")
    assert report["status"] == "ok"
    assert {"orbit.csv", "fluxes.json", "state.json", "profile.svg"} <= {f["file"] for f in report["files"]}
    orbit = pd.read_csv(out / "orbit.csv")
    assert {"region", "x", "phi", "c1", "c2"} <= set(orbit.columns)


def test_configuration_errors_exit_with_two(write_config, tmp_path):
    path = write_config("bad.env", ["command=solve", "model.vv=1"])
    assert main(["solve", "--config", str(path), "--out", str(tmp_path / "bad")]) == 2


def test_missing_config_exits_with_four(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "none.env")]) == 4


def test_solve_failures_exit_with_three(write_config, tmp_path):
    path = write_config("coarse.env", ["command=validate", *CHARGED_SALT, "model.V=0.5",
                                       "oracle.eps_grid=1e-4", "oracle.d_grid=0", "oracle.mesh_nodes=30"])
    out = tmp_path / "coarse"
    assert main(["validate", "--config", str(path), "--out", str(out)]) == 3
    report = _read_json(out / "run_report.json")
    assert report["status"] == "failed: MeshTooCoarse"


def test_sweep_is_deterministic(write_config, tmp_path):
    path = write_config("sweep.env", ["command=sweep", *CHARGED_SALT, "sweep.start=-1", "sweep.stop=1",
                                      "sweep.points=5", "output.formats=csv,json"])
    first, second = tmp_path / "one", tmp_path / "two"
    assert main(["sweep", "--config", str(path), "--out", str(first)]) == 0
    assert main(["sweep", "--config", str(path), "--out", str(second)]) == 0
    frame = pd.read_csv(first / "sweep.csv")
    assert len(frame) == 5
    assert list(frame.columns) == ["V", "J10", "J20", "J11", "J21", "I0", "I1", "status"]
    assert (frame["status"] == "ok").all()
    assert (first / "sweep.csv").read_bytes() == (second / "sweep.csv").read_bytes()
    assert not (first / "iv_curve.svg").exists()


def test_sign_changes():
    assert sign_changes([0.0, 1.0, 2.0, 3.0], [1.0, -1.0, -1.0, 0.0]) == [0.5, 3.0]
    assert sign_changes([0.0, 1.0], [1.0, 2.0]) == []


def test_validate_verdict_covers_every_diameter(write_config, tmp_path):
    path = write_config("validate.env", ["command=validate", *CHARGED_SALT, "model.V=0.5",
                                         "oracle.eps_grid=1e-2,3e-3", "oracle.d_grid=0,0.02",
                                         "oracle.mesh_nodes=600", "output.formats=csv,json"])
    out = tmp_path / "validate"
    assert main(["validate", "--config", str(path), "--out", str(out)]) == 0
    verdict = _read_json(out / "comparison.json")["verdict"]
    assert set(verdict["relative_error_by_d"]) == {"0.0", "0.02"}
    assert verdict["relative_error_at_smallest_eps"] == max(verdict["relative_error_by_d"].values())
    assert verdict["relative_error_ok"] == (verdict["relative_error_at_smallest_eps"] <= 0.02)
    table = pd.read_csv(out / "comparison.csv")
    assert sorted(table["d"].unique()) == [0.0, 0.02]
