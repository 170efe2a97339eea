import math

import numpy as np
import pytest

from ionflux.bvp_oracle import (BvpOptions, Mesh, StackedSystem, asymptotic_comparison, graded_unit_grid,
                                jump_indicator, linear_guess, peak_width, solve_bvp)
from ionflux.config import OracleConfig
from ionflux.errors import MeshTooCoarse
from ionflux.model_core import ConstantGeometry, Profile

FAST = BvpOptions(n=600)


def test_graded_grid_clusters_at_both_ends():
    s = graded_unit_grid(300, 0.05)
    assert s[0] == 0.0 and s[-1] == 1.0
    assert np.all(np.diff(s) > 0)
    assert np.diff(s)[0] < np.diff(s)[len(s) // 2]


def test_graded_mesh_keeps_the_junctions():
    geometry = ConstantGeometry(a=0.3, b=0.7)
    mesh = Mesh.graded(geometry, 1e-3, n=900)
    assert 0.3 in mesh.nodes and 0.7 in mesh.nodes
    assert np.all(np.diff(mesh.nodes) > 0)
    assert mesh.layer_resolution(1e-3) >= 4
    s = mesh.stacked_grid()
    assert s[0] == 0.0 and s[-1] == 1.0


def test_mesh_invariants():
    with pytest.raises(MeshTooCoarse):
        Mesh(nodes=np.linspace(0.0, 1.0, 11), a=1.0 / 3.0, b=2.0 / 3.0)
    with pytest.raises(MeshTooCoarse):
        Mesh(nodes=np.array([0.0, 0.5, 1.0]), a=0.5, b=0.5)


def test_coarse_mesh_is_rejected_before_solving(make_model):
    with pytest.raises(MeshTooCoarse):
        solve_bvp(make_model(eps=1e-4), opts=BvpOptions(n=30))


def test_jump_indicator_ignores_the_field():
    y = np.zeros((12, 3))
    y[1, 2] = 5.0
    y[6, 1] = 2.0
    assert jump_indicator(y) == 2.0


def test_linear_guess_meets_the_boundary_conditions(make_model):
    model = make_model(V=0.5, l=(2.0, 2.0), r=(1.0, 1.0), Q=0.5)
    s = np.linspace(0.0, 1.0, 11)
    y, p = linear_guess(model, s, 1e-2)
    residual = StackedSystem(model, 1e-2).bc(y[:, 0], y[:, -1], p)
    assert np.max(np.abs(residual)) < 1e-12
    assert p[0] == pytest.approx(1.0 + 0.5 / math.log(2.0))


def test_equilibrium_carries_no_flux(make_model):
    profile = solve_bvp(make_model(V=0.0, Q=0.5, eps=1e-2), opts=FAST)
    assert profile.J1 == pytest.approx(0.0, abs=1e-5)
    assert profile.J2 == pytest.approx(0.0, abs=1e-5)
    assert profile.meta["stages"] == [1e-1, 3e-2, 1e-2]
    assert set(profile.region) == {"left", "middle", "right"}
    assert np.all(profile.c1 > 0) and np.all(profile.c2 > 0)


def test_uncharged_channel_approaches_the_neutral_fluxes(make_model):
    profile = solve_bvp(make_model(V=1.0, l=(2.0, 2.0), r=(1.0, 1.0), eps=1e-3), opts=FAST)
    ratio = math.log(2.0)
    assert profile.J1 == pytest.approx(1.0 + 1.0 / ratio, rel=1e-2)
    assert profile.J2 == pytest.approx(1.0 - 1.0 / ratio, rel=1e-2)
    assert profile.phi[np.argmin(profile.x)] == pytest.approx(1.0)
    assert profile.meta["source"] == "collocation"


def test_small_asymptotic_comparison(make_model):
    model = make_model(V=0.5, l=(2.0, 2.0), r=(1.0, 1.0), Q=0.5)
    comparison = asymptotic_comparison(model, [1e-2, 3e-2], [0.0], bvp_opts=FAST)
    table = comparison.table
    assert len(table) == 4
    assert list(table.columns) == ["epsilon", "d", "flux", "bvp", "asymptotic", "error", "increment_error"]
    assert list(table["epsilon"].unique()) == [3e-2, 1e-2]
    assert np.all(table["increment_error"] == 0.0)
    assert set(comparison.eps_monotone) == {"J1", "J2"}
    assert set(comparison.layer_width) == {3e-2, 1e-2}
    assert all(w > 0 for w in comparison.layer_width.values())
    assert comparison.as_dict()["rows"] == 4


def test_peak_width_of_a_gaussian():
    x = np.linspace(0.0, 1.0, 1001)
    u = np.exp(-(((x - 0.3) / 0.01) ** 2))
    profile = Profile(x=x, phi=np.zeros_like(x), c1=np.ones_like(x), c2=np.ones_like(x), J1=0.0, J2=0.0, u=u)
    assert peak_width(profile, 0.3) == pytest.approx(0.02 * math.sqrt(math.log(2.0)), abs=2e-3)


def test_charged_channel_matches_the_expansion_in_d(make_model):
    thresholds = OracleConfig()
    model = make_model(V=0.5, l=(2.0, 2.0), r=(1.0, 1.0), Q=0.5)
    comparison = asymptotic_comparison(model, [3e-3, 1e-3], [0.0, 0.01, 0.02, 0.04], bvp_opts=FAST)
    by_d = comparison.relative_errors()
    assert sorted(by_d) == [0.0, 0.01, 0.02, 0.04]
    assert max(by_d.values()) <= thresholds.max_relative_error
    assert all(order >= thresholds.min_d_order for order in comparison.d_order.values())
    assert comparison.as_dict()["relative_error"]["0.02"] == by_d[0.02]
