import math

import numpy as np
import pytest
from scipy.integrate import quad

from ionflux.errors import ConfigError, PackingOverflow
from ionflux.model_core import (BoundaryData, BumpGeometry, ConstantGeometry, FluxExpansion, IonPair,
                                PhysicalConstants, TabulatedGeometry, dimensionless_rescale, dimensionless_unrescale,
                                epsilon_from_constants, eval_fg, exprel, exprel2, hs_chemical_potential,
                                hs_chemical_potential_gradient, log_mean, sigma, slow_manifold_c2, w_combination)


def test_eval_fg_without_ion_size(ions11):
    f1, f2, g1, g2 = eval_fg(1.3, 0.7, 0.4, -0.2, ions11)
    assert f1 == pytest.approx(1.3)
    assert f2 == pytest.approx(-0.7)
    assert g1 == pytest.approx(0.4)
    assert g2 == pytest.approx(-0.2)


def test_eval_fg_vanishing_concentrations():
    ions = IonPair(z1=1.0, z2=-2.0, d=0.1, lam=0.6)
    f1, f2, g1, g2 = eval_fg(0.0, 0.0, 0.5, 0.25, ions)
    assert (f1, f2) == (0.0, 0.0)
    assert g1 == pytest.approx(0.5)
    assert g2 == pytest.approx(0.25)


def test_eval_fg_linear_in_fluxes():
    ions = IonPair(z1=2.0, z2=-1.0, d=0.05, lam=1.4)
    _, _, g1a, g2a = eval_fg(0.8, 1.1, 1.0, 0.0, ions)
    _, _, g1b, g2b = eval_fg(0.8, 1.1, 0.0, 1.0, ions)
    _, _, g1, g2 = eval_fg(0.8, 1.1, 0.3, -0.9, ions)
    assert g1 == pytest.approx(0.3 * g1a - 0.9 * g1b)
    assert g2 == pytest.approx(0.3 * g2a - 0.9 * g2b)


def test_hs_gradient_matches_finite_difference():
    ions = IonPair(z1=1.0, z2=-1.0, d=0.08, lam=1.3)
    c1, c2, step = 1.2, 0.9, 1e-6
    for dc1, dc2 in ((1.0, 0.0), (0.0, 1.0), (0.4, -0.7)):
        plus = hs_chemical_potential(c1 + step * dc1, c2 + step * dc2, ions)
        minus = hs_chemical_potential(c1 - step * dc1, c2 - step * dc2, ions)
        numeric = [(p - m) / (2 * step) for p, m in zip(plus, minus)]
        analytic = hs_chemical_potential_gradient(c1, c2, dc1, dc2, ions)
        assert analytic[0] == pytest.approx(numeric[0], rel=1e-6)
        assert analytic[1] == pytest.approx(numeric[1], rel=1e-6)


def test_hs_potential_packing_overflow():
    ions = IonPair(d=0.5, lam=1.0)
    with pytest.raises(PackingOverflow):
        hs_chemical_potential(1.5, 1.0, ions)


def test_ion_pair_validation():
    with pytest.raises(ConfigError):
        IonPair(z1=-1.0, z2=-1.0)
    with pytest.raises(ConfigError):
        IonPair(d=-0.1)
    with pytest.raises(ConfigError):
        IonPair(lam=0.0)


def test_boundary_electroneutrality(ions11, ions12):
    assert BoundaryData(V=1.0, l1=2.0, l2=2.0, r1=1.0, r2=1.0).is_electroneutral(ions11)
    assert not BoundaryData(l1=1.0, l2=1.0).is_electroneutral(ions12)
    assert BoundaryData(l1=2.0, l2=1.0, r1=1.0, r2=0.5).is_electroneutral(ions12)
    with pytest.raises(ConfigError):
        BoundaryData(l1=0.0)


def test_scalar_helpers():
    assert exprel(0.0) == 1.0
    assert exprel(1e-3) == pytest.approx(math.expm1(1e-3) / 1e-3, rel=1e-14)
    assert exprel2(1e-3) == pytest.approx((math.expm1(1e-3) - 1e-3) / 1e-6, rel=1e-9)
    assert exprel2(2.0) == pytest.approx((math.exp(2.0) - 3.0) / 4.0)
    assert log_mean(2.0, 1.0) == pytest.approx(1.0 / math.log(2.0))
    assert log_mean(1.5, 1.5) == pytest.approx(1.5)


def test_slow_manifold_helpers(ions12):
    c2 = slow_manifold_c2(1.0, 0.5, ions12)
    assert ions12.z1 * 1.0 + ions12.z2 * c2 + 0.5 == pytest.approx(0.0)
    assert sigma(1.0, 0.5, ions12) == pytest.approx(3.0 * 1.0 + 2.0 * 0.5)
    assert w_combination(1.0, 0.0, ions12) == pytest.approx(1.0 + (0.7 + 2.0) / 3.0)


def test_constant_geometry_resistance():
    g = ConstantGeometry(a=0.25, b=0.75, h0=2.0)
    assert g.H(0.5) == pytest.approx(0.25)
    assert g.H1 == pytest.approx(0.5)
    assert g.x_of_H(0.125) == pytest.approx(0.25)
    with pytest.raises(ConfigError):
        ConstantGeometry(a=0.6, b=0.4)


def test_bump_geometry_resistance_against_quadrature():
    g = BumpGeometry(a=1.0 / 3.0, b=2.0 / 3.0, h0=1.0, depth=0.5, center=0.5, width=0.1)
    expected, _ = quad(lambda s: 1.0 / g.h(s), 0.0, 1.0, epsabs=1e-13, epsrel=1e-12, limit=200)
    assert g.H1 == pytest.approx(expected, rel=1e-10)
    assert g.H1 > 1.0
    assert g.x_of_H(g.Hb) == pytest.approx(g.b, abs=1e-10)


def test_tabulated_geometry_constant_table():
    g = TabulatedGeometry(a=0.3, b=0.6, x_nodes=(0.0, 0.5, 1.0), h_nodes=(2.0, 2.0, 2.0))
    assert g.Ha == pytest.approx(0.15)
    assert g.H1 == pytest.approx(0.5)
    with pytest.raises(ConfigError):
        TabulatedGeometry(x_nodes=(0.0, 0.8), h_nodes=(1.0, 1.0))


def test_with_parameter(make_model):
    model = make_model(V=0.5, Q=0.2)
    assert model.with_parameter("V", -1.0).boundary.V == -1.0
    assert model.with_parameter("Q", 0.7).Q == 0.7
    assert model.with_parameter("d", 0.03).ions.d == 0.03
    assert model.with_parameter("lambda", 0.5).ions.lam == 0.5
    assert model.with_parameter("epsilon", 1e-4).epsilon == 1e-4
    assert model.boundary.V == 0.5
    with pytest.raises(ConfigError):
        model.with_parameter("h0", 2.0)


def test_flux_expansion_combinations(ions12):
    f = FluxExpansion(J10=1.0, J20=0.5, J11=0.2, J21=-0.1)
    assert f.I0(ions12) == pytest.approx(0.0)
    assert f.I1(ions12) == pytest.approx(0.4)
    assert f.T0 == pytest.approx(1.5)
    assert f.current(ions12, d=0.1) == pytest.approx(0.04)
    assert f.J1(0.1) == pytest.approx(1.02)


def test_dimensionless_rescale_inverse():
    constants = PhysicalConstants(D1=1.3e-9, D2=2.0e-9)
    q = dimensionless_rescale(constants, 0.02, -0.05, 4e-9, 1e-9)
    Phi, V, J1, J2 = dimensionless_unrescale(constants, q)
    assert (Phi, V, J1, J2) == pytest.approx((0.02, -0.05, 4e-9, 1e-9), rel=1e-14)
    assert q.V == pytest.approx(-0.05 / constants.thermal_voltage)


def test_epsilon_grows_with_temperature():
    cold = epsilon_from_constants(PhysicalConstants(T=280.0))
    warm = epsilon_from_constants(PhysicalConstants(T=320.0))
    assert 0 < cold < warm
    assert warm / cold == pytest.approx(np.sqrt(320.0 / 280.0))
