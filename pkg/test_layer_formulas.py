import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from ionflux.errors import BracketFailure, DegenerateLayer, InvalidLimits, NoBracket
from ionflux.layer_formulas import (ALPHA, OMEGA, JunctionValues, fast_layer_rhs, first_integrals, layer_limit,
                                    left_outer_limit, middle_phi0_root, right_outer_limit, shoot_exact_layer)
from ionflux.model_core import BoundaryData, IonPair
from ionflux.roots import bracket_upward, expand_bracket, safeguarded_newton

START = JunctionValues(phi0=0.3, c10=1.0, c20=1.0)
Q = 0.5


def _ions(d=0.0):
    return IonPair(z1=1.0, z2=-2.0, d=d, lam=0.7)


def _shoot(d, orientation=OMEGA):
    return shoot_exact_layer(START.phi0, START.c10, START.c20, Q, orientation, _ions(d))


def test_middle_phi0_root_is_neutral(ions12):
    phi = middle_phi0_root(START, Q, ions12)
    t = START.phi0 - phi
    charge = START.c10 * math.exp(t) - 2.0 * START.c20 * math.exp(-2.0 * t) + Q
    assert charge == pytest.approx(0.0, abs=1e-10)


def test_middle_phi0_root_without_charge(ions11):
    jv = JunctionValues(phi0=0.0, c10=4.0, c20=1.0)
    phi = middle_phi0_root(jv, 0.0, ions11)
    assert phi == pytest.approx(math.log(4.0) / 2.0)


@pytest.mark.parametrize("orientation", [OMEGA, ALPHA])
def test_zeroth_order_limit_matches_shooting(orientation):
    limit = layer_limit(START, Q, orientation, _ions())
    exact = _shoot(0.0, orientation)
    assert limit.phi0 == pytest.approx(exact["phi"], abs=1e-9)
    assert limit.c10 == pytest.approx(exact["c1"], rel=1e-8)
    assert limit.c20 == pytest.approx(exact["c2"], rel=1e-8)
    assert limit.u0 == pytest.approx(exact["u"], rel=1e-7)


def test_first_order_limit_matches_d_derivative_of_shooting():
    h = 1e-3
    base, half, full = _shoot(0.0), _shoot(h / 2), _shoot(h)
    limit = layer_limit(START, Q, OMEGA, _ions())
    for key, first in (("phi", limit.phi1), ("c1", limit.c11), ("c2", limit.c21), ("u", limit.u1)):
        coarse = (full[key] - base[key]) / h
        fine = (half[key] - base[key]) / (h / 2)
        assert 2.0 * fine - coarse == pytest.approx(first, rel=1e-4, abs=1e-5), key


def test_limit_is_on_the_slow_manifold(ions12):
    limit = layer_limit(JunctionValues(0.1, 2.0, 0.4, phi1=0.2, c11=0.3, c21=-0.1), Q, ALPHA, ions12)
    rho0, rho1 = limit.charge_residuals(Q, ions12)
    assert rho0 == pytest.approx(0.0, abs=1e-10)
    assert rho1 == pytest.approx(0.0, abs=1e-12)


def test_first_integrals_conserved_along_fast_flow(ions12):
    y0 = [0.3, 0.2, 1.0, 0.8, 0.1, -0.05, 0.2, 0.1]
    sol = solve_ivp(fast_layer_rhs, (0.0, 2.0), y0, args=(Q, ions12), method="DOP853",
                    rtol=1e-12, atol=1e-13, dense_output=True)
    assert sol.success
    samples = sol.sol(np.linspace(0.0, 2.0, 21))
    integrals = first_integrals(samples, Q, ions12)
    for name, values in integrals.items():
        assert np.ptp(values) < 1e-8 * max(1.0, np.max(np.abs(values))), name


def test_absent_layer_returns_the_junction_value(ions11):
    jv = JunctionValues(phi0=0.4, c10=1.5, c20=1.5)
    limit = layer_limit(jv, 0.0, OMEGA, ions11)
    assert limit.phi0 == pytest.approx(0.4)
    assert limit.c10 == pytest.approx(1.5)
    assert (limit.u0, limit.u1, limit.phi1, limit.c11) == pytest.approx((0.0, 0.0, 0.0, 0.0), abs=1e-12)


def test_off_manifold_start_with_forced_end_is_degenerate(ions11):
    with pytest.raises(DegenerateLayer):
        layer_limit(JunctionValues(0.0, 1.0, 1.0, 0.0, 1.0, 0.0), 0.5, OMEGA, ions11, phi0_end=0.0)


def test_nonpositive_junction_concentration():
    with pytest.raises(InvalidLimits):
        JunctionValues(phi0=0.0, c10=-1.0, c20=1.0)


def test_boundary_layers_vanish_for_neutral_data(ions11):
    bd = BoundaryData(V=1.2, l1=2.0, l2=2.0, r1=1.0, r2=1.0)
    left, right = left_outer_limit(bd, ions11), right_outer_limit(bd, ions11)
    assert (left.phi0, left.c10, left.u0) == pytest.approx((1.2, 2.0, 0.0), abs=1e-12)
    assert (right.phi0, right.c20, right.u0) == pytest.approx((0.0, 1.0, 0.0), abs=1e-12)


def test_expand_bracket_and_newton():
    lo, hi = expand_bracket(lambda x: x - 5.0, 0.0)
    assert (lo, hi) == (-8.0, 8.0)
    assert safeguarded_newton(lambda x: x * x - 2.0, lambda x: 2.0 * x, 0.0, 2.0) == pytest.approx(math.sqrt(2.0))
    with pytest.raises(BracketFailure):
        expand_bracket(lambda x: x * x + 1.0, 0.0, max_expansions=5)
    with pytest.raises(BracketFailure):
        safeguarded_newton(lambda x: x * x + 1.0, lambda x: 2.0 * x, -1.0, 1.0)


def test_bracket_upward():
    assert bracket_upward(lambda x: x - 10.0, 1.0, 2.0) == (8.0, 16.0)
    with pytest.raises(NoBracket):
        bracket_upward(lambda x: 1.0, 1.0, 2.0, max_expansions=3)


OFF_MANIFOLD = JunctionValues(phi0=0.3, c10=1.0, c20=0.8)
VALENCES = {"1:1": (1.0, -1.0), "1:2": (1.0, -2.0)}


@pytest.mark.parametrize("charge", [0.0, 1.0, -1.0])
@pytest.mark.parametrize("valence", sorted(VALENCES))
def test_layer_limits_match_shooting_across_valences(valence, charge):
    z1, z2 = VALENCES[valence]

    def shoot(d, orientation):
        ions = IonPair(z1=z1, z2=z2, d=d, lam=0.7)
        return shoot_exact_layer(OFF_MANIFOLD.phi0, OFF_MANIFOLD.c10, OFF_MANIFOLD.c20, charge, orientation, ions)

    for orientation in (OMEGA, ALPHA):
        limit = layer_limit(OFF_MANIFOLD, charge, orientation, IonPair(z1=z1, z2=z2, lam=0.7))
        exact = shoot(0.0, orientation)
        assert limit.phi0 == pytest.approx(exact["phi"], abs=1e-9)
        assert limit.c10 == pytest.approx(exact["c1"], rel=1e-8)
        assert limit.c20 == pytest.approx(exact["c2"], rel=1e-8)
        assert limit.u0 == pytest.approx(exact["u"], rel=1e-7)

    h = 1e-3
    base, half, full = shoot(0.0, OMEGA), shoot(h / 2, OMEGA), shoot(h, OMEGA)
    limit = layer_limit(OFF_MANIFOLD, charge, OMEGA, IonPair(z1=z1, z2=z2, lam=0.7))
    for key, first in (("phi", limit.phi1), ("c1", limit.c11), ("c2", limit.c21), ("u", limit.u1)):
        extrapolated = 2.0 * (half[key] - base[key]) / (h / 2) - (full[key] - base[key]) / h
        assert extrapolated == pytest.approx(first, rel=1e-4, abs=1e-5), key
