import math

import pytest
from scipy.integrate import quad, solve_ivp

from ionflux.errors import InvalidLimits, SigmaVanishes
from ionflux.layer_formulas import LayerLimit
from ionflux.model_core import ConstantGeometry, IonPair
from ionflux.regular_layers import (OuterSolutionMiddle, integral_identities, integral_identities_left, neutral_outer,
                                    neutral_single_region_solution, outer_left)


def _limit(phi0, c10, phi1=0.0, c11=0.0):
    return LayerLimit(phi0=phi0, phi1=phi1, c10=c10, c11=c11, c20=c10, c21=c11, u0=0.0, u1=0.0)


def _quad(fn, upper):
    value, _ = quad(fn, 0.0, upper, epsabs=1e-14, epsrel=1e-12, limit=200)
    return value


@pytest.mark.parametrize("c_end", [0.5, 1.5 + 1e-6])
def test_integral_identities_against_quadrature(c_end):
    c_start, dH, H = 1.5, 1.0 / 3.0, 0.2
    s = (c_end - c_start) / dH
    c = lambda h: c_start + s * h
    G = integral_identities(c_start, c_end, dH, H)
    assert G["G0"] == pytest.approx(_quad(c, H), rel=1e-12)
    assert G["G1"] == pytest.approx(_quad(lambda h: 1.0 / c(h), H), rel=1e-10)
    assert G["G2"] == pytest.approx(_quad(lambda h: 1.0 / c(h) ** 2, H), rel=1e-10)
    assert G["G3"] == pytest.approx(_quad(lambda h: h / c(h) ** 2, H), rel=1e-8)


def test_left_identities_follow_the_channel_geometry(ions11):
    geometry = ConstantGeometry(a=1.0 / 3.0, b=2.0 / 3.0, h0=2.0)
    outer = outer_left((_limit(0.4, 2.0), _limit(0.1, 1.2)), geometry, ions11)
    G = integral_identities_left(outer, geometry, 0.25)
    assert G["G0"] == pytest.approx(_quad(outer.c10, 0.125), rel=1e-10)
    assert G["G1"] == pytest.approx(_quad(lambda h: 1.0 / outer.c10(h), 0.125), rel=1e-10)


def test_neutral_fluxes_match_the_goldman_form(make_model):
    V, l, r = 0.7, 2.0, 1.0
    outer = neutral_single_region_solution(make_model(V=V, l=(l, l), r=(r, r)))
    ratio = math.log(l / r)
    assert outer.J10 == pytest.approx((l - r) * (1.0 + V / ratio), rel=1e-12)
    assert outer.J20 == pytest.approx((l - r) * (1.0 - V / ratio), rel=1e-12)


def test_neutral_outer_hits_both_limits():
    ions = IonPair(z1=1.0, z2=-1.0, lam=1.3)
    start = _limit(0.5, 2.0, phi1=0.1, c11=0.3)
    end = _limit(0.0, 1.0, phi1=-0.2, c11=-0.1)
    outer = neutral_outer(start, end, 0.1, 0.6, ions)
    assert outer.dH == pytest.approx(0.5)
    assert outer.c10(outer.dH) == pytest.approx(end.c10)
    assert outer.phi0(outer.dH) == pytest.approx(end.phi0, abs=1e-12)
    assert outer.c11(outer.dH) == pytest.approx(end.c11, abs=1e-12)
    assert outer.phi1(outer.dH) == pytest.approx(end.phi1, abs=1e-10)
    assert outer.phi1(0.0) == pytest.approx(start.phi1)
    assert ions.z1 * outer.J10 + ions.z2 * outer.J20 == pytest.approx(outer.I0)


def test_neutral_potential_carries_the_current():
    ions = IonPair(z1=1.0, z2=-1.0, lam=1.0)
    outer = neutral_outer(_limit(0.5, 2.0), _limit(0.0, 1.0), 0.0, 1.0, ions)
    H, step = 0.37, 1e-6
    gradient = (outer.phi0(H + step) - outer.phi0(H - step)) / (2 * step)
    assert -ions.alpha * outer.c10(H) * gradient == pytest.approx(outer.I0, rel=1e-7)


def test_neutral_outer_rejects_bad_limits(ions11):
    with pytest.raises(InvalidLimits):
        neutral_outer(_limit(0.0, 1.0), _limit(0.0, 1.0), 0.5, 0.5, ions11)


@pytest.fixture(params=[(0.8, -0.3), (0.25, -0.245)], ids=["regular", "small-k"])
def middle(request, ions12):
    J10, J20 = request.param
    return OuterSolutionMiddle(ions=ions12, Q=0.5, phi0_am=0.1, c10_am=1.2, J10=J10, J20=J20, y_star=0.5, H_start=0.2)


def test_middle_concentration_solves_its_ode(middle):
    y, step = 0.3, 1e-6
    derivative = (middle.c10(y + step) - middle.c10(y - step)) / (2 * step)
    expected = middle.k * middle.c10(y) + middle.ions.z2 * middle.Q * middle.J10
    assert derivative == pytest.approx(expected, rel=1e-7)
    assert middle.c10(0.0) == pytest.approx(middle.c10_am)
    assert middle.phi0(0.5) == pytest.approx(0.1 - middle.I0 * 0.5)


def test_middle_integrals_against_quadrature(middle):
    y, k = 0.5, middle.k
    c = lambda s: middle.c10(s)
    assert middle.S1(y) == pytest.approx(_quad(c, y), rel=1e-10)
    assert middle.S2(y) == pytest.approx(_quad(lambda s: c(s) ** 2, y), rel=1e-10)
    assert middle.S3(y) == pytest.approx(_quad(lambda s: c(s) * math.exp(-k * s), y), rel=1e-10)
    K = middle.k_integrals(y)
    for n, Kn in enumerate(K):
        assert Kn == pytest.approx(_quad(lambda s: c(s) ** n * math.exp(-k * s), y), rel=1e-10), n
    z1, I0 = middle.ions.z1, middle.I0
    sz = _quad(lambda s: z1 * I0 * c(s) / middle.sigma(s), y)
    assert middle.Sz(y) == pytest.approx(sz, rel=1e-9, abs=1e-12)
    assert middle.H(y) - middle.H_start == pytest.approx(_quad(middle.sigma, y), rel=1e-10)


def test_first_order_concentration_integrating_factor(middle):
    solution = middle.with_first_order(phi1_am=0.05, c11_am=0.2, J11=0.1, J21=-0.4)
    _, p = solution._c11_rates()
    k, y, step = solution.k, 0.3, 1e-6

    def weighted(s):
        return solution.sigma(s) * math.exp(-k * s) * solution.c11(s)

    derivative = (weighted(y + step) - weighted(y - step)) / (2 * step)
    expected = sum(pn * solution.c10(y) ** n for n, pn in enumerate(p)) * math.exp(-k * y)
    assert derivative == pytest.approx(expected, rel=1e-6, abs=1e-9)
    assert solution.c11(0.0) == pytest.approx(0.2)
    assert solution.phi1(0.0) == pytest.approx(0.05)


def test_j1_relation_is_independent_of_the_start_value(middle):
    first = middle.with_first_order(phi1_am=0.05, c11_am=0.2, J11=0.1, J21=-0.4)
    second = middle.with_first_order(phi1_am=0.05, c11_am=-0.7, J11=0.1, J21=-0.4)
    assert first.j1_relation_residual(0.5) == pytest.approx(second.j1_relation_residual(0.5), abs=1e-9)


@pytest.mark.parametrize("y", [0.2, 0.5])
def test_j1_relation_holds_along_the_first_order_solution(middle, y):
    solution = middle.with_first_order(phi1_am=0.05, c11_am=0.2, J11=0.1, J21=-0.4)
    lhs, rhs = solution.j1_relation_terms(y)
    assert len(rhs) == 10
    assert solution.j1_relation_residual(y, relative=True) == pytest.approx(0.0, abs=1e-9)
    assert abs(rhs[8]) > 1e-4
    assert lhs - sum(rhs[:8]) - rhs[9] == pytest.approx(rhs[8], rel=1e-6)


def test_j1_relation_sees_a_wrong_end_value(middle):
    solution = middle.with_first_order(phi1_am=0.05, c11_am=0.2, J11=0.1, J21=-0.4)
    exact = solution.j1_relation_residual(0.5)
    shifted = solution.j1_relation_residual(0.5, c11_end=float(solution.c11(0.5)) + 1e-3)
    assert shifted - exact == pytest.approx(-1e-3, rel=1e-9)


def test_first_order_profiles_solve_their_odes(middle):
    solution = middle.with_first_order(phi1_am=0.05, c11_am=0.2, J11=0.1, J21=-0.4)
    ions, Q, I0 = solution.ions, solution.Q, solution.I0
    z1, z2, lam = ions.z1, ions.z2, ions.lam
    (r0, r1, r2), _ = solution._c11_rates()

    def rhs(y, state):
        c11, _ = state
        c, sig = float(solution.c10(y)), float(solution.sigma(y))
        dc11 = (r0 + r1 * c + r2 * c ** 2
                + (-2 * (1 - lam) * z1 ** 2 * I0 * Q * c ** 2 + 2 * lam * z1 * I0 * Q ** 2 * c
                   - z1 * z2 * Q * I0 * c11) / sig)
        dphi1 = (I0 / sig * (ions.alpha * c11 + 2 * (1 - lam) * z1 * c * Q - 2 * lam * Q ** 2)
                 + ((1 - lam) * z1 * c - lam * Q) * solution.T0 - solution.I1 - solution.Lambda0 * Q)
        return [dc11, dphi1]

    ys = [0.25, 0.5]
    sol = solve_ivp(rhs, (0.0, 0.5), [0.2, 0.05], t_eval=ys, method="DOP853", rtol=1e-11, atol=1e-13)
    assert sol.success
    for i, y in enumerate(ys):
        assert sol.y[0, i] == pytest.approx(solution.c11(y), rel=1e-8, abs=1e-10)
        assert sol.y[1, i] == pytest.approx(solution.phi1(y), rel=1e-8, abs=1e-10)


def test_sigma_vanishing_is_reported(ions12):
    middle = OuterSolutionMiddle(ions=ions12, Q=-3.0, phi0_am=0.0, c10_am=0.5, J10=0.0, J20=0.0, y_star=1.0)
    with pytest.raises(SigmaVanishes):
        middle.sigma(0.5)
