"""Boundary and internal layer limits at x = 0, a, b, 1 through first order in d.

Every layer connects a junction value (preassigned or a boundary condition)
to a point on the slow manifold z1*c1 + z2*c2 + Q = 0 along the fast flow.
The zeroth-order concentrations are Boltzmann factors of the potential jump,
the first-order parts follow from the H11, H21 and H31 first integrals.

Orientation: OMEGA layers run from the junction value forward onto the
manifold (x = 0, entering the middle at a, entering the right region at b);
ALPHA layers run backward (leaving the left region at a, leaving the middle
at b, x = 1).
"""
import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from ionflux.errors import DegenerateLayer, InvalidLimits
from ionflux.model_core import BoundaryData, IonPair, eval_fg, exprel2
from ionflux.roots import expand_bracket, safeguarded_newton

logger = logging.getLogger(__name__)

OMEGA = 1
ALPHA = -1

# |phi0 jump| below which the layer is treated as absent
LAYER_ABSENT_TOL = 1e-8


@dataclass(frozen=True)
class JunctionValues:
    phi0: float
    c10: float
    c20: float
    phi1: float = 0.0
    c11: float = 0.0
    c21: float = 0.0

    def __post_init__(self):
        if not (self.c10 > 0 and self.c20 > 0):
            raise InvalidLimits(f"zeroth-order junction concentrations must be positive, "
                                f"got c10={self.c10}, c20={self.c20}")


@dataclass(frozen=True)
class LayerLimit:
    phi0: float
    phi1: float
    c10: float
    c11: float
    c20: float
    c21: float
    u0: float
    u1: float

    def charge_residuals(self, Q: float, ions: IonPair):
        return (ions.z1 * self.c10 + ions.z2 * self.c20 + Q,
                ions.z1 * self.c11 + ions.z2 * self.c21)

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)


def _charge(c10, c20, Q, ions: IonPair):
    return ions.z1 * c10 + ions.z2 * c20 + Q


def middle_phi0_root(jv: JunctionValues, Q: float, ions: IonPair, side: str = "a",
                     tol: float = 1e-12) -> float:
    """Potential phi0 solving z1*c10*e^{z1(phi0_j - phi0)} + z2*c20*e^{z2(phi0_j - phi0)} + Q = 0"""
    z1, z2 = ions.z1, ions.z2
    if Q == 0.0:
        return jv.phi0 - math.log(-z2 * jv.c20 / (z1 * jv.c10)) / (z1 - z2)

    def f(phi):
        t = jv.phi0 - phi
        return z1 * jv.c10 * math.exp(z1 * t) + z2 * jv.c20 * math.exp(z2 * t) + Q

    def df(phi):
        t = jv.phi0 - phi
        return -(z1 ** 2 * jv.c10 * math.exp(z1 * t) + z2 ** 2 * jv.c20 * math.exp(z2 * t))

    def f_safe(phi):
        try:
            return f(phi)
        except OverflowError:
            # only one exponential can blow up; its sign decides
            return math.copysign(math.inf, -(phi - jv.phi0))

    lo, hi = expand_bracket(f_safe, jv.phi0, delta=1.0)
    root = safeguarded_newton(f, df, lo, hi, tol=tol)
    logger.debug(f"middle phi0 root at {side}: {root:.15g} (bracket [{lo:.4g}, {hi:.4g}])")
    return root


def _end_concentrations(start: JunctionValues, phi0_end: float, ions: IonPair):
    delta = start.phi0 - phi0_end
    return start.c10 * math.exp(ions.z1 * delta), start.c20 * math.exp(ions.z2 * delta)


def _pressure_term(c1, c2, ions: IonPair):
    return (c1 + c2) * (c1 + ions.lam * c2)


def layer_limit(start: JunctionValues, Q: float, orientation: int, ions: IonPair,
                phi0_end: Optional[float] = None) -> LayerLimit:
    """Slow-manifold end point of the fast layer leaving `start`.

    phi0_end may be supplied when the caller already holds the zeroth-order
    potential on the manifold (the matching solver carries it as an unknown).
    """
    z1, z2, lam = ions.z1, ions.z2, ions.lam
    if phi0_end is None:
        phi0_end = middle_phi0_root(start, Q, ions)
    delta = start.phi0 - phi0_end
    c10e, c20e = _end_concentrations(start, phi0_end, ions)

    # u0^2 / 2 = sum_k c_ke (e^{-z_k delta} - 1 + z_k delta), written without cancellation
    energy = c10e * z1 ** 2 * exprel2(-z1 * delta) + c20e * z2 ** 2 * exprel2(-z2 * delta)
    u0 = -orientation * delta * math.sqrt(2.0 * energy)

    A = (z1 * start.phi1 + start.c11 / start.c10 + 2 * start.c10 + (lam + 1) * start.c20
         - 2 * c10e - (lam + 1) * c20e)
    B = (z2 * start.phi1 + start.c21 / start.c20 + 2 * lam * start.c20 + (lam + 1) * start.c10
         - 2 * lam * c20e - (lam + 1) * c10e)
    sigma_e = z1 ** 2 * c10e + z2 ** 2 * c20e
    phi1e = (z1 * c10e * A + z2 * c20e * B) / sigma_e
    c11e = c10e * (A - z1 * phi1e)
    c21e = c20e * (B - z2 * phi1e)

    numerator = (start.c11 + start.c21 + _pressure_term(start.c10, start.c20, ions)
                 - c11e - c21e - _pressure_term(c10e, c20e, ions) + Q * (phi1e - start.phi1))
    if abs(delta) < LAYER_ABSENT_TOL:
        scale = max(1.0, abs(start.c11), abs(start.c21), start.c10 ** 2, start.c20 ** 2)
        if abs(numerator) > 1e-6 * scale:
            raise DegenerateLayer(f"layer is absent (u0 = 0) but the first-order numerator is {numerator:.3e}")
        # linearised flow on the manifold: phi1'' = sigma_e (phi1 - phi1e)
        u1 = -orientation * math.sqrt(sigma_e) * (start.phi1 - phi1e)
    else:
        u1 = numerator / u0

    return LayerLimit(phi0=phi0_end, phi1=phi1e, c10=c10e, c11=c11e, c20=c20e, c21=c21e, u0=u0, u1=u1)


def left_outer_limit(bd: BoundaryData, ions: IonPair) -> LayerLimit:
    return layer_limit(JunctionValues(bd.V, bd.l1, bd.l2), 0.0, OMEGA, ions)


def internal_limit_left_of_a(jv: JunctionValues, ions: IonPair, phi0_end: Optional[float] = None) -> LayerLimit:
    return layer_limit(jv, 0.0, ALPHA, ions, phi0_end=phi0_end)


def middle_entry_limit(jv: JunctionValues, Q: float, ions: IonPair,
                       phi0_end: Optional[float] = None) -> LayerLimit:
    return layer_limit(jv, Q, OMEGA, ions, phi0_end=phi0_end)


def middle_exit_limit(jv: JunctionValues, Q: float, ions: IonPair,
                      phi0_end: Optional[float] = None) -> LayerLimit:
    return layer_limit(jv, Q, ALPHA, ions, phi0_end=phi0_end)


def right_entry_limit(jv: JunctionValues, ions: IonPair, phi0_end: Optional[float] = None) -> LayerLimit:
    return layer_limit(jv, 0.0, OMEGA, ions, phi0_end=phi0_end)


def right_outer_limit(bd: BoundaryData, ions: IonPair) -> LayerLimit:
    return layer_limit(JunctionValues(0.0, bd.r1, bd.r2), 0.0, ALPHA, ions)


def first_integrals(state: Sequence[float], Q: float, ions: IonPair,
                    fluxes=None, tau: Optional[float] = None) -> Dict[str, float]:
    """Conserved quantities of the limiting fast system.

    state is (phi0, u0, c10, c20, phi1, u1, c11, c21); entries may be arrays
    sampled along an orbit. Flux and tau integrals are reported when given.
    """
    phi0, u0, c10, c20, phi1, u1, c11, c21 = (np.asarray(s, dtype=float) for s in state)
    z1, z2, lam = ions.z1, ions.z2, ions.lam
    out = {
        "H10": np.exp(z1 * phi0) * c10,
        "H20": np.exp(z2 * phi0) * c20,
        "H50": c10 + c20 - u0 ** 2 / 2.0 - Q * phi0,
        "H11": z1 * phi1 + c11 / c10 + 2 * c10 + (lam + 1) * c20,
        "H21": z2 * phi1 + c21 / c20 + 2 * lam * c20 + (lam + 1) * c10,
        "H31": u0 * u1 - c11 - c21 - (lam + 1) * c10 * c20 - c10 ** 2 - lam * c20 ** 2 + phi1 * Q,
    }
    if fluxes is not None:
        out.update({"H30": fluxes.J10, "H40": fluxes.J20, "H41": fluxes.J11, "H51": fluxes.J21})
    if tau is not None:
        out["H60"] = tau
    return {k: (v if np.ndim(v) else float(v)) for k, v in out.items()}


def fast_layer_rhs(xi, y, Q: float, ions: IonPair):
    """Limiting fast system in the layer variable xi, zeroth and first order stacked"""
    phi0, u0, c10, c20, phi1, u1, c11, c21 = y
    z1, z2, lam = ions.z1, ions.z2, ions.lam
    return np.array([
        u0,
        -(z1 * c10 + z2 * c20 + Q),
        -z1 * c10 * u0,
        -z2 * c20 * u0,
        u1,
        -(z1 * c11 + z2 * c21),
        -z1 * c11 * u0 - z1 * c10 * u1 + (2 * z1 * c10 + (1 + lam) * z2 * c20) * c10 * u0,
        -z2 * c21 * u0 - z2 * c20 * u1 + ((1 + lam) * z1 * c10 + 2 * lam * z2 * c20) * c20 * u0,
    ])


def shoot_exact_layer(phi_s: float, c1_s: float, c2_s: float, Q: float, orientation: int,
                      ions: IonPair, span: float = 60.0) -> Dict[str, float]:
    """Fast layer at finite d, integrated in phi until the charge density vanishes.

    Along the layer dc_k/dphi = -f_k(c; d) and d(u^2/2)/dphi = -rho, so the
    end point and the junction value of u follow without resolving xi.
    """
    rho_s = _charge(c1_s, c2_s, Q, ions)
    if rho_s == 0.0:
        return {"phi": phi_s, "c1": c1_s, "c2": c2_s, "u": 0.0}
    direction = 1.0 if rho_s > 0 else -1.0

    def rhs(phi, y):
        f1, f2, _, _ = eval_fg(y[0], y[1], 0.0, 0.0, ions)
        return [-f1, -f2, _charge(y[0], y[1], Q, ions)]

    def neutral(phi, y):
        return _charge(y[0], y[1], Q, ions)
    neutral.terminal = True

    sol = solve_ivp(rhs, (phi_s, phi_s + direction * span), [c1_s, c2_s, 0.0], method="DOP853",
                    rtol=1e-12, atol=1e-14, events=neutral)
    if sol.status != 1 or not sol.t_events[0].size:
        raise DegenerateLayer(f"fast layer from phi={phi_s} did not reach the slow manifold")
    phi_e = float(sol.t_events[0][0])
    c1_e, c2_e, work = sol.y_events[0][0]
    u = orientation * direction * math.sqrt(max(2.0 * work, 0.0))
    return {"phi": phi_e, "c1": float(c1_e), "c2": float(c2_e), "u": u}
