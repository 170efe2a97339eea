"""Outer (regular-layer) solutions on [0,a], [a,b] and [b,1] through first order in d.

The two neutral regions carry closed forms in the resistance coordinate
H(x) = int 1/h: c10 is affine in H and every first-order quantity follows
from four elementary integrals. The charged middle region is written in
the stretched variable y with dH/dy = sigma = z1(z1-z2)c10 - z2*Q, where
c10 is exponential-affine and the first-order concentration is an
integrating-factor solution over the moments K_n = int c10^n e^{-ky}.
"""
import logging
from dataclasses import dataclass, replace
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.optimize import brentq

from ionflux.errors import InvalidLimits, NoBracket, NoYStar, SigmaVanishes
from ionflux.layer_formulas import LayerLimit, left_outer_limit, right_outer_limit
from ionflux.model_core import ChannelGeometry, IonPair, ModelSpec, exprel, exprel2, log1p_ratio, log_mean
from ionflux.roots import bracket_upward

logger = logging.getLogger(__name__)

GAUSS_NODES, GAUSS_WEIGHTS = np.polynomial.legendre.leggauss(20)
GAUSS_PANELS = 16
# |k*y| below which the k-divided closed forms switch to quadrature
SMALL_KY = 1e-2


def gauss_integral(fn, y, panels: int = GAUSS_PANELS):
    """int_0^y fn(s) ds for every entry of y, fixed composite Gauss-Legendre rule"""
    y_arr = np.asarray(y, dtype=float)
    edges = np.linspace(0.0, 1.0, panels + 1)
    mid = 0.5 * (edges[:-1] + edges[1:])
    half = 0.5 * (edges[1:] - edges[:-1])
    unit_nodes = (mid[:, None] + half[:, None] * GAUSS_NODES[None, :]).ravel()
    unit_weights = (half[:, None] * GAUSS_WEIGHTS[None, :]).ravel()
    values = fn(y_arr[..., None] * unit_nodes)
    out = (values * unit_weights).sum(axis=-1) * y_arr
    return out if out.ndim else float(out)


def _short_moment(fn, y, small):
    """Single-panel quadrature of fn on the entries flagged small, NaN elsewhere"""
    y = np.asarray(y, dtype=float)
    out = np.full(y.shape, np.nan)
    if np.any(small):
        out[small] = gauss_integral(fn, y[small], panels=1)
    return out


def _scalar(v):
    return v if np.ndim(v) else float(v)


# ---------------------------------------------------------------------------
# neutral regions
# ---------------------------------------------------------------------------

def integral_identities(c_start: float, c_end: float, dH: float, H) -> Dict[str, np.ndarray]:
    """Closed forms of int c10, int 1/c10, int 1/c10^2 and int H/c10^2 over [0, H].

    c10 = c_start + s*H with s = (c_end - c_start)/dH.
    """
    H = np.asarray(H, dtype=float)
    s = (c_end - c_start) / dH
    t = s * H / c_start
    c = c_start + s * H
    with np.errstate(divide="ignore", invalid="ignore"):
        general = (np.log1p(t) - 1.0 + 1.0 / (1.0 + t)) / (s ** 2 if s != 0 else 1.0)
    series = H ** 2 / (2.0 * c_start ** 2) * (1.0 - 4.0 * t / 3.0 + 1.5 * t ** 2)
    return {
        "G0": _scalar(c_start * H + s * H ** 2 / 2.0),
        "G1": _scalar(H * log1p_ratio(t) / c_start),
        "G2": _scalar(H / (c_start * c)),
        "G3": _scalar(np.where(np.abs(t) < 1e-3, series, general)),
    }


@dataclass(frozen=True)
class NeutralOuter:
    """Zero-charge outer solution between two layer limits, profiles in local H"""
    ions: IonPair
    start: LayerLimit
    end: LayerLimit
    dH: float
    H_offset: float = 0.0

    def __post_init__(self):
        if not (self.start.c10 > 0 and self.end.c10 > 0):
            raise InvalidLimits(f"outer region needs positive limits, got c10={self.start.c10}, {self.end.c10}")
        if self.dH <= 0:
            raise InvalidLimits(f"outer region needs positive resistance length, got {self.dH}")

    @property
    def _m(self) -> float:
        return (self.ions.lam * self.ions.z1 - self.ions.z2) / self.ions.z2

    @property
    def slope(self) -> float:
        return (self.end.c10 - self.start.c10) / self.dH

    @property
    def T0(self) -> float:
        return self.ions.dz * self.slope / self.ions.z2

    @property
    def I0(self) -> float:
        L = log_mean(self.start.c10, self.end.c10)
        return self.ions.alpha * (self.start.phi0 - self.end.phi0) * L / self.dH

    @property
    def J10(self) -> float:
        return (self.I0 - self.ions.z2 * self.T0) / self.ions.dz

    @property
    def J20(self) -> float:
        return (self.ions.z1 * self.T0 - self.I0) / self.ions.dz

    @property
    def M(self) -> float:
        s, e = self.start, self.end
        return s.c11 - e.c11 + self._m * (e.c10 ** 2 - s.c10 ** 2)

    @property
    def T1(self) -> float:
        return -self.ions.dz * self.M / (self.ions.z2 * self.dH)

    def P(self, H):
        """First-order potential correction carried by I0"""
        ions, s = self.ions, self.start
        G = integral_identities(s.c10, self.end.c10, self.dH, H)
        K = s.c11 - self._m * s.c10 ** 2
        return K * G["G2"] + self._m * np.asarray(H) + ions.z2 * self.T1 / ions.dz * G["G3"]

    @property
    def I1(self) -> float:
        ions, s, e = self.ions, self.start, self.end
        G1 = self.dH / log_mean(s.c10, e.c10)
        rhs = (s.phi1 - e.phi1 + (1 - ions.lam) * self.T0 * self.dH / ions.dz
               + self.I0 / ions.alpha * float(self.P(self.dH)))
        return ions.alpha * rhs / G1

    @property
    def N(self) -> float:
        return self.I1 * self.dH / (self.ions.z1 * self.ions.dz)

    @property
    def J11(self) -> float:
        return (self.I1 - self.ions.z2 * self.T1) / self.ions.dz

    @property
    def J21(self) -> float:
        return (self.ions.z1 * self.T1 - self.I1) / self.ions.dz

    # profiles in the local coordinate H - H_offset

    def c10(self, H):
        return _scalar(self.start.c10 + self.slope * np.asarray(H, dtype=float))

    def c20(self, H):
        return _scalar(-self.ions.z1 * np.asarray(self.c10(H)) / self.ions.z2)

    def phi0(self, H):
        G = integral_identities(self.start.c10, self.end.c10, self.dH, H)
        return _scalar(self.start.phi0 - self.I0 * np.asarray(G["G1"]) / self.ions.alpha)

    def c11(self, H):
        H = np.asarray(H, dtype=float)
        ions, s = self.ions, self.start
        c = np.asarray(self.c10(H))
        return _scalar(s.c11 + self._m * (c ** 2 - s.c10 ** 2) + ions.z2 * self.T1 * H / ions.dz)

    def c21(self, H):
        return _scalar(-self.ions.z1 * np.asarray(self.c11(H)) / self.ions.z2)

    def phi1(self, H):
        H = np.asarray(H, dtype=float)
        ions, s = self.ions, self.start
        G = integral_identities(s.c10, self.end.c10, self.dH, H)
        out = (s.phi1 - self.I1 * np.asarray(G["G1"]) / ions.alpha
               + (1 - ions.lam) * self.T0 * H / ions.dz + self.I0 / ions.alpha * np.asarray(self.P(H)))
        return _scalar(out)

    def fluxes(self) -> Dict[str, float]:
        return {"J10": self.J10, "J20": self.J20, "J11": self.J11, "J21": self.J21}

    def sample(self, geometry: ChannelGeometry, n: int = 256) -> Dict[str, np.ndarray]:
        H = np.linspace(0.0, self.dH, n)
        x = np.array([geometry.x_of_H(self.H_offset + v) for v in H])
        return {"x": x, "phi0": self.phi0(H), "phi1": self.phi1(H), "c10": self.c10(H),
                "c11": self.c11(H), "c20": self.c20(H), "c21": self.c21(H)}


class OuterSolutionLeft(NeutralOuter):
    """Outer solution on [0, a]"""

    @property
    def M0(self):
        return self.M

    @property
    def N0(self):
        return self.N

    def P0(self, H):
        return self.P(H)


class OuterSolutionRight(NeutralOuter):
    """Outer solution on [b, 1]"""

    @property
    def M2(self):
        return self.M

    @property
    def N2(self):
        return self.N

    def P2(self, H):
        return self.P(H)


def neutral_outer(start: LayerLimit, end: LayerLimit, H_start: float, H_end: float, ions: IonPair) -> NeutralOuter:
    """Neutral regular layer between two layer limits on [H_start, H_end]"""
    return NeutralOuter(ions=ions, start=start, end=end, dH=H_end - H_start, H_offset=H_start)


def outer_left(limits: Tuple[LayerLimit, LayerLimit], geometry: ChannelGeometry, ions: IonPair) -> OuterSolutionLeft:
    start, end = limits
    return OuterSolutionLeft(ions=ions, start=start, end=end, dH=geometry.Ha, H_offset=0.0)


def outer_right(limits: Tuple[LayerLimit, LayerLimit], geometry: ChannelGeometry, ions: IonPair) -> OuterSolutionRight:
    start, end = limits
    return OuterSolutionRight(ions=ions, start=start, end=end, dH=geometry.H1 - geometry.Hb, H_offset=geometry.Hb)


def integral_identities_left(outer: NeutralOuter, geometry: ChannelGeometry, x) -> Dict[str, np.ndarray]:
    H = np.asarray(geometry.H(x), dtype=float) - outer.H_offset
    return integral_identities(outer.start.c10, outer.end.c10, outer.dH, H)


def neutral_single_region_solution(model: ModelSpec) -> NeutralOuter:
    """Zero-charge singular orbit: one neutral region spanning the whole channel"""
    ions = model.ions
    left = left_outer_limit(model.boundary, ions)
    right = right_outer_limit(model.boundary, ions)
    return neutral_outer(left, right, 0.0, model.geometry.H1, ions)


# ---------------------------------------------------------------------------
# charged middle region
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OuterSolutionMiddle:
    ions: IonPair
    Q: float
    phi0_am: float
    c10_am: float
    J10: float
    J20: float
    y_star: float
    H_start: float = 0.0
    phi1_am: float = 0.0
    c11_am: float = 0.0
    J11: float = 0.0
    J21: float = 0.0

    @property
    def T0(self):
        return self.J10 + self.J20

    @property
    def I0(self):
        return self.ions.z1 * self.J10 + self.ions.z2 * self.J20

    @property
    def T1(self):
        return self.J11 + self.J21

    @property
    def I1(self):
        return self.ions.z1 * self.J11 + self.ions.z2 * self.J21

    @property
    def Lambda0(self):
        return self.J10 + self.ions.lam * self.J20

    @property
    def k(self):
        return self.ions.z1 * self.ions.z2 * self.T0

    @property
    def sigma_am(self):
        return self.ions.alpha * self.c10_am - self.ions.z2 * self.Q

    def with_first_order(self, phi1_am: float, c11_am: float, J11: float, J21: float) -> "OuterSolutionMiddle":
        return replace(self, phi1_am=phi1_am, c11_am=c11_am, J11=J11, J21=J21)

    # zeroth order

    def c10(self, y):
        y = np.asarray(y, dtype=float)
        out = self.c10_am * np.exp(self.k * y) + self.ions.z2 * self.Q * self.J10 * y * exprel(self.k * y)
        return _scalar(out)

    def c20(self, y):
        return _scalar(-(self.ions.z1 * np.asarray(self.c10(y)) + self.Q) / self.ions.z2)

    def sigma(self, y, check: bool = True):
        out = self.ions.alpha * np.asarray(self.c10(y)) - self.ions.z2 * self.Q
        if check and np.any(out <= 0):
            raise SigmaVanishes(f"sigma = z1(z1-z2)c10 - z2Q reached {np.min(out):.3e} in the middle region")
        return _scalar(out)

    def phi0(self, y):
        return _scalar(self.phi0_am - self.I0 * np.asarray(y, dtype=float))

    def H(self, y):
        """H(x(y)), from dH/dy = sigma"""
        y = np.asarray(y, dtype=float)
        return _scalar(self.H_start + self.ions.alpha * np.asarray(self.S1(y)) - self.ions.z2 * self.Q * y)

    def S1(self, y):
        y = np.asarray(y, dtype=float)
        ky = self.k * y
        return _scalar(self.c10_am * y * exprel(ky) + self.ions.z2 * self.Q * self.J10 * y ** 2 * exprel2(ky))

    def S3(self, y):
        y = np.asarray(y, dtype=float)
        return _scalar(self.c10_am * y + self.ions.z2 * self.Q * self.J10 * y ** 2 * exprel2(-self.k * y))

    def _small(self, y):
        return np.abs(self.k * np.asarray(y, dtype=float)) < SMALL_KY

    def S2(self, y):
        y = np.asarray(y, dtype=float)
        b = self.ions.z2 * self.Q * self.J10
        small = self._small(y)
        quad = _short_moment(lambda s: np.asarray(self.c10(s)) ** 2, y, small)
        with np.errstate(divide="ignore", invalid="ignore"):
            closed = (np.asarray(self.c10(y)) ** 2 - self.c10_am ** 2 - 2 * b * np.asarray(self.S1(y))) / (2 * self.k)
        return _scalar(np.where(small, quad, closed))

    def S4(self, y):
        return self.k_integrals(y)[2]

    def Sz(self, y):
        y = np.asarray(y, dtype=float)
        ratio = np.asarray(self.sigma(y)) / self.sigma_am
        return _scalar(self.J10 * y + np.log(ratio) / (self.ions.z1 * self.ions.dz))

    def S5(self, y):
        ions = self.ions
        return _scalar(self.I0 * np.asarray(self.S1(y)) / ions.dz
                       + ions.z2 * self.Q * np.asarray(self.Sz(y)) / ions.alpha)

    def k_integrals(self, y) -> Tuple:
        """Moments K_n = int_0^y c10^n e^{-k s} ds for n = 0..3"""
        y = np.asarray(y, dtype=float)
        k, b = self.k, self.ions.z2 * self.Q * self.J10
        c = np.asarray(self.c10(y))
        K0 = y * exprel(-k * y)
        K1 = np.asarray(self.S3(y))
        small = self._small(y)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            decay = np.exp(-k * y)
            K2 = (c ** 2 * decay - self.c10_am ** 2 - 2 * b * K1) / k
            K3 = (c ** 3 * decay - self.c10_am ** 3 - 3 * b * K2) / (2 * k)
        if np.any(small):
            moments = [_short_moment(lambda s, n=n: np.asarray(self.c10(s)) ** n * np.exp(-k * s), y, small)
                       for n in (2, 3)]
            K2 = np.where(small, moments[0], K2)
            K3 = np.where(small, moments[1], K3)
        return tuple(_scalar(v) for v in (K0, K1, K2, K3))

    def s_integrals(self, y) -> Dict[str, float]:
        return {"Sz": self.Sz(y), "S1": self.S1(y), "S2": self.S2(y), "S3": self.S3(y),
                "S4": self.S4(y), "S5": self.S5(y)}

    # first order

    def _c11_rates(self):
        ions, Q = self.ions, self.Q
        z1, z2, lam, alpha = ions.z1, ions.z2, ions.lam, ions.alpha
        r2 = 2 * z1 * (lam * z1 - z2) * self.T0
        r1 = z1 * z2 * self.T1 + (2 * lam * z1 * self.T0 + 2 * ions.dz * self.J10) * Q
        r0 = z2 * Q * self.J11
        beta = -z2 * Q
        p3 = alpha * r2
        p2 = alpha * r1 + beta * r2 - 2 * (1 - lam) * z1 ** 2 * self.I0 * Q
        p1 = alpha * r0 + beta * r1 + 2 * lam * z1 * self.I0 * Q ** 2
        p0 = beta * r0
        return (r0, r1, r2), (p0, p1, p2, p3)

    def c11(self, y):
        y = np.asarray(y, dtype=float)
        _, p = self._c11_rates()
        K = self.k_integrals(y)
        weighted = sum(pn * np.asarray(Kn) for pn, Kn in zip(p, K))
        out = np.exp(self.k * y) / np.asarray(self.sigma(y)) * (self.sigma_am * self.c11_am + weighted)
        return _scalar(out)

    def c21(self, y):
        return _scalar(-self.ions.z1 * np.asarray(self.c11(y)) / self.ions.z2)

    def dphi1(self, y):
        ions, Q = self.ions, self.Q
        lam, z1 = ions.lam, ions.z1
        c = np.asarray(self.c10(y))
        sig = np.asarray(self.sigma(y))
        c11 = np.asarray(self.c11(y))
        out = (self.I0 / sig * (ions.alpha * c11 + 2 * (1 - lam) * z1 * c * Q - 2 * lam * Q ** 2)
               + ((1 - lam) * z1 * c - lam * Q) * self.T0 - self.I1 - self.Lambda0 * Q)
        return _scalar(out)

    def phi1(self, y):
        return _scalar(self.phi1_am + np.asarray(gauss_integral(lambda s: np.asarray(self.dphi1(s)), y)))

    def j1_relation_terms(self, y, c11_end: Optional[float] = None,
                          phi1_end: Optional[float] = None) -> Tuple[float, Tuple[float, ...]]:
        """Both sides of the relation tying T1 to the first-order jumps across [0, y].

        lhs = z1z2 T1 S1 - z2^2 T1 Q y/(z1-z2), which equals
        T1/T0 (c10(y) - c10^{a,m}) - z2 T1 I0 Q y/((z1-z2) T0) whenever T0 != 0.
        The end values default to the solution's own c11(y) and phi1(y).
        """
        ions, Q = self.ions, self.Q
        z1, z2, lam, dz = ions.z1, ions.z2, ions.lam, ions.dz
        y = float(y)
        S = self.s_integrals(y)
        c11_end = float(self.c11(y)) if c11_end is None else c11_end
        phi1_end = float(self.phi1(y)) if phi1_end is None else phi1_end
        log_ratio = float(np.log(self.sigma(y) / self.sigma_am))
        lhs = z1 * z2 * self.T1 * S["S1"] - z2 ** 2 * self.T1 * Q * y / dz
        rhs = (c11_end - self.c11_am,
               z2 * Q * (phi1_end - self.phi1_am) / dz,
               -2 * (lam * z1 - z2) * z1 * self.T0 * S["S2"],
               -((2 * lam + (1 - lam) * z2 / dz) * z1 * self.T0 + 2 * dz * self.J10) * S["S1"] * Q,
               2 * (1 - lam) * z1 * S["S5"] * Q,
               -2 * lam * S["Sz"] * Q ** 2,
               -2 * (1 - lam) * z2 * S["Sz"] * Q ** 2 / dz,
               -lam * z2 * self.T0 * y * Q ** 2 / dz,
               # exact integral of -2 lam Q^2 I0/sigma
               2 * lam * Q ** 2 * log_ratio / (z1 * dz),
               z2 * self.Lambda0 * y * Q ** 2 / dz)
        return float(lhs), tuple(float(t) for t in rhs)

    def j1_relation_residual(self, y, c11_end: Optional[float] = None, phi1_end: Optional[float] = None,
                             relative: bool = False) -> float:
        lhs, rhs = self.j1_relation_terms(y, c11_end, phi1_end)
        residual = lhs - sum(rhs)
        if relative:
            return residual / max(1.0, abs(lhs), *(abs(t) for t in rhs))
        return residual

    def fluxes(self) -> Dict[str, float]:
        return {"J10": self.J10, "J20": self.J20, "J11": self.J11, "J21": self.J21}

    def sample(self, geometry: ChannelGeometry, n: int = 256) -> Dict[str, np.ndarray]:
        y = np.linspace(0.0, self.y_star, n)
        x = np.array([geometry.x_of_H(v) for v in np.atleast_1d(self.H(y))])
        return {"x": x, "phi0": self.phi0(y), "phi1": self.phi1(y), "c10": self.c10(y),
                "c11": self.c11(y), "c20": self.c20(y), "c21": self.c21(y)}


def middle_T0(am: LayerLimit, bm: LayerLimit, Q: float, dH: float, ions: IonPair) -> float:
    z2 = ions.z2
    return -(ions.dz * (am.c10 - bm.c10) + z2 * Q * (am.phi0 - bm.phi0)) / (z2 * dH)


def outer_middle_zeroth(limits: Tuple[LayerLimit, LayerLimit], Q: float, geometry: ChannelGeometry,
                        ions: IonPair) -> OuterSolutionMiddle:
    """Zeroth-order middle solution; y* from the H-relation by a bracketed scalar solve"""
    am, bm = limits
    if not (am.c10 > 0 and bm.c10 > 0):
        raise InvalidLimits(f"middle region needs positive limits, got c10={am.c10}, {bm.c10}")
    dH = geometry.Hb - geometry.Ha
    T0 = middle_T0(am, bm, Q, dH, ions)
    dphi = am.phi0 - bm.phi0

    def trial(y: float) -> OuterSolutionMiddle:
        J10 = (dphi / y - ions.z2 * T0) / ions.dz
        return OuterSolutionMiddle(ions=ions, Q=Q, phi0_am=am.phi0, c10_am=am.c10, J10=J10,
                                   J20=T0 - J10, y_star=y, H_start=geometry.Ha)

    def h_relation(y: float) -> float:
        with np.errstate(over="ignore", invalid="ignore"):
            value = float(trial(y).H(y)) - geometry.Hb
        if not np.isfinite(value):
            raise NoYStar(f"H-relation is not finite at y={y:.3e}")
        return value

    sigma_scale = max(ions.alpha * max(am.c10, bm.c10) - ions.z2 * Q, 1e-12)
    try:
        lo, hi = bracket_upward(h_relation, 1e-12 * dH / sigma_scale, 0.25 * dH / sigma_scale)
    except NoBracket as e:
        logger.error(f"no y* for the middle region: {str(e)}")
        raise NoYStar(str(e))
    y_star = brentq(h_relation, lo, hi, xtol=1e-15, rtol=1e-12)
    solution = trial(y_star)
    solution.sigma(np.linspace(0.0, y_star, 65))
    logger.debug(f"middle zeroth order: T0={T0:.6g}, I0={solution.I0:.6g}, y*={y_star:.6g}")
    return solution


def outer_middle_first(limits: Tuple[LayerLimit, LayerLimit], Q: float, zeroth: OuterSolutionMiddle,
                       geometry: ChannelGeometry, ions: IonPair) -> OuterSolutionMiddle:
    """First-order middle solution: (J11, J21) from c11(y*) = c11^{b,m} and phi1(y*) = phi1^{b,m}"""
    am, bm = limits
    y = zeroth.y_star

    def mismatch(J11: float, J21: float) -> np.ndarray:
        trial = zeroth.with_first_order(am.phi1, am.c11, J11, J21)
        return np.array([trial.c11(y) - bm.c11, trial.phi1(y) - bm.phi1])

    base = mismatch(0.0, 0.0)
    jac = np.column_stack([mismatch(1.0, 0.0) - base, mismatch(0.0, 1.0) - base])
    J11, J21 = np.linalg.solve(jac, -base)
    solution = zeroth.with_first_order(am.phi1, am.c11, float(J11), float(J21))
    logger.debug(f"middle first order: J11={J11:.6g}, J21={J21:.6g}, "
                 f"J1 relation residual={solution.j1_relation_residual(y, bm.c11, bm.phi1):.3e}")
    return solution
