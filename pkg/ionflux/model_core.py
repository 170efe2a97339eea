"""Dimensionless hard-sphere PNP model: ions, boundary data, geometry, coefficients"""
import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import quad
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from ionflux.errors import ConfigError, PackingOverflow

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# scalar helpers shared by the layer and outer constructions
# ---------------------------------------------------------------------------

def exprel(x):
    """(e^x - 1)/x with the removable singularity at 0"""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-8
    safe = np.where(small, 1.0, x)
    out = np.where(small, 1.0 + x / 2.0, np.expm1(safe) / safe)
    return out if out.ndim else float(out)


def exprel2(x):
    """(e^x - 1 - x)/x^2, series below |x| = 1e-2"""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-2
    safe = np.where(small, 1.0, x)
    series = 0.5 + x / 6.0 + x ** 2 / 24.0 + x ** 3 / 120.0 + x ** 4 / 720.0
    out = np.where(small, series, (np.expm1(safe) - safe) / safe ** 2)
    return out if out.ndim else float(out)


def log1p_ratio(t):
    """log(1+t)/t, equal to 1 at t = 0"""
    t = np.asarray(t, dtype=float)
    small = np.abs(t) < 1e-8
    safe = np.where(small, 1.0, t)
    out = np.where(small, 1.0 - t / 2.0, np.log1p(safe) / safe)
    return out if out.ndim else float(out)


def log_mean(p, q):
    """Logarithmic mean (q - p)/ln(q/p) of two positive numbers"""
    t = q / p - 1.0
    return p / log1p_ratio(t)


# ---------------------------------------------------------------------------
# model types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IonPair:
    z1: float = 1.0
    z2: float = -1.0
    d: float = 0.0
    lam: float = 1.0

    def __post_init__(self):
        if not (self.z1 > 0 > self.z2):
            raise ConfigError(f"valences must satisfy z1 > 0 > z2, got z1={self.z1}, z2={self.z2}")
        if self.d < 0:
            raise ConfigError(f"ion diameter d must be non-negative, got {self.d}")
        if self.lam <= 0:
            raise ConfigError(f"diameter ratio lambda must be positive, got {self.lam}")

    @property
    def d1(self) -> float:
        return self.d

    @property
    def d2(self) -> float:
        return self.lam * self.d

    @property
    def alpha(self) -> float:
        # coefficient of c10 in sigma
        return self.z1 * (self.z1 - self.z2)

    @property
    def dz(self) -> float:
        return self.z1 - self.z2


@dataclass(frozen=True)
class BoundaryData:
    V: float = 0.0
    l1: float = 1.0
    l2: float = 1.0
    r1: float = 1.0
    r2: float = 1.0

    def __post_init__(self):
        for name in ("l1", "l2", "r1", "r2"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"boundary concentration {name} must be positive, got {getattr(self, name)}")

    def is_electroneutral(self, ions: IonPair, tol: float = 1e-12) -> bool:
        left = ions.z1 * self.l1 + ions.z2 * self.l2
        right = ions.z1 * self.r1 + ions.z2 * self.r2
        scale = max(1.0, self.l1, self.l2, self.r1, self.r2)
        return abs(left) <= tol * scale and abs(right) <= tol * scale


@dataclass(frozen=True)
class ChannelGeometry:
    """Cross-section h(x) on [0,1] with junctions a < b.

    Only H(a), H(b) and H(1) enter the flux formulas; the profile
    reconstruction also needs the inverse map x(H).
    """
    a: float = 1.0 / 3.0
    b: float = 2.0 / 3.0

    def __post_init__(self):
        if not (0.0 < self.a < self.b < 1.0):
            raise ConfigError(f"junctions must satisfy 0 < a < b < 1, got a={self.a}, b={self.b}")

    kind = "abstract"

    def h(self, x):
        raise NotImplementedError

    def _H_scalar(self, x: float) -> float:
        value, _ = quad(lambda s: 1.0 / self.h(s), 0.0, x, epsabs=1e-13, epsrel=1e-12, limit=200)
        return value

    def H(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 0:
            return self._H_scalar(float(x))
        return np.array([self._H_scalar(float(v)) for v in x])

    def x_of_H(self, Hval: float) -> float:
        if Hval <= 0.0:
            return 0.0
        if Hval >= self.H1:
            return 1.0
        return brentq(lambda x: self.H(x) - Hval, 0.0, 1.0, xtol=1e-14, rtol=1e-14)

    @cached_property
    def Ha(self) -> float:
        return float(self.H(self.a))

    @cached_property
    def Hb(self) -> float:
        return float(self.H(self.b))

    @cached_property
    def H1(self) -> float:
        return float(self.H(1.0))

    def describe(self) -> Dict[str, float]:
        return {"kind": self.kind, "a": self.a, "b": self.b, "Ha": self.Ha, "Hb": self.Hb, "H1": self.H1}


@dataclass(frozen=True)
class ConstantGeometry(ChannelGeometry):
    h0: float = 1.0
    kind = "constant"

    def __post_init__(self):
        super().__post_init__()
        if self.h0 <= 0:
            raise ConfigError(f"h0 must be positive, got {self.h0}")

    def h(self, x):
        return self.h0 * np.ones_like(np.asarray(x, dtype=float)) if np.ndim(x) else self.h0

    def H(self, x):
        x = np.asarray(x, dtype=float)
        out = x / self.h0
        return out if out.ndim else float(out)

    def x_of_H(self, Hval: float) -> float:
        return float(min(max(Hval * self.h0, 0.0), 1.0))


@dataclass(frozen=True)
class BumpGeometry(ChannelGeometry):
    """Gaussian neck: h = h0*(1 - depth*exp(-((x-center)/width)^2))"""
    h0: float = 1.0
    depth: float = 0.5
    center: float = 0.5
    width: float = 0.1
    kind = "bump"

    def __post_init__(self):
        super().__post_init__()
        if self.h0 <= 0 or not (0.0 <= self.depth < 1.0) or self.width <= 0:
            raise ConfigError(f"bump geometry needs h0 > 0, 0 <= depth < 1, width > 0 "
                              f"(got h0={self.h0}, depth={self.depth}, width={self.width})")

    def h(self, x):
        return self.h0 * (1.0 - self.depth * np.exp(-((np.asarray(x, dtype=float) - self.center) / self.width) ** 2))


@dataclass(frozen=True)
class TabulatedGeometry(ChannelGeometry):
    """Sampled h; H is the antiderivative of a PCHIP interpolant of 1/h"""
    x_nodes: Tuple[float, ...] = (0.0, 1.0)
    h_nodes: Tuple[float, ...] = (1.0, 1.0)
    kind = "table"

    def __post_init__(self):
        super().__post_init__()
        xs = np.asarray(self.x_nodes, dtype=float)
        hs = np.asarray(self.h_nodes, dtype=float)
        if xs.size < 2 or xs.size != hs.size:
            raise ConfigError("tabulated geometry needs at least two (x, h) samples of equal length")
        if xs[0] != 0.0 or xs[-1] != 1.0 or np.any(np.diff(xs) <= 0):
            raise ConfigError("tabulated x must be strictly increasing from 0 to 1")
        if np.any(hs <= 0):
            raise ConfigError("tabulated h must be positive")

    @cached_property
    def _inverse_area(self) -> PchipInterpolator:
        return PchipInterpolator(np.asarray(self.x_nodes), 1.0 / np.asarray(self.h_nodes))

    @cached_property
    def _resistance(self):
        return self._inverse_area.antiderivative()

    def h(self, x):
        return 1.0 / self._inverse_area(x)

    def H(self, x):
        out = self._resistance(np.asarray(x, dtype=float))
        return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class PermanentCharge:
    """Q2 on (a, b), zero elsewhere"""
    Q2: float = 0.0

    def value(self, x, geometry: ChannelGeometry):
        x = np.asarray(x, dtype=float)
        out = np.where((x > geometry.a) & (x < geometry.b), self.Q2, 0.0)
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class ModelSpec:
    ions: IonPair = field(default_factory=IonPair)
    boundary: BoundaryData = field(default_factory=BoundaryData)
    geometry: ChannelGeometry = field(default_factory=ConstantGeometry)
    charge: PermanentCharge = field(default_factory=PermanentCharge)
    epsilon: float = 1e-3

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")

    @property
    def Q(self) -> float:
        return self.charge.Q2

    def with_parameter(self, name: str, value: float) -> "ModelSpec":
        """Copy with one sweepable parameter replaced"""
        if name == "V":
            return replace(self, boundary=replace(self.boundary, V=value))
        if name == "Q":
            return replace(self, charge=PermanentCharge(Q2=value))
        if name == "d":
            return replace(self, ions=replace(self.ions, d=value))
        if name == "lambda":
            return replace(self, ions=replace(self.ions, lam=value))
        if name == "epsilon":
            return replace(self, epsilon=value)
        raise ConfigError(f"unknown sweep parameter '{name}' (expected V, Q, d, lambda or epsilon)")

    def summary(self) -> Dict[str, float]:
        return {
            "z1": self.ions.z1, "z2": self.ions.z2, "d": self.ions.d, "lambda": self.ions.lam,
            "V": self.boundary.V, "l1": self.boundary.l1, "l2": self.boundary.l2,
            "r1": self.boundary.r1, "r2": self.boundary.r2, "Q2": self.Q, "epsilon": self.epsilon,
            **{f"geometry.{k}": v for k, v in self.geometry.describe().items()},
        }


@dataclass(frozen=True)
class FluxExpansion:
    J10: float
    J20: float
    J11: float
    J21: float
    # J_{k1} = J_{k1,0} + J_{k1,1} Q, filled in by the interaction-coefficient study
    J11_Q1: Optional[float] = None
    J21_Q1: Optional[float] = None

    @property
    def T0(self):
        return self.J10 + self.J20

    @property
    def T1(self):
        return self.J11 + self.J21

    def I0(self, ions: IonPair):
        return ions.z1 * self.J10 + ions.z2 * self.J20

    def I1(self, ions: IonPair):
        return ions.z1 * self.J11 + ions.z2 * self.J21

    def Lambda0(self, ions: IonPair):
        return self.J10 + ions.lam * self.J20

    def Lambda1(self, ions: IonPair):
        return self.J11 + ions.lam * self.J21

    def J1(self, d: float) -> float:
        return self.J10 + self.J11 * d

    def J2(self, d: float) -> float:
        return self.J20 + self.J21 * d

    def current(self, ions: IonPair, d: Optional[float] = None) -> float:
        d = ions.d if d is None else d
        return self.I0(ions) + self.I1(ions) * d

    def as_dict(self, ions: IonPair) -> Dict[str, float]:
        out = {"J10": self.J10, "J20": self.J20, "J11": self.J11, "J21": self.J21,
               "I0": self.I0(ions), "I1": self.I1(ions), "T0": self.T0, "T1": self.T1}
        if self.J11_Q1 is not None:
            out.update({"J11_Q1": self.J11_Q1, "J21_Q1": self.J21_Q1})
        return out


@dataclass
class Profile:
    """Sampled (x, phi, c1, c2) curves from the singular orbit or the finite-eps oracle"""
    x: np.ndarray
    phi: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    J1: float
    J2: float
    u: Optional[np.ndarray] = None
    region: Optional[np.ndarray] = None
    meta: Dict[str, object] = field(default_factory=dict)

    def to_frame(self):
        data = {"x": self.x, "phi": self.phi, "c1": self.c1, "c2": self.c2}
        if self.u is not None:
            data["u"] = self.u
        if self.region is not None:
            data = {"region": self.region, **data}
        return pd.DataFrame(data)


# ---------------------------------------------------------------------------
# coefficient functions
# ---------------------------------------------------------------------------

def eval_fg(c1, c2, J1, J2, ions: IonPair):
    """Coefficients of c_k' = -f_k phi' - g_k/h for the local hard-sphere model"""
    d, lam = ions.d, ions.lam
    z1, z2 = ions.z1, ions.z2
    packing = (c1 + lam ** 2 * c2)
    charge = z1 * c1 + z2 * c2
    flux = J1 + J2
    f1 = z1 * c1 - (2 * z1 * c1 + (1 + lam) * z2 * c2) * c1 * d + packing * charge * c1 * d ** 2
    f2 = z2 * c2 - (2 * lam * z2 * c2 + (1 + lam) * z1 * c1) * c2 * d + packing * charge * c2 * d ** 2
    g1 = J1 - (2 * J1 + (1 + lam) * J2) * c1 * d + packing * flux * c1 * d ** 2
    g2 = J2 - (2 * lam * J2 + (1 + lam) * J1) * c2 * d + packing * flux * c2 * d ** 2
    return f1, f2, g1, g2


def _packing_factor(c1, c2, ions: IonPair):
    D = 1.0 - ions.d1 * c1 - ions.d2 * c2
    if np.any(np.asarray(D) <= 0):
        raise PackingOverflow(f"packing factor 1 - d1*c1 - d2*c2 must stay positive (min {np.min(D)})")
    return D


def hs_chemical_potential(c1, c2, ions: IonPair):
    """Local hard-sphere excess chemical potentials mu_k/kT"""
    D = _packing_factor(c1, c2, ions)
    total = c1 + c2
    mu1 = -np.log(D) + ions.d1 * total / D
    mu2 = -np.log(D) + ions.d2 * total / D
    return mu1, mu2


def hs_chemical_potential_gradient(c1, c2, dc1dx, dc2dx, ions: IonPair):
    d1, d2 = ions.d1, ions.d2
    D = _packing_factor(c1, c2, ions)
    cross = d1 + d2 - d1 ** 2 * c1 - d2 ** 2 * c2
    dmu1 = (d1 * (2 + d1 * (c2 - c1) - 2 * d2 * c2) * dc1dx + cross * dc2dx) / D ** 2
    dmu2 = (cross * dc1dx + d2 * (2 + d2 * (c1 - c2) - 2 * d1 * c1) * dc2dx) / D ** 2
    return dmu1, dmu2


def sigma(c10, Q, ions: IonPair):
    return (ions.z1 - ions.z2) * ions.z1 * c10 - ions.z2 * Q


def w_combination(a_val, b_val, ions: IonPair):
    return a_val + ions.lam * b_val + (ions.lam * ions.z1 - ions.z2) / (ions.z1 - ions.z2) * (a_val + b_val)


def slow_manifold_c2(c1, Q, ions: IonPair):
    return -(ions.z1 * c1 + Q) / ions.z2


# ---------------------------------------------------------------------------
# physical units
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhysicalConstants:
    e: float = 1.602176634e-19
    k_B: float = 1.380649e-23
    T: float = 298.15
    eps_r: float = 80.0
    eps_0: float = 8.8541878128e-12
    D1: float = 1.0
    D2: float = 1.0

    def __post_init__(self):
        if self.T <= 0 or self.eps_r <= 0 or self.eps_0 <= 0:
            raise ConfigError("temperature and permittivities must be positive")

    @property
    def thermal_voltage(self) -> float:
        return self.k_B * self.T / self.e


@dataclass(frozen=True)
class DimensionlessQuantities:
    phi: float
    V: float
    eps_sq: float
    J1: float
    J2: float


def dimensionless_rescale(constants: PhysicalConstants, Phi: float, V_phys: float,
                          J1_phys: float, J2_phys: float) -> DimensionlessQuantities:
    scale = 1.0 / constants.thermal_voltage
    eps_sq = constants.eps_r * constants.eps_0 * constants.k_B * constants.T / constants.e ** 2
    return DimensionlessQuantities(phi=Phi * scale, V=V_phys * scale, eps_sq=eps_sq,
                                   J1=J1_phys / constants.D1, J2=J2_phys / constants.D2)


def dimensionless_unrescale(constants: PhysicalConstants,
                            q: DimensionlessQuantities) -> Tuple[float, float, float, float]:
    """Inverse of dimensionless_rescale: (Phi, V, J1, J2) in physical units"""
    vt = constants.thermal_voltage
    return q.phi * vt, q.V * vt, q.J1 * constants.D1, q.J2 * constants.D2


def epsilon_from_constants(constants: PhysicalConstants) -> float:
    return math.sqrt(dimensionless_rescale(constants, 0.0, 0.0, 0.0, 0.0).eps_sq)
