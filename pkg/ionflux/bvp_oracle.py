"""Finite-epsilon steady state by collocation, used as ground truth for the asymptotic fluxes.

The three subintervals [0,a], [a,b] and [b,1] are stacked on a common
coordinate s in [0,1] so that the permanent-charge jumps sit on mesh
boundaries. Unknowns per region are (phi, u, ln c1, ln c2) with u = eps*phi';
the fluxes J1, J2 are the two free parameters of the collocation problem.
"""
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import integrate

from ionflux.errors import MeshTooCoarse, NoConvergence, SolveError
from ionflux.matching_solver import SolverOptions, solve_matching
from ionflux.model_core import ChannelGeometry, ModelSpec, Profile, eval_fg
from ionflux.regular_layers import neutral_single_region_solution

logger = logging.getLogger(__name__)

EPS_LADDER = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 3e-4, 1e-4)
REGIONS = ("left", "middle", "right")
# layer zone half-width in units of eps*ln(1/eps)
LAYER_ZONE_FACTOR = 4.0


def _layer_zone(epsilon: float) -> float:
    return LAYER_ZONE_FACTOR * epsilon * max(math.log(1.0 / epsilon), 1.0)


def graded_unit_grid(n: int, width: float, layer_fraction: float = 0.4) -> np.ndarray:
    """Nodes on [0,1], quadratically clustered inside [0,width] and [1-width,1]"""
    width = min(width, 0.25)
    n_layer = max(int(round(layer_fraction * n / 2)), 4)
    n_core = max(n - 2 * n_layer, 4)
    left = width * (np.arange(n_layer) / n_layer) ** 2
    core = np.linspace(width, 1.0 - width, n_core)
    right = 1.0 - left[::-1]
    return np.unique(np.concatenate([left, core, right]))


@dataclass(frozen=True)
class Mesh:
    nodes: np.ndarray
    a: float
    b: float

    def __post_init__(self):
        x = np.asarray(self.nodes, dtype=float)
        if x.size < 8 or x[0] != 0.0 or x[-1] != 1.0 or np.any(np.diff(x) <= 0):
            raise MeshTooCoarse("mesh nodes must be strictly increasing from 0 to 1")
        if not (np.any(x == self.a) and np.any(x == self.b)):
            raise MeshTooCoarse(f"junctions a={self.a} and b={self.b} must be mesh nodes")

    @property
    def N(self) -> int:
        return int(np.asarray(self.nodes).size)

    @classmethod
    def graded(cls, geometry: ChannelGeometry, epsilon: float, n: int = 2000,
               layer_fraction: float = 0.4) -> "Mesh":
        a, b = geometry.a, geometry.b
        width = _layer_zone(epsilon) / min(a, b - a, 1.0 - b)
        s = graded_unit_grid(max(n // 3, 8), width, layer_fraction)
        pieces = [s * a, a + (b - a) * s[1:], b + (1.0 - b) * s[1:]]
        x = np.concatenate(pieces)
        x[len(s) - 1], x[2 * len(s) - 2], x[-1] = a, b, 1.0
        return cls(nodes=x, a=a, b=b)

    def stacked_grid(self) -> np.ndarray:
        """Common s-grid: the union of the normalized nodes of all three regions"""
        x = np.asarray(self.nodes, dtype=float)
        bounds = ((0.0, self.a), (self.a, self.b), (self.b, 1.0))
        s = np.concatenate([(x[(x >= lo) & (x <= hi)] - lo) / (hi - lo) for lo, hi in bounds])
        s = np.unique(np.round(s, 14))
        s[0], s[-1] = 0.0, 1.0
        return s

    def layer_resolution(self, epsilon: float) -> int:
        """Fewest nodes within eps of any of 0, a, b, 1"""
        x = np.asarray(self.nodes, dtype=float)
        return int(min(np.count_nonzero(np.abs(x - p) <= epsilon) for p in (0.0, self.a, self.b, 1.0)))


@dataclass
class BvpOptions:
    tol: float = 1e-6
    bc_tol: float = 1e-10
    max_nodes: int = 200000
    n: int = 2000
    layer_fraction: float = 0.4
    ladder: Sequence[float] = EPS_LADDER
    voltage_ramp: Sequence[float] = (0.25, 0.5, 0.75, 1.0)
    min_layer_nodes: int = 4
    jump_tol: float = 1.0


class StackedSystem:
    """Right-hand side and boundary conditions of the region-stacked problem"""

    def __init__(self, model: ModelSpec, epsilon: float):
        self.model = model
        self.epsilon = epsilon
        g = model.geometry
        self.bounds = ((0.0, g.a), (g.a, g.b), (g.b, 1.0))
        self.charges = (0.0, model.Q, 0.0)

    def _log_h_slope(self, x):
        delta = 1e-6
        g = self.model.geometry
        return (np.log(g.h(x + delta)) - np.log(g.h(x - delta))) / (2 * delta)

    def rhs(self, s, y, p):
        ions, eps = self.model.ions, self.epsilon
        J1, J2 = p
        out = np.empty_like(y)
        for i, ((lo, hi), Q) in enumerate(zip(self.bounds, self.charges)):
            L = hi - lo
            x = lo + L * s
            h = self.model.geometry.h(x)
            phi, u, w1, w2 = y[4 * i:4 * i + 4]
            with np.errstate(over="ignore"):
                c1, c2 = np.exp(np.clip(w1, -700, 700)), np.exp(np.clip(w2, -700, 700))
            f1, f2, g1, g2 = eval_fg(c1, c2, J1, J2, ions)
            out[4 * i] = L * u / eps
            out[4 * i + 1] = L * (-(ions.z1 * c1 + ions.z2 * c2 + Q) / eps - self._log_h_slope(x) * u)
            out[4 * i + 2] = L * (-f1 * u / eps - g1 / h) / c1
            out[4 * i + 3] = L * (-f2 * u / eps - g2 / h) / c2
        return out

    def bc(self, ya, yb, p):
        bd, g = self.model.boundary, self.model.geometry
        ha, hb = float(g.h(g.a)), float(g.h(g.b))
        return np.array([
            ya[0] - bd.V, ya[2] - math.log(bd.l1), ya[3] - math.log(bd.l2),
            yb[0] - ya[4], ha * (yb[1] - ya[5]), yb[2] - ya[6], yb[3] - ya[7],
            yb[4] - ya[8], hb * (yb[5] - ya[9]), yb[6] - ya[10], yb[7] - ya[11],
            yb[8], yb[10] - math.log(bd.r1), yb[11] - math.log(bd.r2),
        ])

    def x_of(self, s) -> List[np.ndarray]:
        return [lo + (hi - lo) * np.asarray(s) for lo, hi in self.bounds]


def linear_guess(model: ModelSpec, s: np.ndarray, epsilon: float) -> Tuple[np.ndarray, np.ndarray]:
    """Straight-line potential and log-concentrations; fluxes from the zero-charge singular orbit"""
    bd = model.boundary
    system = StackedSystem(model, epsilon)
    y = np.empty((12, s.size))
    for i, x in enumerate(system.x_of(s)):
        y[4 * i] = bd.V * (1.0 - x)
        y[4 * i + 1] = -epsilon * bd.V
        y[4 * i + 2] = math.log(bd.l1) + (math.log(bd.r1) - math.log(bd.l1)) * x
        y[4 * i + 3] = math.log(bd.l2) + (math.log(bd.r2) - math.log(bd.l2)) * x
    try:
        neutral = neutral_single_region_solution(model)
        p = np.array([neutral.J10, neutral.J20])
    except SolveError:
        p = np.zeros(2)
    return y, p


def _collocate(model: ModelSpec, epsilon: float, s: np.ndarray, y: np.ndarray, p: np.ndarray,
               opts: BvpOptions):
    system = StackedSystem(model, epsilon)
    sol = integrate.solve_bvp(system.rhs, system.bc, s, y, p=p, tol=opts.tol, bc_tol=opts.bc_tol,
                              max_nodes=opts.max_nodes)
    logger.debug(f"collocation eps={epsilon:.3g}: status={sol.status} nodes={sol.x.size} niter={sol.niter}")
    if sol.status == 1:
        raise MeshTooCoarse(f"collocation at eps={epsilon:.3g} exceeded {opts.max_nodes} nodes")
    if not sol.success:
        raise NoConvergence(f"collocation at eps={epsilon:.3g} failed: {sol.message}",
                            residual_norm=float(np.max(sol.rms_residuals)) if sol.rms_residuals is not None else None)
    return sol


def _first_stage(model: ModelSpec, epsilon: float, s: np.ndarray, opts: BvpOptions):
    y, p = linear_guess(model, s, epsilon)
    try:
        return _collocate(model, epsilon, s, y, p, opts)
    except NoConvergence as e:
        logger.info(f"direct collocation failed ({str(e)}), ramping V from 0")
    sol = None
    for frac in opts.voltage_ramp:
        ramped = model.with_parameter("V", frac * model.boundary.V)
        if sol is None:
            y, p = linear_guess(ramped, s, epsilon)
            sol = _collocate(ramped, epsilon, s, y, p, opts)
        else:
            sol = _collocate(ramped, epsilon, sol.x, sol.y, sol.p, opts)
    return sol


def jump_indicator(y: np.ndarray) -> float:
    """Largest change of phi or ln c between neighbouring nodes"""
    rows = [r for i in range(3) for r in (4 * i, 4 * i + 2, 4 * i + 3)]
    return float(np.max(np.abs(np.diff(y[rows], axis=1))))


def solve_bvp(model: ModelSpec, mesh: Optional[Mesh] = None, opts: Optional[BvpOptions] = None,
              guess: Optional[Profile] = None) -> Profile:
    """Steady state at the model's eps and d, continued downward in eps from the ladder"""
    opts = opts or BvpOptions()
    eps = model.epsilon
    started = time.perf_counter()
    mesh = mesh or Mesh.graded(model.geometry, eps, opts.n, opts.layer_fraction)
    resolution = mesh.layer_resolution(eps)
    if resolution < opts.min_layer_nodes:
        raise MeshTooCoarse(f"only {resolution} nodes within eps={eps:.3g} of a layer; refine the mesh")

    try:
        if guess is not None and "collocation" in guess.meta:
            prev = guess.meta["collocation"]
            s = mesh.stacked_grid()
            sol = _collocate(model, eps, s, prev.sol(s), prev.p, opts)
            stages = [eps]
        else:
            stages = [e for e in opts.ladder if e > eps * (1 + 1e-12)] + [eps]
            sol = None
            for stage in stages:
                s = (mesh if stage == eps else Mesh.graded(model.geometry, stage, opts.n, opts.layer_fraction)).stacked_grid()
                if sol is None:
                    sol = _first_stage(model, stage, s, opts)
                else:
                    sol = _collocate(model, stage, s, sol.sol(s), sol.p, opts)
                logger.info(f"eps continuation stage {stage:.3g}: J1={sol.p[0]:.8g} J2={sol.p[1]:.8g} "
                            f"nodes={sol.x.size}")
        jump = jump_indicator(sol.y)
        if jump > opts.jump_tol:
            raise MeshTooCoarse(f"layer under-resolved: neighbouring nodes differ by {jump:.3g}")
    except SolveError as e:
        logging.error(f"Finite-eps solve failed for {model.summary()}: {str(e)}")
        raise

    system = StackedSystem(model, eps)
    xs, regions, rows = [], [], []
    for i, x in enumerate(system.x_of(sol.x)):
        xs.append(x)
        regions.append(np.full(x.size, REGIONS[i], dtype=object))
        rows.append(sol.y[4 * i:4 * i + 4])
    y = np.concatenate(rows, axis=1)
    elapsed = time.perf_counter() - started
    meta = {"source": "collocation", "epsilon": eps, "d": model.ions.d, "nodes": int(sol.x.size),
            "niter": int(sol.niter), "max_rms_residual": float(np.max(sol.rms_residuals)),
            "stages": stages, "elapsed": elapsed, "collocation": sol}
    return Profile(x=np.concatenate(xs), phi=y[0], c1=np.exp(y[2]), c2=np.exp(y[3]),
                   J1=float(sol.p[0]), J2=float(sol.p[1]), u=y[1], region=np.concatenate(regions), meta=meta)


def peak_width(profile: Profile, center: float, window: float = 0.1) -> float:
    """Full width at half maximum of |u| around x = center"""
    x, u = np.asarray(profile.x), np.abs(np.asarray(profile.u))
    order = np.argsort(x, kind="stable")
    x, u = x[order], u[order]
    near = np.abs(x - center) <= window
    xw, uw = x[near], u[near]
    half = 0.5 * np.max(uw)
    above = xw[uw >= half]
    return float(above[-1] - above[0])


@dataclass
class AsymptoticComparison:
    table: pd.DataFrame
    eps_order: Dict[str, float] = field(default_factory=dict)
    d_order: Dict[str, float] = field(default_factory=dict)
    eps_monotone: Dict[str, bool] = field(default_factory=dict)
    layer_width: Dict[float, float] = field(default_factory=dict)

    def relative_errors(self) -> Dict[float, float]:
        """Largest |bvp - asymptotic|/|asymptotic| at the smallest epsilon, per diameter"""
        finest = self.table[self.table["epsilon"] == self.table["epsilon"].min()]
        scale = np.maximum(np.abs(finest["asymptotic"].to_numpy()), 1e-12)
        ratio = finest["error"].to_numpy() / scale
        return {float(d): float(np.max(ratio[(finest["d"] == d).to_numpy()])) for d in sorted(finest["d"].unique())}

    def as_dict(self) -> Dict[str, object]:
        return {"eps_order": self.eps_order, "d_order": self.d_order, "eps_monotone": self.eps_monotone,
                "layer_width": {str(k): v for k, v in self.layer_width.items()},
                "relative_error": {str(k): v for k, v in self.relative_errors().items()},
                "rows": int(len(self.table))}


def _slope(xs, ys) -> float:
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    keep = (xs > 0) & (ys > 0)
    if np.count_nonzero(keep) < 2:
        return float("nan")
    return float(np.polyfit(np.log(xs[keep]), np.log(ys[keep]), 1)[0])


def asymptotic_comparison(model: ModelSpec, eps_grid: Sequence[float], d_grid: Sequence[float],
                          solver_opts: Optional[SolverOptions] = None,
                          bvp_opts: Optional[BvpOptions] = None) -> AsymptoticComparison:
    """|J_k(eps, d) - (J_k0 + J_k1 d)| over the grids, with observed orders in eps and d"""
    eps_grid = sorted(set(float(e) for e in eps_grid), reverse=True)
    d_grid = sorted(set(float(d) for d in d_grid) | {0.0})
    asym = solve_matching(model, solver_opts).fluxes
    expansions = {"J1": (asym.J10, asym.J11), "J2": (asym.J20, asym.J21)}

    rows = []
    widths = {}
    previous_eps = None
    for eps in eps_grid:
        # d = 0 continues in epsilon, each d > 0 continues from the next smaller d at the same epsilon
        seed = previous_eps
        for d in d_grid:
            case = model.with_parameter("d", d).with_parameter("epsilon", eps)
            profile = solve_bvp(case, opts=bvp_opts, guess=seed)
            seed = profile
            if d == 0.0:
                previous_eps = profile
                widths[eps] = peak_width(profile, model.geometry.a)
            for k, value in (("J1", profile.J1), ("J2", profile.J2)):
                J0, J1st = expansions[k]
                rows.append({"epsilon": eps, "d": d, "flux": k, "bvp": value,
                             "asymptotic": J0 + J1st * d, "error": abs(value - (J0 + J1st * d))})
    table = pd.DataFrame(rows, columns=["epsilon", "d", "flux", "bvp", "asymptotic", "error"])

    base = table[table["d"] == 0.0].set_index(["epsilon", "flux"])["bvp"]
    table["increment_error"] = [
        abs((r.bvp - base[(r.epsilon, r.flux)]) - expansions[r.flux][1] * r.d) for r in table.itertuples()
    ]

    result = AsymptoticComparison(table=table, layer_width=widths)
    eps_min = min(eps_grid)
    for k in ("J1", "J2"):
        zero_d = table[(table["d"] == 0.0) & (table["flux"] == k)].sort_values("epsilon", ascending=False)
        result.eps_order[k] = _slope(zero_d["epsilon"], zero_d["error"])
        result.eps_monotone[k] = bool(np.all(np.diff(zero_d["error"].to_numpy()) < 0))
        small = table[(table["epsilon"] == eps_min) & (table["flux"] == k) & (table["d"] > 0)]
        result.d_order[k] = _slope(small["d"], small["increment_error"])
    logger.info(f"asymptotic comparison: eps order {result.eps_order}, d order {result.d_order}")
    return result
