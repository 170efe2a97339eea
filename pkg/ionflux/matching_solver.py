"""Matching system for the full singular orbit and its two-stage Newton solve"""
import json
import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from ionflux.errors import (ConfigError, InfeasibleState, NoConvergence, SingularJacobian, SolveError)
from ionflux.layer_formulas import (JunctionValues, LayerLimit, internal_limit_left_of_a, left_outer_limit,
                                    middle_entry_limit, middle_exit_limit, right_entry_limit, right_outer_limit)
from ionflux.model_core import FluxExpansion, ModelSpec, Profile, log_mean
from ionflux.regular_layers import (NeutralOuter, OuterSolutionMiddle, middle_T0, neutral_single_region_solution,
                                    outer_left, outer_right)

logger = logging.getLogger(__name__)

STATE_NAMES = (
    "phi0_a", "c10_a", "c20_a", "phi1_a", "c11_a", "c21_a",
    "phi0_b", "c10_b", "c20_b", "phi1_b", "c11_b", "c21_b",
    "J10", "J20", "J11", "J21",
    "phi0_am", "phi1_am", "phi0_bm", "phi1_bm", "y_star",
)
INDEX = {name: i for i, name in enumerate(STATE_NAMES)}
ZEROTH = np.array([INDEX[n] for n in ("phi0_a", "c10_a", "c20_a", "phi0_b", "c10_b", "c20_b",
                                      "J10", "J20", "phi0_am", "phi0_bm", "y_star")])
FIRST = np.array([INDEX[n] for n in ("phi1_a", "c11_a", "c21_a", "phi1_b", "c11_b", "c21_b",
                                     "J11", "J21", "phi1_am", "phi1_bm")])
ZEROTH_ROWS = ("u0_a", "u0_b", "charge_am", "charge_bm", "J10_left", "J20_left", "J10_right", "J20_right",
               "T0_middle", "phi0_middle", "H_middle")
FIRST_ROWS = ("u1_a", "u1_b", "phi1_am_def", "phi1_bm_def", "J11_left", "J21_left", "J11_right", "J21_right",
              "c11_middle", "phi1_middle")
RESIDUAL_NAMES = ZEROTH_ROWS + FIRST_ROWS
PENALTY = 1e6


@dataclass
class MatchingState:
    values: np.ndarray
    residuals: Optional[np.ndarray] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(STATE_NAMES),):
            raise ConfigError(f"matching state needs {len(STATE_NAMES)} unknowns, got {self.values.shape}")

    def __getitem__(self, name: str) -> float:
        return float(self.values[INDEX[name]])

    def junction(self, side: str) -> JunctionValues:
        return JunctionValues(self[f"phi0_{side}"], self[f"c10_{side}"], self[f"c20_{side}"],
                              self[f"phi1_{side}"], self[f"c11_{side}"], self[f"c21_{side}"])

    def fluxes(self) -> FluxExpansion:
        return FluxExpansion(self["J10"], self["J20"], self["J11"], self["J21"])

    def as_dict(self) -> Dict[str, float]:
        out = {name: float(v) for name, v in zip(STATE_NAMES, self.values)}
        if self.residuals is not None:
            out["residuals"] = {name: float(r) for name, r in zip(RESIDUAL_NAMES, self.residuals)}
        return out

    def to_json(self) -> str:
        return json.dumps({"schema_version": 1, "state": self.as_dict()}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MatchingState":
        data = json.loads(text)["state"]
        residuals = data.get("residuals")
        return cls(values=np.array([data[name] for name in STATE_NAMES]),
                   residuals=None if residuals is None else np.array([residuals[n] for n in RESIDUAL_NAMES]))


@dataclass
class SolverOptions:
    tol: float = 1e-10
    max_iter: int = 60
    min_step: float = 2.0 ** -20
    fd_step: float = 1e-7
    continuation_steps: Sequence[int] = (1, 2, 4, 8, 16)
    max_condition: float = 1e14
    profile_points: int = 256
    relation_tol: float = 1e-6

    def __post_init__(self):
        if self.tol <= 0:
            raise ConfigError(f"solver tolerance must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ConfigError(f"solver max_iter must be at least 1, got {self.max_iter}")
        if not (0 < self.min_step <= 1):
            raise ConfigError(f"solver min_step must lie in (0, 1], got {self.min_step}")
        if self.relation_tol <= 0:
            raise ConfigError(f"solver relation_tol must be positive, got {self.relation_tol}")


@dataclass
class OrbitPieces:
    """Layer limits and outer solutions assembled from one matching state"""
    left_boundary: LayerLimit
    left_of_a: LayerLimit
    middle_entry: LayerLimit
    middle_exit: LayerLimit
    right_of_b: LayerLimit
    right_boundary: LayerLimit
    left: NeutralOuter
    middle: OuterSolutionMiddle
    right: NeutralOuter


@dataclass
class MatchingSolution:
    state: MatchingState
    fluxes: FluxExpansion
    profile: Profile
    orbit: pd.DataFrame
    pieces: OrbitPieces
    iterations: int = 0
    residual_norm: float = 0.0
    elapsed: float = 0.0
    stats: Dict[str, object] = field(default_factory=dict)


def _row_scales(model: ModelSpec) -> np.ndarray:
    bd = model.boundary
    conc = max(1.0, bd.l1, bd.l2, bd.r1, bd.r2)
    zeroth = np.array([1.0, 1.0, conc, conc, conc, conc, conc, conc, conc, 1.0, max(1.0, model.geometry.H1)])
    first = np.array([1.0, 1.0, 1.0, 1.0, conc, conc, conc, conc, conc ** 2, 1.0])
    return np.concatenate([zeroth, first])


def build_pieces(state: MatchingState, model: ModelSpec) -> OrbitPieces:
    """Layer limits and outer solutions for a trial state; raises on infeasible trials"""
    ions, geometry, Q = model.ions, model.geometry, model.Q
    if state["y_star"] <= 0:
        raise InfeasibleState(f"y* must be positive, got {state['y_star']}")
    jv_a = state.junction("a")
    jv_b = state.junction("b")
    left_boundary = left_outer_limit(model.boundary, ions)
    right_boundary = right_outer_limit(model.boundary, ions)
    left_of_a = internal_limit_left_of_a(jv_a, ions)
    middle_entry = middle_entry_limit(jv_a, Q, ions, phi0_end=state["phi0_am"])
    middle_exit = middle_exit_limit(jv_b, Q, ions, phi0_end=state["phi0_bm"])
    right_of_b = right_entry_limit(jv_b, ions)
    if min(middle_entry.c10, middle_entry.c20, middle_exit.c10, middle_exit.c20) <= 0:
        raise InfeasibleState("middle-region limits left the positive cone")
    left = outer_left((left_boundary, left_of_a), geometry, ions)
    right = outer_right((right_of_b, right_boundary), geometry, ions)
    middle = OuterSolutionMiddle(ions=ions, Q=Q, phi0_am=state["phi0_am"], c10_am=middle_entry.c10,
                                 J10=state["J10"], J20=state["J20"], y_star=state["y_star"], H_start=geometry.Ha,
                                 phi1_am=state["phi1_am"], c11_am=middle_entry.c11,
                                 J11=state["J11"], J21=state["J21"])
    middle.sigma(np.linspace(0.0, state["y_star"], 33))
    return OrbitPieces(left_boundary, left_of_a, middle_entry, middle_exit, right_of_b, right_boundary,
                       left, middle, right)


def _zeroth_residual(state: MatchingState, model: ModelSpec, p: OrbitPieces) -> np.ndarray:
    ions, Q, geometry = model.ions, model.Q, model.geometry
    y = state["y_star"]
    return np.array([
        p.left_of_a.u0 - p.middle_entry.u0,
        p.middle_exit.u0 - p.right_of_b.u0,
        p.middle_entry.charge_residuals(Q, ions)[0],
        p.middle_exit.charge_residuals(Q, ions)[0],
        state["J10"] - p.left.J10,
        state["J20"] - p.left.J20,
        state["J10"] - p.right.J10,
        state["J20"] - p.right.J20,
        state["J10"] + state["J20"] - middle_T0(p.middle_entry, p.middle_exit, Q, geometry.Hb - geometry.Ha, ions),
        state["phi0_am"] - p.middle.I0 * y - state["phi0_bm"],
        p.middle.H(y) - geometry.Hb,
    ])


def _first_residual(state: MatchingState, model: ModelSpec, p: OrbitPieces) -> np.ndarray:
    y = state["y_star"]
    return np.array([
        p.left_of_a.u1 - p.middle_entry.u1,
        p.middle_exit.u1 - p.right_of_b.u1,
        state["phi1_am"] - p.middle_entry.phi1,
        state["phi1_bm"] - p.middle_exit.phi1,
        state["J11"] - p.left.J11,
        state["J21"] - p.left.J21,
        state["J11"] - p.right.J11,
        state["J21"] - p.right.J21,
        p.middle.c11(y) - p.middle_exit.c11,
        p.middle.phi1(y) - state["phi1_bm"],
    ])


def assemble_residual(state: MatchingState, model: ModelSpec, block: str = "all") -> np.ndarray:
    """Scaled matching residual; infeasible trial states map to a large penalty vector"""
    scales = _row_scales(model)
    n0 = len(ZEROTH_ROWS)
    try:
        pieces = build_pieces(state, model)
        if block == "zeroth":
            out = _zeroth_residual(state, model, pieces) / scales[:n0]
        elif block == "first":
            out = _first_residual(state, model, pieces) / scales[n0:]
        else:
            raw = np.concatenate([_zeroth_residual(state, model, pieces), _first_residual(state, model, pieces)])
            out = raw / scales
        if not np.all(np.isfinite(out)):
            raise InfeasibleState("non-finite matching residual")
        return out
    except (SolveError, OverflowError, ValueError, FloatingPointError) as e:
        logger.debug(f"infeasible matching trial: {str(e)}")
        size = {"zeroth": n0, "first": len(FIRST_ROWS)}.get(block, len(RESIDUAL_NAMES))
        return np.full(size, PENALTY)


def _with(values: np.ndarray, idx: np.ndarray, sub: np.ndarray) -> MatchingState:
    full = values.copy()
    full[idx] = sub
    return MatchingState(full)


def _fd_jacobian(fun, x: np.ndarray, fx: np.ndarray, step: float) -> np.ndarray:
    jac = np.empty((fx.size, x.size))
    for j in range(x.size):
        h = step * (1.0 + abs(x[j]))
        xp = x.copy()
        xp[j] += h
        jac[:, j] = (fun(xp) - fx) / h
    return jac


def _damped_newton(fun, x0: np.ndarray, opts: SolverOptions, label: str):
    """Newton iteration with backtracking; returns (x, |F|, iterations)"""
    x = x0.copy()
    fx = fun(x)
    norm = np.max(np.abs(fx))
    if norm >= PENALTY:
        raise InfeasibleState(f"{label}: initial guess is infeasible")
    for it in range(opts.max_iter):
        if norm < opts.tol:
            return x, norm, it
        jac = _fd_jacobian(fun, x, fx, opts.fd_step)
        try:
            dx = np.linalg.solve(jac, -fx)
        except np.linalg.LinAlgError:
            raise SingularJacobian(f"{label}: Jacobian is singular at iteration {it}", condition=np.inf)
        step = 1.0
        while step >= opts.min_step:
            x_new = x + step * dx
            f_new = fun(x_new)
            norm_new = np.max(np.abs(f_new))
            if norm_new < (1.0 - 1e-4 * step) * norm:
                break
            step *= 0.5
        else:
            raise NoConvergence(f"{label}: line search stalled at |F|={norm:.3e}", residual_norm=norm, iterate=x)
        x, fx, norm = x_new, f_new, norm_new
        logger.debug(f"newton it={it + 1} |F|={norm:.3e} step={step:.3g}")
    if norm < opts.tol:
        return x, norm, opts.max_iter
    raise NoConvergence(f"{label}: no convergence in {opts.max_iter} iterations, |F|={norm:.3e}",
                        residual_norm=norm, iterate=x)


def initial_guess(model: ModelSpec) -> MatchingState:
    """Zero-charge singular orbit sampled at the junctions"""
    ions, geometry = model.ions, model.geometry
    neutral = neutral_single_region_solution(model.with_parameter("Q", 0.0))
    values = np.zeros(len(STATE_NAMES))
    for side, Hj in (("a", geometry.Ha), ("b", geometry.Hb)):
        c10 = neutral.c10(Hj)
        values[INDEX[f"phi0_{side}"]] = neutral.phi0(Hj)
        values[INDEX[f"c10_{side}"]] = c10
        values[INDEX[f"c20_{side}"]] = -ions.z1 * c10 / ions.z2
    values[INDEX["J10"]] = neutral.J10
    values[INDEX["J20"]] = neutral.J20
    values[INDEX["phi0_am"]] = values[INDEX["phi0_a"]]
    values[INDEX["phi0_bm"]] = values[INDEX["phi0_b"]]
    mean_c = log_mean(values[INDEX["c10_a"]], values[INDEX["c10_b"]])
    values[INDEX["y_star"]] = (geometry.Hb - geometry.Ha) / (ions.alpha * mean_c)
    return MatchingState(values)


def solve_zeroth(model: ModelSpec, opts: SolverOptions, guess: MatchingState):
    """Newton on the eleven zeroth-order unknowns"""
    base = guess.values.copy()
    base[FIRST] = 0.0

    def fun(z):
        return assemble_residual(_with(base, ZEROTH, z), model, block="zeroth")

    z, norm, iters = _damped_newton(fun, base[ZEROTH], opts, label=f"zeroth block Q={model.Q:.4g}")
    base[ZEROTH] = z
    return base, norm, iters


def _continued_zeroth(model: ModelSpec, opts: SolverOptions):
    """Zeroth block from the zero-charge guess, stepping Q with geometric refinement on failure"""
    guess = initial_guess(model)
    if model.Q == 0.0:
        return solve_zeroth(model, opts, guess)
    last_error = None
    for n_steps in opts.continuation_steps:
        try:
            values, total_iters = guess.values.copy(), 0
            for j in range(1, n_steps + 1):
                stage = model.with_parameter("Q", model.Q * j / n_steps)
                values, norm, iters = solve_zeroth(stage, opts, MatchingState(values))
                total_iters += iters
                logger.debug(f"Q continuation {j}/{n_steps}: Q={stage.Q:.6g} |F|={norm:.3e}")
            return values, norm, total_iters
        except SolveError as e:
            last_error = e
            logger.info(f"Q continuation with {n_steps} steps failed ({str(e)}), refining")
    raise last_error


def solve_first(model: ModelSpec, opts: SolverOptions, zeroth_values: np.ndarray) -> np.ndarray:
    """First-order block: linear in its unknowns, one solve with columns from unit perturbations"""
    base = zeroth_values.copy()
    base[FIRST] = 0.0

    def fun(w):
        return assemble_residual(_with(base, FIRST, w), model, block="first")

    r0 = fun(np.zeros(FIRST.size))
    if np.max(np.abs(r0)) >= PENALTY:
        raise InfeasibleState("zeroth-order solution does not admit a first-order evaluation")
    A = np.empty((r0.size, FIRST.size))
    for j in range(FIRST.size):
        e = np.zeros(FIRST.size)
        e[j] = 1.0
        A[:, j] = fun(e) - r0
    condition = np.linalg.cond(A)
    if not np.isfinite(condition) or condition > opts.max_condition:
        raise SingularJacobian(f"first-order matching matrix is ill-conditioned (cond={condition:.3e})",
                               condition=condition)
    base[FIRST] = np.linalg.solve(A, -r0)
    return base


def reconstruct_orbit(model: ModelSpec, state: MatchingState, pieces: OrbitPieces, n: int = 256) -> pd.DataFrame:
    """Outer profiles joined by the junction layer jumps, both orders plus the d-composed curves"""
    geometry, bd, d = model.geometry, model.boundary, model.ions.d
    frames = []

    def point(region, x, jv: JunctionValues):
        return pd.DataFrame({"region": [region], "x": [x], "phi0": [jv.phi0], "phi1": [jv.phi1],
                             "c10": [jv.c10], "c11": [jv.c11], "c20": [jv.c20], "c21": [jv.c21]})

    frames.append(point("boundary_0", 0.0, JunctionValues(bd.V, bd.l1, bd.l2)))
    for region, outer in (("left", pieces.left), ("middle", pieces.middle), ("right", pieces.right)):
        block = pd.DataFrame(outer.sample(geometry, n))
        block.insert(0, "region", region)
        frames.append(block)
        if region == "left":
            frames.append(point("junction_a", geometry.a, state.junction("a")))
        elif region == "middle":
            frames.append(point("junction_b", geometry.b, state.junction("b")))
    frames.append(point("boundary_1", 1.0, JunctionValues(0.0, bd.r1, bd.r2)))
    orbit = pd.concat(frames, ignore_index=True)
    orbit["phi"] = orbit["phi0"] + d * orbit["phi1"]
    orbit["c1"] = orbit["c10"] + d * orbit["c11"]
    orbit["c2"] = orbit["c20"] + d * orbit["c21"]
    return orbit


def solve_matching(model: ModelSpec, opts: Optional[SolverOptions] = None,
                   guess: Optional[MatchingState] = None) -> MatchingSolution:
    """Singular orbit and flux expansion of one model"""
    opts = opts or SolverOptions()
    started = time.perf_counter()
    try:
        if guess is None:
            zeroth_values, norm0, iters = _continued_zeroth(model, opts)
        else:
            zeroth_values, norm0, iters = solve_zeroth(model, opts, guess)
        values = solve_first(model, opts, zeroth_values)
        state = MatchingState(values)
        state.residuals = assemble_residual(state, model)
        norm = float(np.max(np.abs(state.residuals)))
        if norm >= opts.tol:
            raise NoConvergence(f"matching residual {norm:.3e} above tolerance after the first-order solve",
                                residual_norm=norm, iterate=values)
        pieces = build_pieces(state, model)
        relation = pieces.middle.j1_relation_residual(state["y_star"], pieces.middle_exit.c11, state["phi1_bm"],
                                                      relative=True)
        if abs(relation) > opts.relation_tol:
            raise NoConvergence(f"middle-region J1 relation off by {relation:.3e} (relative)",
                                residual_norm=abs(relation), iterate=values)
    except SolveError as e:
        logging.error(f"Matching solve failed for {model.summary()}: {str(e)}")
        raise

    orbit = reconstruct_orbit(model, state, pieces, opts.profile_points)
    fluxes = state.fluxes()
    profile = Profile(x=orbit["x"].to_numpy(), phi=orbit["phi"].to_numpy(), c1=orbit["c1"].to_numpy(),
                      c2=orbit["c2"].to_numpy(), J1=fluxes.J1(model.ions.d), J2=fluxes.J2(model.ions.d),
                      region=orbit["region"].to_numpy(), meta={"source": "singular_orbit", "d": model.ions.d})
    elapsed = time.perf_counter() - started
    logger.info(f"matching converged: iterations={iters} |F|={norm:.3e} J10={fluxes.J10:.6g} J20={fluxes.J20:.6g} "
                f"J11={fluxes.J11:.6g} J21={fluxes.J21:.6g} ({elapsed:.2f}s)")
    return MatchingSolution(state=state, fluxes=fluxes, profile=profile, orbit=orbit, pieces=pieces,
                            iterations=iters, residual_norm=norm, elapsed=elapsed,
                            stats={"zeroth_residual": float(norm0), "j1_relation_residual": float(relation)})


@dataclass
class SweepPoint:
    value: float
    fluxes: Optional[FluxExpansion] = None
    error: Optional[str] = None
    iterations: int = 0
    residual_norm: float = float("nan")

    @property
    def ok(self) -> bool:
        return self.fluxes is not None


def continuation_sweep(model: ModelSpec, parameter: str, grid: Sequence[float],
                       opts: Optional[SolverOptions] = None) -> List[SweepPoint]:
    """Solve along a monotone grid, seeding each point with the last converged state"""
    opts = opts or SolverOptions()
    grid = np.asarray(grid, dtype=float)
    steps = np.diff(grid)
    if grid.size > 1 and not (np.all(steps > 0) or np.all(steps < 0)):
        raise ConfigError(f"sweep grid for {parameter} must be strictly monotone")
    points: List[SweepPoint] = []
    seed: Optional[MatchingState] = None
    for value in grid:
        point_model = model.with_parameter(parameter, float(value))
        try:
            try:
                solution = solve_matching(point_model, opts, guess=seed)
            except SolveError:
                if seed is None:
                    raise
                logger.info(f"{parameter}={value:.6g}: seeded solve failed, retrying from the zero-charge guess")
                solution = solve_matching(point_model, opts)
            seed = solution.state
            points.append(SweepPoint(float(value), solution.fluxes, None, solution.iterations,
                                     solution.residual_norm))
        except SolveError as e:
            logger.warning(f"sweep point {parameter}={value:.6g} failed: {str(e)}")
            points.append(SweepPoint(float(value), None, f"{type(e).__name__}: {str(e)}"))
    return points


def sweep_frame(points: Sequence[SweepPoint], parameter: str, ions) -> pd.DataFrame:
    rows = []
    for p in points:
        row = {parameter: p.value}
        if p.ok:
            f = p.fluxes
            row.update({"J10": f.J10, "J20": f.J20, "J11": f.J11, "J21": f.J21,
                        "I0": f.I0(ions), "I1": f.I1(ions), "status": "ok"})
        else:
            row.update({k: np.nan for k in ("J10", "J20", "J11", "J21", "I0", "I1")})
            row["status"] = p.error
        rows.append(row)
    return pd.DataFrame(rows, columns=[parameter, "J10", "J20", "J11", "J21", "I0", "I1", "status"])
