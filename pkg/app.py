import argparse
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from dotenv import load_dotenv

from ionflux import __version__
from ionflux.bvp_oracle import asymptotic_comparison
from ionflux.config import COMMANDS, ExperimentConfig, load_config, log_level_from_env
from ionflux.errors import IonfluxError
from ionflux.matching_solver import continuation_sweep, solve_matching, sweep_frame
from ionflux.outputs import OutputWriter
from ionflux.plotting import Plotter, sign_changes
from ionflux.zero_current import formula_J11, reversal_potential, zero_current_fluxes

# Load environment variables
load_dotenv()

logger = logging.getLogger("ionflux.app")


@dataclass
class RunReport:
    command: str
    status: str = "ok"
    version: str = __version__
    timings: Dict[str, float] = field(default_factory=dict)
    stats: Dict[str, object] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)
    files: List[Dict[str, object]] = field(default_factory=list)


@dataclass
class RunOutputs:
    """Tables the plots are drawn from"""
    sweep: Optional[pd.DataFrame] = None
    sweep_parameter: str = "V"
    zero_current: Optional[pd.DataFrame] = None
    profile: Optional[pd.DataFrame] = None
    iv_expected_crossings: Optional[int] = None


def _summary(frame: pd.DataFrame):
    print(frame.to_string(index=False))


def run_solve(config: ExperimentConfig, writer: OutputWriter, report: RunReport, outputs: RunOutputs):
    model = config.model
    solution = solve_matching(model, config.solver)
    fluxes = solution.fluxes.as_dict(model.ions)
    writer.write_csv("orbit.csv", solution.orbit)
    writer.write_json("fluxes.json", {"model": model.summary(), "fluxes": fluxes,
                                       "J1": solution.fluxes.J1(model.ions.d), "J2": solution.fluxes.J2(model.ions.d),
                                       "iterations": solution.iterations, "residual_norm": solution.residual_norm})
    writer.write_json("state.json", {"state": solution.state.as_dict()})
    report.stats.update({"iterations": solution.iterations, "residual_norm": solution.residual_norm})
    outputs.profile = solution.orbit
    _summary(pd.DataFrame([{"J1": solution.fluxes.J1(model.ions.d), "J2": solution.fluxes.J2(model.ions.d),
                            **fluxes}]))


def run_sweep(config: ExperimentConfig, writer: OutputWriter, report: RunReport, outputs: RunOutputs):
    parameter = config.sweep.parameter
    points = continuation_sweep(config.model, parameter, config.sweep.grid, config.solver)
    frame = sweep_frame(points, parameter, config.model.ions)
    failed = [p.value for p in points if not p.ok]
    if failed:
        report.warnings.append(f"{len(failed)} sweep points failed: {failed}")
    writer.write_csv("sweep.csv", frame)
    report.stats.update({"points": len(points), "failed": len(failed)})
    outputs.sweep, outputs.sweep_parameter = frame[frame["status"] == "ok"], parameter
    _summary(frame)


def _iv_around(config: ExperimentConfig, V0: float, writer: OutputWriter, outputs: RunOutputs):
    grid = np.linspace(V0 - 2.0, V0 + 2.0, 20)
    points = continuation_sweep(config.model, "V", grid, config.solver)
    frame = sweep_frame(points, "V", config.model.ions)
    writer.write_csv("iv.csv", frame)
    outputs.sweep, outputs.sweep_parameter = frame[frame["status"] == "ok"], "V"
    outputs.iv_expected_crossings = 1


def run_zero_current(config: ExperimentConfig, writer: OutputWriter, report: RunReport, outputs: RunOutputs):
    zc = config.zero_current
    result = zero_current_fluxes(config.model, zc.mode, config.solver, zc.fd_step, zc.V_grid)
    at_V = config.model.with_parameter("V", result.V)
    if not result.V_critical:
        report.warnings.append("no critical voltage on the scan grid")
    curve = pd.DataFrame({"V": zc.V_grid, "J11_formula": [formula_J11(at_V, V) for V in zc.V_grid]})
    curve["J11_solver"] = np.where(np.isclose(curve["V"], result.V), result.solver["T1_half"], np.nan)
    if not np.any(np.isclose(curve["V"], result.V)):
        curve = pd.concat([curve, pd.DataFrame({"V": [result.V], "J11_formula": [result.J11],
                                                "J11_solver": [result.solver["T1_half"]]})], ignore_index=True)
        curve = curve.sort_values("V", kind="stable").reset_index(drop=True)
    writer.write_csv("zero_current_flux.csv", curve)
    writer.write_json("zero_current.json", result.as_dict())
    outputs.zero_current = curve
    if zc.mode == "reversal":
        _iv_around(config, result.V, writer, outputs)
    report.stats.update({"V": result.V, "J11": result.J11, "M00": result.M00, "M01": result.M01})
    _summary(pd.DataFrame([{"mode": result.mode, "V": result.V, "J10": result.J10, "J11=J21": result.J11,
                            "M00": result.M00, "M01": result.M01, "M20": result.M20,
                            "J11_solver": result.solver["T1_half"],
                            "J11_zero_current": result.solver["J11_zc"]}]))


def run_reversal(config: ExperimentConfig, writer: OutputWriter, report: RunReport, outputs: RunOutputs):
    result = reversal_potential(config.model, config.solver, config.zero_current.fd_step)
    writer.write_json("reversal.json", asdict(result))
    _iv_around(config, result.V0, writer, outputs)
    report.stats.update(asdict(result))
    _summary(pd.DataFrame([asdict(result)]))


def run_validate(config: ExperimentConfig, writer: OutputWriter, report: RunReport, outputs: RunOutputs):
    oracle = config.oracle
    comparison = asymptotic_comparison(config.model, oracle.eps_grid, oracle.d_grid, config.solver, oracle.bvp)
    table = comparison.table
    by_d = comparison.relative_errors()
    relative = max(by_d.values()) if by_d else float("nan")
    d_orders = [v for v in comparison.d_order.values() if np.isfinite(v)]
    verdict = {
        "relative_error_at_smallest_eps": relative,
        "relative_error_by_d": {str(d): v for d, v in by_d.items()},
        "relative_error_ok": relative <= oracle.max_relative_error,
        "eps_monotone": all(comparison.eps_monotone.values()),
        "d_order_ok": all(v >= oracle.min_d_order for v in d_orders) if d_orders else None,
    }
    verdict["pass"] = bool(verdict["relative_error_ok"] and verdict["eps_monotone"] and verdict["d_order_ok"] is not False)
    writer.write_csv("comparison.csv", table)
    writer.write_json("comparison.json", {**comparison.as_dict(), "verdict": verdict})
    report.stats.update(verdict)
    if not verdict["pass"]:
        report.warnings.append("validation thresholds not met")
    _summary(table)


COMMAND_RUNNERS = {
    "solve": run_solve,
    "sweep": run_sweep,
    "zero-current": run_zero_current,
    "reversal": run_reversal,
    "validate": run_validate,
}


def emit_plots(outputs: RunOutputs, config: ExperimentConfig, writer: OutputWriter, report: RunReport) -> List[str]:
    """SVG charts for whichever tables the command produced"""
    if "svg" not in config.output.formats:
        return []
    plotter = Plotter()
    written = []
    if outputs.sweep is not None:
        if outputs.sweep.empty:
            report.warnings.append("empty sweep, no I-V plot written")
        else:
            fig = plotter.iv_curve(outputs.sweep, outputs.sweep_parameter, config.model.ions.d)
            writer.write_svg("iv_curve.svg", fig)
            plotter.close(fig)
            written.append("iv_curve.svg")
            if outputs.iv_expected_crossings is not None:
                current = outputs.sweep["I0"] + config.model.ions.d * outputs.sweep["I1"]
                count = len(sign_changes(outputs.sweep[outputs.sweep_parameter], current))
                if count != outputs.iv_expected_crossings:
                    report.warnings.append(f"I-V curve has {count} zero crossings")
    if outputs.zero_current is not None:
        fig = plotter.zero_current_flux(outputs.zero_current)
        writer.write_svg("zero_current_flux.svg", fig)
        plotter.close(fig)
        written.append("zero_current_flux.svg")
    if outputs.profile is not None:
        g = config.model.geometry
        fig = plotter.profile(outputs.profile, g.a, g.b)
        writer.write_svg("profile.svg", fig)
        plotter.close(fig)
        written.append("profile.svg")
    return written


def run(config: ExperimentConfig) -> RunReport:
    """Execute the configured command and write its outputs"""
    report = RunReport(command=config.command)
    writer = OutputWriter(config.output.directory, config.output.formats)
    outputs = RunOutputs()
    started = time.perf_counter()
    try:
        COMMAND_RUNNERS[config.command](config, writer, report, outputs)
        report.timings["command"] = time.perf_counter() - started
        plotted = time.perf_counter()
        emit_plots(outputs, config, writer, report)
        report.timings["plots"] = time.perf_counter() - plotted
    except IonfluxError as e:
        report.status = f"failed: {type(e).__name__}"
        logging.error(f"{config.command} failed: {str(e)}")
        raise
    finally:
        report.timings["total"] = time.perf_counter() - started
        report.files = list(writer.manifest)
        writer.write_json("run_report.json", {**asdict(report), "config": config.raw}, always=True)
    for w in report.warnings:
        logger.warning(w)
    return report


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ionflux", description="Hard-sphere PNP singular-orbit toolkit")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="experiment file (key=value, dotenv syntax)")
    parser.add_argument("--out", default=None, help="output directory, overrides output.dir")
    parser.add_argument("--verbose", action="store_true", help="DEBUG logging")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        level = log_level_from_env(args.verbose)
    except IonfluxError as e:
        print(f"error: {str(e)}", file=sys.stderr)
        return e.exit_code
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config, args.out, args.command)
        report = run(config)
    except IonfluxError as e:
        print(f"error: {str(e)}", file=sys.stderr)
        return e.exit_code
    print(f"{report.command}: {report.status}, {len(report.files)} files in {config.output.directory}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
