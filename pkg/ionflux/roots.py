"""Bracketing and safeguarded Newton root finding for scalar equations"""
import logging
from typing import Callable, Tuple

import numpy as np

from ionflux.errors import BracketFailure, NoBracket

logger = logging.getLogger(__name__)


def expand_bracket(f: Callable[[float], float], x0: float, delta: float = 1.0,
                   growth: float = 2.0, max_expansions: int = 60) -> Tuple[float, float]:
    """Grow [x0 - delta, x0 + delta] geometrically until f changes sign"""
    for _ in range(max_expansions):
        lo, hi = x0 - delta, x0 + delta
        with np.errstate(over="ignore", invalid="ignore"):
            flo, fhi = f(lo), f(hi)
        if np.isfinite(flo) or np.isfinite(fhi):
            if flo == 0.0:
                return lo, lo
            if fhi == 0.0:
                return hi, hi
            if np.sign(flo) != np.sign(fhi) and not (np.isnan(flo) or np.isnan(fhi)):
                return lo, hi
        delta *= growth
    raise BracketFailure(f"no sign change around x0={x0} up to half-width {delta}")


def bracket_upward(f: Callable[[float], float], x_lo: float, x_hi: float,
                   growth: float = 2.0, max_expansions: int = 80) -> Tuple[float, float]:
    """Walk [x_lo, x_hi] upward until f(x_lo) and f(x_hi) differ in sign"""
    f_lo = f(x_lo)
    for _ in range(max_expansions):
        f_hi = f(x_hi)
        if np.sign(f_hi) != np.sign(f_lo):
            return x_lo, x_hi
        x_lo, f_lo = x_hi, f_hi
        x_hi *= growth
    raise NoBracket(f"no sign change found below x={x_hi}")


def safeguarded_newton(f: Callable[[float], float], df: Callable[[float], float],
                       lo: float, hi: float, tol: float = 1e-12, max_iter: int = 200) -> float:
    """Newton iteration kept inside a sign-change bracket, bisecting when a step leaves it"""
    fl, fh = f(lo), f(hi)
    if fl == 0.0:
        return lo
    if fh == 0.0:
        return hi
    if np.sign(fl) == np.sign(fh):
        raise BracketFailure(f"root not bracketed by [{lo}, {hi}]")
    if fl < 0.0:
        xl, xh = lo, hi
    else:
        xl, xh = hi, lo
    x = 0.5 * (lo + hi)
    dx_old = abs(hi - lo)
    dx = dx_old
    fx, dfx = f(x), df(x)
    for _ in range(max_iter):
        if (((x - xh) * dfx - fx) * ((x - xl) * dfx - fx) > 0.0) or (abs(2.0 * fx) > abs(dx_old * dfx)):
            dx_old = dx
            dx = 0.5 * (xh - xl)
            x = xl + dx
        else:
            dx_old = dx
            dx = fx / dfx
            x = x - dx
        fx, dfx = f(x), df(x)
        if abs(dx) < tol * max(1.0, abs(x)) or fx == 0.0:
            return x
        if fx < 0.0:
            xl = x
        else:
            xh = x
    logger.warning(f"safeguarded Newton hit {max_iter} iterations, |f|={abs(fx):.3e}")
    return x
