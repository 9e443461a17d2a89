"""
Scalar root finding on a bracket.

Both solvers work on open brackets whose endpoints may be singular: they never
evaluate the function at ``lo`` or ``hi`` unless asked to.
"""

from __future__ import annotations

import math
from collections.abc import Callable

from freeedge.common.errors import BracketError, ConvergenceError

MAX_ITERATIONS = 200
RELATIVE_STEP = 1e-15


def safeguarded_newton(
    func: Callable[[float], tuple[float, float]],
    lo: float,
    hi: float,
    x0: float | None = None,
    increasing: bool = True,
    xtol: float = 0.0,
    max_iterations: int = MAX_ITERATIONS,
) -> float:
    """
    Find the root of a monotone function inside (lo, hi).

    Newton steps that leave the current bracket, or that fail to halve it,
    are replaced by bisection. Every evaluation narrows the bracket using the
    sign of f, so ``func`` must be monotone in the stated direction.

    Args:
        func: Returns (f(x), f'(x))
        lo: Left end of the bracket, not evaluated
        hi: Right end of the bracket, not evaluated
        x0: Starting point; the bracket midpoint if omitted or outside
        increasing: Direction of monotonicity
        xtol: Absolute step below which the iterate is accepted

    Returns:
        The root, to a relative step of about 1e-15

    Raises:
        BracketError: lo >= hi
        ConvergenceError: the iteration budget is exhausted
    """
    if not lo < hi:
        raise BracketError(f"empty bracket ({lo!r}, {hi!r})")

    x = x0 if x0 is not None and lo < x0 < hi else 0.5 * (lo + hi)
    previous_width = hi - lo
    for _ in range(max_iterations):
        f, df = func(x)
        if f == 0.0:
            return x
        if (f < 0.0) == increasing:
            lo = x
        else:
            hi = x

        step = f / df if df != 0.0 and math.isfinite(df) else math.inf
        candidate = x - step
        width = hi - lo
        if not lo < candidate < hi or abs(step) > 0.5 * previous_width:
            candidate = 0.5 * (lo + hi)
            step = x - candidate
        previous_width = width

        if candidate == x or abs(step) <= max(RELATIVE_STEP * abs(candidate), xtol):
            return candidate
        if width <= 4.0 * math.ulp(max(abs(lo), abs(hi))):
            return candidate
        x = candidate

    raise ConvergenceError(f"Newton iteration did not converge in ({lo!r}, {hi!r})")


def bisect_sign_change(
    func: Callable[[float], float],
    lo: float,
    hi: float,
    tolerance: float,
    max_iterations: int = MAX_ITERATIONS,
) -> tuple[float, float, float]:
    """
    Narrow a bracket with func(lo) < 0 <= func(hi) until |func(mid)| <= tolerance.

    Returns:
        (lo, hi, mid) of the final bracket
    """
    mid = 0.5 * (lo + hi)
    for _ in range(max_iterations):
        mid = 0.5 * (lo + hi)
        value = func(mid)
        if abs(value) <= tolerance or mid in (lo, hi):
            return lo, hi, mid
        if value < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 4.0 * math.ulp(hi):
            break
    return lo, hi, mid
