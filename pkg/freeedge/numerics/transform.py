"""
Cauchy transform and K-function of atomic measures, evaluated as functions.

K is obtained by inverting the exact rational G of an atomic measure rather
than by summing the K-series, so it is valid on the whole real branch
(0, inf) and not only inside the radius of convergence of the series.
"""

from __future__ import annotations

import cmath
import math
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import StrEnum

import numpy as np

from freeedge.common.errors import ConvergenceError, MeasureError, PoleError
from freeedge.common.logging import get_logger
from freeedge.numerics.measure import AtomicMeasure, reflect
from freeedge.numerics.roots import safeguarded_newton

DEFAULT_EPSILONS = (1e-2, 5e-3, 2.5e-3)
EXTRAPOLATION_AGREEMENT = 1e-2

logger = get_logger("transform")


def cauchy_eval(mu: AtomicMeasure, z: complex) -> complex:
    """G(z) = sum_i w_i / (z - t_i)."""
    total = 0j
    for t, w in zip(mu.atoms, mu.weights, strict=True):
        if z == t:
            raise PoleError(f"G evaluated at the atom {t!r}")
        total += w / (z - t)
    return total


def cauchy_derivative(mu: AtomicMeasure, z: complex) -> complex:
    total = 0j
    for t, w in zip(mu.atoms, mu.weights, strict=True):
        if z == t:
            raise PoleError(f"G' evaluated at the atom {t!r}")
        total -= w / (z - t) ** 2
    return total


def _regular_part(mu: AtomicMeasure, u: float) -> tuple[float, float, float]:
    """Solve for y = R(u) and return (y, sum w/d^2, sum w (y - t)^2 / d^2)."""
    atoms = mu.atom_array
    weights = mu.weight_array

    # F(y) = sum w (y - t) / (1 + u (y - t)) is increasing and concave,
    # with its root in (t_max - 1/u, t_max] and not below t_min.
    lo = max(mu.min_atom, mu.max_atom - 1.0 / u)
    hi = mu.max_atom

    def func(y: float) -> tuple[float, float]:
        shift = y - atoms
        d = 1.0 + u * shift
        return math.fsum(weights * shift / d), math.fsum(weights / (d * d))

    seed = mu.mean + mu.variance * u
    scale = 1e-16 * (mu.norm_bound + abs(mu.mean))
    y = safeguarded_newton(func, lo, hi, x0=seed, increasing=True, xtol=scale)
    shift = y - atoms
    d2 = (1.0 + u * shift) ** 2
    return y, math.fsum(weights / d2), math.fsum(weights * shift * shift / d2)


def r_eval(mu: AtomicMeasure, u: float) -> float:
    """
    Regular part R(u) = K(u) - 1/u for u > 0.

    Evaluated directly from sum w (y - t) / (1 + u (y - t)) = 0, which keeps
    full relative precision for small u where K(u) - 1/u would cancel.
    """
    _check_positive(u)
    if mu.is_point_mass:
        return mu.atoms[0]
    return _regular_part(mu, u)[0]


def r_derivative(mu: AtomicMeasure, u: float) -> float:
    """R'(u) = sum w (y - t)^2 / d^2 / sum w / d^2, free of cancellation."""
    _check_positive(u)
    if mu.is_point_mass:
        return 0.0
    _, s0, s2 = _regular_part(mu, u)
    return s2 / s0


def k_eval(mu: AtomicMeasure, w: float) -> float:
    """The unique x > max atom with G(x) = w, for w > 0."""
    _check_positive(w)
    return 1.0 / w + r_eval(mu, w)


def k_derivative(mu: AtomicMeasure, w: float) -> float:
    return -1.0 / (w * w) + r_derivative(mu, w)


def k_eval_left(mu: AtomicMeasure, w: float) -> float:
    """K on the negative branch: K(w) = -K_{-mu}(-w) for w < 0."""
    if not w < 0:
        raise MeasureError(f"left branch needs w < 0, got {w!r}")
    return -k_eval(reflect(mu), -w)


def k_eval_real(mu: AtomicMeasure, w: float) -> float:
    """K on either real branch."""
    return k_eval(mu, w) if w > 0 else k_eval_left(mu, w)


def inner_branch_eval(mu: AtomicMeasure, w: float) -> tuple[float, float]:
    """
    Inverse of G between the two largest atoms, for w < 0.

    G decreases from +inf to -inf on (t_{top-1}, t_top), or from 0 to -inf
    on (-inf, t_top) for a point mass. This branch continues K past a top
    atom of a convolution and carries the edge of its continuous part.

    Returns:
        (x, dx/dw)
    """
    if not w < 0:
        raise MeasureError(f"inner branch needs w < 0, got {w!r}")
    top = mu.max_atom
    if mu.is_point_mass:
        return top + 1.0 / w, -1.0 / (w * w)

    atoms = mu.atom_array
    weights = mu.weight_array

    def func(x: float) -> tuple[float, float]:
        diff = x - atoms
        return math.fsum(weights / diff) - w, -math.fsum(weights / (diff * diff))

    lo = mu.atoms[-2]
    top_weight = mu.weights[-1]
    # G ~ w_top / (x - t_top) near the top atom
    seed = top + top_weight / w
    x = safeguarded_newton(func, lo, top, x0=seed, increasing=False, xtol=1e-16 * mu.norm_bound)
    return x, 1.0 / func(x)[1]


def _check_positive(u: float) -> None:
    if not u > 0:
        raise MeasureError(f"K is evaluated on (0, inf) here, got {u!r}")


class Quality(StrEnum):
    OK = "ok"
    UNCONVERGED = "unconverged"
    NEAR_ATOM = "near_atom"
    NEWTON_FAILED = "newton_failed"


@dataclass(frozen=True)
class DensityGrid:
    """Density values phi(x) recovered on a grid, one quality flag per point."""

    xs: tuple[float, ...]
    epsilons: tuple[float, ...]
    values: tuple[float, ...]
    quality: tuple[Quality, ...]

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.xs), np.asarray(self.values)

    def mass(self) -> float:
        xs, values = self.as_arrays()
        return float(np.trapezoid(values, xs))

    def cdf(self) -> np.ndarray:
        """Cumulative trapezoid mass at every grid point, starting from 0."""
        xs, values = self.as_arrays()
        pieces = 0.5 * (values[1:] + values[:-1]) * np.diff(xs)
        return np.concatenate(([0.0], np.cumsum(pieces)))

    def value_at(self, x: float) -> float:
        xs, values = self.as_arrays()
        return float(np.interp(x, xs, values))

    def flagged(self) -> list[int]:
        return [i for i, q in enumerate(self.quality) if q != Quality.OK]

    def to_csv(self) -> str:
        lines = ["x,phi,quality"]
        lines.extend(
            f"{x:.17g},{phi:.17g},{q.value}"
            for x, phi, q in zip(self.xs, self.values, self.quality, strict=True)
        )
        return "\n".join(lines) + "\n"


def _richardson(epsilons: Sequence[float], samples: Sequence[float]) -> tuple[float, float]:
    """Linear extrapolation to eps = 0 from the two smallest offsets, and a second estimate."""

    def pair(i: int, j: int) -> float:
        ei, ej = epsilons[i], epsilons[j]
        return (ei * samples[j] - ej * samples[i]) / (ei - ej)

    finest = pair(len(epsilons) - 2, len(epsilons) - 1)
    coarser = pair(len(epsilons) - 3, len(epsilons) - 2) if len(epsilons) > 2 else finest
    return finest, coarser


def stieltjes_density(
    g_eval: Callable[[complex], complex],
    xs: Sequence[float],
    eps_sequence: Sequence[float] = DEFAULT_EPSILONS,
    agreement: float = EXTRAPOLATION_AGREEMENT,
    workers: int | None = None,
) -> DensityGrid:
    """
    Recover phi(x) = -Im G(x + i0) / pi on a grid.

    G is sampled at x + i*eps for every eps, looping over eps first and then
    over the grid in order, so a stateful ``g_eval`` may continue its previous
    solution. The eps -> 0 limit is a two-point Richardson extrapolation on
    the two smallest offsets; a point whose extrapolation disagrees with the
    one from the next pair by more than ``agreement`` is flagged
    ``unconverged``. Negative results are clamped to 0.

    Args:
        g_eval: Analytic in the upper half plane; may raise ConvergenceError
        xs: Increasing grid
        eps_sequence: Strictly decreasing positive offsets, at least two
        workers: Evaluate grid points concurrently (only for stateless g_eval)
    """
    epsilons = tuple(float(e) for e in eps_sequence)
    if len(epsilons) < 2:
        raise MeasureError("Richardson extrapolation needs at least two offsets")
    decreasing = all(a > b for a, b in zip(epsilons, epsilons[1:], strict=False))
    if any(e <= 0 for e in epsilons) or not decreasing:
        raise MeasureError(f"offsets must be positive and decreasing, got {epsilons}")
    grid = tuple(float(x) for x in xs)

    def sample(z: complex) -> float | None:
        try:
            return -g_eval(z).imag / math.pi
        except ConvergenceError as exc:
            logger.debug(f"G failed at {z}: {exc}")
            return None

    samples: list[list[float | None]] = []
    for eps in epsilons:
        points = [complex(x, eps) for x in grid]
        if workers and workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as executor:
                samples.append(list(executor.map(sample, points)))
        else:
            samples.append([sample(z) for z in points])

    values: list[float] = []
    quality: list[Quality] = []
    for i in range(len(grid)):
        column = [row[i] for row in samples]
        if any(v is None for v in column):
            values.append(0.0)
            quality.append(Quality.NEWTON_FAILED)
            continue
        finest, coarser = _richardson(epsilons, column)  # type: ignore[arg-type]
        if abs(finest - coarser) > agreement * max(1.0, abs(finest)):
            quality.append(Quality.UNCONVERGED)
        else:
            quality.append(Quality.OK)
        values.append(max(finest, 0.0))

    unconverged = quality.count(Quality.UNCONVERGED)
    if unconverged:
        logger.warning(f"{unconverged} of {len(grid)} density points did not settle in eps")
    return DensityGrid(xs=grid, epsilons=epsilons, values=tuple(values), quality=tuple(quality))


def semicircle_cauchy(a2: float, z: complex) -> complex:
    """G of the semicircle law of variance a2, correct on the whole upper half plane."""
    radius = 2.0 * math.sqrt(a2)
    return (z - cmath.sqrt(z - radius) * cmath.sqrt(z + radius)) / (2.0 * a2)


def semicircle_density(a2: float, x: float) -> float:
    if a2 <= 0:
        raise MeasureError(f"semicircle variance must be positive, got {a2!r}")
    inside = 4.0 * a2 - x * x
    if inside <= 0:
        return 0.0
    return math.sqrt(inside) / (2.0 * math.pi * a2)


def semicircle_cdf(a2: float, x: float) -> float:
    y = x / math.sqrt(a2)
    if y <= -2:
        return 0.0
    if y >= 2:
        return 1.0
    return 0.5 + (y * math.sqrt(4.0 - y * y) + 4.0 * math.asin(y / 2.0)) / (4.0 * math.pi)


def arcsine_cauchy(z: complex) -> complex:
    """G of the arcsine law on [-2, 2], the free square of the symmetric coin."""
    return 1.0 / (cmath.sqrt(z - 2.0) * cmath.sqrt(z + 2.0))


def arcsine_density(x: float) -> float:
    if abs(x) >= 2:
        return 0.0
    return 1.0 / (math.pi * math.sqrt(4.0 - x * x))


def arcsine_cdf(x: float) -> float:
    if x <= -2:
        return 0.0
    if x >= 2:
        return 1.0
    return 0.5 + math.asin(x / 2.0) / math.pi


def free_poisson_edges(lam: float) -> tuple[float, float]:
    """Support of the centered free Poisson law with rate lam and unit jumps."""
    if lam <= 0:
        raise MeasureError(f"rate must be positive, got {lam!r}")
    root = math.sqrt(lam)
    return (1.0 - root) ** 2 - lam, (1.0 + root) ** 2 - lam


def free_poisson_density(lam: float, x: float) -> float:
    """Density of the continuous part of the centered free Poisson law."""
    lo, hi = free_poisson_edges(lam)
    if not lo < x < hi:
        return 0.0
    y = x + lam
    return math.sqrt((hi - x) * (x - lo)) / (2.0 * math.pi * y)
