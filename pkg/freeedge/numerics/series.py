"""
Truncated power series, G-series and K-series.

Conventions:

* ``GSeries.coeffs`` is (1, m_1, ..., m_N): G(z) = sum_k coeffs[k] z^-(k+1).
* ``KSeries.cumulants`` is (kappa_1, ..., kappa_N): K(w) = 1/w + sum_k kappa_k w^(k-1).
  The Taylor coefficient of w^k (k >= 1) equals -b^(k), the contour
  coefficient of the Lagrange inversion formula, and kappa_1 = m_1.
"""

from __future__ import annotations

import math
from collections import Counter
from collections.abc import Iterator, Sequence
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from freeedge.common.errors import MeasureError, QuadratureError, SeriesOrderError
from freeedge.common.logging import get_logger
from freeedge.numerics.measure import AtomicMeasure, MomentVector, moments

DEFAULT_ORDER = 16
DEFAULT_NODES = 512
MAX_NODES = 8192
NODE_TOLERANCE = 1e-10
MAX_NC_ORDER = 12

logger = get_logger("series")


@dataclass(frozen=True)
class TruncatedSeries:
    """Real power series c_0 + c_1 x + ... + c_N x^N; every operation truncates at N."""

    coeffs: tuple[float, ...]

    @classmethod
    def from_array(cls, values, order: int | None = None) -> TruncatedSeries:
        values = [float(v) for v in values]
        if order is not None:
            values = (values + [0.0] * (order + 1))[: order + 1]
        return cls(tuple(values))

    @classmethod
    def identity(cls, order: int) -> TruncatedSeries:
        """The series x."""
        return cls.from_array([0.0, 1.0], order)

    @classmethod
    def constant(cls, value: float, order: int) -> TruncatedSeries:
        return cls.from_array([value], order)

    @property
    def order(self) -> int:
        return len(self.coeffs) - 1

    def as_array(self) -> np.ndarray:
        return np.asarray(self.coeffs, dtype=float)

    def _check(self, other: TruncatedSeries) -> None:
        if other.order != self.order:
            raise SeriesOrderError(f"series orders differ: {self.order} and {other.order}")

    def __add__(self, other: TruncatedSeries) -> TruncatedSeries:
        self._check(other)
        return TruncatedSeries.from_array(self.as_array() + other.as_array())

    def __sub__(self, other: TruncatedSeries) -> TruncatedSeries:
        self._check(other)
        return TruncatedSeries.from_array(self.as_array() - other.as_array())

    def __mul__(self, other: TruncatedSeries | float) -> TruncatedSeries:
        if isinstance(other, TruncatedSeries):
            self._check(other)
            product = np.convolve(self.as_array(), other.as_array())
            return TruncatedSeries.from_array(product[: self.order + 1])
        return TruncatedSeries.from_array(self.as_array() * float(other))

    __rmul__ = __mul__

    def power(self, n: int) -> TruncatedSeries:
        result = TruncatedSeries.constant(1.0, self.order)
        for _ in range(n):
            result = result * self
        return result

    def reciprocal(self) -> TruncatedSeries:
        """1 / self, requires a nonzero constant term."""
        c = self.coeffs
        if c[0] == 0.0:
            raise SeriesOrderError("reciprocal of a series with zero constant term")
        inverse = [1.0 / c[0]]
        for n in range(1, self.order + 1):
            acc = math.fsum(c[j] * inverse[n - j] for j in range(1, n + 1))
            inverse.append(-acc / c[0])
        return TruncatedSeries(tuple(inverse))

    def compose(self, inner: TruncatedSeries) -> TruncatedSeries:
        """self(inner(x)); inner must have zero constant term."""
        self._check(inner)
        if inner.coeffs[0] != 0.0:
            raise SeriesOrderError("inner series of a composition must vanish at 0")
        result = TruncatedSeries.constant(0.0, self.order)
        # Horner in the series ring
        for c in reversed(self.coeffs):
            result = result * inner + TruncatedSeries.constant(c, self.order)
        return result

    def truncate(self, order: int) -> TruncatedSeries:
        return TruncatedSeries.from_array(self.coeffs, order)

    def evaluate(self, x: complex) -> complex:
        acc: complex = 0.0
        for c in reversed(self.coeffs):
            acc = acc * x + c
        return acc


@dataclass(frozen=True)
class GSeries:
    """Laurent expansion of G at infinity: coefficients (1, m_1, ..., m_N)."""

    coeffs: tuple[float, ...]

    def __post_init__(self):
        if len(self.coeffs) < 2 or self.coeffs[0] != 1.0:
            raise SeriesOrderError("a G-series starts with the coefficient 1 of 1/z")

    @property
    def order(self) -> int:
        return len(self.coeffs) - 1

    def g_series(self) -> TruncatedSeries:
        """g(u) = G(1/u) = u + m_1 u^2 + ... as a series of order N + 1."""
        return TruncatedSeries((0.0, *self.coeffs))

    def moment_vector(self) -> MomentVector:
        return MomentVector(order=self.order, values=self.coeffs[1:])


@dataclass(frozen=True)
class KSeries:
    """K(w) = 1/w + kappa_1 + kappa_2 w + ... + kappa_N w^(N-1)."""

    cumulants: tuple[float, ...]

    @property
    def order(self) -> int:
        return len(self.cumulants)

    @property
    def taylor(self) -> tuple[float, ...]:
        """Coefficients of w^0..w^(N-1) after the pole."""
        return self.cumulants

    def regular_part(self) -> TruncatedSeries:
        """R(w) = K(w) - 1/w as a series of order N - 1."""
        return TruncatedSeries(self.cumulants)

    def evaluate(self, w: complex) -> complex:
        return 1.0 / w + self.regular_part().evaluate(w)


def g_from_moments(m: MomentVector) -> GSeries:
    return GSeries((1.0, *m.values))


def k_from_g_formal(g: GSeries) -> KSeries:
    """
    Formal inverse of a G-series.

    With M(z) = 1 + sum m_n z^n the free cumulants satisfy
    m_n = sum_{s=1..n} kappa_s [z^(n-s)] M(z)^s, which is solved for kappa_n
    order by order.
    """
    order = g.order
    moment_series = TruncatedSeries.from_array(g.coeffs, order)
    powers = [TruncatedSeries.constant(1.0, order)]
    for _ in range(order):
        powers.append(powers[-1] * moment_series)

    kappa: list[float] = []
    for n in range(1, order + 1):
        correction = math.fsum(kappa[s - 1] * powers[s].coeffs[n - s] for s in range(1, n))
        kappa.append(g.coeffs[n] - correction)
    return KSeries(tuple(kappa))


def compose_g_k(g: GSeries, k: KSeries) -> TruncatedSeries:
    """
    Series of G(K(w)) / w, which equals 1 when k is the inverse of g.

    Writing K(w) = h(w) / w with h = 1 + kappa_1 w + ..., one has
    G(K(w)) / w = sum_j m_j w^j h(w)^-(j+1).
    """
    order = min(g.order, k.order)
    h = TruncatedSeries.from_array((1.0, *k.cumulants), order)
    h_inverse = h.reciprocal()
    w = TruncatedSeries.identity(order)
    result = TruncatedSeries.constant(0.0, order)
    term = h_inverse
    for j in range(order + 1):
        result = result + term * g.coeffs[j]
        term = term * w * h_inverse
    return result


def coefficient_bound(k: int, radius_r: float, lower_m: float) -> float:
    """Upper bound (R / k) * m^-k on |b^(k)|."""
    return radius_r / k * lower_m ** (-k)


@dataclass(frozen=True)
class LagrangeResult:
    """Contour coefficients b^(1)..b^(N-1) and the K-series they define."""

    kseries: KSeries
    b: tuple[float, ...]
    radius: float
    nodes: int
    residual: float


def _contour_coefficients(mu: AtomicMeasure, count: int, radius: float, nodes: int) -> np.ndarray:
    # b^(k) = 1/(2 pi i k) \oint dz / (z^2 g(z)^k); with z = r e^{i theta}, dz = i z dtheta
    theta = 2.0 * np.pi * np.arange(nodes) / nodes
    z = radius * np.exp(1j * theta)
    g = z * np.sum(mu.weight_array[:, None] / (1.0 - mu.atom_array[:, None] * z[None, :]), axis=0)
    base = 1.0 / z
    inverse_g = 1.0 / g
    values = np.empty(count)
    term = base
    for k in range(1, count + 1):
        term = term * inverse_g
        # fixed summation order keeps the reduction deterministic
        values[k - 1] = math.fsum(term.real) / (k * nodes)
    return values


def lagrange_coeffs(
    mu: AtomicMeasure,
    order: int = DEFAULT_ORDER,
    radius: float | None = None,
    nodes: int = DEFAULT_NODES,
    max_nodes: int = MAX_NODES,
    tolerance: float = NODE_TOLERANCE,
) -> LagrangeResult:
    """
    K-series of mu from the contour formula of the Lagrange inversion.

    The integrals are evaluated by the trapezoid rule on |z| = radius in the
    coordinate g(z) = G(1/z); the node count doubles from ``nodes`` until two
    successive coefficient vectors agree within ``tolerance`` (relative to
    their size) or ``max_nodes`` is exceeded. The constant term kappa_1 is
    taken as m_1 directly rather than from the double pole at z = 0.

    Args:
        mu: The measure
        order: Number N of cumulants to return
        radius: Contour radius, must be below 1/L; default 1/(2L)
        nodes: Initial number of trapezoid nodes
    """
    if order < 1:
        raise SeriesOrderError(f"order must be positive, got {order}")
    bound = mu.norm_bound
    if radius is None:
        radius = 1.0 / (2.0 * bound) if bound > 0 else 1.0
    if radius <= 0 or (bound > 0 and radius >= 1.0 / bound):
        raise MeasureError(f"contour radius {radius} must lie in (0, 1/L) with L = {bound}")

    count = order - 1
    previous = _contour_coefficients(mu, count, radius, nodes)
    residual = math.inf
    while True:
        if count == 0:
            residual = 0.0
            break
        doubled = nodes * 2
        current = _contour_coefficients(mu, count, radius, doubled)
        scale = np.maximum(1.0, np.abs(current))
        residual = float(np.max(np.abs(current - previous) / scale))
        previous, nodes = current, doubled
        if residual < tolerance:
            break
        if nodes >= max_nodes:
            raise QuadratureError(
                f"contour coefficients did not settle with {nodes} nodes at radius {radius}",
                residual,
            )
        logger.debug(f"doubling contour nodes to {nodes * 2}, residual {residual:.3e}")

    b = tuple(float(v) for v in previous)
    kseries = KSeries((mu.mean, *(-v for v in b)))
    return LagrangeResult(kseries=kseries, b=b, radius=radius, nodes=nodes, residual=residual)


def k_from_measure(mu: AtomicMeasure, order: int = DEFAULT_ORDER) -> KSeries:
    """Convenience: formal K-series of mu through its moments."""
    return k_from_g_formal(g_from_moments(moments(mu, order)))


def non_crossing_partitions(n: int) -> Iterator[list[tuple[int, ...]]]:
    """Yield every non-crossing partition of {1..n} as a list of blocks."""
    yield from _nc_partitions(tuple(range(1, n + 1)))


def _nc_partitions(items: tuple[int, ...]) -> Iterator[list[tuple[int, ...]]]:
    if not items:
        yield []
        return
    yield from _with_block((items[0],), items[1:])


def _with_block(block: tuple[int, ...], tail: tuple[int, ...]) -> Iterator[list[tuple[int, ...]]]:
    # close the block: everything after it is an independent interval
    for rest in _nc_partitions(tail):
        yield [block, *rest]
    # or extend it; the skipped gap can only pair within itself
    for i in range(len(tail)):
        gap, nxt, rest_items = tail[:i], tail[i], tail[i + 1 :]
        for gap_partition in _nc_partitions(gap):
            for rest in _with_block((*block, nxt), rest_items):
                yield gap_partition + rest


@lru_cache(maxsize=None)
def _block_type_counts(n: int) -> tuple[tuple[tuple[int, ...], int], ...]:
    tally: Counter[tuple[int, ...]] = Counter()
    for partition in non_crossing_partitions(n):
        tally[tuple(sorted(len(block) for block in partition))] += 1
    return tuple(sorted(tally.items()))


def _check_nc_order(order: int) -> None:
    if order > MAX_NC_ORDER:
        raise SeriesOrderError(
            f"non-crossing enumeration is limited to order {MAX_NC_ORDER}, got {order}"
        )


def cumulants_from_moments_nc(m: MomentVector) -> tuple[float, ...]:
    """Free cumulants from m_n = sum over NC(n) of products of kappa_|V|."""
    _check_nc_order(m.order)
    kappa: list[float] = []
    for n in range(1, m.order + 1):
        others = math.fsum(
            count * math.prod(kappa[size - 1] for size in sizes)
            for sizes, count in _block_type_counts(n)
            if sizes != (n,)
        )
        kappa.append(m.m(n) - others)
    return tuple(kappa)


def moments_from_cumulants_nc(kappa: Sequence[float]) -> MomentVector:
    """Inverse of cumulants_from_moments_nc."""
    _check_nc_order(len(kappa))
    values = tuple(
        math.fsum(
            count * math.prod(kappa[size - 1] for size in sizes)
            for sizes, count in _block_type_counts(n)
        )
        for n in range(1, len(kappa) + 1)
    )
    return MomentVector(order=len(kappa), values=values)
