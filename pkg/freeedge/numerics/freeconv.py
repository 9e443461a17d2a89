"""
Free additive convolution of a row of measures.

K-functions add under free convolution (minus the duplicated 1/w poles), so
every quantity here is computed from the members' own transforms: the
composite K_n, its critical point (the support edge), atoms of the sum, and
the density of S_n through the subordination system.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass, field, replace
from enum import StrEnum
from functools import cached_property

import numpy as np

from freeedge.common.errors import ConvergenceError, MeasureError, SeriesOrderError
from freeedge.common.logging import get_logger, log_duration
from freeedge.numerics.measure import AtomicMeasure, dilate, reflect
from freeedge.numerics.roots import bisect_sign_change
from freeedge.numerics.series import KSeries
from freeedge.numerics.transform import (
    DEFAULT_EPSILONS,
    DensityGrid,
    Quality,
    inner_branch_eval,
    r_derivative,
    r_eval,
    stieltjes_density,
)

SCAN_POINTS = 64
FALLBACK_POINTS = 4096
SCAN_LOW = 1e-6
SCAN_HIGH = 1e6
SLOPE_TOLERANCE = 1e-9
ATOM_MASS_TOLERANCE = 1e-12
NEAR_ATOM_DISTANCE = 1e-6

NEWTON_STEPS = 100
HOMOTOPY_STEPS = 40
RETRY_HOMOTOPY_STEPS = 160

logger = get_logger("freeconv")


@dataclass(frozen=True)
class RowSpec:
    """
    One row X_{n,1..k_n} of a triangular array, stored as (measure, count) groups.

    ``base`` records the normalized-sum structure (xi, scale): every member is
    dilate(xi, scale), which lets K_n be evaluated from xi alone.
    """

    groups: tuple[tuple[AtomicMeasure, int], ...]
    name: str = "row"
    base: tuple[AtomicMeasure, float] | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.groups:
            raise MeasureError("a row needs at least one member")
        for mu, count in self.groups:
            if count < 1:
                raise MeasureError(f"member count must be positive, got {count}")
            if not mu.is_centered():
                raise MeasureError(f"row members must be centered, {mu} has mean {mu.mean!r}")

    @classmethod
    def from_members(cls, members: Iterable[AtomicMeasure], name: str = "row") -> RowSpec:
        """Group equal measures, keeping the order of first appearance."""
        counts: dict[AtomicMeasure, int] = {}
        for mu in members:
            counts[mu] = counts.get(mu, 0) + 1
        return cls(tuple(counts.items()), name=name)

    @classmethod
    def from_groups(
        cls, groups: Iterable[tuple[AtomicMeasure, int]], name: str = "row"
    ) -> RowSpec:
        merged: dict[AtomicMeasure, int] = {}
        for mu, count in groups:
            merged[mu] = merged.get(mu, 0) + count
        return cls(tuple(merged.items()), name=name)

    @classmethod
    def normalized_sum(cls, xi: AtomicMeasure, n: int, name: str | None = None) -> RowSpec:
        """Row of (xi_1 + ... + xi_n) / sqrt(n) with xi_i distributed as xi."""
        if n < 1:
            raise MeasureError(f"row length must be positive, got {n}")
        scale = 1.0 / math.sqrt(n)
        member = dilate(xi, scale)
        return cls(((member, n),), name=name or f"{xi.name or 'xi'}-sum-{n}", base=(xi, scale))

    @property
    def k_n(self) -> int:
        return sum(count for _, count in self.groups)

    @property
    def members(self) -> Iterator[AtomicMeasure]:
        for mu, count in self.groups:
            for _ in range(count):
                yield mu

    @property
    def variance(self) -> float:
        """v_n, the sum of the members' second moments."""
        return math.fsum(count * mu.variance for mu, count in self.groups)

    @property
    def norm_bound(self) -> float:
        """L_n, the largest member norm bound."""
        return max(mu.norm_bound for mu, _ in self.groups)

    @property
    def cube_sum(self) -> float:
        """T_n, the sum of cubed member norm bounds."""
        return math.fsum(count * mu.norm_bound**3 for mu, count in self.groups)

    def reflected(self) -> RowSpec:
        base = None
        if self.base is not None:
            base = (reflect(self.base[0]), self.base[1])
        groups = tuple((reflect(mu), count) for mu, count in self.groups)
        return RowSpec(groups, name=self.name, base=base)

    def scaled(self, alpha: float) -> RowSpec:
        base = None
        if self.base is not None and alpha > 0:
            base = (self.base[0], self.base[1] * alpha)
        groups = tuple((dilate(mu, alpha), count) for mu, count in self.groups)
        return RowSpec(groups, name=self.name, base=base)


def k_add(ks: Sequence[KSeries]) -> KSeries:
    """K-series of the free sum: cumulants add, the 1/w pole stays single."""
    if not ks:
        raise SeriesOrderError("k_add needs at least one K-series")
    order = ks[0].order
    if any(k.order != order for k in ks):
        raise SeriesOrderError(f"K-series orders differ: {[k.order for k in ks]}")
    return KSeries(tuple(math.fsum(k.cumulants[i] for k in ks) for i in range(order)))


class CompositeK:
    """
    K_n(w) = sum_i K_{n,i}(w) - (k_n - 1)/w, evaluated as 1/w plus the sum of
    the members' regular parts.

    With ``use_shortcut`` and a normalized-sum row, the regular part is
    k * s * R_xi(s * w), which costs one member evaluation whatever k is.
    """

    def __init__(self, row: RowSpec, use_shortcut: bool = True):
        self.row = row
        self.use_shortcut = use_shortcut and row.base is not None

    @cached_property
    def _mirror(self) -> CompositeK:
        return CompositeK(self.row.reflected(), self.use_shortcut)

    def regular(self, w: float) -> float:
        """R_n(w) = K_n(w) - 1/w."""
        if w < 0:
            return -self._mirror.regular(-w)
        if self.use_shortcut:
            xi, scale = self.row.base  # type: ignore[misc]
            return self.row.k_n * scale * r_eval(xi, scale * w)
        return math.fsum(count * r_eval(mu, w) for mu, count in self.row.groups)

    def regular_derivative(self, w: float) -> float:
        if w < 0:
            return self._mirror.regular_derivative(-w)
        if self.use_shortcut:
            xi, scale = self.row.base  # type: ignore[misc]
            return self.row.k_n * scale * scale * r_derivative(xi, scale * w)
        return math.fsum(count * r_derivative(mu, w) for mu, count in self.row.groups)

    def value(self, w: float) -> float:
        if w == 0:
            raise MeasureError("K_n has its pole at 0")
        return 1.0 / w + self.regular(w)

    def derivative(self, w: float) -> float:
        return -1.0 / (w * w) + self.regular_derivative(w)

    def inner(self, w: float) -> tuple[float, float]:
        """
        K_n continued through the top atom of every member, for w < 0.

        Returns:
            (value, derivative)
        """
        value = 1.0 / w
        slope = -1.0 / (w * w)
        counts = [c for _, c in self.row.groups]
        parts = [inner_branch_eval(mu, w) for mu, _ in self.row.groups]
        value += math.fsum(c * (x - 1.0 / w) for (x, _), c in zip(parts, counts, strict=True))
        slope += math.fsum(
            c * (dx + 1.0 / (w * w)) for (_, dx), c in zip(parts, counts, strict=True)
        )
        return value, slope


def composite_k_eval(row: RowSpec, w: float, use_shortcut: bool = True) -> float:
    return CompositeK(row, use_shortcut).value(w)


def composite_k_derivative(row: RowSpec, w: float, use_shortcut: bool = True) -> float:
    return CompositeK(row, use_shortcut).derivative(w)


@dataclass(frozen=True)
class Atom:
    location: float
    mass: float


def detect_atoms(row: RowSpec) -> list[Atom]:
    """
    Atoms of the free convolution of the row.

    A choice of one atom t_i per member gives an atom of the sum at
    sum t_i with mass 1 - sum (1 - w_i) whenever that is positive. Identical
    members must pick the same atom, since two different atoms of one
    measure already use up the whole budget.
    """
    groups = [(mu, count) for mu, count in row.groups]
    found: list[Atom] = []

    def walk(index: int, location: float, deficit: float) -> None:
        if index == len(groups):
            mass = 1.0 - deficit
            if mass > ATOM_MASS_TOLERANCE:
                found.append(Atom(location=location, mass=mass))
            return
        mu, count = groups[index]
        for t, w in zip(mu.atoms, mu.weights, strict=True):
            step = count * (1.0 - w)
            if deficit + step < 1.0:
                walk(index + 1, location + count * t, deficit + step)

    walk(0, 0.0, 0.0)
    return sorted(found, key=lambda atom: atom.location)


class Side(StrEnum):
    RIGHT = "right"
    LEFT = "left"


class EdgeMode(StrEnum):
    CRITICAL_POINT = "critical_point"
    HARD_EDGE = "hard_edge"
    GRID_FALLBACK = "grid_fallback"
    ATOM = "atom"


@dataclass(frozen=True)
class EdgeReport:
    """
    Support edge of the row sum on one side.

    ``edge`` is the end of the continuous part; ``atom`` is set when an atom
    of the sum lies beyond it, in which case ``extent`` is the atom.
    """

    side: Side
    edge: float
    error_bound: float
    mode: EdgeMode
    w_star: float | None = None
    certified: bool = False
    atom: float | None = None
    atom_mass: float = 0.0

    @property
    def extent(self) -> float:
        """The outermost point of the support on this side."""
        if self.atom is None:
            return self.edge
        if self.side == Side.RIGHT:
            return max(self.edge, self.atom)
        return min(self.edge, self.atom)

    def mirrored(self) -> EdgeReport:
        return replace(
            self,
            side=Side.LEFT if self.side == Side.RIGHT else Side.RIGHT,
            edge=-self.edge,
            w_star=None if self.w_star is None else -self.w_star,
            atom=None if self.atom is None else -self.atom,
        )

    def to_dict(self) -> dict:
        return {
            "side": self.side.value,
            "edge": self.edge,
            "error_bound": self.error_bound,
            "mode": self.mode.value,
            "w_star": self.w_star,
            "certified": self.certified,
            "atom": self.atom,
            "atom_mass": self.atom_mass,
        }


def default_start(row: RowSpec) -> float | None:
    """
    w0 = 1/sqrt(v_n) - r_n when the finite-n hypotheses of the edge bound hold
    with R = 2L and m = 1/(4L); K_n has no critical point on (0, w0] then.
    """
    v = row.variance
    L = row.norm_bound
    if v <= 0 or L <= 0:
        return None
    d_n = 32.0 * row.cube_sum
    if not (math.sqrt(v) / (4.0 * L) > 4.0 and d_n / v**1.5 <= 0.125):
        return None
    return 1.0 / math.sqrt(v) - 4.0 * d_n / (v * v)


@dataclass
class _Scan:
    grid: np.ndarray
    slopes: list[float]

    @property
    def changes(self) -> list[int]:
        """Indices i where the slope sign differs between grid[i-1] and grid[i]."""
        signs = [s >= 0.0 for s in self.slopes]
        return [i for i in range(1, len(signs)) if signs[i] != signs[i - 1]]

    def first_rise(self) -> int | None:
        for i in self.changes:
            if self.slopes[i - 1] < 0.0 <= self.slopes[i]:
                return i
        return None


def _scan(slope, lo: float, hi: float, points: int) -> _Scan:
    grid = np.geomspace(lo, hi, points)
    return _Scan(grid=grid, slopes=[slope(float(w)) for w in grid])


def _refine(value, slope, lo: float, hi: float, tolerance: float) -> tuple[float, float, float]:
    """Locate the minimum between lo (slope < 0) and hi (slope >= 0)."""
    lo, hi, mid = bisect_sign_change(slope, lo, hi, tolerance)
    edge = value(mid)
    error = max(abs(value(lo) - edge), abs(value(hi) - edge))
    return mid, edge, error + 4.0 * math.ulp(edge)


def support_edge(
    row: RowSpec,
    side: Side | str = Side.RIGHT,
    start: float | None = None,
    scan_points: int = SCAN_POINTS,
    use_shortcut: bool = True,
    slope_tolerance: float = SLOPE_TOLERANCE,
) -> EdgeReport:
    """
    Right (or left) end of the support of the row sum.

    The right edge is K_n at its first critical point w* on (0, inf). The
    search scans the sign of K_n' on a logarithmic grid that starts at
    ``start`` (by default the certified w0 of :func:`default_start` when it
    exists) and bisects the first sign change until
    |K_n'| <= slope_tolerance * v_n. If the scan sees more than one sign
    change it is repeated on a fine grid and the result is marked
    ``grid_fallback``. Without a critical point the
    edge is either a hard edge, estimated by K_n at the top of the scan, or
    sits behind an atom of the sum, in which case it is searched for on the
    inner branch of K_n. The left edge is the mirrored right edge of the
    reflected row.
    """
    side = Side(side)
    if side == Side.LEFT:
        mirrored = support_edge(
            row.reflected(), Side.RIGHT, start, scan_points, use_shortcut, slope_tolerance
        )
        return mirrored.mirrored()

    v = row.variance
    atoms = detect_atoms(row)
    atom_total = math.fsum(atom.mass for atom in atoms)
    if row.k_n == 1 or v == 0 or atom_total >= 1.0 - 1e-9:
        top = atoms[-1]
        return EdgeReport(
            side, top.location, 0.0, EdgeMode.ATOM, atom=top.location, atom_mass=top.mass
        )

    composite = CompositeK(row, use_shortcut)
    tolerance = slope_tolerance * v
    sigma = math.sqrt(v)
    w_low, w_top = SCAN_LOW / sigma, SCAN_HIGH / sigma

    certified = False
    if start is None:
        start = default_start(row)
    if start is not None:
        certified = composite.derivative(start) < 0.0
        if not certified:
            logger.warning(f"K_n' is not negative at the certified start {start!r}; scanning")

    with log_duration(logger, f"edge scan of {row.name}"):
        scan = _scan(composite.derivative, start if certified else w_low, w_top, scan_points)
        mode = EdgeMode.CRITICAL_POINT
        if len(scan.changes) > 1:
            logger.debug(f"{len(scan.changes)} slope sign changes, rescanning finely")
            scan = _scan(composite.derivative, scan.grid[0], w_top, FALLBACK_POINTS)
            mode = EdgeMode.GRID_FALLBACK

        rise = scan.first_rise()
        if rise is not None:
            lo, hi = float(scan.grid[rise - 1]), float(scan.grid[rise])
            w_star, edge, error = _refine(composite.value, composite.derivative, lo, hi, tolerance)
            if mode == EdgeMode.GRID_FALLBACK:
                error = max(error, abs(composite.value(lo) - composite.value(hi)))
            return EdgeReport(side, edge, error, mode, w_star, certified)

        top_location = math.fsum(c * mu.max_atom for mu, c in row.groups)
        top_mass = 1.0 - math.fsum(c * (1.0 - mu.weights[-1]) for mu, c in row.groups)
        if top_mass > ATOM_MASS_TOLERANCE:
            logger.debug(f"atom of mass {top_mass:.6g} at {top_location!r}; searching inner branch")
            return _edge_behind_atom(
                composite, side, top_location, top_mass, w_low, w_top, tolerance
            )

        edge = composite.value(w_top)
        error = abs(edge - composite.value(w_top / 2.0))
        return EdgeReport(side, edge, error, EdgeMode.HARD_EDGE, w_top, certified)


def _edge_behind_atom(
    composite: CompositeK,
    side: Side,
    atom: float,
    mass: float,
    u_low: float,
    u_top: float,
    tolerance: float,
) -> EdgeReport:
    # H(u) = K_n(-u) on the inner branch: +inf at 0+, the atom as u -> inf
    def value(u: float) -> float:
        return composite.inner(-u)[0]

    def slope(u: float) -> float:
        return -composite.inner(-u)[1]

    scan = _scan(slope, u_low, u_top, SCAN_POINTS)
    rise = scan.first_rise()
    if rise is None:
        return EdgeReport(side, atom, 0.0, EdgeMode.ATOM, atom=atom, atom_mass=mass)
    u_star, edge, error = _refine(
        value, slope, float(scan.grid[rise - 1]), float(scan.grid[rise]), tolerance
    )
    return EdgeReport(
        side, edge, error, EdgeMode.CRITICAL_POINT, -u_star, False, atom=atom, atom_mass=mass
    )


def series_edge(k: KSeries, points: int = FALLBACK_POINTS) -> float:
    """Minimum of the truncated K(w) = 1/w + sum kappa_j w^(j-1) over its first monotone branch."""
    taylor = np.polynomial.Polynomial(k.cumulants)
    slope_poly = taylor.deriv()
    variance = k.cumulants[1] if k.order > 1 else 0.0
    if variance <= 0:
        raise MeasureError("series edge needs a positive second cumulant")
    sigma = math.sqrt(variance)

    def value(w: float) -> float:
        return 1.0 / w + float(taylor(w))

    def slope(w: float) -> float:
        return -1.0 / (w * w) + float(slope_poly(w))

    scan = _scan(slope, SCAN_LOW / sigma, 1e3 / sigma, points)
    rise = scan.first_rise()
    if rise is None:
        raise ConvergenceError("truncated K-series has no critical point on the scanned range")
    _, edge, _ = _refine(
        value, slope, float(scan.grid[rise - 1]), float(scan.grid[rise]), SLOPE_TOLERANCE * variance
    )
    return edge


class _Subordination:
    """
    G_n(z) from the coupled system in (omega, y_1..y_m):

        1/omega + sum_i c_i y_i = z,
        sum_a w_ia / (1 + omega (y_i - t_ia)) = 1   for every group i,

    where omega = G_n(z) and y_i = R_i(omega). Solved by damped Newton with
    the y_i eliminated from each step.
    """

    def __init__(self, row: RowSpec, continuation: bool = True):
        self.atoms = [mu.atom_array for mu, _ in row.groups]
        self.weights = [mu.weight_array for mu, _ in row.groups]
        self.variances = np.array([mu.variance for mu, _ in row.groups])
        self.counts = np.array([float(c) for _, c in row.groups])
        self.reach = 4.0 * (math.sqrt(row.variance) + row.norm_bound) + 1.0
        self.continuation = continuation
        self._state: tuple[complex, np.ndarray] | None = None

    def _residual(self, z: complex, omega: complex, ys: np.ndarray):
        f = 1.0 / omega + complex(np.dot(self.counts, ys)) - z
        phi = np.empty(len(ys), dtype=complex)
        s = np.empty(len(ys), dtype=complex)
        p = np.empty(len(ys), dtype=complex)
        for i, (t, w) in enumerate(zip(self.atoms, self.weights, strict=True)):
            shift = ys[i] - t
            b = 1.0 + omega * shift
            phi[i] = np.sum(w / b) - 1.0
            s[i] = np.sum(w / (b * b))
            p[i] = np.sum(w * shift / (b * b))
        return f, phi, s, p

    @staticmethod
    def _size(z: complex, f: complex, phi: np.ndarray) -> float:
        return abs(f) / max(1.0, abs(z)) + float(np.sum(np.abs(phi)))

    def _valid(self, z: complex, omega: complex, ys: np.ndarray) -> bool:
        if not omega.imag < 0.0:
            return False
        floor = z.imag * (1.0 - 1e-6) - 1e-12
        return bool(np.all((1.0 / omega + ys).imag >= floor))

    def _newton(self, z: complex, omega: complex, ys: np.ndarray):
        f, phi, s, p = self._residual(z, omega, ys)
        size = self._size(z, f, phi)
        for _ in range(NEWTON_STEPS):
            if size <= 1e-15:
                return omega, ys
            scale = omega * s
            denominator = 1.0 / omega**2 + np.sum(self.counts * p / scale)
            d_omega = (f + np.sum(self.counts * phi / scale)) / denominator
            d_ys = (phi - p * d_omega) / scale

            damping = 1.0
            while True:
                trial_omega = omega + damping * d_omega
                trial_ys = ys + damping * d_ys
                if trial_omega.imag < 0.0:
                    tf, tphi, ts, tp = self._residual(z, trial_omega, trial_ys)
                    trial_size = self._size(z, tf, tphi)
                    if trial_size < size or damping < 1e-3:
                        break
                damping *= 0.5
                if damping < 1e-6:
                    return None

            converged = abs(damping * d_omega) <= 1e-12 * abs(trial_omega) and np.all(
                np.abs(damping * d_ys) <= 1e-12 * (1.0 + np.abs(trial_ys))
            )
            omega, ys = trial_omega, trial_ys
            f, phi, s, p, size = tf, tphi, ts, tp, trial_size
            if converged:
                return omega, ys
        return None

    def _homotopy(self, z: complex, steps: int = HOMOTOPY_STEPS):
        eta = max(self.reach, 10.0 * z.imag)
        ratio = (z.imag / eta) ** (1.0 / steps)
        point = complex(z.real, eta)
        omega = 1.0 / point
        ys = self.variances * omega
        for step in range(steps + 1):
            point = complex(z.real, z.imag if step == steps else eta * ratio**step)
            solved = self._newton(point, omega, ys)
            if solved is None:
                return None
            omega, ys = solved
        return omega, ys

    def _solve_fresh(self, z: complex):
        """Track the solution down from far above z, once more on a finer path if that fails."""
        for steps in (HOMOTOPY_STEPS, RETRY_HOMOTOPY_STEPS):
            solved = self._homotopy(z, steps)
            if solved is not None and self._valid(z, *solved):
                return solved
            logger.debug(f"homotopy with {steps} steps failed at z = {z}")
        return None

    def __call__(self, z: complex) -> complex:
        solved = None
        if self.continuation and self._state is not None:
            solved = self._newton(z, *self._state)
            if solved is not None and not self._valid(z, *solved):
                solved = None
        if solved is None:
            solved = self._solve_fresh(z)
            if solved is None:
                self._state = None
                raise ConvergenceError(f"subordination Newton failed at z = {z}")
        if self.continuation:
            self._state = solved
        return solved[0]


def convolution_cauchy(row: RowSpec, z: complex) -> complex:
    """G_n(z) for Im z > 0."""
    if not z.imag > 0:
        raise MeasureError(f"G_n is evaluated in the upper half plane, got {z}")
    return _Subordination(row, continuation=False)(z)


def convolution_density(
    row: RowSpec,
    xs: Sequence[float],
    eps_sequence: Sequence[float] = DEFAULT_EPSILONS,
    continuation: bool = True,
    workers: int | None = None,
) -> DensityGrid:
    """
    Density of the row sum on a grid, with Stieltjes inversion of G_n.

    With ``continuation`` each grid point starts Newton from the previous
    solution; without it every point is solved independently, which allows
    ``workers`` threads. A point whose homotopy path fails is tracked once more
    on a path with RETRY_HOMOTOPY_STEPS steps before it is flagged
    ``newton_failed``. Points within 1e-6 of an atom of the sum are flagged
    ``near_atom``.
    """
    solver = _Subordination(row, continuation=continuation)
    with log_duration(logger, f"density of {row.name} on {len(xs)} points"):
        grid = stieltjes_density(
            solver, xs, eps_sequence, workers=None if continuation else workers
        )

    atoms = detect_atoms(row)
    if not atoms:
        return grid
    quality = list(grid.quality)
    for i, x in enumerate(grid.xs):
        if any(abs(x - atom.location) <= NEAR_ATOM_DISTANCE for atom in atoms):
            quality[i] = Quality.NEAR_ATOM
    return replace(grid, quality=tuple(quality))
