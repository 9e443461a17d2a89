"""
Compactly supported probability measures stored as weighted atoms.

Every quantity the library needs (moments, Cauchy transform, K-function) is
exact for atomic measures, so continuous limit laws only appear as
closed-form references in :mod:`freeedge.numerics.transform`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from freeedge.common.errors import MeasureError

MERGE_TOLERANCE = 1e-12
WEIGHT_SUM_TOLERANCE = 1e-12


@dataclass(frozen=True)
class MomentVector:
    """Moments m_1..m_order of a measure (values[k - 1] is m_k)."""

    order: int
    values: tuple[float, ...]

    def __post_init__(self):
        if self.order < 1 or len(self.values) != self.order:
            raise MeasureError(f"moment vector needs {self.order} values, got {len(self.values)}")

    def m(self, k: int) -> float:
        """Return m_k, with m_0 = 1."""
        if k == 0:
            return 1.0
        return self.values[k - 1]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


@dataclass(frozen=True)
class AtomicMeasure:
    """
    A probability measure sum_i weights[i] * delta(atoms[i]).

    Construction canonicalizes: atoms are sorted, atoms closer than
    MERGE_TOLERANCE are merged, and weights that sum to 1 within
    WEIGHT_SUM_TOLERANCE are renormalized. Two measures describing the same
    distribution therefore compare equal.
    """

    atoms: tuple[float, ...]
    weights: tuple[float, ...]
    name: str | None = field(default=None, compare=False)

    def __post_init__(self):
        atoms, weights = _canonicalize(self.atoms, self.weights)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @cached_property
    def atom_array(self) -> np.ndarray:
        return np.asarray(self.atoms, dtype=float)

    @cached_property
    def weight_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)

    @property
    def norm_bound(self) -> float:
        """L = max |atom|, the bound on the norm of the variable."""
        return max(abs(self.atoms[0]), abs(self.atoms[-1]))

    @property
    def max_atom(self) -> float:
        return self.atoms[-1]

    @property
    def min_atom(self) -> float:
        return self.atoms[0]

    @property
    def mean(self) -> float:
        return math.fsum(w * t for t, w in zip(self.atoms, self.weights, strict=True))

    @property
    def variance(self) -> float:
        mean = self.mean
        return math.fsum(w * (t - mean) ** 2 for t, w in zip(self.atoms, self.weights, strict=True))

    @property
    def second_moment(self) -> float:
        return math.fsum(w * t * t for t, w in zip(self.atoms, self.weights, strict=True))

    @property
    def is_point_mass(self) -> bool:
        return len(self.atoms) == 1

    def is_centered(self, tolerance: float = 1e-12) -> bool:
        return abs(self.mean) <= tolerance * (1.0 + self.norm_bound)

    def __str__(self) -> str:
        label = self.name or "measure"
        pairs = ", ".join(f"{w:.6g}@{t:.6g}" for t, w in zip(self.atoms, self.weights, strict=True))
        return f"{label}[{pairs}]"


def _canonicalize(atoms, weights) -> tuple[tuple[float, ...], tuple[float, ...]]:
    atoms = [float(t) for t in atoms]
    weights = [float(w) for w in weights]

    if not atoms:
        raise MeasureError("a measure needs at least one atom")
    if len(atoms) != len(weights):
        raise MeasureError(f"{len(atoms)} atoms but {len(weights)} weights")
    if not all(math.isfinite(t) for t in atoms):
        raise MeasureError("atoms must be finite")
    if not all(math.isfinite(w) and w > 0.0 for w in weights):
        raise MeasureError("weights must be positive")

    total = math.fsum(weights)
    if abs(total - 1.0) > WEIGHT_SUM_TOLERANCE:
        raise MeasureError(f"weights sum to {total!r}, not 1")

    order = sorted(range(len(atoms)), key=lambda i: atoms[i])
    merged_atoms: list[float] = []
    merged_weights: list[float] = []
    for i in order:
        if merged_atoms and atoms[i] - merged_atoms[-1] < MERGE_TOLERANCE:
            merged_weights[-1] += weights[i]
        else:
            merged_atoms.append(atoms[i])
            merged_weights.append(weights[i])

    total = math.fsum(merged_weights)
    return tuple(merged_atoms), tuple(w / total for w in merged_weights)


def moments(mu: AtomicMeasure, order: int) -> MomentVector:
    """Return m_1..m_order, m_k = sum_i weights[i] * atoms[i]**k."""
    if order < 1:
        raise MeasureError(f"moment order must be positive, got {order}")
    powers = np.ones_like(mu.atom_array)
    values = []
    for _ in range(order):
        powers = powers * mu.atom_array
        values.append(math.fsum(mu.weight_array * powers))
    return MomentVector(order=order, values=tuple(values))


def center(mu: AtomicMeasure) -> AtomicMeasure:
    """Shift the atoms by -m_1 so the result has zero mean; centered measures come back as is."""
    if mu.is_centered():
        return mu
    mean = mu.mean
    return AtomicMeasure(tuple(t - mean for t in mu.atoms), mu.weights, name=mu.name)


def dilate(mu: AtomicMeasure, alpha: float) -> AtomicMeasure:
    """Distribution of alpha * X; alpha = 0 is rejected (use point_mass(0))."""
    if alpha == 0:
        raise MeasureError("dilation by 0 is degenerate; build point_mass(0.0) explicitly")
    return AtomicMeasure(tuple(alpha * t for t in mu.atoms), mu.weights, name=mu.name)


def reflect(mu: AtomicMeasure) -> AtomicMeasure:
    return dilate(mu, -1.0)


def point_mass(c: float = 0.0, name: str | None = None) -> AtomicMeasure:
    return AtomicMeasure((c,), (1.0,), name=name)


def symmetric_coin(name: str | None = "coin") -> AtomicMeasure:
    """The measure (delta(-1) + delta(1)) / 2."""
    return AtomicMeasure((-1.0, 1.0), (0.5, 0.5), name=name)


def bernoulli(p: float, name: str | None = None) -> AtomicMeasure:
    """Weight p on 1 and 1 - p on 0 (not centered)."""
    if not 0.0 < p < 1.0:
        raise MeasureError(f"Bernoulli parameter must lie in (0, 1), got {p}")
    return AtomicMeasure((0.0, 1.0), (1.0 - p, p), name=name)


def binomial_coin(p: float, name: str | None = None) -> AtomicMeasure:
    """
    Centered two-point law with unit variance: weight p at +sqrt(q/p) and
    weight q = 1 - p at -sqrt(p/q).

    With this orientation the support of the normalized n-fold free sum is
    [x1, x2] with x = +-2 sqrt(1 - 1/n) + (q - p) / sqrt(pq) / sqrt(n).
    """
    if not 0.0 < p < 1.0:
        raise MeasureError(f"two-point parameter must lie in (0, 1), got {p}")
    q = 1.0 - p
    return AtomicMeasure((-math.sqrt(p / q), math.sqrt(q / p)), (q, p), name=name)
