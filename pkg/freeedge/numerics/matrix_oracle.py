"""
Monte Carlo cross-check of the free convolution with random matrices.

Each row member becomes a diagonal matrix of its N-point quantiles; summing
independently Haar-rotated copies gives a matrix whose spectrum approximates
the free convolution of the row.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import StrEnum
from typing import TYPE_CHECKING

import numpy as np

from freeedge.common.errors import EigenSolverError, NumericError, UsageError
from freeedge.common.logging import get_logger, log_duration
from freeedge.numerics.freeconv import RowSpec
from freeedge.numerics.measure import AtomicMeasure
from freeedge.numerics.transform import DensityGrid

if TYPE_CHECKING:
    from freeedge.numerics.superconv import Certificate

MIN_DIMENSION = 8
MAX_MATRIX_MEMBERS = 4096
JACOBI_TOLERANCE = 1e-10
JACOBI_SWEEPS = 100
GAP_QUANTILES = (0.0, 0.1, 0.5, 0.9, 1.0)

logger = get_logger("matrix_oracle")


class EigenSolver(StrEnum):
    LAPACK = "lapack"
    JACOBI = "jacobi"


@dataclass(frozen=True)
class McConfig:
    N: int
    trials: int
    seed: int
    row: RowSpec
    eigensolver: EigenSolver = EigenSolver.LAPACK
    workers: int | None = None

    def __post_init__(self):
        if self.N < MIN_DIMENSION:
            raise UsageError(f"matrix dimension must be at least {MIN_DIMENSION}, got {self.N}")
        if self.trials < 1:
            raise UsageError(f"at least one trial is needed, got {self.trials}")
        if not 0 <= self.seed < 2**64:
            raise UsageError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.row.k_n > MAX_MATRIX_MEMBERS:
            raise UsageError(
                f"row {self.row.name} has {self.row.k_n} members, "
                f"the matrix oracle takes at most {MAX_MATRIX_MEMBERS}"
            )


@dataclass(frozen=True)
class Spectra:
    """Sorted eigenvalues of every surviving trial, in trial order."""

    trials: tuple[int, ...]
    eigenvalues: tuple[np.ndarray, ...]
    dropped: tuple[int, ...] = ()

    def pooled(self) -> np.ndarray:
        return np.sort(np.concatenate(self.eigenvalues))

    def maxima(self) -> np.ndarray:
        return np.array([values[-1] for values in self.eigenvalues])

    def minima(self) -> np.ndarray:
        return np.array([values[0] for values in self.eigenvalues])


def quantile_counts(mu: AtomicMeasure, N: int) -> np.ndarray:
    """Diagonal slots per atom: round(w N) by largest remainder, summing to N."""
    exact = mu.weight_array * N
    counts = np.floor(exact).astype(int)
    missing = N - int(counts.sum())
    if missing > 0:
        # stable sort keeps ties in atom order
        order = np.argsort(-(exact - counts), kind="stable")
        counts[order[:missing]] += 1
    return counts


def quantile_diagonal(mu: AtomicMeasure, N: int) -> np.ndarray:
    """The N quantile atoms of mu in increasing order."""
    return np.repeat(mu.atom_array, quantile_counts(mu, N))


def discretization_bound(mu: AtomicMeasure, N: int, k: int) -> float:
    """Bound on |tr(D^k)/N - m_k| for the quantile diagonal D."""
    return len(mu.atoms) * mu.norm_bound**k / N


def haar_orthogonal(N: int, rng: np.random.Generator) -> np.ndarray:
    """Haar orthogonal matrix: QR of a Gaussian matrix with the signs of diag(R) fixed."""
    q, r = np.linalg.qr(rng.standard_normal((N, N)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def jacobi_eigenvalues(
    a: np.ndarray, tolerance: float = JACOBI_TOLERANCE, max_sweeps: int = JACOBI_SWEEPS
) -> np.ndarray:
    """
    Eigenvalues of a real symmetric matrix by cyclic Jacobi rotations.

    Sweeps run over all pairs (p, q), p < q, until the off-diagonal Frobenius
    norm drops below tolerance * max(1, ||A||_F).

    Raises:
        EigenSolverError: still above the tolerance after max_sweeps sweeps
    """
    a = np.array(a, dtype=float)
    n = a.shape[0]
    threshold = tolerance * max(1.0, float(np.linalg.norm(a)))

    def off_norm() -> float:
        return float(np.linalg.norm(a - np.diag(np.diag(a))))

    for sweep in range(max_sweeps):
        if off_norm() < threshold:
            logger.debug(f"Jacobi converged after {sweep} sweeps")
            return np.sort(np.diag(a))
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.hypot(theta, 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c

                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0

    if off_norm() < threshold:
        return np.sort(np.diag(a))
    raise EigenSolverError(
        f"Jacobi left off-diagonal norm {off_norm():.3e} after {max_sweeps} sweeps"
    )


def _check_conjugation(mu: AtomicMeasure, summand: np.ndarray) -> None:
    N = summand.shape[0]
    traces = (np.trace(summand) / N, np.trace(summand @ summand) / N)
    for k, trace in enumerate(traces, start=1):
        target = mu.mean if k == 1 else mu.second_moment
        bound = discretization_bound(mu, N, k)
        rounding = 1e-9 * max(1.0, mu.norm_bound**k)
        if abs(trace - target) > bound + rounding:
            raise NumericError(
                f"tr(A^{k})/N = {trace!r} is {abs(trace - target):.3e} from m_{k} = {target!r}, "
                f"above the discretization bound {bound:.3e}"
            )


def _eigenvalues(matrix: np.ndarray, solver: EigenSolver) -> np.ndarray:
    if solver == EigenSolver.JACOBI:
        return jacobi_eigenvalues(matrix)
    return np.sort(np.linalg.eigvalsh(matrix))


def _run_trial(cfg: McConfig, trial: int) -> np.ndarray:
    groups = cfg.row.groups
    if cfg.row.k_n == 1:
        # a single summand is similar to its diagonal
        return quantile_diagonal(groups[0][0], cfg.N)

    rng = np.random.default_rng([cfg.seed, trial])
    total = np.zeros((cfg.N, cfg.N))
    for mu, count in groups:
        diagonal = quantile_diagonal(mu, cfg.N)
        for _ in range(count):
            q = haar_orthogonal(cfg.N, rng)
            summand = (q * diagonal) @ q.T
            summand = 0.5 * (summand + summand.T)
            _check_conjugation(mu, summand)
            total += summand
    return _eigenvalues(total, cfg.eigensolver)


def sample_sum_spectrum(cfg: McConfig) -> Spectra:
    """
    Eigenvalues of sum_i Q_i D_i Q_i^T for every trial.

    Trial t draws from default_rng([seed, t]), so results do not depend on
    scheduling. Trials whose eigen-solver fails are dropped with a warning.
    """

    def attempt(trial: int) -> np.ndarray | None:
        try:
            return _run_trial(cfg, trial)
        except EigenSolverError as exc:
            logger.warning(f"trial {trial} dropped: {exc}")
            return None

    label = f"{cfg.trials} trials of {cfg.row.name} at N = {cfg.N}"
    with log_duration(logger, label), ThreadPoolExecutor(max_workers=cfg.workers) as executor:
        results = list(executor.map(attempt, range(cfg.trials)))

    kept = [(t, values) for t, values in enumerate(results) if values is not None]
    dropped = tuple(t for t, values in enumerate(results) if values is None)
    if not kept:
        raise EigenSolverError(f"all {cfg.trials} trials failed")
    return Spectra(
        trials=tuple(t for t, _ in kept),
        eigenvalues=tuple(values for _, values in kept),
        dropped=dropped,
    )


@dataclass(frozen=True)
class EdgeGapReport:
    trials: int
    dropped: int
    interval: tuple[float, float]
    predicted_edge: float
    exceed_fraction: float
    exceed_left_fraction: float
    gap_quantiles: tuple[tuple[float, float], ...]

    def to_record(self) -> str:
        lines = [
            f"trials: {self.trials}",
            f"dropped: {self.dropped}",
            f"interval: {self.interval[0]!r} {self.interval[1]!r}",
            f"predicted_edge: {self.predicted_edge!r}",
            f"exceed_fraction: {self.exceed_fraction!r}",
            f"exceed_left_fraction: {self.exceed_left_fraction!r}",
        ]
        lines.extend(f"gap_q{q:g}: {value!r}" for q, value in self.gap_quantiles)
        return "\n".join(lines) + "\n"


def edge_gap_report(spectra: Spectra, certificate: Certificate) -> EdgeGapReport:
    """
    Compare the extreme eigenvalues of each trial with the certificate.

    ``exceed_fraction`` counts the trials whose largest eigenvalue lies above
    the interval and ``exceed_left_fraction`` those whose smallest lies below
    it. Gaps are max eigenvalue minus the predicted right edge; they are NaN
    when the certificate could not compute the edges.
    """
    if not spectra.eigenvalues:
        raise UsageError("edge gap report needs at least one trial")
    lo, hi = certificate.interval
    maxima = spectra.maxima()
    minima = spectra.minima()
    above = int(np.count_nonzero(maxima > hi))
    below = int(np.count_nonzero(minima < lo))

    edge = certificate.right.extent if certificate.right is not None else math.nan
    gaps = maxima - edge
    quantiles = tuple((q, float(np.quantile(gaps, q))) for q in GAP_QUANTILES)
    return EdgeGapReport(
        trials=len(spectra.trials),
        dropped=len(spectra.dropped),
        interval=(lo, hi),
        predicted_edge=edge,
        exceed_fraction=above / len(spectra.trials),
        exceed_left_fraction=below / len(spectra.trials),
        gap_quantiles=quantiles,
    )


def density_cdf(grid: DensityGrid) -> Callable[[np.ndarray], np.ndarray]:
    """CDF of a density grid, normalized by its mass; 0 left of the grid, 1 right of it."""
    xs, _ = grid.as_arrays()
    cumulative = grid.cdf()
    total = cumulative[-1]
    if not total > 0:
        raise NumericError("density grid carries no mass")
    cumulative = cumulative / total

    def cdf(x: np.ndarray) -> np.ndarray:
        return np.interp(x, xs, cumulative, left=0.0, right=1.0)

    return cdf


def kolmogorov_distance(samples: Sequence[float], cdf: Callable[[np.ndarray], np.ndarray]) -> float:
    """sup |F_empirical - F| for a continuous reference F."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = len(x)
    if n == 0:
        raise UsageError("Kolmogorov distance of an empty sample")
    f = np.asarray(cdf(x), dtype=float)
    above = np.arange(1, n + 1) / n - f
    below = f - np.arange(n) / n
    return float(max(above.max(), below.max()))


def spectra_to_csv(spectra: Spectra) -> str:
    lines = ["trial,index,eigenvalue"]
    for trial, values in zip(spectra.trials, spectra.eigenvalues, strict=True):
        lines.extend(f"{trial},{i},{value:.17g}" for i, value in enumerate(values))
    return "\n".join(lines) + "\n"
