"""
Superconvergence certificates for a row.

A certificate gathers the row statistics (v_n, L_n, T_n), the contour
parameters (R, m, D_n, r_n), the finite-n hypotheses of both bounds, the
interval +-(2 sqrt(v_n) + c D_n / v_n) and the computed support edges, and
records whether the edges lie inside the interval.
"""

from __future__ import annotations

import json
import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from freeedge import __version__
from freeedge.common.errors import CertificateError, ErrorEnumEncoder, NumericError
from freeedge.common.feedback import Finding
from freeedge.common.logging import get_logger, log_duration
from freeedge.numerics.freeconv import (
    Atom,
    CompositeK,
    EdgeReport,
    RowSpec,
    Side,
    detect_atoms,
    support_edge,
)
from freeedge.numerics.measure import AtomicMeasure

DEFAULT_C = 5.0
THEOREM_ONE_THRESHOLD = 2.0**-12
NORM_MARGIN_THRESHOLD = 4.0
D_RATIO_THRESHOLD = 0.125
CIRCLE_SAMPLES = 256
WINDING_SAMPLES = 1024
K_SAMPLES = 64
DIFFERENCE_STEP = 1e-6

logger = get_logger("superconv")


@dataclass(frozen=True)
class RowStats:
    k_n: int
    measures: tuple[tuple[AtomicMeasure, int], ...]
    L_values: tuple[float, ...]
    L_n: float
    v_n: float
    T_n: float


def row_stats(row: RowSpec) -> RowStats:
    return RowStats(
        k_n=row.k_n,
        measures=row.groups,
        L_values=tuple(mu.norm_bound for mu, _ in row.groups),
        L_n=row.norm_bound,
        v_n=row.variance,
        T_n=row.cube_sum,
    )


@dataclass(frozen=True)
class CertificateParams:
    R_values: tuple[float, ...]
    m_values: tuple[float, ...]
    m_n: float
    D_n: float
    r_n: float
    c: float = DEFAULT_C
    overridden: bool = False


def _check_override(mu: AtomicMeasure, radius: float, lower: float) -> str | None:
    """Return the name of the first failed condition, or None."""
    if radius < mu.norm_bound:
        return f"R = {radius!r} is below L = {mu.norm_bound!r}"

    theta = 2.0 * np.pi * (np.arange(CIRCLE_SAMPLES) + 0.5) / CIRCLE_SAMPLES
    z = radius * np.exp(1j * theta)
    g = np.sum(mu.weight_array[:, None] / (z[None, :] - mu.atom_array[:, None]), axis=0)
    smallest = float(np.min(np.abs(g)))
    if smallest < lower * (1.0 + 1e-9):
        return f"min |G| on |z| = R is {smallest!r}, below m = {lower!r}"

    # argument principle for g(z) = G(1/z) on |z| = 1/R
    theta = 2.0 * np.pi * (np.arange(WINDING_SAMPLES) + 0.5) / WINDING_SAMPLES
    z = np.exp(1j * theta) / radius
    g = np.sum(mu.weight_array[:, None] * z[None, :] / (1.0 - mu.atom_array[:, None] * z), axis=0)
    turns = np.angle(np.roll(g, -1) / g)
    winding = round(float(np.sum(turns)) / (2.0 * math.pi))
    if winding != 1:
        return f"g has {winding} zeros inside |z| < 1/R instead of one"
    return None


def certificate_params(
    stats: RowStats,
    overrides: Sequence[tuple[float, float] | None] | None = None,
    c: float = DEFAULT_C,
    workers: int | None = None,
) -> CertificateParams:
    """
    Contour parameters per distinct member, R = 2L and m = 1/(4L) unless overridden.

    Overrides are given per group as (R, m) and are verified numerically:
    R >= L, |G| >= m on |z| = R (sampled), and a single zero of g inside
    |z| < 1/R (winding number). A failing override raises CertificateError.
    """
    if overrides is not None and len(overrides) != len(stats.measures):
        raise CertificateError(f"{len(overrides)} overrides for {len(stats.measures)} members")
    chosen = list(overrides) if overrides is not None else [None] * len(stats.measures)

    to_check = [
        (mu, pair) for (mu, _), pair in zip(stats.measures, chosen, strict=True) if pair is not None
    ]
    if to_check:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            failures = list(executor.map(lambda item: _check_override(item[0], *item[1]), to_check))
        for (mu, _), failure in zip(to_check, failures, strict=True):
            if failure is not None:
                raise CertificateError(f"override for {mu} rejected: {failure}")

    R_values: list[float] = []
    m_values: list[float] = []
    terms: list[float] = []
    for (mu, count), pair in zip(stats.measures, chosen, strict=True):
        L = mu.norm_bound
        if pair is None:
            R_values.append(2.0 * L)
            m_values.append(1.0 / (4.0 * L) if L > 0 else math.inf)
            # R m^-2 = 32 L^3, kept in this form so that D_n = 32 T_n exactly
            terms.append(32.0 * (count * L**3))
        else:
            radius, lower = pair
            R_values.append(radius)
            m_values.append(lower)
            terms.append(count * radius / lower**2)

    d_n = math.fsum(terms)
    v = stats.v_n
    return CertificateParams(
        R_values=tuple(R_values),
        m_values=tuple(m_values),
        m_n=min(m_values),
        D_n=d_n,
        r_n=4.0 * d_n / (v * v) if v > 0 else math.inf,
        c=c,
        overridden=overrides is not None,
    )


@dataclass(frozen=True)
class KEstimateReport:
    """Worst margins of the two kernel estimates over the sampled z."""

    samples: int
    worst_value_margin: float
    worst_value_z: float
    worst_derivative_margin: float
    worst_derivative_z: float

    @property
    def passed(self) -> bool:
        return self.worst_value_margin >= 0.0 and self.worst_derivative_margin >= 0.0


def k_estimate_check(
    row: RowSpec, params: CertificateParams, samples: int = K_SAMPLES
) -> KEstimateReport:
    """
    Verify |K_n(z) - 1/z - v_n z| <= D_n z^2 and |K_n'(z) + 1/z^2 - v_n| <= 2 D_n z
    at real z_j = m_n j / (samples + 1).

    The regular part R_n = K_n - 1/z is evaluated directly and differentiated
    by a central difference with step 1e-6 z. A margin is allowed bound minus
    observed deviation; negative margins are violations.
    """
    composite = CompositeK(row)
    v = row.variance
    d_n = params.D_n
    top = params.m_n if math.isfinite(params.m_n) else 1.0

    worst_value = (math.inf, 0.0)
    worst_slope = (math.inf, 0.0)
    for j in range(1, samples + 1):
        z = top * j / (samples + 1)
        regular = composite.regular(z)
        deviation = abs(regular - v * z)
        allowed = d_n * z * z * (1.0 + 1e-9) + 64.0 * math.ulp(abs(regular) + v * z)
        worst_value = min(worst_value, (allowed - deviation, z))

        h = DIFFERENCE_STEP * z
        slope = (composite.regular(z + h) - composite.regular(z - h)) / (2.0 * h)
        deviation = abs(slope - v)
        allowed = 2.0 * d_n * z * (1.0 + 1e-9) + 1e-9 * v
        worst_slope = min(worst_slope, (allowed - deviation, z))

    return KEstimateReport(
        samples=samples,
        worst_value_margin=worst_value[0],
        worst_value_z=worst_value[1],
        worst_derivative_margin=worst_slope[0],
        worst_derivative_z=worst_slope[1],
    )


@dataclass
class Certificate:
    row_name: str
    stats: RowStats
    params: CertificateParams
    thm1_ratio: float
    thm1_pass: bool
    norm_margin: float
    d_ratio: float
    thm2_pass: bool
    interval: tuple[float, float]
    thm1_interval: tuple[float, float]
    left: EdgeReport | None
    right: EdgeReport | None
    k_estimate: KEstimateReport
    atoms: list[Atom] = field(default_factory=list)
    findings: list[Finding] = field(default_factory=list)
    version: str = __version__

    @property
    def edge_verified(self) -> bool:
        return self.left is not None and self.right is not None

    @property
    def contained(self) -> bool:
        """Both edges strictly inside the interval."""
        if self.left is None or self.right is None:
            return False
        lo, hi = self.interval
        return lo < self.left.extent and self.right.extent < hi

    @property
    def failed_findings(self) -> list[Finding]:
        return [f for f in self.findings if not f.passed]

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "row": self.row_name,
            "k_n": self.stats.k_n,
            "v_n": self.stats.v_n,
            "L_n": self.stats.L_n,
            "T_n": self.stats.T_n,
            "D_n": self.params.D_n,
            "m_n": self.params.m_n,
            "r_n": self.params.r_n,
            "c": self.params.c,
            "thm1_ratio": self.thm1_ratio,
            "thm1_pass": self.thm1_pass,
            "thm2_norm_margin": self.norm_margin,
            "thm2_d_ratio": self.d_ratio,
            "thm2_pass": self.thm2_pass,
            "interval": list(self.interval),
            "thm1_interval": list(self.thm1_interval),
            "left_edge": self.left.to_dict() if self.left else None,
            "right_edge": self.right.to_dict() if self.right else None,
            "edge_verified": self.edge_verified,
            "contained": self.contained,
            "k_estimate": {
                "samples": self.k_estimate.samples,
                "worst_value_margin": self.k_estimate.worst_value_margin,
                "worst_derivative_margin": self.k_estimate.worst_derivative_margin,
            },
            "atoms": [{"location": a.location, "mass": a.mass} for a in self.atoms],
            "findings": [f.to_dict() for f in self.findings],
        }

    def to_json(self) -> str:
        # JSON has no infinity; degenerate rows report null instead
        return json.dumps(_finite(self.to_dict()), cls=ErrorEnumEncoder, indent=2)

    def to_record(self) -> str:
        lines = [
            f"version: {self.version}",
            f"row: {self.row_name}",
            f"k_n: {self.stats.k_n}",
            f"v_n: {_fmt(self.stats.v_n)}",
            f"L_n: {_fmt(self.stats.L_n)}",
            f"T_n: {_fmt(self.stats.T_n)}",
            f"D_n: {_fmt(self.params.D_n)}",
            f"m_n: {_fmt(self.params.m_n)}",
            f"r_n: {_fmt(self.params.r_n)}",
            f"c: {_fmt(self.params.c)}",
            f"thm1_ratio: {_fmt(self.thm1_ratio)}",
            f"thm1_pass: {_fmt(self.thm1_pass)}",
            f"thm2_norm_margin: {_fmt(self.norm_margin)}",
            f"thm2_d_ratio: {_fmt(self.d_ratio)}",
            f"thm2_pass: {_fmt(self.thm2_pass)}",
            f"interval: {_fmt(self.interval[0])} {_fmt(self.interval[1])}",
            f"thm1_interval: {_fmt(self.thm1_interval[0])} {_fmt(self.thm1_interval[1])}",
        ]
        for report in (self.left, self.right):
            if report is None:
                continue
            lines.append(f"{report.side.value}_edge: {_fmt(report.edge)}")
            lines.append(f"{report.side.value}_error_bound: {_fmt(report.error_bound)}")
            lines.append(f"{report.side.value}_mode: {report.mode.value}")
            if report.atom is not None:
                lines.append(f"{report.side.value}_atom: {_fmt(report.atom)}")
        lines.extend(
            [
                f"edge_verified: {_fmt(self.edge_verified)}",
                f"contained: {_fmt(self.contained)}",
                f"kest_value_margin: {_fmt(self.k_estimate.worst_value_margin)}",
                f"kest_derivative_margin: {_fmt(self.k_estimate.worst_derivative_margin)}",
            ]
        )
        lines.extend(f"atom: {_fmt(a.location)} {_fmt(a.mass)}" for a in self.atoms)
        lines.extend(f"finding: {f}" for f in self.findings)
        return "\n".join(lines) + "\n"


def _fmt(value: float | bool) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(float(value))


def _finite(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _finite(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_finite(v) for v in value]
    return value


def _ratio(numerator: float, denominator: float) -> float:
    return numerator / denominator if denominator > 0 else math.inf


def certify(
    row: RowSpec,
    c: float = DEFAULT_C,
    overrides: Sequence[tuple[float, float] | None] | None = None,
    checks: Sequence[str] | None = None,
    k_samples: int = K_SAMPLES,
) -> Certificate:
    """
    Build the certificate of a row and run the certificate checks on it.

    Edge search failures leave the certificate "edge unverified"; a violated
    kernel estimate raises CertificateError since it cannot happen for
    correct parameters.

    Args:
        row: Centered row
        c: Constant of both intervals
        overrides: Optional (R, m) per member group
        checks: Symbolic names of the checks to run; all when None
        k_samples: Number of real sample points of the kernel estimates
    """
    stats = row_stats(row)
    params = certificate_params(stats, overrides, c)
    v = stats.v_n
    root_v = math.sqrt(v)

    thm1_ratio = _ratio(stats.T_n, v**1.5)
    norm_margin = params.m_n * root_v if v > 0 else 0.0
    d_ratio = _ratio(params.D_n, v**1.5)
    thm1_pass = thm1_ratio < THEOREM_ONE_THRESHOLD
    thm2_pass = norm_margin > NORM_MARGIN_THRESHOLD and d_ratio <= D_RATIO_THRESHOLD

    radius = 2.0 * root_v + c * params.D_n / v if v > 0 else 0.0
    thm1_radius = 2.0 * root_v + c * stats.T_n / v if v > 0 else 0.0

    kest = k_estimate_check(row, params, k_samples)
    if not kest.passed:
        raise CertificateError(
            "kernel estimate violated: value margin "
            f"{kest.worst_value_margin!r} at z = {kest.worst_value_z!r}, derivative margin "
            f"{kest.worst_derivative_margin!r} at z = {kest.worst_derivative_z!r}"
        )

    start = 1.0 / root_v - params.r_n if thm2_pass else None
    left = right = None
    with log_duration(logger, f"edges of {row.name}"):
        try:
            left = support_edge(row, Side.LEFT, start=start)
            right = support_edge(row, Side.RIGHT, start=start)
        except NumericError as exc:
            logger.warning(f"edge search failed for {row.name}: {exc}")
            left = right = None

    certificate = Certificate(
        row_name=row.name,
        stats=stats,
        params=params,
        thm1_ratio=thm1_ratio,
        thm1_pass=thm1_pass,
        norm_margin=norm_margin,
        d_ratio=d_ratio,
        thm2_pass=thm2_pass,
        interval=(-radius, radius),
        thm1_interval=(-thm1_radius, thm1_radius),
        left=left,
        right=right,
        k_estimate=kest,
        atoms=detect_atoms(row),
    )
    certificate.findings = run_checks(certificate, checks)
    return certificate


def run_checks(certificate: Certificate, names: Sequence[str] | None = None) -> list[Finding]:
    """Run the selected checks concurrently; findings keep the check order."""
    from freeedge.check_manager import CheckManager

    selected = CheckManager.select(names)
    with ThreadPoolExecutor() as executor:
        results = list(executor.map(lambda check: check.process(certificate), selected))
    return [finding for findings in results for finding in findings]
