"""
free-edge end-to-end checks against closed forms and known limits.
"""

import math
import os
import subprocess
import tempfile

import numpy as np
import pytest

from freeedge.numerics.freeconv import (
    CompositeK,
    RowSpec,
    Side,
    convolution_density,
    k_add,
    support_edge,
)
from freeedge.numerics.matrix_oracle import McConfig, kolmogorov_distance, sample_sum_spectrum
from freeedge.numerics.measure import AtomicMeasure, binomial_coin, center, moments, symmetric_coin
from freeedge.numerics.series import (
    coefficient_bound,
    cumulants_from_moments_nc,
    g_from_moments,
    k_from_g_formal,
    k_from_measure,
    lagrange_coeffs,
)
from freeedge.numerics.superconv import certify
from freeedge.numerics.transform import arcsine_cdf

COIN = "measure coin: atoms=[-1, 1] weights=[0.5, 0.5]\n"


def random_measure(rng: np.random.Generator, centered: bool = False) -> AtomicMeasure:
    size = int(rng.integers(2, 5))
    atoms = rng.uniform(-1.0, 1.0, size)
    weights = rng.dirichlet(np.ones(size))
    mu = AtomicMeasure(tuple(atoms.tolist()), tuple(weights.tolist()))
    return center(mu) if centered else mu


def binomial_edges(p: float, n: int) -> tuple[float, float]:
    q = 1.0 - p
    shift = (q - p) / math.sqrt(p * q) / math.sqrt(n)
    half = 2.0 * math.sqrt(1.0 - 1.0 / n)
    return shift - half, shift + half


def free_poisson_row(n: int) -> RowSpec:
    """n centered Bernoulli(1/n) members."""
    p = 1.0 / n
    jump = AtomicMeasure((-p, 1.0 - p), (1.0 - p, p), name="jump")
    return RowSpec.from_groups([(jump, n)], name=f"poisson-{n}")


class TestFreeEdge:
    """End-to-end checks of the free-edge library and command line."""

    @staticmethod
    def run_free_edge(*args, timeout=60):
        """Run free-edge with the given arguments and return the result."""
        return subprocess.run(
            ["free-edge", *args],
            capture_output=True,
            text=True,
            timeout=timeout,
            check=False,
        )

    @staticmethod
    def assert_success(result):
        assert result.returncode == 0, (
            f"free-edge exited with code {result.returncode}: {result.stderr}"
        )

    @staticmethod
    def record(text):
        return dict(line.split(": ", 1) for line in text.splitlines() if ": " in line)

    def test_free_edge_help(self):
        result = self.run_free_edge("--help")
        self.assert_success(result)
        assert "usage" in result.stdout.lower()

    @pytest.mark.parametrize("p", [0.5, 0.75, 0.9])
    @pytest.mark.parametrize("n", [4, 16, 64, 256])
    def test_binomial_edges(self, p, n):
        """Both edges of the free binomial sum match the closed form."""
        row = RowSpec.normalized_sum(binomial_coin(p), n)
        lower, upper = binomial_edges(p, n)
        assert support_edge(row, Side.RIGHT).edge == pytest.approx(upper, abs=1e-8)
        assert support_edge(row, Side.LEFT).edge == pytest.approx(lower, abs=1e-8)

    def test_clt_edge_rate(self):
        gaps = []
        for n in (4, 16, 64, 256, 1024):
            edge = support_edge(RowSpec.normalized_sum(symmetric_coin(), n)).edge
            gaps.append((n, 2.0 - edge))
        for n, gap in gaps:
            assert 0.0 < gap <= 5.0 / math.sqrt(n)
            assert gap * math.sqrt(n) < 5.0
        assert all(a[1] > b[1] for a, b in zip(gaps, gaps[1:], strict=False))

    def test_clt_command(self):
        with tempfile.NamedTemporaryFile("w", suffix=".row", delete=False) as handle:
            handle.write(COIN)
        try:
            result = self.run_free_edge("clt", "-m", handle.name, "--n-list", "4,16,64", "--csv")
        finally:
            os.unlink(handle.name)
        self.assert_success(result)
        rows = [line.split(",") for line in result.stdout.splitlines()[1:]]
        gaps = [float(row[2]) for row in rows]
        envelopes = [float(row[3]) for row in rows]
        assert gaps == sorted(gaps, reverse=True)
        assert all(g < e for g, e in zip(gaps, envelopes, strict=True))

    def test_long_coin_certificate(self):
        with tempfile.NamedTemporaryFile("w", suffix=".row", delete=False) as handle:
            handle.write(COIN + "row ex1: members=[coin×67108864] scale=1/sqrt(k)\n")
        try:
            result = self.run_free_edge("certify", handle.name, "--strict")
        finally:
            os.unlink(handle.name)
        self.assert_success(result)
        record = self.record(result.stdout)
        assert record["thm1_ratio"] == repr(2.0**-13)
        assert record["D_n"] == repr(2.0**-8)
        assert record["interval"] == "-2.01953125 2.01953125"
        assert record["contained"] == "true"

    def test_kernel_estimates_on_random_rows(self):
        """Rows passing the finite-n hypotheses satisfy the kernel estimates."""
        rng = np.random.default_rng(20240601)
        accepted = 0
        attempts = 0
        while accepted < 100:
            attempts += 1
            assert attempts < 5000, "too few measures with L / sigma <= 1.5"
            mu = random_measure(rng, centered=True)
            spread = mu.norm_bound / math.sqrt(mu.variance)
            if spread > 1.5:
                continue
            # smallest power of two with sqrt(k) >= 256 spread^3, plus one
            needed = max(256.0 * spread**3, 16.0 * spread) ** 2
            k = 2 ** max(8, math.ceil(math.log2(needed)) + 1)
            certificate = certify(RowSpec.normalized_sum(mu, k), checks=[])
            assert certificate.thm2_pass, (mu, k)
            assert certificate.k_estimate.passed, (mu, k)
            assert certificate.k_estimate.samples == 64
            assert certificate.contained, (mu, k)
            accepted += 1

    def test_contour_coefficients(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            mu = random_measure(rng)
            result = lagrange_coeffs(mu, order=8)
            formal = k_from_measure(mu, 8).cumulants
            for a, b in zip(result.kseries.cumulants, formal, strict=True):
                assert abs(a - b) <= 1e-8 * max(1.0, abs(b))
            L = mu.norm_bound
            for k, b in enumerate(result.b, start=1):
                assert abs(b) <= coefficient_bound(k, 2.0 * L, 1.0 / (4.0 * L))

    def test_non_crossing_cumulants(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            m = moments(random_measure(rng), 10)
            formal = k_from_g_formal(g_from_moments(m)).cumulants
            combinatorial = cumulants_from_moments_nc(m)
            for a, b in zip(formal, combinatorial, strict=True):
                assert abs(a - b) <= 1e-10 * max(1.0, abs(a))

    def test_cumulants_add(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            first, second = random_measure(rng, True), random_measure(rng, True)
            total = k_add([k_from_measure(first, 12), k_from_measure(second, 12)])
            composite = CompositeK(RowSpec.from_members([first, second]))
            for w in (0.002, 0.01):
                series = total.regular_part().evaluate(w).real
                assert abs(composite.regular(w) - series) <= 1e-9

    def test_density_recovery(self):
        row = RowSpec.normalized_sum(symmetric_coin(), 64)
        grid = convolution_density(row, np.linspace(-2.2, 2.2, 441))
        assert grid.value_at(0.0) == pytest.approx(1.0 / math.pi, abs=2e-2)
        assert grid.mass() == pytest.approx(1.0, abs=2e-2)

        pair = RowSpec.from_groups([(symmetric_coin(), 2)])
        grid = convolution_density(pair, [0.0])
        assert grid.values[0] == pytest.approx(0.1591549, abs=1e-3)

    def test_free_poisson(self):
        right_gaps = []
        for n in (256, 1024):
            certificate = certify(free_poisson_row(n))
            assert not certificate.thm1_pass
            assert not certificate.thm2_pass
            assert certificate.edge_verified
            left, right = certificate.left.extent, certificate.right.extent
            assert math.isfinite(left) and math.isfinite(right)
            # centered free binomial: edges -1 and 3 - 4/n
            assert right == pytest.approx(3.0 - 4.0 / n, abs=1e-6)
            assert left == pytest.approx(-1.0, abs=1e-4)
            right_gaps.append(3.0 - right)
        assert right_gaps[1] < right_gaps[0]

    def test_monte_carlo_arcsine(self):
        row = RowSpec.from_groups([(symmetric_coin(), 2)], name="arcsine")
        spectra = sample_sum_spectrum(McConfig(N=512, trials=32, seed=2024, row=row))
        distance = kolmogorov_distance(spectra.pooled(), np.vectorize(arcsine_cdf))
        assert distance <= 0.08
        inside = np.count_nonzero(np.maximum(spectra.maxima(), -spectra.minima()) <= 2.3)
        assert inside >= 0.95 * len(spectra.trials)
