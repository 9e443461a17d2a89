import math
import unittest
from types import SimpleNamespace
from unittest.mock import patch

import numpy as np

from freeedge.common.errors import EigenSolverError, NumericError, UsageError
from freeedge.numerics.freeconv import RowSpec
from freeedge.numerics.matrix_oracle import (
    EigenSolver,
    McConfig,
    Spectra,
    density_cdf,
    discretization_bound,
    edge_gap_report,
    haar_orthogonal,
    jacobi_eigenvalues,
    kolmogorov_distance,
    quantile_counts,
    quantile_diagonal,
    sample_sum_spectrum,
    spectra_to_csv,
)
from freeedge.numerics.measure import AtomicMeasure, binomial_coin, symmetric_coin
from freeedge.numerics.transform import DensityGrid, Quality


def coin_pair() -> RowSpec:
    return RowSpec.from_groups([(symmetric_coin(), 2)])


class TestQuantiles(unittest.TestCase):
    def test_ties_go_to_the_first_atom(self):
        self.assertEqual(list(quantile_counts(symmetric_coin(), 9)), [5, 4])
        self.assertEqual(list(quantile_diagonal(symmetric_coin(), 9)), [-1.0] * 5 + [1.0] * 4)

    def test_largest_remainder(self):
        mu = AtomicMeasure((-1.0, 0.5), (1.0 / 3.0, 2.0 / 3.0))
        self.assertEqual(list(quantile_counts(mu, 10)), [3, 7])

    def test_counts_sum_to_dimension(self):
        mu = AtomicMeasure((-1.0, 0.0, 0.2, 3.0), (0.21, 0.33, 0.37, 0.09))
        for N in (8, 13, 100, 257):
            self.assertEqual(int(quantile_counts(mu, N).sum()), N)

    def test_discretization_bound(self):
        self.assertAlmostEqual(discretization_bound(binomial_coin(0.25), 10, 2), 0.6, places=14)


class TestHaar(unittest.TestCase):
    def test_orthogonal(self):
        q = haar_orthogonal(12, np.random.default_rng(3))
        np.testing.assert_allclose(q.T @ q, np.eye(12), atol=1e-12)

    def test_reproducible(self):
        a = haar_orthogonal(6, np.random.default_rng([1, 2]))
        b = haar_orthogonal(6, np.random.default_rng([1, 2]))
        np.testing.assert_array_equal(a, b)


class TestJacobi(unittest.TestCase):
    def test_matches_lapack(self):
        rng = np.random.default_rng(11)
        a = rng.standard_normal((7, 7))
        a = a + a.T
        np.testing.assert_allclose(
            jacobi_eigenvalues(a), np.linalg.eigvalsh(a), rtol=0.0, atol=1e-8
        )

    def test_diagonal_needs_no_sweep(self):
        values = jacobi_eigenvalues(np.diag([3.0, -1.0, 2.0]), max_sweeps=0)
        self.assertEqual(list(values), [-1.0, 2.0, 3.0])

    def test_sweep_limit(self):
        with self.assertRaises(EigenSolverError):
            jacobi_eigenvalues(np.array([[1.0, 1.0], [1.0, 1.0]]), max_sweeps=0)


class TestMcConfig(unittest.TestCase):
    def test_validation(self):
        row = coin_pair()
        with self.assertRaises(UsageError):
            McConfig(N=4, trials=1, seed=0, row=row)
        with self.assertRaises(UsageError):
            McConfig(N=8, trials=0, seed=0, row=row)
        with self.assertRaises(UsageError):
            McConfig(N=8, trials=1, seed=-1, row=row)
        with self.assertRaises(UsageError):
            McConfig(N=8, trials=1, seed=2**64, row=row)
        with self.assertRaises(UsageError):
            McConfig(N=8, trials=1, seed=0, row=RowSpec.from_groups([(symmetric_coin(), 5000)]))

    def test_largest_seed(self):
        self.assertEqual(McConfig(N=8, trials=1, seed=2**64 - 1, row=coin_pair()).seed, 2**64 - 1)


class TestSampling(unittest.TestCase):
    def test_single_member_is_exact(self):
        cfg = McConfig(N=8, trials=2, seed=0, row=RowSpec.from_groups([(symmetric_coin(), 1)]))
        spectra = sample_sum_spectrum(cfg)
        for values in spectra.eigenvalues:
            self.assertEqual(list(values), [-1.0] * 4 + [1.0] * 4)

    def test_coin_pair_stays_in_range(self):
        spectra = sample_sum_spectrum(McConfig(N=32, trials=4, seed=5, row=coin_pair()))
        pooled = spectra.pooled()
        self.assertEqual(len(pooled), 128)
        self.assertTrue(np.all(np.abs(pooled) <= 2.0 + 1e-9))
        # traceless
        self.assertAlmostEqual(float(np.sum(spectra.eigenvalues[0])), 0.0, places=9)

    def test_deterministic_across_workers(self):
        serial = sample_sum_spectrum(McConfig(N=16, trials=3, seed=7, row=coin_pair(), workers=1))
        threaded = sample_sum_spectrum(McConfig(N=16, trials=3, seed=7, row=coin_pair(), workers=3))
        self.assertEqual(serial.trials, (0, 1, 2))
        for a, b in zip(serial.eigenvalues, threaded.eigenvalues, strict=True):
            np.testing.assert_array_equal(a, b)

    def test_jacobi_solver(self):
        lapack = sample_sum_spectrum(McConfig(N=10, trials=1, seed=2, row=coin_pair()))
        jacobi = sample_sum_spectrum(
            McConfig(N=10, trials=1, seed=2, row=coin_pair(), eigensolver=EigenSolver.JACOBI)
        )
        np.testing.assert_allclose(jacobi.eigenvalues[0], lapack.eigenvalues[0], atol=1e-8)

    def test_failed_trials_are_dropped(self):
        def run(cfg, trial):
            if trial == 1:
                raise EigenSolverError("stuck")
            return np.array([0.0, float(trial)])

        with patch("freeedge.numerics.matrix_oracle._run_trial", side_effect=run):
            with self.assertLogs("free-edge.matrix_oracle", level="WARNING") as logs:
                spectra = sample_sum_spectrum(McConfig(N=8, trials=3, seed=0, row=coin_pair()))
        self.assertEqual(spectra.trials, (0, 2))
        self.assertEqual(spectra.dropped, (1,))
        self.assertIn("trial 1 dropped", logs.output[0])

    def test_all_trials_failing(self):
        with patch(
            "freeedge.numerics.matrix_oracle._run_trial", side_effect=EigenSolverError("stuck")
        ):
            with self.assertLogs("free-edge.matrix_oracle", level="WARNING"):
                with self.assertRaises(EigenSolverError):
                    sample_sum_spectrum(McConfig(N=8, trials=2, seed=0, row=coin_pair()))


class TestEdgeGapReport(unittest.TestCase):
    def setUp(self):
        self.spectra = Spectra(
            trials=(0, 1, 2),
            eigenvalues=(
                np.array([-1.9, 0.0, 1.9]),
                np.array([-2.2, 0.0, 2.05]),
                np.array([-1.0, 0.0, 2.2]),
            ),
            dropped=(3,),
        )
        self.certificate = SimpleNamespace(
            interval=(-2.1, 2.1), right=SimpleNamespace(extent=2.0)
        )

    def test_report(self):
        report = edge_gap_report(self.spectra, self.certificate)
        self.assertEqual(report.trials, 3)
        self.assertEqual(report.dropped, 1)
        # only the third trial tops the interval; the second one leaves it on the left
        self.assertAlmostEqual(report.exceed_fraction, 1.0 / 3.0, places=15)
        self.assertAlmostEqual(report.exceed_left_fraction, 1.0 / 3.0, places=15)
        self.assertIsInstance(report.exceed_fraction, float)
        quantiles = dict(report.gap_quantiles)
        self.assertAlmostEqual(quantiles[0.0], -0.1, places=12)
        self.assertAlmostEqual(quantiles[0.5], 0.05, places=12)
        self.assertAlmostEqual(quantiles[1.0], 0.2, places=12)

    def test_record(self):
        record = edge_gap_report(self.spectra, self.certificate).to_record()
        self.assertIn("trials: 3\n", record)
        self.assertIn("interval: -2.1 2.1\n", record)
        self.assertIn("predicted_edge: 2.0\n", record)
        self.assertIn("exceed_left_fraction: ", record)
        self.assertIn("gap_q0.5: ", record)
        self.assertIn("gap_q1: ", record)

    def test_missing_edges(self):
        certificate = SimpleNamespace(interval=(-2.1, 2.1), right=None)
        report = edge_gap_report(self.spectra, certificate)
        self.assertTrue(math.isnan(report.predicted_edge))

    def test_spectra_helpers(self):
        self.assertEqual(list(self.spectra.maxima()), [1.9, 2.05, 2.2])
        self.assertEqual(list(self.spectra.minima()), [-1.9, -2.2, -1.0])
        self.assertEqual(len(self.spectra.pooled()), 9)


class TestDistributions(unittest.TestCase):
    def uniform(self, x):
        return np.clip(x, 0.0, 1.0)

    def test_kolmogorov_single_point(self):
        self.assertEqual(kolmogorov_distance([0.5], self.uniform), 0.5)

    def test_kolmogorov_midpoints(self):
        samples = [(i + 0.5) / 10 for i in range(10)]
        self.assertAlmostEqual(kolmogorov_distance(samples, self.uniform), 0.05, places=12)

    def test_kolmogorov_empty(self):
        with self.assertRaises(UsageError):
            kolmogorov_distance([], self.uniform)

    def test_density_cdf(self):
        grid = DensityGrid((0.0, 1.0, 2.0), (1e-2, 5e-3), (0.0, 2.0, 0.0), (Quality.OK,) * 3)
        cdf = density_cdf(grid)
        np.testing.assert_allclose(cdf(np.array([-1.0, 1.0, 3.0])), [0.0, 0.5, 1.0])

    def test_density_cdf_without_mass(self):
        grid = DensityGrid((0.0, 1.0), (1e-2, 5e-3), (0.0, 0.0), (Quality.OK,) * 2)
        with self.assertRaises(NumericError):
            density_cdf(grid)

    def test_csv(self):
        spectra = Spectra(trials=(4,), eigenvalues=(np.array([-1.0, 0.5]),))
        self.assertEqual(spectra_to_csv(spectra), "trial,index,eigenvalue\n4,0,-1\n4,1,0.5\n")


if __name__ == "__main__":
    unittest.main()
