import math
import random
import unittest
from unittest.mock import patch

from freeedge.common.errors import ConvergenceError, MeasureError, SeriesOrderError
from freeedge.numerics.freeconv import (
    HOMOTOPY_STEPS,
    RETRY_HOMOTOPY_STEPS,
    CompositeK,
    EdgeMode,
    EdgeReport,
    RowSpec,
    Side,
    composite_k_eval,
    convolution_cauchy,
    convolution_density,
    default_start,
    detect_atoms,
    k_add,
    series_edge,
    support_edge,
    _Subordination,
)
from freeedge.numerics.measure import (
    AtomicMeasure,
    bernoulli,
    binomial_coin,
    center,
    point_mass,
    symmetric_coin,
)
from freeedge.numerics.series import KSeries, k_from_measure
from freeedge.numerics.transform import Quality, arcsine_cauchy


def binomial_edges(p: float, n: int) -> tuple[float, float]:
    q = 1.0 - p
    shift = (q - p) / math.sqrt(p * q) / math.sqrt(n)
    half = 2.0 * math.sqrt(1.0 - 1.0 / n)
    return shift - half, shift + half


def random_centered(rng: random.Random) -> AtomicMeasure:
    size = rng.randint(2, 4)
    points = [rng.uniform(-1.0, 1.0) for _ in range(size)]
    raw = [rng.uniform(0.1, 1.0) for _ in range(size)]
    total = math.fsum(raw)
    return center(AtomicMeasure(tuple(points), tuple(w / total for w in raw)))


class TestRowSpec(unittest.TestCase):
    def test_members_must_be_centered(self):
        with self.assertRaises(MeasureError):
            RowSpec(((bernoulli(0.5), 1),))

    def test_counts_and_emptiness(self):
        with self.assertRaises(MeasureError):
            RowSpec(())
        with self.assertRaises(MeasureError):
            RowSpec(((symmetric_coin(), 0),))
        with self.assertRaises(MeasureError):
            RowSpec.normalized_sum(symmetric_coin(), 0)

    def test_grouping(self):
        coin = symmetric_coin()
        row = RowSpec.from_members([coin, binomial_coin(0.3), coin])
        self.assertEqual(row.groups, ((coin, 2), (binomial_coin(0.3), 1)))
        self.assertEqual(row.k_n, 3)
        self.assertEqual(len(list(row.members)), 3)
        merged = RowSpec.from_groups([(coin, 2), (coin, 3)])
        self.assertEqual(merged.groups, ((coin, 5),))

    def test_statistics(self):
        row = RowSpec.normalized_sum(symmetric_coin(), 64)
        self.assertAlmostEqual(row.variance, 1.0, places=14)
        self.assertEqual(row.norm_bound, 0.125)
        self.assertAlmostEqual(row.cube_sum, 0.125, places=15)
        self.assertEqual(row.name, "coin-sum-64")

    def test_scaled_keeps_base(self):
        row = RowSpec.normalized_sum(symmetric_coin(), 4).scaled(2.0)
        self.assertEqual(row.base[1], 1.0)
        self.assertEqual(row.norm_bound, 1.0)
        self.assertIsNone(RowSpec.normalized_sum(symmetric_coin(), 4).scaled(-1.0).base)


class TestCompositeK(unittest.TestCase):
    def test_coin_pair_closed_form(self):
        # K_n(w) = 2 K(w) - 1/w = sqrt(4 + 1/w^2)
        row = RowSpec.from_groups([(symmetric_coin(), 2)])
        for w in (0.1, 1.0, 10.0):
            self.assertAlmostEqual(
                composite_k_eval(row, w), math.sqrt(4.0 + 1.0 / (w * w)), places=12
            )

    def test_shortcut_agrees(self):
        row = RowSpec.normalized_sum(binomial_coin(0.3), 16)
        fast = CompositeK(row, use_shortcut=True)
        slow = CompositeK(row, use_shortcut=False)
        self.assertTrue(fast.use_shortcut)
        self.assertFalse(slow.use_shortcut)
        for w in (-2.0, -0.3, 0.05, 0.7, 3.0):
            value, slope = slow.value(w), slow.derivative(w)
            self.assertAlmostEqual(fast.value(w), value, delta=1e-12 * max(1.0, abs(value)))
            self.assertAlmostEqual(fast.derivative(w), slope, delta=1e-10 * max(1.0, abs(slope)))

    def test_pole(self):
        with self.assertRaises(MeasureError):
            composite_k_eval(RowSpec.from_groups([(symmetric_coin(), 2)]), 0.0)


class TestAtoms(unittest.TestCase):
    def test_heavy_top_atom_survives(self):
        atoms = detect_atoms(RowSpec.normalized_sum(binomial_coin(0.9), 4))
        self.assertEqual(len(atoms), 1)
        self.assertAlmostEqual(atoms[0].location, 2.0 / 3.0, places=14)
        self.assertAlmostEqual(atoms[0].mass, 0.6, places=14)

    def test_balanced_coins_have_none(self):
        self.assertEqual(detect_atoms(RowSpec.from_groups([(symmetric_coin(), 2)])), [])

    def test_point_mass_member(self):
        row = RowSpec.from_groups([(point_mass(0.0), 1), (symmetric_coin(), 1)])
        atoms = detect_atoms(row)
        self.assertEqual([a.location for a in atoms], [-1.0, 1.0])
        self.assertEqual([a.mass for a in atoms], [0.5, 0.5])


class TestSupportEdge(unittest.TestCase):
    def test_equal_weight_binomial(self):
        row = RowSpec.normalized_sum(binomial_coin(0.5), 4)
        report = support_edge(row)
        self.assertEqual(report.mode, EdgeMode.CRITICAL_POINT)
        self.assertAlmostEqual(report.edge, math.sqrt(3.0), delta=1e-7)
        self.assertIsNone(report.atom)
        left = support_edge(row, Side.LEFT)
        self.assertEqual(left.side, Side.LEFT)
        self.assertAlmostEqual(left.edge, -report.edge, delta=1e-9)

    def test_edge_behind_atom(self):
        row = RowSpec.normalized_sum(binomial_coin(0.9), 4)
        report = support_edge(row)
        self.assertEqual(report.mode, EdgeMode.CRITICAL_POINT)
        self.assertAlmostEqual(report.edge, 0.3987175, delta=1e-6)
        self.assertAlmostEqual(report.atom, 2.0 / 3.0, places=12)
        self.assertAlmostEqual(report.atom_mass, 0.6, places=12)
        self.assertAlmostEqual(report.extent, 2.0 / 3.0, places=12)

    def test_left_edge_matches_closed_form(self):
        row = RowSpec.normalized_sum(binomial_coin(0.9), 4)
        lower, _ = binomial_edges(0.9, 4)
        report = support_edge(row, "left")
        self.assertAlmostEqual(report.edge, lower, delta=1e-6)
        self.assertIsNone(report.atom)

    def test_hard_edge(self):
        report = support_edge(RowSpec.from_groups([(symmetric_coin(), 2)]))
        self.assertEqual(report.mode, EdgeMode.HARD_EDGE)
        self.assertAlmostEqual(report.edge, 2.0, delta=1e-9)

    def test_hard_edge_with_cancelled_atom(self):
        report = support_edge(RowSpec.normalized_sum(binomial_coin(0.75), 4))
        self.assertEqual(report.mode, EdgeMode.HARD_EDGE)
        self.assertAlmostEqual(report.edge, 2.0 / math.sqrt(3.0), delta=1e-5)

    def test_all_mass_in_atoms(self):
        row = RowSpec.from_groups([(point_mass(0.0), 1), (symmetric_coin(), 1)])
        report = support_edge(row)
        self.assertEqual(report.mode, EdgeMode.ATOM)
        self.assertEqual(report.edge, 1.0)
        self.assertEqual(report.atom_mass, 0.5)

    def test_single_member(self):
        report = support_edge(RowSpec.from_groups([(binomial_coin(0.3), 1)]), Side.LEFT)
        self.assertEqual(report.mode, EdgeMode.ATOM)
        self.assertAlmostEqual(report.edge, -math.sqrt(0.3 / 0.7), places=15)

    def test_certified_start(self):
        row = RowSpec.normalized_sum(symmetric_coin(), 2**26)
        start = default_start(row)
        self.assertIsNotNone(start)
        self.assertAlmostEqual(start, 1.0 - 4.0 * 32.0 * 2.0**-13, places=12)
        report = support_edge(row)
        self.assertTrue(report.certified)
        self.assertAlmostEqual(report.edge, 2.0 * math.sqrt(1.0 - 2.0**-26), delta=1e-7)

    def test_no_certified_start_for_short_rows(self):
        self.assertIsNone(default_start(RowSpec.normalized_sum(symmetric_coin(), 4)))


class TestRowProperties(unittest.TestCase):
    def setUp(self):
        rng = random.Random(90210)
        self.rows = [
            RowSpec.from_members([random_centered(rng) for _ in range(3)], name=f"random-{i}")
            for i in range(20)
        ]

    def test_edges_scale_with_members(self):
        for row in self.rows:
            for alpha in (0.5, 3.0):
                scaled = row.scaled(alpha)
                for side in (Side.LEFT, Side.RIGHT):
                    base = support_edge(row, side)
                    report = support_edge(scaled, side)
                    expected = alpha * base.extent
                    self.assertAlmostEqual(
                        report.extent,
                        expected,
                        delta=1e-9 * max(1.0, abs(expected)),
                        msg=f"{row.name} {side.value} alpha={alpha}",
                    )

    def test_variances_add(self):
        for row in self.rows:
            total = k_add([k_from_measure(mu, 4) for mu in row.members])
            self.assertAlmostEqual(total.cumulants[1], row.variance, delta=1e-12)


class TestEdgeReport(unittest.TestCase):
    def test_mirrored(self):
        report = EdgeReport(Side.RIGHT, 1.5, 1e-9, EdgeMode.CRITICAL_POINT, 0.5, True, 2.0, 0.1)
        mirrored = report.mirrored()
        self.assertEqual(mirrored.side, Side.LEFT)
        self.assertEqual(mirrored.edge, -1.5)
        self.assertEqual(mirrored.w_star, -0.5)
        self.assertEqual(mirrored.extent, -2.0)
        self.assertEqual(report.extent, 2.0)

    def test_to_dict(self):
        report = EdgeReport(Side.LEFT, -1.0, 0.0, EdgeMode.HARD_EDGE)
        self.assertEqual(report.to_dict()["mode"], "hard_edge")
        self.assertIsNone(report.to_dict()["atom"])


class TestSeriesHelpers(unittest.TestCase):
    def test_k_add_errors(self):
        with self.assertRaises(SeriesOrderError):
            k_add([])
        with self.assertRaises(SeriesOrderError):
            k_add([KSeries((0.0, 1.0)), KSeries((0.0, 1.0, 0.0))])

    def test_semicircle_series_edge(self):
        self.assertAlmostEqual(series_edge(KSeries((0.0, 1.0))), 2.0, places=9)

    def test_series_edge_needs_variance(self):
        with self.assertRaises(MeasureError):
            series_edge(KSeries((0.0,)))


class TestSubordination(unittest.TestCase):
    def test_coin_pair_is_arcsine(self):
        row = RowSpec.from_groups([(symmetric_coin(), 2)])
        for z in (0.3 + 0.5j, -1.5 + 0.05j):
            self.assertAlmostEqual(convolution_cauchy(row, z), arcsine_cauchy(z), delta=1e-9)

    def test_upper_half_plane_only(self):
        with self.assertRaises(MeasureError):
            convolution_cauchy(RowSpec.from_groups([(symmetric_coin(), 2)]), 1.0 + 0j)

    def test_density_at_center(self):
        row = RowSpec.normalized_sum(symmetric_coin(), 64)
        grid = convolution_density(row, [0.0])
        self.assertAlmostEqual(grid.values[0], math.sqrt(63.0 / 64.0) / math.pi, delta=1e-3)

    def test_near_atom_flag(self):
        row = RowSpec.normalized_sum(binomial_coin(0.9), 4)
        grid = convolution_density(row, [0.0, 2.0 / 3.0], continuation=False)
        self.assertEqual(grid.quality[1], Quality.NEAR_ATOM)

    def test_failed_homotopy_is_retried_on_a_finer_path(self):
        tracked = _Subordination._homotopy
        steps_seen = []

        def first_path_fails(solver, z, steps=HOMOTOPY_STEPS):
            steps_seen.append(steps)
            return None if steps == HOMOTOPY_STEPS else tracked(solver, z, steps)

        row = RowSpec.from_groups([(symmetric_coin(), 2)])
        z = 0.3 + 0.5j
        with patch.object(_Subordination, "_homotopy", first_path_fails):
            g = convolution_cauchy(row, z)
        self.assertEqual(steps_seen, [HOMOTOPY_STEPS, RETRY_HOMOTOPY_STEPS])
        self.assertAlmostEqual(g, arcsine_cauchy(z), delta=1e-9)

    def test_retried_points_are_not_flagged(self):
        tracked = _Subordination._homotopy

        def first_path_fails(solver, z, steps=HOMOTOPY_STEPS):
            return None if steps == HOMOTOPY_STEPS else tracked(solver, z, steps)

        row = RowSpec.from_groups([(symmetric_coin(), 2)])
        with patch.object(_Subordination, "_homotopy", first_path_fails):
            grid = convolution_density(row, [-0.5, 0.0, 0.5], continuation=False)
        self.assertEqual(grid.flagged(), [])
        self.assertAlmostEqual(grid.values[1], 1.0 / (2.0 * math.pi), delta=1e-3)

    def test_both_paths_failing_raises(self):
        with patch.object(_Subordination, "_homotopy", return_value=None):
            with self.assertRaises(ConvergenceError):
                convolution_cauchy(RowSpec.from_groups([(symmetric_coin(), 2)]), 0.3 + 0.5j)

    def test_asymmetric_members(self):
        mu = AtomicMeasure((-2.0, 1.0), (1.0 / 3.0, 2.0 / 3.0))
        row = RowSpec.from_groups([(mu, 3), (symmetric_coin(), 2)])
        z = 0.4 + 0.2j
        g = convolution_cauchy(row, z)
        self.assertLess(g.imag, 0.0)
        self.assertLessEqual(abs(g), 1.0 / z.imag)


if __name__ == "__main__":
    unittest.main()
