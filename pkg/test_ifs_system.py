import logging
import unittest
from itertools import product

import numpy as np

from codespace import CodeStream, project
from geometry import PointSet, diameter, hausdorff
from ifs_errors import (
    AlphaConditionError,
    BudgetExceededError,
    CoefficientError,
    MapError,
    MapOutOfBoxError,
    NonConvergenceError,
)
from ifs_system import (
    CoefficientTable,
    IFSSystem,
    attractor,
    check_proof_inequalities,
    continuity_of_hutchinson,
    diagnostics_xy,
    falsify_beta,
    hutchinson,
    iterate,
    iterate_gaps,
    rate_certificate,
    synthesize_affine_coeffs,
    tail_bound,
    validate_alpha,
)
from maps import AffineMap, DomainBox, Poly1DMap

# Configure basic logging for tests to show logger name and level
logging.basicConfig(level=logging.DEBUG, format="%(asctime)s [%(name)s][%(levelname)s] %(message)s")

UNIT = DomainBox(np.array([0.0]), np.array([1.0]))
UNIT_SQUARE = DomainBox(np.array([0.0, 0.0]), np.array([1.0, 1.0]))

QUADRATIC_ENTRIES = [
    {'i': '1', 'j': '1', 'c': 0.5},
    {'i': '1', 'j': '2', 'a': 0.5},
    {'i': '2', 'j': '1', 'c': 0.5},
    {'i': '2', 'j': '2', 'a': 0.25},
]
# Width of the grid standing in for the attractor [0, 1] of the quadratic system.
QUADRATIC_GRID_STEP = 5e-6


def cantor_system(threads: int = 1) -> IFSSystem:
    maps = {'1': AffineMap([[1.0 / 3.0]], [0.0]), '2': AffineMap([[1.0 / 3.0]], [2.0 / 3.0])}
    return IFSSystem(maps, synthesize_affine_coeffs(maps, UNIT), UNIT, name='cantor', threads=threads)


def quadratic_system(threads: int = 1) -> IFSSystem:
    maps = {'1': Poly1DMap([0.0, 0.0, 0.5]), '2': Poly1DMap([0.5, 0.5])}
    table = CoefficientTable.from_entries(['1', '2'], QUADRATIC_ENTRIES)
    return IFSSystem(maps, table, UNIT, name='quadratic', threads=threads)


def sierpinski_system(threads: int = 1) -> IFSSystem:
    maps = {
        '1': AffineMap(np.eye(2) / 2, [0.0, 0.0]),
        '2': AffineMap(np.eye(2) / 2, [0.5, 0.0]),
        '3': AffineMap(np.eye(2) / 2, [0.25, 0.5]),
    }
    return IFSSystem(maps, synthesize_affine_coeffs(maps, UNIT_SQUARE), UNIT_SQUARE, name='sierpinski', threads=threads)


def halving_system() -> IFSSystem:
    maps = {'1': AffineMap([[0.5]], [0.0])}
    table = CoefficientTable.from_entries(['1'], [{'i': '1', 'j': '1', 'a': 0.25}])
    return IFSSystem(maps, table, UNIT, name='halving')


def cantor_endpoints(level: int) -> PointSet:
    """Endpoints of the 2^level intervals of the level-th Cantor prefractal."""
    lefts = np.zeros(1)
    for _ in range(level):
        lefts = np.concatenate([lefts / 3.0, lefts / 3.0 + 2.0 / 3.0])
    return PointSet.from_scalars(np.concatenate([lefts, lefts + 3.0 ** -level]))


def unit_grid(step: float) -> PointSet:
    return PointSet.from_scalars(np.linspace(0.0, 1.0, int(round(1.0 / step)) + 1))


def random_cloud(system: IFSSystem, rng: np.random.Generator, max_size: int = 6) -> PointSet:
    return PointSet(system.box.sample(int(rng.integers(1, max_size + 1)), rng))


class TestCoefficientTable(unittest.TestCase):

    def test_quadratic_constant(self):
        table = CoefficientTable.from_entries(['1', '2'], QUADRATIC_ENTRIES)
        self.assertEqual(validate_alpha(table), 0.5)
        self.assertEqual(table.entry('2', '2'), (0.25, 0.0, 0.0))

    def test_cantor_constant(self):
        self.assertAlmostEqual(validate_alpha(cantor_system().table), 1.0 / 3.0, places=15)

    def test_boundary_value_rejected(self):
        table = CoefficientTable.from_entries(['1', '2'], [{'i': '2', 'j': '1', 'a': 0.5, 'b': 0.25, 'c': 0.25}])
        with self.assertRaises(AlphaConditionError) as ctx:
            validate_alpha(table)
        self.assertEqual((ctx.exception.i, ctx.exception.j), ('2', '1'))
        self.assertEqual(ctx.exception.d_ij, 1.0)

    def test_malformed_entries(self):
        with self.assertRaises(CoefficientError):
            CoefficientTable.from_entries(['1'], [{'i': '1', 'j': '1'}, {'i': '1', 'j': '1'}])
        with self.assertRaises(CoefficientError):
            CoefficientTable.from_entries(['1'], [{'i': '1', 'j': '9'}])
        with self.assertRaises(CoefficientError):
            CoefficientTable.from_entries(['1'], [{'i': '1', 'j': '1', 'a': -0.1}])

    def test_entries_round_trip_skips_zeros(self):
        table = CoefficientTable.from_entries(['1', '2'], QUADRATIC_ENTRIES)
        again = CoefficientTable.from_entries(['1', '2'], table.to_entries())
        np.testing.assert_array_equal(again.d_matrix, table.d_matrix)
        self.assertEqual(len(table.to_entries()), 4)


class TestSynthesize(unittest.TestCase):

    def test_cantor(self):
        table = cantor_system().table
        np.testing.assert_allclose(table.c, np.full((2, 2), 1.0 / 3.0), rtol=0, atol=1e-15)
        self.assertEqual(table.a.sum() + table.b.sum(), 0.0)

    def test_sierpinski(self):
        self.assertEqual(sierpinski_system().d, 0.5)

    def test_non_contracting_affine_map(self):
        maps = {'1': AffineMap([[1.0]], [0.0])}
        with self.assertRaises(AlphaConditionError):
            synthesize_affine_coeffs(maps, UNIT)

    def test_polynomial_map_cannot_be_synthesized(self):
        with self.assertRaises(MapError):
            synthesize_affine_coeffs({'1': Poly1DMap([0.0, 0.5])}, UNIT)


class TestSystemConstruction(unittest.TestCase):

    def test_map_leaving_box(self):
        maps = {'1': AffineMap([[0.5]], [0.75])}
        table = CoefficientTable.from_entries(['1'], [{'i': '1', 'j': '1', 'a': 0.25}])
        with self.assertRaises(MapOutOfBoxError) as ctx:
            IFSSystem(maps, table, UNIT)
        self.assertEqual(ctx.exception.symbol, '1')

    def test_table_must_match_maps(self):
        maps = {'1': AffineMap([[0.5]], [0.0])}
        with self.assertRaises(CoefficientError):
            IFSSystem(maps, CoefficientTable.zeros(['1', '2']), UNIT)

    def test_with_table_revalidates(self):
        system = quadratic_system()
        bad = system.table.with_entry('1', '1', 0.5, 0.5, 0.0)
        with self.assertRaises(AlphaConditionError):
            system.with_table(bad)


class TestFalsifyBeta(unittest.TestCase):

    def test_correct_quadratic_table_survives(self):
        self.assertIsNone(falsify_beta(quadratic_system(), samples=100000, seed=42))

    def test_planted_bad_entry_is_found(self):
        system = quadratic_system()
        bad = system.with_table(system.table.with_entry('1', '1', 0.1, 0.1, 0.1))
        found = falsify_beta(bad, samples=100000, seed=42)
        self.assertIsNotNone(found)
        self.assertEqual((found.i, found.j), ('1', '1'))
        self.assertGreater(found.lhs, found.rhs + 1e-12)

    def test_hand_checked_pair(self):
        x, y = 1.0, 0.9
        lhs = abs(x ** 4 - y ** 4) / 8
        rhs = 0.1 * abs(x - y) + 0.1 * abs(x * x - y * y) / 2 + 0.1 * abs(x * x - y * y) / 2
        self.assertAlmostEqual(lhs, 0.0429875, places=12)
        self.assertAlmostEqual(rhs, 0.029, places=12)

    def test_equality_case_is_not_a_violation(self):
        self.assertIsNone(falsify_beta(halving_system(), samples=10000, seed=1))

    def test_seeded(self):
        system = quadratic_system()
        bad = system.with_table(system.table.with_entry('1', '1', 0.1, 0.1, 0.1))
        first = falsify_beta(bad, samples=1000, seed=3)
        second = falsify_beta(bad, samples=1000, seed=3)
        self.assertEqual(first.to_dict(), second.to_dict())


class TestHutchinson(unittest.TestCase):

    def test_cantor_images(self):
        image = hutchinson(cantor_system(), PointSet.from_scalars([0.0, 1.0]))
        np.testing.assert_allclose(np.sort(image.points.ravel()), [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0], atol=1e-15)

    def test_single_map(self):
        image = hutchinson(halving_system(), PointSet.from_scalars([0.2, 0.8]))
        self.assertEqual(image.points.ravel().tolist(), [0.1, 0.4])

    def test_quadratic_images_merge(self):
        image = hutchinson(quadratic_system(), PointSet.from_scalars([0.0, 1.0]))
        self.assertEqual(len(image), 4)
        self.assertEqual(sorted(set(image.points.ravel().tolist())), [0.0, 0.5, 1.0])

    def test_threads_do_not_change_results(self):
        rng = np.random.default_rng(41)
        B = PointSet(rng.uniform(size=(500, 2)))
        serial = hutchinson(sierpinski_system(), B)
        threaded = hutchinson(sierpinski_system(threads=4), B)
        self.assertEqual(serial.points.tobytes(), threaded.points.tobytes())

    def test_iterate_respects_size_cap(self):
        with self.assertRaises(BudgetExceededError):
            iterate(cantor_system(), PointSet.from_scalars([0.5]), 10, max_points=100)
        self.assertEqual(len(iterate(cantor_system(), PointSet.from_scalars([0.5]), 6)), 64)


class TestAttractor(unittest.TestCase):

    def test_cantor_matches_prefractal(self):
        result = attractor(cantor_system(), PointSet.from_scalars([0.5]), tol=1e-6, eps_decimate=1e-6, max_iter=200)
        self.assertLessEqual(hausdorff(result.cloud, cantor_endpoints(12)), 1e-4)
        self.assertLessEqual(result.step_gap, 1e-6)
        self.assertAlmostEqual(result.decimation_budget, result.iterations * 1e-6, places=15)
        self.assertGreaterEqual(result.rate_bound, 0.0)

    def test_quadratic_fills_unit_interval(self):
        result = attractor(quadratic_system(), PointSet.from_scalars([0.3]), tol=2e-4, eps_decimate=2e-5, max_iter=200)
        self.assertLessEqual(hausdorff(result.cloud, unit_grid(1e-3)), 2e-3)

    def test_single_map_collapses_to_fixed_point(self):
        result = attractor(halving_system(), PointSet.from_scalars([0.7]), tol=1e-6, eps_decimate=0.0, max_iter=100)
        self.assertLessEqual(abs(result.cloud.points).max(), 1e-6)

    def test_non_convergence(self):
        with self.assertRaises(NonConvergenceError) as ctx:
            attractor(cantor_system(), PointSet.from_scalars([0.5]), tol=1e-9, eps_decimate=0.0, max_iter=2)
        self.assertEqual(ctx.exception.iterations, 2)
        self.assertEqual(len(ctx.exception.last_state), 4)

    def test_initial_cloud_outside_box(self):
        with self.assertRaises(ValueError):
            attractor(cantor_system(), PointSet.from_scalars([1.5]), tol=1e-3, eps_decimate=0.0, max_iter=10)

    def test_independent_of_starting_cloud(self):
        for system, tol, eps in ((cantor_system(), 1e-6, 1e-6), (quadratic_system(), 2e-4, 2e-5)):
            first = attractor(system, PointSet.from_scalars([0.1]), tol, eps, 200)
            second = attractor(system, PointSet.from_scalars([0.9, 0.2]), tol, eps, 200)
            allowed = tol + first.decimation_budget + second.decimation_budget
            self.assertLessEqual(hausdorff(first.cloud, second.cloud), allowed, system.name)

    def test_cloud_is_nearly_fixed(self):
        fixtures = (
            (cantor_system(), PointSet.from_scalars([0.5]), 1e-6, 1e-6),
            (quadratic_system(), PointSet.from_scalars([0.5]), 2e-4, 2e-5),
            (sierpinski_system(), PointSet(np.array([[0.5, 0.5]])), 4e-3, 1e-3),
        )
        for system, B0, tol, eps in fixtures:
            cloud = attractor(system, B0, tol, eps, 200).cloud
            gap = hausdorff(hutchinson(system, cloud), cloud)
            self.assertLessEqual(gap, tol + len(system.symbols) * eps, system.name)

    def test_threads_do_not_change_the_cloud(self):
        B0 = PointSet(np.array([[0.5, 0.5]]))
        serial = attractor(sierpinski_system(), B0, 4e-3, 1e-3, 200)
        threaded = attractor(sierpinski_system(threads=3), B0, 4e-3, 1e-3, 200)
        self.assertEqual(serial.cloud.points.tobytes(), threaded.cloud.points.tobytes())
        self.assertEqual(serial.to_report(), threaded.to_report())


class TestRateCertificate(unittest.TestCase):

    def test_zero_steps(self):
        system = cantor_system()
        B0 = PointSet.from_scalars([0.0])
        FB = hutchinson(system, B0)
        x0 = 2.0 / 3.0  # delta({0}, {0, 2/3})
        x1 = 2.0 / 9.0  # f_2 sends {0} and {0, 2/3} to {2/3} and {2/3, 8/9}
        self.assertEqual(len(FB), 2)
        self.assertAlmostEqual(rate_certificate(system, B0, 0), (x0 + x1) / (1 - 1.0 / 3.0), places=14)

    def test_cantor_bound_drops_by_d_every_two_steps(self):
        system = cantor_system()
        B0 = PointSet.from_scalars([0.0])
        for n in range(0, 20, 2):
            ratio = rate_certificate(system, B0, n + 2) / rate_certificate(system, B0, n)
            self.assertAlmostEqual(ratio, 1.0 / 3.0, places=12)
            self.assertEqual(rate_certificate(system, B0, n), rate_certificate(system, B0, n + 1))

    def test_dominates_measured_error(self):
        fixtures = (
            (cantor_system(), cantor_endpoints(16), 3.0 ** -16),
            (quadratic_system(), unit_grid(QUADRATIC_GRID_STEP), QUADRATIC_GRID_STEP / 2),
        )
        for system, reference, reference_error in fixtures:
            for seed in (1, 2, 3):
                rng = np.random.default_rng(seed)
                B0 = random_cloud(system, rng, max_size=4)
                cloud = B0
                for n in range(13):
                    if n:
                        cloud = iterate(system, cloud, 1)
                    measured = hausdorff(cloud, reference)
                    bound = rate_certificate(system, B0, n)
                    self.assertLessEqual(measured, bound + reference_error + 1e-12, f"{system.name} seed {seed} n {n}")


class TestDiagnostics(unittest.TestCase):

    def test_identical_clouds_give_zero(self):
        system = quadratic_system()
        Y = PointSet.from_scalars([0.2, 0.9])
        diag = diagnostics_xy(system, Y, Y, 6)
        self.assertEqual(diag.xs, (0.0,) * 7)
        self.assertIsNone(diag.ys[0])

    def test_cantor_scaling(self):
        system = cantor_system()
        Y, Z = PointSet.from_scalars([0.0]), PointSet.from_scalars([1.0])
        diag = diagnostics_xy(system, Y, Z, 5)
        for k, x in enumerate(diag.xs):
            self.assertAlmostEqual(x, 3.0 ** -k, places=14)

    def test_proof_inequalities_hold_on_random_pairs(self):
        for system, depth in ((cantor_system(), 12), (quadratic_system(), 12), (sierpinski_system(), 6)):
            rng = np.random.default_rng(2024)
            for _ in range(10):
                Y, Z = random_cloud(system, rng), random_cloud(system, rng)
                diag = diagnostics_xy(system, Y, Z, depth)
                gaps = iterate_gaps(system, Y, Z, depth)
                check = check_proof_inequalities(diag, system.d, hausdorff_gaps=gaps)
                self.assertTrue(check.passed, f"{system.name}: {check.to_dict()}")

    def test_violation_is_reported(self):
        system = quadratic_system()
        diag = diagnostics_xy(system, PointSet.from_scalars([0.0]), PointSet.from_scalars([1.0]), 4)
        check = check_proof_inequalities(diag, 0.01)
        self.assertFalse(check.passed)
        self.assertTrue(check.violations['x_next_le_d_y'])

    def test_word_budget(self):
        system = sierpinski_system()
        Y = PointSet(np.array([[0.1, 0.1]]))
        with self.assertRaises(BudgetExceededError) as ctx:
            diagnostics_xy(system, Y, Y, 13)
        self.assertIn("depth <= 12", str(ctx.exception))

    def test_tail_bound_controls_projections_uniformly(self):
        system = cantor_system()
        B = PointSet.from_scalars([0.0, 1.0])
        diag = diagnostics_xy(system, B, hutchinson(system, B), 10)
        for n in (2, 4, 6):
            bound = tail_bound(diag, n, system.d)
            worst = 0.0
            for word in product(system.symbols, repeat=n):
                a = project(system, CodeStream.periodic(('1',), preamble=word), tol=1e-12).point
                image = PointSet(B.points)
                for s in reversed(word):
                    image = system.maps[s].image(image)
                worst = max(worst, hausdorff(image, PointSet(a.reshape(1, -1))))
            self.assertLessEqual(worst, bound)

    def test_tail_bound_range(self):
        system = cantor_system()
        diag = diagnostics_xy(system, PointSet.from_scalars([0.0]), PointSet.from_scalars([1.0]), 3)
        with self.assertRaises(ValueError):
            tail_bound(diag, 4, system.d)


class TestContinuity(unittest.TestCase):

    def test_images_approach_together(self):
        system = cantor_system()
        reference = cantor_endpoints(14)
        sequence = [iterate(system, PointSet.from_scalars([0.5]), n) for n in range(1, 10)]
        pairs = continuity_of_hutchinson(system, sequence, reference)
        for before, after in pairs:
            self.assertLessEqual(after, before / 3.0 + 1e-12)
        self.assertLess(pairs[-1][1], pairs[0][1])
        self.assertGreater(diameter(reference), 0.99)


if __name__ == '__main__':
    unittest.main(argv=['first-arg-is-ignored'], exit=False)
