"""Tests for the formalism app."""
import io
import json
import math
import os
import tempfile
from pathlib import Path
from unittest.mock import Mock, patch

import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase, override_settings
from PIL import Image
from scipy.special import logsumexp
from scipy.stats import kstest

from . import cli
from . import serializers as documents
from .conf import get_setting
from .exceptions import (
    BudgetExceeded, CountOverflow, DimensionMismatch, DisallowedEdge, EmptyRow,
    GridMismatch, IndexOutOfRange, InputError, InsufficientData, InvalidKernel,
    InvariantViolation, NoConvergence, NotPrimitive, NotStationary, NotSurjective,
    ParseError, SingularPotential, SupportViolation, UndefinedPotential, ZeroStateWarning,
)
from .services import complex_correspondence as cc
from .services import export_service
from .services import finite_correspondence as fc
from .services import kernels, pressure, ruelle
from .services.random_source import GENERATOR_ID, make_generator, split_seeds
from .validators import (
    FiniteArrayValidator, ProbabilityMassValidator, StochasticMatrixValidator,
)

FIXTURES = Path(__file__).resolve().parent / 'fixtures'
GOLDEN = (1 + math.sqrt(5)) / 2
LOG_GOLDEN = math.log(GOLDEN)
PARRY = [[1 / GOLDEN, 1 / GOLDEN**2], [1.0, 0.0]]
PARRY_P = [GOLDEN**2 / (GOLDEN**2 + 1), 1 / (GOLDEN**2 + 1)]


def fixture(name):
    return str(FIXTURES / name)


def make_golden_mean(values=None):
    """The golden-mean correspondence [[1,1],[1,0]] with an optional potential matrix."""
    correspondence = fc.validate([[1, 1], [1, 0]])
    if values is None:
        return correspondence, fc.EdgePotential.zero(correspondence)
    return correspondence, fc.EdgePotential.from_matrix(correspondence, values)


def make_full_shift(beta=0.0):
    """The full 2-shift with phi = beta on the diagonal edges."""
    correspondence = fc.validate(np.ones((2, 2), dtype=bool))
    return correspondence, fc.EdgePotential.from_matrix(correspondence, beta * np.eye(2))


def make_parry():
    return kernels.ProbabilityVector(PARRY_P), kernels.TransitionKernel(PARRY)


def random_instance(seed, d_min=2, d_max=8, density=0.4, spread=2.0, primitive=False):
    """
    Random irreducible correspondence with a potential uniform in [-spread, spread].

    A random cyclic permutation is always added, so every row and every
    column is nonempty.
    """
    rng = make_generator(seed)
    while True:
        d = int(rng.integers(d_min, d_max + 1))
        adjacency = rng.random((d, d)) < rng.uniform(density, 1.0)
        order = rng.permutation(d)
        adjacency[order, np.roll(order, -1)] = True
        correspondence = fc.validate(adjacency)
        if not primitive or fc.is_primitive(correspondence):
            break
    values = rng.uniform(-spread, spread, size=(d, d))
    return correspondence, fc.EdgePotential.from_matrix(correspondence, values)


def random_kernel(correspondence, rng):
    """A kernel charging every edge of the correspondence."""
    weights = (rng.random(correspondence.adjacency.shape) + 0.05) * correspondence.adjacency
    return kernels.TransitionKernel.normalized(weights, support=correspondence.adjacency)


def run_cli(*argv):
    stdout, stderr = io.StringIO(), io.StringIO()
    code = cli.run(list(argv), stdout=stdout, stderr=stderr)
    return code, stdout.getvalue(), stderr.getvalue()


# ---------------------------------------------------------------------------
# Finite correspondence tests
# ---------------------------------------------------------------------------

class ValidateTests(SimpleTestCase):
    def test_golden_mean_is_valid(self):
        correspondence, _ = make_golden_mean()
        self.assertEqual(correspondence.d, 2)
        self.assertEqual(correspondence.edges, [(0, 0), (0, 1), (1, 0)])
        self.assertEqual(correspondence.images(1), [0])

    def test_empty_row_rejected(self):
        with self.assertRaises(EmptyRow) as ctx:
            fc.validate([[0, 0], [1, 1]])
        self.assertEqual(ctx.exception.state, 0)
        self.assertTrue(str(ctx.exception).startswith('EmptyRow(0)'))

    def test_non_square_rejected(self):
        with self.assertRaises(DimensionMismatch):
            fc.validate([[1, 1, 0], [1, 0, 1]])

    def test_non_binary_entries_rejected(self):
        with self.assertRaises(InputError):
            fc.validate([[2, 0], [1, 1]])

    def test_adjacency_is_read_only(self):
        correspondence, _ = make_golden_mean()
        with self.assertRaises(ValueError):
            correspondence.adjacency[1, 1] = True

    def test_equality_and_hash_follow_adjacency(self):
        first, _ = make_golden_mean()
        second = fc.validate(np.array([[True, True], [True, False]]))
        self.assertEqual(first, second)
        self.assertEqual(hash(first), hash(second))


class FromMapTests(SimpleTestCase):
    def test_one_image_per_state(self):
        correspondence = fc.from_map([1, 2, 0])
        self.assertEqual(correspondence.edges, [(0, 1), (1, 2), (2, 0)])
        np.testing.assert_array_equal(correspondence.out_degrees(), [1, 1, 1])

    def test_image_out_of_range(self):
        with self.assertRaises(IndexOutOfRange):
            fc.from_map([0, 3, 1])

    def test_orbits_are_trajectories(self):
        for seed in range(10):
            rng = make_generator(seed)
            d = int(rng.integers(2, 7))
            images = [int(image) for image in rng.integers(0, d, size=d)]
            correspondence = fc.from_map(images)
            for n in range(1, 7):
                trajectories = []
                for start in range(d):
                    trajectory = [start]
                    for _ in range(n - 1):
                        trajectory.append(images[trajectory[-1]])
                    trajectories.append(tuple(trajectory))
                with self.subTest(seed=seed, n=n):
                    self.assertEqual(fc.enumerate_orbits(correspondence, n), trajectories)
                    self.assertEqual(fc.count_orbits(correspondence, n - 1), d)


class InverseTests(SimpleTestCase):
    def test_inverse_transposes(self):
        correspondence = fc.validate([[1, 1, 0], [0, 0, 1], [1, 0, 0]])
        inverse = fc.inverse(correspondence)
        np.testing.assert_array_equal(inverse.adjacency, correspondence.adjacency.T)
        self.assertEqual(fc.inverse(inverse), correspondence)

    def test_golden_mean_is_self_inverse(self):
        correspondence, _ = make_golden_mean()
        self.assertEqual(fc.inverse(correspondence), correspondence)

    def test_not_surjective(self):
        with self.assertRaises(NotSurjective) as ctx:
            fc.inverse(fc.validate([[1, 0], [1, 0]]))
        self.assertEqual(ctx.exception.state, 1)

    def test_conjugate_potential_transposes_values(self):
        correspondence = fc.validate([[1, 1], [1, 0]])
        potential = fc.EdgePotential.from_edges(correspondence, {(0, 1): 2.0, (1, 0): -1.0})
        conjugate = fc.conjugate_potential(potential)
        self.assertEqual(conjugate(1, 0), 2.0)
        self.assertEqual(conjugate(0, 1), -1.0)


class OrbitTests(SimpleTestCase):
    def test_enumerate_golden_mean_length_three(self):
        correspondence, _ = make_golden_mean()
        orbits = fc.enumerate_orbits(correspondence, 3)
        # 111, 112, 121, 211, 212 in 1-based labels
        self.assertEqual(orbits, [(0, 0, 0), (0, 0, 1), (0, 1, 0), (1, 0, 0), (1, 0, 1)])

    def test_count_golden_mean(self):
        correspondence, _ = make_golden_mean()
        self.assertEqual(fc.count_orbits(correspondence, 2), 5)
        self.assertEqual(fc.count_orbits(correspondence, 0), 2)
        self.assertEqual(fc.count_orbits(correspondence, 10), 233)

    def test_enumeration_matches_count(self):
        for seed in range(12):
            correspondence, _ = random_instance(seed, d_max=4)
            for n in range(1, 9):
                with self.subTest(seed=seed, n=n):
                    orbits = fc.orbit_array(correspondence, n)
                    self.assertEqual(len(orbits), fc.count_orbits(correspondence, n - 1))
                    self.assertEqual(len({tuple(row) for row in orbits.tolist()}), len(orbits))

    def test_orbits_are_lexicographic(self):
        correspondence, _ = random_instance(3, d_max=4)
        orbits = fc.enumerate_orbits(correspondence, 4)
        self.assertEqual(orbits, sorted(orbits))

    def test_count_overflow(self):
        correspondence, _ = make_full_shift()
        self.assertEqual(fc.count_orbits(correspondence, 125), 2**126)
        with self.assertRaises(CountOverflow):
            fc.count_orbits(correspondence, 127)

    def test_budget_exceeded(self):
        correspondence, _ = make_full_shift()
        with self.assertRaises(BudgetExceeded) as ctx:
            fc.enumerate_orbits(correspondence, 11, budget=1000)
        self.assertEqual(ctx.exception.count, 2048)


class BirkhoffSumTests(SimpleTestCase):
    def setUp(self):
        self.correspondence, self.potential = make_golden_mean([[0.5, -1.0], [2.0, 0.0]])

    def test_hand_sum(self):
        # 1-based orbit (1, 2, 1, 1)
        self.assertAlmostEqual(fc.birkhoff_sum(self.potential, (0, 1, 0, 0)), 1.5, places=14)

    def test_single_state_is_empty_sum(self):
        self.assertEqual(fc.birkhoff_sum(self.potential, (1,)), 0.0)

    def test_disallowed_edge(self):
        with self.assertRaises(DisallowedEdge) as ctx:
            fc.birkhoff_sum(self.potential, (0, 1, 1))
        self.assertEqual(ctx.exception.edge, (1, 1))

    def test_vectorized_matches_scalar(self):
        orbits = fc.orbit_array(self.correspondence, 6)
        sums = fc.birkhoff_sums(self.potential, orbits)
        for orbit, value in zip(orbits.tolist(), sums):
            self.assertAlmostEqual(fc.birkhoff_sum(self.potential, orbit), value, places=12)

    def test_shift_adds_length(self):
        shifted = self.potential.shifted(0.25)
        self.assertAlmostEqual(
            fc.birkhoff_sum(shifted, (0, 1, 0, 0)), 1.5 + 3 * 0.25, places=14
        )

    def test_additive_under_concatenation(self):
        for seed in range(10):
            correspondence, potential = random_instance(seed, d_max=4)
            orbits = fc.orbit_array(correspondence, 8)
            rows = make_generator(seed).choice(len(orbits), size=min(len(orbits), 40),
                                               replace=False)
            for orbit in orbits[rows].tolist():
                for m in range(8):
                    with self.subTest(seed=seed, orbit=orbit, m=m):
                        self.assertAlmostEqual(
                            fc.birkhoff_sum(potential, orbit),
                            fc.birkhoff_sum(potential, orbit[:m + 1]) +
                            fc.birkhoff_sum(potential, orbit[m:]),
                            delta=1e-12,
                        )


class EdgePotentialTests(SimpleTestCase):
    def test_from_edges_rejects_missing_edge(self):
        correspondence, _ = make_golden_mean()
        with self.assertRaises(DisallowedEdge):
            fc.EdgePotential.from_edges(correspondence, {(1, 1): 1.0})

    def test_off_edge_values_are_zeroed(self):
        correspondence, potential = make_golden_mean([[1.0, 2.0], [3.0, 9.0]])
        self.assertEqual(potential.values[1, 1], 0.0)
        with self.assertRaises(DisallowedEdge):
            potential(1, 1)

    def test_non_finite_rejected(self):
        correspondence, _ = make_golden_mean()
        with self.assertRaises(InputError):
            fc.EdgePotential.from_matrix(correspondence, [[np.inf, 0.0], [0.0, 0.0]])

    def test_sup_norm(self):
        _, potential = make_golden_mean([[0.5, -3.0], [2.0, 7.0]])
        self.assertEqual(fc.sup_norm(potential), 3.0)


class TransitivityTests(SimpleTestCase):
    def test_golden_mean_is_primitive(self):
        correspondence, _ = make_golden_mean()
        self.assertTrue(fc.is_irreducible(correspondence))
        self.assertTrue(fc.is_primitive(correspondence))
        self.assertTrue(fc.is_strongly_transitive(correspondence))

    def test_swap_is_irreducible_not_primitive(self):
        correspondence = fc.from_map([1, 0])
        self.assertTrue(fc.is_irreducible(correspondence))
        self.assertFalse(fc.is_primitive(correspondence))

    def test_triangular_is_reducible(self):
        correspondence = fc.validate([[1, 1], [0, 1]])
        self.assertFalse(fc.is_irreducible(correspondence))
        self.assertFalse(fc.is_primitive(correspondence))
        self.assertFalse(fc.is_strongly_transitive(correspondence))

    def test_wielandt_extremal_matrix_is_primitive(self):
        # cycle 0 -> 1 -> 2 -> 3 -> 0 with the chord 3 -> 1
        correspondence = fc.validate([
            [0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1], [1, 1, 0, 0],
        ])
        self.assertTrue(fc.is_primitive(correspondence))

    def test_primitive_implies_irreducible(self):
        primitive = reducible = 0
        for seed in range(200):
            rng = make_generator(seed)
            d = int(rng.integers(2, 7))
            adjacency = rng.random((d, d)) < rng.uniform(0.1, 0.6)
            adjacency[np.arange(d), rng.integers(0, d, size=d)] = True
            correspondence = fc.validate(adjacency)
            irreducible = fc.is_irreducible(correspondence)
            with self.subTest(seed=seed):
                if fc.is_primitive(correspondence):
                    primitive += 1
                    self.assertTrue(irreducible)
                if not irreducible:
                    reducible += 1
                    self.assertFalse(fc.is_primitive(correspondence))
        self.assertGreater(primitive, 0)
        self.assertGreater(reducible, 0)


# ---------------------------------------------------------------------------
# Validator tests
# ---------------------------------------------------------------------------

class ValidatorTests(SimpleTestCase):
    def test_stochastic_accepts_parry(self):
        StochasticMatrixValidator()(PARRY)

    def test_stochastic_rejects_bad_row(self):
        with self.assertRaises(ValidationError) as ctx:
            StochasticMatrixValidator()([[0.5, 0.4], [1.0, 0.0]])
        self.assertEqual(ctx.exception.code, 'row_sum')

    def test_stochastic_rejects_negative(self):
        with self.assertRaises(ValidationError) as ctx:
            StochasticMatrixValidator()([[1.5, -0.5], [1.0, 0.0]])
        self.assertEqual(ctx.exception.code, 'negative')

    def test_finite_rejects_nan(self):
        with self.assertRaises(ValidationError):
            FiniteArrayValidator(ndim=1)([0.5, np.nan])

    def test_probability_mass_total(self):
        with self.assertRaises(ValidationError):
            ProbabilityMassValidator()([0.5, 0.6])
        ProbabilityMassValidator(tolerance=0.2)([0.5, 0.6])


# ---------------------------------------------------------------------------
# Kernel tests
# ---------------------------------------------------------------------------

class TransitionKernelTests(SimpleTestCase):
    def test_invalid_row_sum(self):
        with self.assertRaises(InvalidKernel):
            kernels.TransitionKernel([[0.5, 0.4], [1.0, 0.0]])

    def test_support_violation(self):
        with self.assertRaises(SupportViolation) as ctx:
            kernels.TransitionKernel([[0.5, 0.5], [0.5, 0.5]], support=[[1, 1], [1, 0]])
        self.assertEqual(ctx.exception.edge, (1, 1))

    def test_distribution_must_sum_to_one(self):
        with self.assertRaises(InputError):
            kernels.ProbabilityVector([0.3, 0.3])


class KernelAlgebraTests(SimpleTestCase):
    def test_pushforward_of_stationary_is_itself(self):
        distribution, kernel = make_parry()
        image = kernels.pushforward(distribution, kernel)
        np.testing.assert_allclose(image.entries, PARRY_P, atol=1e-14)

    def test_pushforward_dimension_mismatch(self):
        _, kernel = make_parry()
        with self.assertRaises(DimensionMismatch):
            kernels.pushforward(kernels.ProbabilityVector.uniform(3), kernel)

    def test_pullback(self):
        _, kernel = make_parry()
        np.testing.assert_allclose(kernels.pullback(kernel, [1.0, 0.0]), [1 / GOLDEN, 1.0])

    def test_pullback_of_map_is_precomposition(self):
        images = [2, 0, 1, 1]
        function = np.array([0.5, -1.0, 3.0, 7.0])
        np.testing.assert_array_equal(
            kernels.pullback(kernels.dirac_kernel(images), function), function[images]
        )

    def test_compose_of_maps_is_map_composition(self):
        f, g = [1, 2, 0, 0], [3, 3, 1, 2]
        composite = kernels.compose(kernels.dirac_kernel(f), kernels.dirac_kernel(g))
        expected = kernels.dirac_kernel([g[f[i]] for i in range(4)])
        np.testing.assert_array_equal(composite.matrix, expected.matrix)

    def test_kernel_power(self):
        _, kernel = make_parry()
        np.testing.assert_array_equal(kernels.kernel_power(kernel, 0).matrix, np.eye(2))
        np.testing.assert_allclose(
            kernels.kernel_power(kernel, 5).matrix,
            np.linalg.matrix_power(np.array(PARRY), 5),
            atol=1e-14,
        )

    def test_cylinder_measure(self):
        distribution, kernel = make_parry()
        # 1-based cylinder (1, 2, 1)
        self.assertAlmostEqual(
            kernels.cylinder_measure(distribution, kernel, (0, 1, 0)),
            1 / (GOLDEN**2 + 1),
            places=14,
        )
        self.assertEqual(kernels.cylinder_measure(distribution, kernel, (1, 1)), 0.0)

    def test_cylinder_slices_sum_to_one(self):
        distribution, kernel = make_parry()
        correspondence, _ = make_golden_mean()
        for length in range(1, 8):
            masses = kernels.cylinder_measures(
                distribution, kernel, fc.orbit_array(correspondence, length)
            )
            self.assertAlmostEqual(masses.sum(), 1.0, places=12)

    def test_pushforward_rejects_lost_mass(self):
        leaky = Mock(matrix=np.array([[0.5, 0.4], [0.0, 1.0]]), d=2)
        with self.assertRaises(InvalidKernel):
            kernels.pushforward(kernels.ProbabilityVector.uniform(2), leaky)
        with self.assertRaises(InvalidKernel):
            kernels.compose(leaky, kernels.identity_kernel(2))

    def test_pushforward_absorbs_roundoff(self):
        kernel = kernels.TransitionKernel([[0.5, 0.5 + 5e-13], [1.0, 0.0]])
        image = kernels.pushforward(kernels.ProbabilityVector([0.5, 0.5]), kernel)
        self.assertAlmostEqual(image.entries.sum(), 1.0, places=15)


class KernelDualityTests(SimpleTestCase):
    def random_case(self, seed):
        rng = make_generator(seed)
        d = int(rng.integers(2, 8))
        measure = rng.random(d) + 0.01
        return (
            rng,
            kernels.ProbabilityVector(measure / measure.sum()),
            kernels.TransitionKernel.normalized(rng.random((d, d)) + 0.01),
            kernels.TransitionKernel.normalized(rng.random((d, d)) + 0.01),
        )

    def test_pushforward_and_pullback_are_adjoint(self):
        for seed in range(30):
            rng, measure, kernel, _ = self.random_case(seed)
            function = rng.normal(size=kernel.d)
            with self.subTest(seed=seed):
                self.assertAlmostEqual(
                    float(kernels.pushforward(measure, kernel).entries @ function),
                    float(measure.entries @ kernels.pullback(kernel, function)),
                    delta=1e-12,
                )

    def test_composition_is_associative_on_measures(self):
        for seed in range(30):
            _, measure, second, first = self.random_case(seed)
            with self.subTest(seed=seed):
                np.testing.assert_allclose(
                    kernels.pushforward(measure, kernels.compose(second, first)).entries,
                    kernels.pushforward(kernels.pushforward(measure, second), first).entries,
                    atol=1e-12,
                )


class CylinderConsistencyTests(SimpleTestCase):
    def test_extension_and_shift_invariance(self):
        for seed in range(10):
            correspondence, _ = random_instance(seed, d_max=4)
            kernel = random_kernel(correspondence, make_generator(seed))
            distribution = kernels.stationary(kernel)
            for length in range(1, 5):
                short = fc.orbit_array(correspondence, length)
                long = fc.orbit_array(correspondence, length + 1)
                short_masses = kernels.cylinder_measures(distribution, kernel, short)
                long_masses = kernels.cylinder_measures(distribution, kernel, long)
                extended = {tuple(orbit): 0.0 for orbit in short.tolist()}
                shifted = dict(extended)
                for orbit, mass in zip(long.tolist(), long_masses):
                    extended[tuple(orbit[:-1])] += mass
                    shifted[tuple(orbit[1:])] += mass
                with self.subTest(seed=seed, length=length):
                    for orbit, mass in zip(short.tolist(), short_masses):
                        self.assertAlmostEqual(extended[tuple(orbit)], mass, delta=1e-12)
                        self.assertAlmostEqual(shifted[tuple(orbit)], mass, delta=1e-10)

    def test_markov_joint_has_stationary_marginals(self):
        for seed in range(10):
            correspondence, _ = random_instance(seed)
            kernel = random_kernel(correspondence, make_generator(seed))
            distribution = kernels.stationary(kernel)
            joint = kernels.joint_from_markov(distribution, kernel).matrix
            with self.subTest(seed=seed):
                np.testing.assert_allclose(joint.sum(axis=1), distribution.entries, atol=1e-12)
                np.testing.assert_allclose(joint.sum(axis=0), distribution.entries, atol=1e-10)


class StationaryTests(SimpleTestCase):
    def test_parry_stationary(self):
        _, kernel = make_parry()
        for method in ('power', 'direct'):
            with self.subTest(method=method):
                distribution = kernels.stationary(kernel, method=method)
                np.testing.assert_allclose(distribution.entries, PARRY_P, atol=1e-10)

    def test_periodic_kernel(self):
        distribution = kernels.stationary(kernels.dirac_kernel([1, 0]))
        np.testing.assert_allclose(distribution.entries, [0.5, 0.5])

    def test_unknown_method(self):
        _, kernel = make_parry()
        with self.assertRaises(InputError):
            kernels.stationary(kernel, method='guess')


class EntropyTests(SimpleTestCase):
    def test_parry_entropy_rate(self):
        distribution, kernel = make_parry()
        self.assertAlmostEqual(kernels.entropy_rate(distribution, kernel), LOG_GOLDEN, places=12)

    def test_uniform_full_shift(self):
        kernel = kernels.TransitionKernel(np.full((2, 2), 0.5))
        distribution = kernels.ProbabilityVector.uniform(2)
        self.assertAlmostEqual(kernels.entropy_rate(distribution, kernel), math.log(2), places=14)

    def test_requires_stationary(self):
        _, kernel = make_parry()
        with self.assertRaises(NotStationary):
            kernels.entropy_rate(kernels.ProbabilityVector.dirac(2, 0), kernel)

    def test_shannon_entropy_zero_convention(self):
        self.assertEqual(kernels.shannon_entropy([1.0, 0.0]), 0.0)
        self.assertAlmostEqual(kernels.shannon_entropy([0.25] * 4), math.log(4), places=14)

    def test_entropy_bound(self):
        _, kernel = make_parry()
        self.assertAlmostEqual(kernels.entropy_bound(kernel), math.log(2))

    def test_entropy_rate_bounds_on_random_kernels(self):
        for seed in range(30):
            correspondence, _ = random_instance(seed)
            kernel = random_kernel(correspondence, make_generator(seed))
            distribution = kernels.stationary(kernel)
            rate = kernels.entropy_rate(distribution, kernel)
            with self.subTest(seed=seed):
                self.assertGreaterEqual(rate, 0.0)
                self.assertLessEqual(rate, kernels.entropy_bound(kernel) + 1e-12)
                self.assertLessEqual(kernels.entropy_bound(kernel), math.log(kernel.d) + 1e-12)

    def test_potential_energy(self):
        distribution, kernel = make_parry()
        values = [[1.0, 0.0], [0.0, 99.0]]
        expected = PARRY_P[0] / GOLDEN
        self.assertAlmostEqual(
            kernels.potential_energy(distribution, kernel, values), expected, places=14
        )


class BackwardKernelTests(SimpleTestCase):
    def test_time_reversal_identity(self):
        distribution, kernel = make_parry()
        reverse = kernels.backward_kernel(distribution, kernel)
        p, matrix = np.array(PARRY_P), np.array(PARRY)
        np.testing.assert_allclose(
            p[:, None] * reverse.matrix, (p[:, None] * matrix).T, atol=1e-14
        )
        self.assertAlmostEqual(reverse.matrix[0, 0], 1 / GOLDEN, places=14)

    def test_rokhlin_equals_entropy_rate(self):
        rng = make_generator(404)
        for trial in range(100):
            d = int(rng.integers(2, 9))
            kernel = kernels.TransitionKernel.normalized(rng.random((d, d)) + 0.05)
            distribution = kernels.stationary(kernel, method='direct')
            reverse = kernels.backward_kernel(distribution, kernel)
            with self.subTest(trial=trial, d=d):
                self.assertAlmostEqual(
                    kernels.rokhlin_entropy(distribution, reverse),
                    kernels.entropy_rate(distribution, kernel),
                    delta=1e-12,
                )

    def test_zero_state_defaults_to_uniform(self):
        kernel = kernels.TransitionKernel([[1.0, 0.0], [1.0, 0.0]])
        distribution = kernels.ProbabilityVector.dirac(2, 0)
        with self.assertWarns(ZeroStateWarning):
            reverse = kernels.backward_kernel(distribution, kernel)
        np.testing.assert_allclose(reverse.matrix, [[1.0, 0.0], [0.5, 0.5]])

    def test_zero_state_prefers_support_predecessors(self):
        kernel = kernels.TransitionKernel([[1.0, 0.0], [1.0, 0.0]], support=np.ones((2, 2)))
        distribution = kernels.ProbabilityVector.dirac(2, 0)
        with self.assertWarns(ZeroStateWarning):
            reverse = kernels.backward_kernel(distribution, kernel)
        np.testing.assert_allclose(reverse.matrix[1], [1.0, 0.0])


class JointDistributionTests(SimpleTestCase):
    def test_factor_inverts_markov_joint(self):
        distribution, kernel = make_parry()
        joint = kernels.joint_from_markov(distribution, kernel)
        marginal, conditional = kernels.factor_joint(joint, support=[[1, 1], [1, 0]])
        np.testing.assert_allclose(marginal.entries, PARRY_P, atol=1e-14)
        np.testing.assert_allclose(conditional.matrix, PARRY, atol=1e-14)

    def test_zero_marginal_row_uses_support(self):
        joint = kernels.JointDistribution([[0.5, 0.5], [0.0, 0.0]])
        marginal, conditional = kernels.factor_joint(joint, support=[[1, 1], [1, 0]])
        np.testing.assert_array_equal(marginal.entries, [1.0, 0.0])
        np.testing.assert_array_equal(conditional.matrix[1], [1.0, 0.0])

    def test_support_violation(self):
        joint = kernels.JointDistribution([[0.25, 0.25], [0.25, 0.25]])
        with self.assertRaises(SupportViolation):
            kernels.factor_joint(joint, support=[[1, 1], [1, 0]])


class SamplePathTests(SimpleTestCase):
    def test_same_seed_same_path(self):
        distribution, kernel = make_parry()
        first = kernels.sample_path(distribution, kernel, 1000, seed=17)
        second = kernels.sample_path(distribution, kernel, 1000, seed=17)
        other = kernels.sample_path(distribution, kernel, 1000, seed=18)
        np.testing.assert_array_equal(first.states, second.states)
        self.assertFalse(np.array_equal(first.states, other.states))
        self.assertEqual(first.generator, GENERATOR_ID)

    def test_path_respects_support(self):
        distribution, kernel = make_parry()
        path = kernels.sample_path(distribution, kernel, 5000, seed=1)
        states = path.states
        self.assertFalse(np.any((states[:-1] == 1) & (states[1:] == 1)))

    def test_edge_frequencies(self):
        distribution, kernel = make_parry()
        path = kernels.sample_path(distribution, kernel, 10**6, seed=20240601)
        counts = np.zeros((2, 2))
        np.add.at(counts, (path.states[:-1], path.states[1:]), 1)
        expected = np.array(PARRY_P)[:, None] * np.array(PARRY)
        np.testing.assert_allclose(counts / counts.sum(), expected, atol=0.01)


class BlockEntropyTests(SimpleTestCase):
    def test_iid_uniform(self):
        kernel = kernels.TransitionKernel(np.full((2, 2), 0.5))
        path = kernels.sample_path(kernels.ProbabilityVector.uniform(2), kernel, 10**6, seed=5)
        self.assertAlmostEqual(kernels.block_entropy_estimate(path, 3), math.log(2), delta=0.01)

    def test_golden_mean_parry_lift(self):
        distribution, kernel = make_parry()
        hits = 0
        for seed in range(10):
            path = kernels.sample_path(distribution, kernel, 10**6, seed=1000 + seed)
            if abs(kernels.block_entropy_estimate(path, 6) - LOG_GOLDEN) <= 0.02:
                hits += 1
        self.assertGreaterEqual(hits, 9)

    def test_insufficient_data(self):
        path = kernels.SampledPath(states=np.zeros(100, dtype=np.int64), seed=0, d=2)
        with self.assertRaises(InsufficientData):
            kernels.block_entropy_estimate(path, 6)


# ---------------------------------------------------------------------------
# Pressure tests
# ---------------------------------------------------------------------------

class PerronTests(SimpleTestCase):
    def test_golden_mean(self):
        result = pressure.perron_eigenpair(np.array([[1.0, 1.0], [1.0, 0.0]]))
        self.assertAlmostEqual(result.value, GOLDEN, places=11)
        np.testing.assert_allclose(result.vector, [GOLDEN / (GOLDEN + 1), 1 / (GOLDEN + 1)])
        self.assertLess(result.residual, 1e-10)

    def test_periodic_matrix(self):
        result = pressure.perron_eigenpair(np.array([[0.0, 1.0], [1.0, 0.0]]))
        self.assertAlmostEqual(result.value, 1.0, places=12)

    def test_jordan_block_falls_back(self):
        result = pressure.perron_eigenpair(np.array([[1.0, 1.0], [0.0, 1.0]]), max_iter=200)
        self.assertAlmostEqual(result.value, 1.0, places=10)
        np.testing.assert_allclose(result.vector, [1.0, 0.0], atol=1e-12)

    def test_no_convergence(self):
        with patch('formalism.services.pressure._perron_direct', return_value=None):
            with self.assertRaises(NoConvergence) as ctx:
                pressure.perron_eigenpair(np.array([[1.0, 1.0], [1.0, 0.0]]), max_iter=2)
        self.assertEqual(ctx.exception.max_iter, 2)


class WeightedMatrixTests(SimpleTestCase):
    def test_zero_potential_gives_adjacency(self):
        correspondence, potential = make_golden_mean()
        np.testing.assert_array_equal(
            pressure.weighted_matrix(correspondence, potential), [[1, 1], [1, 0]]
        )

    def test_disallowed_edge(self):
        correspondence, _ = make_golden_mean()
        potential = fc.EdgePotential(np.ones((2, 2), dtype=bool), np.zeros((2, 2)))
        with self.assertRaises(DisallowedEdge):
            pressure.weighted_matrix(correspondence, potential)

    def test_undefined_potential(self):
        correspondence, _ = make_golden_mean()
        potential = fc.EdgePotential([[1, 0], [1, 0]], np.zeros((2, 2)))
        with self.assertRaises(UndefinedPotential) as ctx:
            pressure.weighted_matrix(correspondence, potential)
        self.assertEqual(ctx.exception.edge, (0, 1))

    def test_dimension_mismatch(self):
        correspondence, _ = make_golden_mean()
        with self.assertRaises(DimensionMismatch):
            pressure.weighted_matrix(correspondence, fc.EdgePotential.zero(fc.from_map([0, 1, 2])))


class SpectralPressureTests(SimpleTestCase):
    def test_golden_mean(self):
        correspondence, potential = make_golden_mean()
        self.assertAlmostEqual(
            pressure.pressure_spectral(correspondence, potential), LOG_GOLDEN, places=11
        )
        self.assertAlmostEqual(pressure.topological_entropy(correspondence), LOG_GOLDEN, places=11)

    def test_full_shift_diagonal(self):
        correspondence, potential = make_full_shift(beta=1.0)
        self.assertAlmostEqual(
            pressure.pressure_spectral(correspondence, potential), math.log(math.e + 1), places=11
        )

    def test_lower_bound(self):
        for seed in range(20):
            correspondence, potential = random_instance(seed)
            with self.subTest(seed=seed):
                self.assertGreaterEqual(
                    pressure.pressure_spectral(correspondence, potential),
                    -fc.sup_norm(potential) - 1e-12,
                )

    def test_inverse_invariance(self):
        for seed in range(50):
            correspondence, potential = random_instance(seed)
            inverse = fc.inverse(correspondence)
            conjugate = fc.conjugate_potential(potential)
            with self.subTest(seed=seed):
                self.assertAlmostEqual(
                    pressure.pressure_spectral(inverse, conjugate),
                    pressure.pressure_spectral(correspondence, potential),
                    delta=1e-10,
                )

    def test_constant_shift_covariance(self):
        rng = make_generator(77)
        for seed in range(50):
            correspondence, potential = random_instance(seed)
            shift = float(rng.uniform(-3, 3))
            with self.subTest(seed=seed):
                self.assertAlmostEqual(
                    pressure.pressure_spectral(correspondence, potential.shifted(shift)),
                    pressure.pressure_spectral(correspondence, potential) + shift,
                    delta=1e-10,
                )

    def test_potential_beyond_exp_range(self):
        correspondence, potential = make_golden_mean(np.full((2, 2), 800.0))
        spectral = pressure.pressure_spectral(correspondence, potential)
        self.assertAlmostEqual(spectral, 800 + LOG_GOLDEN, delta=1e-9)
        for n in (4, 12):
            combinatorial = pressure.pressure_combinatorial(correspondence, potential, n)
            with self.subTest(n=n):
                self.assertGreaterEqual(combinatorial, spectral - 1e-9)
                self.assertLessEqual(combinatorial - spectral, 5 / n)

    def test_large_shift_on_random_instances(self):
        for seed in range(10):
            correspondence, potential = random_instance(seed)
            with self.subTest(seed=seed):
                self.assertAlmostEqual(
                    pressure.pressure_spectral(correspondence, potential.shifted(750.0)),
                    pressure.pressure_spectral(correspondence, potential) + 750.0,
                    delta=1e-9,
                )


class CombinatorialPressureTests(SimpleTestCase):
    def test_full_shift_exact_formula(self):
        correspondence, potential = make_full_shift()
        for n in range(1, 11):
            with self.subTest(n=n):
                self.assertAlmostEqual(
                    pressure.pressure_combinatorial(correspondence, potential, n),
                    math.log(2) + math.log(2) / n,
                    places=12,
                )

    def test_golden_mean_n10(self):
        correspondence, potential = make_golden_mean()
        estimate = pressure.pressure_combinatorial(correspondence, potential, 10)
        self.assertAlmostEqual(estimate, math.log(233) / 10, places=12)
        self.assertLessEqual(abs(estimate - LOG_GOLDEN), 0.08)

    def test_enumeration_matches_matrix_powers(self):
        for seed in range(15):
            correspondence, potential = random_instance(seed, d_max=4)
            for n in range(1, 11):
                if fc.count_orbits(correspondence, n) > 200000:
                    continue
                with self.subTest(seed=seed, n=n):
                    self.assertAlmostEqual(
                        pressure.pressure_combinatorial(
                            correspondence, potential, n, method='enumerate'
                        ),
                        pressure.pressure_combinatorial(
                            correspondence, potential, n, method='matrix'
                        ),
                        delta=1e-9,
                    )

    def test_golden_mean_converges_to_spectral(self):
        correspondence, potential = make_golden_mean()
        for n, estimate in pressure.pressure_sequence(correspondence, potential, 20)[3:]:
            with self.subTest(n=n):
                self.assertLessEqual(abs(estimate - LOG_GOLDEN), 5 / n)

    def test_converges_at_rate_one_over_n(self):
        # rho^n <= 1^T A^n 1 <= rho^n / min q for the unit-sum Perron vector q
        for seed in range(20):
            correspondence, potential = random_instance(
                500 + seed, d_max=5, density=0.5, spread=1.0, primitive=True
            )
            perron = pressure.perron_eigenpair(pressure.weighted_matrix(correspondence, potential))
            spectral = math.log(perron.value)
            constant = -math.log(perron.vector.min())
            for n, estimate in pressure.pressure_sequence(correspondence, potential, 20):
                with self.subTest(seed=seed, n=n):
                    self.assertGreaterEqual(estimate, spectral - 1e-9)
                    self.assertLessEqual(estimate, spectral + constant / n + 1e-9)
                    if n >= 4:
                        self.assertLessEqual(estimate - spectral, 5 / n)

    def test_disagreement_is_an_invariant_violation(self):
        correspondence, potential = make_golden_mean()
        with patch('formalism.services.pressure._enumerated_estimate', return_value=99.0):
            with self.assertRaises(InvariantViolation):
                pressure.pressure_combinatorial(correspondence, potential, 4)

    def test_enumeration_budget(self):
        correspondence, potential = make_full_shift()
        with self.assertRaises(BudgetExceeded):
            pressure.pressure_combinatorial(
                correspondence, potential, 20, method='enumerate', budget=1000
            )

    def test_sequence_matches_single_values(self):
        correspondence, potential = random_instance(9, d_max=4)
        for n, estimate in pressure.pressure_sequence(correspondence, potential, 6):
            self.assertAlmostEqual(
                estimate,
                pressure.pressure_combinatorial(correspondence, potential, n, method='matrix'),
                places=12,
            )


class MapPressureTests(SimpleTestCase):
    def test_maximal_cycle_mean(self):
        images, values = [1, 2, 0, 0], [0.5, 1.0, 1.5, 3.0]
        self.assertAlmostEqual(pressure.map_pressure(images, values), 1.0, places=14)

    def test_matches_correspondence_pressure(self):
        images, values = [1, 2, 0, 0], [0.5, 1.0, 1.5, 3.0]
        correspondence = fc.from_map(images)
        potential = fc.EdgePotential.from_edges(
            correspondence, {(i, image): values[i] for i, image in enumerate(images)}
        )
        self.assertAlmostEqual(
            pressure.pressure_spectral(correspondence, potential),
            pressure.map_pressure(images, values),
            places=10,
        )

    def test_maps_have_zero_entropy(self):
        self.assertAlmostEqual(pressure.topological_entropy(fc.from_map([1, 2, 0, 2])), 0.0)


class VariationalTests(SimpleTestCase):
    def test_uniform_full_shift(self):
        correspondence, potential = make_full_shift()
        kernel = kernels.TransitionKernel(np.full((2, 2), 0.5))
        self.assertAlmostEqual(
            pressure.variational_objective(correspondence, potential, kernel),
            math.log(2),
            places=12,
        )

    def test_parry_kernel_attains_pressure(self):
        correspondence, potential = make_golden_mean()
        _, kernel = make_parry()
        self.assertAlmostEqual(
            pressure.variational_objective(correspondence, potential, kernel),
            LOG_GOLDEN,
            delta=1e-10,
        )

    def test_unsupported_kernel(self):
        correspondence, potential = make_golden_mean()
        with self.assertRaises(SupportViolation):
            pressure.variational_objective(
                correspondence, potential, kernels.TransitionKernel(np.full((2, 2), 0.5))
            )

    def test_random_kernels_stay_below_pressure(self):
        rng = make_generator(2718)
        for seed in range(3):
            correspondence, potential = random_instance(900 + seed, d_max=5)
            spectral = pressure.pressure_spectral(correspondence, potential)
            worst = max(
                pressure.variational_objective(
                    correspondence, potential, random_kernel(correspondence, rng)
                )
                for _ in range(1000)
            )
            with self.subTest(seed=seed):
                self.assertLessEqual(worst, spectral + 1e-9)


class EquilibriumConstructTests(SimpleTestCase):
    def test_full_shift(self):
        correspondence, potential = make_full_shift()
        state = pressure.equilibrium_construct(correspondence, potential)
        np.testing.assert_allclose(state.kernel.matrix, np.full((2, 2), 0.5), atol=1e-12)
        np.testing.assert_allclose(state.distribution.entries, [0.5, 0.5], atol=1e-12)
        self.assertAlmostEqual(state.value, math.log(2), delta=1e-10)
        self.assertTrue(state.unique)

    def test_golden_mean(self):
        correspondence, potential = make_golden_mean()
        state = pressure.equilibrium_construct(correspondence, potential)
        np.testing.assert_allclose(state.kernel.matrix, PARRY, atol=1e-10)
        np.testing.assert_allclose(state.distribution.entries, PARRY_P, atol=1e-10)
        self.assertAlmostEqual(state.value, LOG_GOLDEN, delta=1e-10)
        self.assertLessEqual(abs(state.gap), 1e-10)

    def test_random_instances_close_the_gap(self):
        for seed in range(100):
            correspondence, potential = random_instance(seed)
            state = pressure.equilibrium_construct(correspondence, potential)
            with self.subTest(seed=seed, d=correspondence.d):
                self.assertLessEqual(abs(state.gap), 1e-8)
                self.assertLessEqual(
                    kernels.stationarity_residual(state.distribution, state.kernel), 1e-8
                )

    def test_reducible_instance_is_flagged(self):
        correspondence = fc.validate([[1, 1], [0, 1]])
        potential = fc.EdgePotential.from_edges(correspondence, {(0, 0): 1.0})
        state = pressure.equilibrium_construct(correspondence, potential)
        self.assertFalse(state.unique)
        self.assertAlmostEqual(state.value, 1.0, delta=1e-8)
        np.testing.assert_allclose(state.distribution.entries, [1.0, 0.0], atol=1e-12)

    def test_potential_beyond_exp_range(self):
        correspondence, potential = make_golden_mean(np.full((2, 2), 800.0))
        state = pressure.equilibrium_construct(correspondence, potential)
        np.testing.assert_allclose(state.kernel.matrix, PARRY, atol=1e-10)
        self.assertAlmostEqual(state.pressure, 800 + LOG_GOLDEN, delta=1e-9)
        self.assertLessEqual(abs(state.gap), 1e-8)
        self.assertTrue(pressure.verify_vp(correspondence, potential, 8).passed)

    def test_as_dict(self):
        correspondence, potential = make_golden_mean()
        payload = pressure.equilibrium_construct(correspondence, potential).as_dict()
        self.assertEqual(set(payload), {'p', 'P', 'value', 'pressure', 'gap', 'unique'})


class VariationalOptimizeTests(SimpleTestCase):
    def test_full_shift(self):
        correspondence, potential = make_full_shift()
        result = pressure.variational_optimize(correspondence, potential)
        self.assertAlmostEqual(result.value, math.log(2), delta=1e-4)

    def test_golden_mean(self):
        correspondence, potential = make_golden_mean()
        result = pressure.variational_optimize(correspondence, potential)
        self.assertAlmostEqual(result.value, LOG_GOLDEN, delta=1e-3)
        self.assertTrue(result.converged)
        np.testing.assert_allclose(result.kernel.matrix, PARRY, atol=1e-2)

    def test_random_instances(self):
        for seed in range(3):
            correspondence, potential = random_instance(700 + seed, d_max=5, spread=1.0)
            spectral = pressure.pressure_spectral(correspondence, potential)
            result = pressure.variational_optimize(
                correspondence, potential, pressure.OptimizerOptions(max_iter=5000)
            )
            with self.subTest(seed=seed):
                self.assertLessEqual(result.value, spectral + 1e-9)
                self.assertLessEqual(spectral - result.value, 1e-3)

    def test_iteration_cap_warns(self):
        correspondence, potential = make_golden_mean()
        with self.assertWarns(RuntimeWarning):
            result = pressure.variational_optimize(
                correspondence, potential, pressure.OptimizerOptions(max_iter=1)
            )
        self.assertFalse(result.converged)
        self.assertEqual(result.iterations, 1)

    def test_start_at_equilibrium_cannot_improve(self):
        for seed in range(5):
            correspondence, potential = random_instance(seed, d_max=5, spread=1.0,
                                                        primitive=True)
            state = pressure.equilibrium_construct(correspondence, potential)
            result = pressure.variational_optimize(
                correspondence, potential, pressure.OptimizerOptions(initial=state.kernel)
            )
            with self.subTest(seed=seed):
                self.assertLessEqual(result.value - state.value, 1e-9)
                self.assertGreaterEqual(result.value - state.value, -1e-9)

    def test_stalled_line_search_is_not_converged(self):
        correspondence, potential = make_golden_mean()
        # a constant logit shift leaves every row unchanged, so no step can gain
        with patch.object(pressure._LogitModel, 'gradient', return_value=np.ones(3)):
            with self.assertWarns(RuntimeWarning):
                result = pressure.variational_optimize(correspondence, potential)
        self.assertFalse(result.converged)
        self.assertEqual(result.iterations, 1)


class VerifyVPTests(SimpleTestCase):
    def test_golden_mean_passes(self):
        correspondence, potential = make_golden_mean()
        report = pressure.verify_vp(correspondence, potential, 8)
        self.assertTrue(report.passed, report.failed_checks())
        self.assertIn('enumeration_matches_matrix', report.checks)
        self.assertAlmostEqual(report.spectral, LOG_GOLDEN, places=10)
        self.assertAlmostEqual(report.variational, LOG_GOLDEN, delta=1e-8)
        self.assertAlmostEqual(report.optimizer.value, LOG_GOLDEN, delta=1e-3)
        self.assertLessEqual(abs(report.combinatorial[-1][1] - LOG_GOLDEN), 5 / 8)

    def test_identity_map_concentrates_on_best_loop(self):
        correspondence = fc.from_map([0, 1, 2])
        potential = fc.EdgePotential.from_edges(
            correspondence, {(0, 0): 0.5, (1, 1): 1.2, (2, 2): -0.4}
        )
        report = pressure.verify_vp(correspondence, potential, 6)
        self.assertTrue(report.passed, report.failed_checks())
        self.assertAlmostEqual(report.spectral, 1.2, delta=1e-10)
        np.testing.assert_allclose(
            report.constructed.distribution.entries, [0.0, 1.0, 0.0], atol=1e-10
        )
        self.assertAlmostEqual(report.variational, 1.2, delta=1e-8)

    def test_seeded_six_state_instance(self):
        correspondence, potential = random_instance(7, d_min=6, d_max=6)
        report = pressure.verify_vp(correspondence, potential, 6)
        self.assertEqual(correspondence.d, 6)
        self.assertTrue(report.passed, report.failed_checks())
        self.assertLess(abs(report.constructed.gap), 1e-8)

    def test_report_rendering(self):
        correspondence, potential = make_full_shift(beta=1.0)
        payload = pressure.verify_vp(correspondence, potential, 6).as_dict()
        self.assertEqual(set(payload['checks'].values()), {'pass'})
        self.assertEqual(len(payload['combinatorial']), 6)
        self.assertIn('perron_residual', payload['diagnostics'])

    def test_failed_check_is_reported(self):
        correspondence, potential = make_golden_mean()
        inflated = pressure.OptimizerResult(
            kernels.TransitionKernel(PARRY), value=10.0, iterations=1, converged=True
        )
        with patch('formalism.services.pressure.variational_optimize', return_value=inflated):
            report = pressure.verify_vp(correspondence, potential, 4)
        self.assertFalse(report.passed)
        self.assertEqual(report.failed_checks(), ['optimizer_below_spectral'])


# ---------------------------------------------------------------------------
# Ruelle operator tests
# ---------------------------------------------------------------------------

class TransferOperatorTests(SimpleTestCase):
    def test_apply_to_constant(self):
        correspondence, potential = make_golden_mean()
        np.testing.assert_array_equal(
            ruelle.transfer_apply(correspondence, potential, np.ones(2)), [2.0, 1.0]
        )

    def test_scaled_apply_beyond_exp_range(self):
        correspondence, potential = make_golden_mean(np.full((2, 2), 800.0))
        spectrum = ruelle.pf_spectrum(correspondence, potential)
        image = ruelle.transfer_apply(
            correspondence, potential, np.ones(2), log_scale=spectrum.pressure
        )
        np.testing.assert_allclose(image, [2 / GOLDEN, 1 / GOLDEN], rtol=1e-9)

    def test_wrong_length(self):
        correspondence, potential = make_golden_mean()
        with self.assertRaises(DimensionMismatch):
            ruelle.transfer_apply(correspondence, potential, np.ones(3))

    def test_iterates_count_weighted_orbits(self):
        for seed in range(10):
            correspondence, potential = random_instance(seed, d_max=5, spread=1.0)
            vector = np.ones(correspondence.d)
            for n in range(1, 9):
                vector = ruelle.transfer_apply(correspondence, potential, vector)
                expected = n * pressure.pressure_combinatorial(
                    correspondence, potential, n, method='matrix'
                )
                with self.subTest(seed=seed, n=n):
                    self.assertAlmostEqual(math.log(vector.sum()), expected, delta=1e-9)


class SpectrumTests(SimpleTestCase):
    def test_golden_mean(self):
        correspondence, potential = make_golden_mean()
        spectrum = ruelle.pf_spectrum(correspondence, potential)
        expected = [GOLDEN / (GOLDEN + 1), 1 / (GOLDEN + 1)]
        self.assertAlmostEqual(spectrum.eigenvalue, GOLDEN, places=11)
        np.testing.assert_allclose(spectrum.right, expected, atol=1e-11)
        np.testing.assert_allclose(spectrum.left, expected, atol=1e-11)
        self.assertTrue(spectrum.primitive)

    def test_potential_beyond_exp_range(self):
        correspondence, potential = make_golden_mean(np.full((2, 2), 800.0))
        spectrum = ruelle.pf_spectrum(correspondence, potential)
        self.assertEqual(spectrum.eigenvalue, math.inf)
        self.assertAlmostEqual(spectrum.log_eigenvalue, 800 + LOG_GOLDEN, delta=1e-9)
        expected = [GOLDEN / (GOLDEN + 1), 1 / (GOLDEN + 1)]
        np.testing.assert_allclose(spectrum.right, expected, atol=1e-11)
        np.testing.assert_allclose(spectrum.left, expected, atol=1e-11)

    def test_eigenvalue_is_exp_pressure(self):
        for seed in range(20):
            correspondence, potential = random_instance(seed, primitive=True)
            spectrum = ruelle.pf_spectrum(correspondence, potential)
            with self.subTest(seed=seed):
                self.assertAlmostEqual(
                    math.exp(pressure.pressure_spectral(correspondence, potential)),
                    spectrum.eigenvalue,
                    delta=1e-10 * spectrum.eigenvalue,
                )
                self.assertLess(spectrum.right_residual, 1e-10)
                self.assertLess(spectrum.left_residual, 1e-10)

    def test_residual_failure(self):
        correspondence, potential = make_golden_mean()
        stalled = pressure.PerronResult(GOLDEN, np.array([0.5, 0.5]), 3, 1e-3)
        with patch('formalism.services.ruelle.perron_eigenpair', return_value=stalled):
            with self.assertRaises(NoConvergence):
                ruelle.pf_spectrum(correspondence, potential)


class PowerConvergenceTests(SimpleTestCase):
    def test_golden_mean_rate(self):
        correspondence, potential = make_golden_mean()
        result = ruelle.power_convergence(correspondence, potential, 60)
        self.assertTrue(result.converged)
        self.assertAlmostEqual(result.rate, 1 / GOLDEN**2, delta=1e-3)
        self.assertEqual(result.iterates.shape, (60, 2))

    def test_potential_beyond_exp_range(self):
        correspondence, potential = make_golden_mean(np.full((2, 2), 800.0))
        result = ruelle.power_convergence(correspondence, potential, 60)
        self.assertTrue(result.converged)
        self.assertTrue(np.isfinite(result.iterates).all())
        self.assertAlmostEqual(result.rate, 1 / GOLDEN**2, delta=1e-3)

    def test_geometric_decay_on_primitive_instances(self):
        for seed in range(5):
            correspondence, potential = random_instance(seed, d_max=5, spread=1.0,
                                                        primitive=True)
            result = ruelle.power_convergence(correspondence, potential, 2000)
            with self.subTest(seed=seed):
                self.assertTrue(result.converged)
                self.assertLess(result.rate, 1.0)

    def test_periodic_instance_oscillates(self):
        correspondence = fc.from_map([1, 0])
        potential = fc.EdgePotential.from_edges(correspondence, {(0, 1): 1.0, (1, 0): 0.0})
        result = ruelle.power_convergence(correspondence, potential, 50)
        self.assertFalse(result.converged)
        np.testing.assert_allclose(result.iterates[1], result.iterates[3])
        self.assertGreater(result.distances[-1], 1e-3)


class CylinderMeasureTests(SimpleTestCase):
    def test_full_shift_is_uniform(self):
        correspondence, potential = make_full_shift()
        spectrum = ruelle.pf_spectrum(correspondence, potential)
        for orbit in fc.enumerate_orbits(correspondence, 4):
            self.assertAlmostEqual(
                ruelle.equilibrium_cylinder(spectrum, correspondence, potential, orbit),
                2.0**-4,
                places=12,
            )
            self.assertAlmostEqual(
                ruelle.eigenmeasure_cylinder(spectrum, correspondence, potential, orbit),
                2.0**-4,
                places=12,
            )

    def test_golden_mean_matches_markov_cylinder(self):
        correspondence, potential = make_golden_mean()
        spectrum = ruelle.pf_spectrum(correspondence, potential)
        state = pressure.equilibrium_construct(correspondence, potential)
        self.assertAlmostEqual(
            ruelle.equilibrium_cylinder(spectrum, correspondence, potential, (0, 1, 0)),
            kernels.cylinder_measure(state.distribution, state.kernel, (0, 1, 0)),
            delta=1e-12,
        )

    def test_disallowed_orbit(self):
        correspondence, potential = make_golden_mean()
        spectrum = ruelle.pf_spectrum(correspondence, potential)
        with self.assertRaises(DisallowedEdge):
            ruelle.equilibrium_cylinder(spectrum, correspondence, potential, (1, 1))

    def test_eigenmeasure_slices_sum_to_one(self):
        for seed in range(8):
            correspondence, potential = random_instance(seed, d_max=4, spread=1.0,
                                                        primitive=True)
            spectrum = ruelle.pf_spectrum(correspondence, potential)
            for length in range(1, 7):
                orbits = fc.orbit_array(correspondence, length)
                with self.subTest(seed=seed, length=length):
                    self.assertAlmostEqual(
                        ruelle.eigenmeasure_masses(spectrum, potential, orbits).sum(),
                        1.0,
                        delta=1e-10,
                    )

    def test_equilibrium_matches_constructed_markov_measure(self):
        for seed in range(6):
            correspondence, potential = random_instance(seed, d_max=4, spread=1.0,
                                                        primitive=True)
            spectrum = ruelle.pf_spectrum(correspondence, potential)
            state = pressure.equilibrium_construct(correspondence, potential)
            for length in range(1, 9):
                orbits = fc.orbit_array(correspondence, length)
                with self.subTest(seed=seed, length=length):
                    np.testing.assert_allclose(
                        ruelle.equilibrium_masses(spectrum, potential, orbits),
                        kernels.cylinder_measures(state.distribution, state.kernel, orbits),
                        rtol=0,
                        atol=1e-10,
                    )

    def test_marginal_matches_constructed_distribution(self):
        for seed in range(10):
            correspondence, potential = random_instance(seed, d_max=4, spread=1.0,
                                                        primitive=True)
            spectrum = ruelle.pf_spectrum(correspondence, potential)
            state = pressure.equilibrium_construct(correspondence, potential)
            singles = fc.orbit_array(correspondence, 1)
            with self.subTest(seed=seed):
                np.testing.assert_allclose(
                    ruelle.equilibrium_masses(spectrum, potential, singles),
                    state.distribution.entries,
                    rtol=0,
                    atol=1e-10,
                )

    def test_equilibrium_is_shift_invariant(self):
        for seed in range(4):
            correspondence, potential = random_instance(seed, d_max=4, spread=1.0,
                                                        primitive=True)
            spectrum = ruelle.pf_spectrum(correspondence, potential)
            for length in range(1, 8):
                short = fc.orbit_array(correspondence, length)
                longer = fc.orbit_array(correspondence, length + 1)
                index = {tuple(row): k for k, row in enumerate(short.tolist())}
                marginal = np.zeros(len(short))
                for row, mass in zip(longer.tolist(),
                                     ruelle.equilibrium_masses(spectrum, potential, longer)):
                    marginal[index[tuple(row[1:])]] += mass
                with self.subTest(seed=seed, length=length):
                    np.testing.assert_allclose(
                        marginal,
                        ruelle.equilibrium_masses(spectrum, potential, short),
                        rtol=0,
                        atol=1e-10,
                    )

    def test_cylinder_table(self):
        correspondence, potential = make_golden_mean()
        spectrum = ruelle.pf_spectrum(correspondence, potential)
        rows = ruelle.cylinder_table(spectrum, correspondence, potential, 3)
        self.assertEqual([row.orbit for row in rows], fc.enumerate_orbits(correspondence, 3))
        self.assertAlmostEqual(sum(row.mu_mass for row in rows), 1.0, places=12)
        self.assertAlmostEqual(sum(row.m_mass for row in rows), 1.0, places=12)


class GibbsConstantTests(SimpleTestCase):
    def test_full_shift_closed_form(self):
        correspondence, potential = make_full_shift()
        bound = ruelle.gibbs_constant(correspondence, potential, 8)
        self.assertAlmostEqual(bound.constant, math.log(2), delta=1e-9)
        self.assertEqual(bound.n_max, 8)

    def test_golden_mean_does_not_explode(self):
        correspondence, potential = make_golden_mean()
        short = ruelle.gibbs_constant(correspondence, potential, 6)
        longer = ruelle.gibbs_constant(correspondence, potential, 12)
        self.assertTrue(math.isfinite(longer.constant))
        self.assertLessEqual(longer.constant, short.constant + 0.1)
        # the bound is log(1 / q_2) for the normalized right eigenvector
        self.assertAlmostEqual(longer.constant, math.log(GOLDEN + 1), delta=1e-9)

    def test_constant_shift_invariance(self):
        correspondence, potential = random_instance(31, d_max=4, primitive=True)
        self.assertAlmostEqual(
            ruelle.gibbs_constant(correspondence, potential, 6).constant,
            ruelle.gibbs_constant(correspondence, potential.shifted(1.7), 6).constant,
            delta=1e-10,
        )

    def test_requires_primitive(self):
        correspondence = fc.from_map([1, 0])
        with self.assertRaises(NotPrimitive):
            ruelle.gibbs_constant(correspondence, fc.EdgePotential.zero(correspondence), 4)


# ---------------------------------------------------------------------------
# Holomorphic correspondence tests
# ---------------------------------------------------------------------------

class HolomorphicCorrespondenceTests(SimpleTestCase):
    def test_requires_p_below_q(self):
        with self.assertRaises(InputError):
            cc.HolomorphicCorrespondence(3, 2)
        with self.assertRaises(InputError):
            cc.HolomorphicCorrespondence(0, 2)

    def test_geometric_exponent_is_clamped(self):
        with self.assertWarns(RuntimeWarning):
            spec = cc.PotentialSpec('geometric', 7.5)
        self.assertEqual(spec.t, 4.0)

    def test_unknown_potential_kind(self):
        with self.assertRaises(InputError):
            cc.PotentialSpec('harmonic', 1.0)


class RootTests(SimpleTestCase):
    def test_forward_two_valued(self):
        images = cc.forward_images(cc.HolomorphicCorrespondence(2, 3), 1.0)
        np.testing.assert_allclose(images.points, [1.0, -1.0], atol=1e-14)

    def test_forward_single_valued(self):
        images = cc.forward_images(cc.HolomorphicCorrespondence(1, 2, 1j), 2.0)
        np.testing.assert_allclose(images.points, [4 + 1j], atol=1e-14)

    def test_backward_square_roots(self):
        roots = cc.backward_images(cc.HolomorphicCorrespondence(1, 2), 1.0)
        np.testing.assert_allclose(roots.points, [1.0, -1.0], atol=1e-14)

    def test_backward_critical_value_collapses(self):
        roots = cc.backward_images(cc.HolomorphicCorrespondence(1, 2), 0.0)
        self.assertEqual(len(roots), 1)
        self.assertEqual(roots.multiplicity, 2)
        self.assertEqual(roots.points[0], 0)

    def test_residuals_and_cardinality(self):
        corr = cc.HolomorphicCorrespondence(2, 3, 0.1 - 0.2j)
        rng = make_generator(8)
        for z in rng.normal(size=20) + 1j * rng.normal(size=20):
            forward = cc.forward_images(corr, z)
            backward = cc.backward_images(corr, z)
            self.assertEqual(len(forward), 2)
            self.assertEqual(len(backward), 3)
            scale = max(1.0, abs(z) ** 3)
            for w in forward.points:
                self.assertLessEqual(abs((w - corr.c) ** 2 - z ** 3), 1e-10 * scale)

    def test_roots_sorted_by_argument(self):
        roots = cc.backward_images(cc.HolomorphicCorrespondence(1, 5), 0.3 + 0.7j).points
        arguments = np.angle(roots)
        self.assertTrue(np.all(np.diff(arguments) > 0))

    def test_forward_backward_duality(self):
        corr = cc.HolomorphicCorrespondence(2, 3, 0.25 + 0.1j)
        rng = make_generator(12)
        for z in rng.normal(size=15) + 1j * rng.normal(size=15):
            for w in cc.forward_images(corr, z).points:
                preimages = cc.backward_images(corr, w).points
                self.assertLessEqual(np.abs(preimages - z).min(), 1e-9 * max(1.0, abs(z)))


class PotentialTests(SimpleTestCase):
    def test_constant(self):
        corr = cc.HolomorphicCorrespondence(1, 2)
        self.assertEqual(cc.evaluate_potential(cc.PotentialSpec('constant', 0.3), corr, 1, 1), 0.3)

    def test_geometric_single_valued(self):
        corr = cc.HolomorphicCorrespondence(1, 2)
        spec = cc.PotentialSpec('geometric', 1.0)
        # -log |2 z| for f(z) = z^2
        self.assertAlmostEqual(cc.evaluate_potential(spec, corr, 0.5, 0.25), 0.0, places=14)
        self.assertAlmostEqual(
            cc.evaluate_potential(spec, corr, 2.0, 4.0), -math.log(4.0), places=14
        )

    def test_geometric_singularities(self):
        spec = cc.PotentialSpec('geometric', 0.5)
        with self.assertRaises(SingularPotential):
            cc.evaluate_potential(spec, cc.HolomorphicCorrespondence(1, 2), 0.0, 0.0)
        with self.assertRaises(SingularPotential):
            cc.evaluate_potential(spec, cc.HolomorphicCorrespondence(2, 3, 0.1), 1.0, 0.1)


class EnumerateBackwardTests(SimpleTestCase):
    def test_z_squared_depth_three(self):
        corr = cc.HolomorphicCorrespondence(1, 2)
        tree = cc.enumerate_backward(corr, 2.0, 3)
        self.assertEqual(tree.paths.shape, (8, 4))
        np.testing.assert_array_equal(tree.paths[:, -1], np.full(8, 2.0))
        np.testing.assert_allclose(tree.paths[:, :-1] ** 2, tree.paths[:, 1:], rtol=1e-12)
        np.testing.assert_allclose(tree.leaves ** 8, np.full(8, 256.0), rtol=1e-12)

    def test_depth_zero(self):
        tree = cc.enumerate_backward(cc.HolomorphicCorrespondence(1, 2), 0.5j, 0)
        np.testing.assert_array_equal(tree.paths, [[0.5j]])

    def test_generic_count(self):
        tree = cc.enumerate_backward(cc.HolomorphicCorrespondence(2, 3, 0.1), 0.7 + 0.2j, 4)
        self.assertEqual(len(tree), 3**4)

    def test_budget(self):
        with self.assertRaises(BudgetExceeded):
            cc.enumerate_backward(cc.HolomorphicCorrespondence(1, 2), 2.0, 7, budget=100)

    def test_critical_orbit_collapses_with_multiplicity(self):
        tree = cc.enumerate_backward(cc.HolomorphicCorrespondence(1, 2), 0.0, 3)
        self.assertEqual(len(tree), 1)
        self.assertAlmostEqual(tree.log_multiplicity[0], 3 * math.log(2), places=14)
        log_z = cc.partition_function(
            cc.HolomorphicCorrespondence(1, 2), cc.PotentialSpec(), 0.0, 3
        )
        self.assertAlmostEqual(log_z, 3 * math.log(2), places=14)


class SamplingTests(SimpleTestCase):
    corr = cc.HolomorphicCorrespondence(1, 2, 0.1)
    geometric = cc.PotentialSpec('geometric', 0.5)

    def test_zero_potential_estimate_is_exact(self):
        corr = cc.HolomorphicCorrespondence(2, 3, 0.1)
        log_z = cc.partition_function(corr, cc.PotentialSpec(), 0.8, 7, mode='sampled',
                                      samples=500, seed=3)
        self.assertAlmostEqual(log_z, 7 * math.log(3), places=10)

    def test_same_seed_same_points(self):
        first = cc.sample_backward(self.corr, self.geometric, 1.05, 8, 300, seed=9)
        second = cc.sample_backward(self.corr, self.geometric, 1.05, 8, 300, seed=9)
        np.testing.assert_array_equal(first.points, second.points)
        np.testing.assert_array_equal(first.logweights, second.logweights)

    @override_settings(THERMOWEAVER={'SAMPLE_CHUNK': 64})
    def test_worker_count_does_not_change_samples(self):
        serial = cc.sample_paths(self.corr, 1.05, 6, 500, seed=3, workers=1)
        parallel = cc.sample_paths(self.corr, 1.05, 6, 500, seed=3, workers=4)
        np.testing.assert_array_equal(serial, parallel)
        self.assertEqual(get_setting('SAMPLE_CHUNK'), 64)

    def test_depths_share_branches(self):
        corr = cc.HolomorphicCorrespondence(1, 2)
        shallow = cc.sample_paths(corr, 1.05, 20, 1000, seed=5)
        deep = cc.sample_paths(corr, 1.05, 21, 1000, seed=5)
        unrelated = cc.sample_paths(corr, 1.05, 21, 1000, seed=6)
        self.assertLess(np.median(np.abs(deep[:, 0] - shallow[:, 0])), 1e-3)
        self.assertGreater(np.median(np.abs(unrelated[:, 0] - shallow[:, 0])), 0.1)

    def test_sampled_paths_are_backward_orbits(self):
        paths = cc.sample_paths(self.corr, 1.05, 5, 50, seed=1)
        np.testing.assert_allclose(paths[:, :-1] ** 2 + 0.1, paths[:, 1:], atol=1e-12)

    def test_agrees_with_enumeration(self):
        exact = cc.partition_function(self.corr, self.geometric, 1.05, 8)
        sampled = cc.partition_function(self.corr, self.geometric, 1.05, 8, mode='sampled',
                                        samples=10**5, seed=20240601)
        self.assertAlmostEqual(sampled, exact, delta=3e-3)

    def test_estimator_is_unbiased(self):
        exact = math.exp(cc.partition_function(self.corr, self.geometric, 1.05, 6))
        estimates = np.array([
            cc.sample_backward(self.corr, self.geometric, 1.05, 6, 64, seed).total_mass()
            for seed in split_seeds(99, 200)
        ])
        standard_error = estimates.std(ddof=1) / math.sqrt(len(estimates))
        self.assertLessEqual(abs(estimates.mean() - exact), 3 * standard_error)

    def test_sampled_mode_needs_samples(self):
        with self.assertRaises(InputError):
            cc.partition_function(self.corr, self.geometric, 1.05, 4, mode='sampled')


class PartitionFunctionTests(SimpleTestCase):
    corr = cc.HolomorphicCorrespondence(2, 3, 0.1)
    x = 0.8 + 0.3j

    def test_zero_potential(self):
        log_z = cc.partition_function(self.corr, cc.PotentialSpec(), self.x, 5)
        self.assertAlmostEqual(log_z, 5 * math.log(3), places=12)

    def test_constant_shift(self):
        log_z = cc.partition_function(self.corr, cc.PotentialSpec('constant', 0.3), self.x, 5)
        self.assertAlmostEqual(log_z, 5 * math.log(3) + 5 * 0.3, places=12)

    def test_transfer_recursion(self):
        spec = cc.PotentialSpec('geometric', 0.5)
        for n in range(1, 7):
            terms = [
                cc.evaluate_potential(spec, self.corr, y, self.x) +
                cc.partition_function(self.corr, spec, y, n)
                for y in cc.backward_images(self.corr, self.x).points
            ]
            with self.subTest(n=n):
                self.assertAlmostEqual(
                    cc.partition_function(self.corr, spec, self.x, n + 1),
                    float(logsumexp(terms)),
                    delta=1e-9,
                )

    def test_unknown_mode(self):
        with self.assertRaises(InputError):
            cc.partition_function(self.corr, cc.PotentialSpec(), self.x, 2, mode='guess')


class EquidistributionTests(SimpleTestCase):
    z_squared = cc.HolomorphicCorrespondence(1, 2)

    def test_normalization(self):
        corr = cc.HolomorphicCorrespondence(2, 3, 0.1)
        spec = cc.PotentialSpec('geometric', 0.5)
        for builder in (cc.equidist_measure_a, cc.equidist_measure_b):
            for mode, samples in (('exact', None), ('sampled', 2000)):
                measure = builder(corr, spec, 0.8 + 0.3j, 5, mode=mode, samples=samples, seed=4)
                with self.subTest(builder=builder.__name__, mode=mode):
                    self.assertAlmostEqual(measure.total_mass(), 1.0, delta=1e-12)
                    self.assertAlmostEqual(measure.masses().sum(), 1.0, delta=1e-12)

    def test_measure_a_depth_zero_is_dirac(self):
        measure = cc.equidist_measure_a(self.z_squared, cc.PotentialSpec(), 2.0, 0)
        np.testing.assert_array_equal(measure.points, [2.0])
        self.assertAlmostEqual(measure.masses()[0], 1.0)

    def test_measure_a_concentrates_on_unit_circle(self):
        n = 14
        measure = cc.equidist_measure_a(self.z_squared, cc.PotentialSpec(), 1.05, n)
        masses = measure.masses().reshape(-1, n + 1)
        moduli = np.abs(measure.points).reshape(-1, n + 1)
        kept = slice(0, n + 1 - math.ceil(n / 4))
        near = (moduli[:, kept] >= 0.97) & (moduli[:, kept] <= 1.03)
        self.assertGreaterEqual(masses[:, kept][near].sum() / masses[:, kept].sum(), 0.99)

    def test_measure_b_uniform_leaves(self):
        measure = cc.equidist_measure_b(self.z_squared, cc.PotentialSpec(), 2.0, 10)
        np.testing.assert_allclose(measure.masses(), np.full(2**10, 2.0**-10), rtol=1e-12)

    def test_measure_b_equidistributes_on_circle(self):
        measure = cc.equidist_measure_b(self.z_squared, cc.PotentialSpec(), 2.0, 16)
        self.assertEqual(len(measure), 2**16)
        self.assertLessEqual(np.abs(np.abs(measure.points) - 1).max(), 1e-3)
        angles = np.mod(np.angle(measure.points), 2 * np.pi) / (2 * np.pi)
        self.assertLessEqual(kstest(angles, 'uniform').statistic, 0.05)


class JuliaCloudTests(SimpleTestCase):
    def test_unit_circle(self):
        points = cc.julia_cloud(cc.HolomorphicCorrespondence(1, 2), 60, 20, 32, seed=1)
        self.assertEqual(len(points), 32 * 40)
        self.assertLessEqual(np.abs(np.abs(points) - 1).max(), 1e-3)

    def test_basilica_is_bounded(self):
        points = cc.julia_cloud(cc.HolomorphicCorrespondence(1, 2, -1), 80, 20, 32, seed=2)
        self.assertLessEqual(np.abs(points).max(), 2.0)

    def test_deterministic(self):
        corr = cc.HolomorphicCorrespondence(2, 3, 0.1)
        np.testing.assert_array_equal(
            cc.julia_cloud(corr, 30, 5, 8, seed=6), cc.julia_cloud(corr, 30, 5, 8, seed=6)
        )

    def test_burn_must_be_below_n(self):
        with self.assertRaises(InputError):
            cc.julia_cloud(cc.HolomorphicCorrespondence(1, 2), 10, 10, 4, seed=0)


class RasterizeTests(SimpleTestCase):
    bounds = (-1.0, 1.0, -1.0, 1.0)

    def point_mass(self, point):
        return cc.EmpiricalMeasure(np.array([point], dtype=complex), np.zeros(1))

    def test_self_distance_is_zero(self):
        grid = cc.rasterize(self.point_mass(0.5 + 0.5j), self.bounds, (4, 4))
        self.assertEqual(cc.compare_measures(grid, grid), 0.0)

    def test_disjoint_masses(self):
        first = cc.rasterize(self.point_mass(0.5 + 0.5j), self.bounds, (4, 4))
        second = cc.rasterize(self.point_mass(-0.5 - 0.5j), self.bounds, (4, 4))
        self.assertAlmostEqual(cc.compare_measures(first, second), 1.0)

    def test_grid_mismatch(self):
        first = cc.rasterize(self.point_mass(0.5), self.bounds, (4, 4))
        second = cc.rasterize(self.point_mass(0.5), self.bounds, (8, 4))
        with self.assertRaises(GridMismatch):
            cc.compare_measures(first, second)

    def test_outside_mass(self):
        grid = cc.rasterize(self.point_mass(5 + 5j), self.bounds, (4, 4))
        self.assertEqual(grid.bins.sum(), 0.0)
        self.assertAlmostEqual(grid.outside, 1.0)

    def test_bin_orientation(self):
        grid = cc.rasterize(self.point_mass(0.5 + 0.9j), self.bounds, (2, 2))
        self.assertEqual(grid.bins[1, 1], 1.0)

    def test_successive_depths_settle(self):
        corr = cc.HolomorphicCorrespondence(1, 2, 0.1)
        grids = [
            cc.rasterize(
                cc.equidist_measure_b(corr, cc.PotentialSpec(), 1.05, n),
                (-1.5, 1.5, -1.5, 1.5),
                (16, 16),
            )
            for n in range(6, 15)
        ]
        distances = [cc.compare_measures(a, b) for a, b in zip(grids, grids[1:])]
        violations = sum(later > earlier for earlier, later in zip(distances, distances[1:]))
        self.assertLessEqual(violations, 1)
        self.assertLess(distances[-1], distances[0] / 4)

    def test_sampled_depths_settle(self):
        corr = cc.HolomorphicCorrespondence(2, 3, 0.1)
        grids = [
            cc.rasterize(
                cc.equidist_measure_b(corr, cc.PotentialSpec(), 1.05, n, mode='sampled',
                                      samples=10**5, seed=11),
                (-1.5, 1.5, -1.5, 1.5),
                (16, 16),
            )
            for n in range(6, 15)
        ]
        distances = [cc.compare_measures(a, b) for a, b in zip(grids, grids[1:])]
        violations = sum(later > earlier for earlier, later in zip(distances, distances[1:]))
        self.assertLessEqual(violations, 1)
        self.assertLess(distances[-1], distances[0] / 2)


# ---------------------------------------------------------------------------
# Random source tests
# ---------------------------------------------------------------------------

class RandomSourceTests(SimpleTestCase):
    def test_split_seeds_prefix_stable(self):
        self.assertEqual(split_seeds(5, 3), split_seeds(5, 6)[:3])
        self.assertEqual(len(set(split_seeds(5, 50))), 50)

    def test_generator_is_reproducible(self):
        np.testing.assert_array_equal(make_generator(1).random(4), make_generator(1).random(4))


# ---------------------------------------------------------------------------
# Export service tests
# ---------------------------------------------------------------------------

class ExportServiceTests(SimpleTestCase):
    def setUp(self):
        self.tmpdir = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmpdir.cleanup)

    def single_point_grid(self):
        measure = cc.EmpiricalMeasure(np.array([0.5 + 0.9j]), np.zeros(1))
        return cc.rasterize(measure, (-1, 1, -1, 1), (2, 2))

    def test_report_is_sorted_and_converts_arrays(self):
        text = export_service.render_report({'b': np.array([1.0, 2.0]), 'a': np.float64(0.5)})
        self.assertTrue(text.endswith('}\n'))
        self.assertLess(text.index('"a"'), text.index('"b"'))
        self.assertEqual(json.loads(text), {'a': 0.5, 'b': [1.0, 2.0]})

    def test_report_rejects_nan(self):
        with self.assertRaises(ValueError):
            export_service.render_report({'value': float('nan')})

    def test_path_text(self):
        path = kernels.SampledPath(states=np.array([0, 1, 0]), seed=5, d=2)
        self.assertEqual(
            export_service.render_path(path),
            '# seed=5\n# generator=numpy.PCG64\n# states=2\n1\n2\n1\n',
        )

    def test_points_default_weight(self):
        text = export_service.render_points(np.array([0.1 + 0.2j, -1.0]))
        lines = text.splitlines()
        self.assertEqual(len(lines), 2)
        real, imag, weight = (float(field) for field in lines[0].split())
        self.assertEqual((real, imag), (0.1, 0.2))
        self.assertEqual(weight, -math.log(2))

    def test_points_header_precedes_data(self):
        text = export_service.render_points(np.array([0.5]), header={'seed': 3, 'n': 6})
        lines = text.splitlines()
        self.assertEqual(lines[:2], ['# n=6', '# seed=3'])
        self.assertEqual(len(lines), 3)
        source = os.path.join(self.tmpdir.name, 'points.txt')
        export_service.write_text(text, source)
        measure = documents.load_points(source)
        np.testing.assert_array_equal(measure.points, [0.5])

    def test_pgm(self):
        lines = export_service.render_grid_pgm(self.single_point_grid()).splitlines()
        self.assertEqual(lines[:4], ['P2', '# outside=0', '2 2', '65535'])
        self.assertEqual(lines[4:], ['0 65535', '0 0'])

    def test_grid_csv(self):
        lines = export_service.render_grid_csv(self.single_point_grid()).splitlines()
        self.assertEqual(lines[0], 'ix,iy,re,im,mass')
        self.assertEqual(len(lines), 5)
        self.assertEqual(lines[-1], '1,1,0.5,0.5,1')

    def test_pgm_header(self):
        text = export_service.render_grid_pgm(self.single_point_grid(), header={'seed': 3})
        self.assertEqual(text.splitlines()[:4], ['P2', '# outside=0', '# seed=3', '2 2'])

    def test_grid_csv_header(self):
        text = export_service.render_grid_csv(
            self.single_point_grid(), header={'seed': 3, 'c': [0.1, 0.0]}
        )
        lines = text.splitlines()
        self.assertEqual(lines[:3], ['# c=[0.1,0.0]', '# seed=3', 'ix,iy,re,im,mass'])

    def test_cylinder_csv(self):
        rows = [ruelle.CylinderRow((0, 1, 0), 0.25, 0.5, 0.125)]
        self.assertEqual(
            export_service.render_cylinder_csv(rows),
            'orbit,m_mass,mu_mass,gibbs_dev\n1-2-1,0.25,0.5,0.125\n',
        )

    def test_density_png(self):
        target = os.path.join(self.tmpdir.name, 'density.png')
        export_service.write_density_png(self.single_point_grid(), target)
        with Image.open(target) as image:
            self.assertEqual(image.size, (2, 2))
            self.assertEqual(image.getpixel((1, 0)), 65535)
            self.assertEqual(image.getpixel((0, 1)), 0)


# ---------------------------------------------------------------------------
# Document loader tests
# ---------------------------------------------------------------------------

class ModelDocumentTests(SimpleTestCase):
    def setUp(self):
        self.tmpdir = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmpdir.cleanup)

    def write(self, text, name='model.json'):
        path = os.path.join(self.tmpdir.name, name)
        with open(path, 'w', encoding='utf-8') as handle:
            handle.write(text)
        return path

    def test_load_golden_mean(self):
        correspondence, potential = documents.load_model(fixture('golden_mean.json'))
        self.assertEqual(correspondence, make_golden_mean()[0])
        self.assertEqual(fc.sup_norm(potential), 0.0)

    def test_canonical_round_trip(self):
        for name in ('golden_mean.json', 'full_shift_diagonal.json'):
            source = Path(fixture(name)).read_bytes()
            target = os.path.join(self.tmpdir.name, name)
            documents.save_model(*documents.load_model(fixture(name)), target)
            with self.subTest(name=name):
                self.assertEqual(Path(target).read_bytes(), source)

    def test_missing_phi_defaults_to_zero(self):
        path = self.write(json.dumps({
            'states': 2,
            'edges': [{'from': 1, 'to': 1, 'phi': 0.5}, {'from': 1, 'to': 2}, {'from': 2, 'to': 1}],
        }))
        _, potential = documents.load_model(path)
        self.assertEqual(potential(0, 0), 0.5)
        self.assertEqual(potential(0, 1), 0.0)

    def test_duplicate_edge(self):
        with self.assertRaises(ParseError) as ctx:
            documents.load_model(fixture('duplicate_edge.json'))
        self.assertIn('duplicates edge 1->2', str(ctx.exception))

    def test_empty_row(self):
        with self.assertRaises(EmptyRow) as ctx:
            documents.load_model(fixture('empty_row.json'))
        self.assertEqual(ctx.exception.state, 0)

    def test_unknown_field(self):
        path = self.write(json.dumps({'states': 1, 'edges': [{'from': 1, 'to': 1}], 'x': 1}))
        with self.assertRaises(ParseError) as ctx:
            documents.load_model(path)
        self.assertIn('Unknown field', str(ctx.exception))

    def test_state_out_of_range(self):
        path = self.write(json.dumps({'states': 2, 'edges': [{'from': 1, 'to': 3}]}))
        with self.assertRaises(ParseError):
            documents.load_model(path)

    def test_malformed_json_reports_line(self):
        path = self.write('{\n  "states": 2,\n  "edges": [\n')
        with self.assertRaises(ParseError) as ctx:
            documents.load_model(path)
        self.assertIsInstance(ctx.exception.line, int)

    def test_missing_file(self):
        with self.assertRaises(ParseError):
            documents.load_model(os.path.join(self.tmpdir.name, 'absent.json'))

    def test_kernel_document(self):
        distribution, kernel = documents.load_kernel(fixture('golden_kernel.json'))
        np.testing.assert_allclose(distribution.entries, [2 / 3, 1 / 3], atol=1e-10)
        np.testing.assert_array_equal(kernel.matrix, [[0.5, 0.5], [1.0, 0.0]])

    def test_kernel_from_model_uses_equilibrium_state(self):
        distribution, kernel = documents.load_kernel(fixture('golden_mean.json'))
        np.testing.assert_allclose(kernel.matrix, PARRY, atol=1e-10)
        np.testing.assert_allclose(distribution.entries, PARRY_P, atol=1e-10)

    def test_load_points(self):
        path = self.write('# cloud\n0.5 0.25\n1 2 -0.5\n', name='points.txt')
        measure = documents.load_points(path)
        np.testing.assert_array_equal(measure.points, [0.5 + 0.25j, 1 + 2j])
        np.testing.assert_array_equal(measure.logweights, [0.0, -0.5])

    def test_load_points_bad_line(self):
        path = self.write('# cloud\n1 2 3 4\n', name='points.txt')
        with self.assertRaises(ParseError) as ctx:
            documents.load_points(path)
        self.assertEqual(ctx.exception.line, 2)


class ComplexDocumentTests(SimpleTestCase):
    def test_load_fixture(self):
        corr, spec, params = documents.load_complex(fixture('z_squared.json'))
        self.assertEqual((corr.p, corr.q, corr.c), (1, 2, 0j))
        self.assertEqual(spec.kind, 'zero')
        self.assertEqual(params['x'], 2 + 0j)
        self.assertEqual(params['n'], 12)
        self.assertEqual(params['seed'], 20240601)

    def test_p_must_be_below_q(self):
        data = {'p': 2, 'q': 2, 'x': [1.0, 0.0], 'n': 3}
        with self.assertRaises(ParseError):
            documents.validate_document(data, documents.ComplexConfigSerializer)

    def test_sampled_mode_needs_samples(self):
        data = {'p': 1, 'q': 2, 'x': [1.0, 0.0], 'n': 3, 'mode': 'sampled'}
        with self.assertRaises(ParseError):
            documents.validate_document(data, documents.ComplexConfigSerializer)

    def test_defaults(self):
        data = documents.validate_document(
            {'p': 1, 'q': 3, 'x': [0.5, 0.5], 'n': 2}, documents.ComplexConfigSerializer
        )
        corr, spec, params = documents.complex_from_data(data)
        self.assertEqual(corr.c, 0j)
        self.assertEqual((spec.kind, spec.t), ('zero', 0.0))
        self.assertEqual(params['mode'], 'exact')
        self.assertEqual(params['seed'], get_setting('DEFAULT_SEED'))


# ---------------------------------------------------------------------------
# Command-line tests
# ---------------------------------------------------------------------------

class CommandLineTests(SimpleTestCase):
    def setUp(self):
        self.tmpdir = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmpdir.cleanup)

    def test_validate(self):
        code, out, err = run_cli('validate', fixture('golden_mean.json'))
        self.assertEqual(code, 0, err)
        report = json.loads(out)
        self.assertTrue(report['primitive'])
        self.assertEqual(report['config']['seed'], 20240601)
        self.assertEqual(report['config']['tol'], 1e-10)
        self.assertIn('valid: d=2', err)

    def test_validate_empty_row(self):
        code, _, err = run_cli('validate', fixture('empty_row.json'))
        self.assertEqual(code, 1)
        self.assertIn('EmptyRow(0)', err)

    def test_missing_input(self):
        code, _, err = run_cli('validate')
        self.assertEqual(code, 1)
        self.assertIn('input file is required', err)

    def test_bad_tolerance(self):
        code, _, _ = run_cli('pressure', fixture('golden_mean.json'), '--tol', '0')
        self.assertEqual(code, 1)

    def test_unknown_subcommand(self):
        code, _, _ = run_cli('frobnicate')
        self.assertEqual(code, 1)

    def test_verify_vp(self):
        code, out, err = run_cli('verify-vp', fixture('golden_mean.json'))
        self.assertEqual(code, 0, err)
        report = json.loads(out)
        self.assertEqual(set(report['checks'].values()), {'pass'})
        for key in ('spectral', 'variational'):
            self.assertAlmostEqual(report[key], LOG_GOLDEN, delta=1e-8)
        self.assertAlmostEqual(report['optimizer']['value'], LOG_GOLDEN, delta=1e-3)
        self.assertLessEqual(abs(report['combinatorial_last'] - LOG_GOLDEN), 5 / 8)
        self.assertIn('checks=pass', err)

    def test_verify_vp_failure_exits_2(self):
        inflated = pressure.OptimizerResult(
            kernels.TransitionKernel(PARRY), value=10.0, iterations=1, converged=True
        )
        with patch('formalism.services.pressure.variational_optimize', return_value=inflated):
            code, _, err = run_cli('verify-vp', fixture('golden_mean.json'))
        self.assertEqual(code, 2)
        self.assertIn('InvariantViolation(optimizer_below_spectral)', err)

    def test_numerical_failure_exits_2(self):
        with patch('formalism.services.pressure.perron_eigenpair', side_effect=NoConvergence(3)):
            code, _, err = run_cli('pressure', fixture('golden_mean.json'))
        self.assertEqual(code, 2)
        self.assertIn('NoConvergence(3)', err)

    def test_pressure_csv(self):
        code, out, _ = run_cli('pressure', fixture('golden_mean.json'), '--format', 'csv',
                               '--n-max', '5')
        self.assertEqual(code, 0)
        lines = out.splitlines()
        self.assertEqual(lines[0], 'n,estimate')
        self.assertEqual(len(lines), 6)

    def test_equilibrium_report_and_table(self):
        code, out, _ = run_cli('equilibrium', fixture('full_shift_diagonal.json'))
        self.assertEqual(code, 0)
        report = json.loads(out)
        self.assertAlmostEqual(report['equilibrium']['value'], math.log(math.e + 1), delta=1e-8)
        self.assertIn('gibbs', report)

        code, out, _ = run_cli('equilibrium', fixture('golden_mean.json'), '--format', 'csv',
                               '--n', '3')
        self.assertEqual(code, 0)
        self.assertEqual(len(out.splitlines()), 6)

    def test_equilibrium_beyond_exp_range(self):
        model = os.path.join(self.tmpdir.name, 'hot.json')
        edges = [{'from': i, 'to': j, 'phi': 800.0} for i, j in ((1, 1), (1, 2), (2, 1))]
        export_service.write_text(json.dumps({'states': 2, 'edges': edges}), model)
        code, out, err = run_cli('equilibrium', model)
        self.assertEqual(code, 0, err)
        report = json.loads(out)
        self.assertIsNone(report['spectrum']['eigenvalue'])
        self.assertAlmostEqual(report['spectrum']['log_eigenvalue'], 800 + LOG_GOLDEN, delta=1e-9)
        self.assertAlmostEqual(report['equilibrium']['pressure'], 800 + LOG_GOLDEN, delta=1e-9)

    def test_entropy_and_rokhlin(self):
        code, out, _ = run_cli('entropy', fixture('golden_kernel.json'), '--samples', '20000')
        self.assertEqual(code, 0)
        report = json.loads(out)
        self.assertAlmostEqual(report['entropy_rate'], 2 / 3 * math.log(2), delta=1e-10)
        self.assertEqual(report['block_estimate']['k'], 2)

        code, out, _ = run_cli('rokhlin', fixture('golden_kernel.json'))
        self.assertEqual(code, 0)
        self.assertLessEqual(json.loads(out)['difference'], 1e-10)

    def test_sample_to_file(self):
        target = os.path.join(self.tmpdir.name, 'path.txt')
        code, out, _ = run_cli('sample', fixture('golden_kernel.json'), '--n', '20',
                               '--seed', '7', '--output', target)
        self.assertEqual(code, 0)
        lines = Path(target).read_text().splitlines()
        self.assertEqual(lines[:2], ['# seed=7', '# generator=numpy.PCG64'])
        self.assertEqual(len(lines), 23)
        self.assertIn('sample: 20 states', out)

    def test_backward_exact_point_cloud(self):
        code, out, err = run_cli('backward', '--p', '1', '--q', '2', '--c', '0', '--x', '2',
                                 '--n', '12', '--mode', 'exact')
        self.assertEqual(code, 0, err)
        self.assertIn('# mode=exact', out)
        lines = [line for line in out.splitlines() if not line.startswith('#')]
        self.assertEqual(len(lines), 4096)
        self.assertAlmostEqual(float(lines[0].split()[2]), -12 * math.log(2), places=12)
        self.assertIn('hyperbolicity', err)

    def test_backward_from_config(self):
        code, out, _ = run_cli('backward', fixture('z_squared.json'), '--n', '6',
                               '--format', 'report')
        self.assertEqual(code, 0)
        report = json.loads(out)
        self.assertEqual(report['atoms'], 64)
        self.assertAlmostEqual(report['log_partition'], 6 * math.log(2), places=12)
        self.assertEqual(report['config']['n'], 6)
        self.assertEqual(report['config']['potential'], {'kind': 'zero', 't': 0.0})

    def test_backward_sampled_is_reproducible(self):
        argv = ('backward', '--p', '1', '--q', '2', '--c', '0.1', '--x', '1.05', '--n', '8',
                '--mode', 'sampled', '--samples', '500', '--seed', '11',
                '--potential', 'geometric', '--t', '0.5')
        first = run_cli(*argv)
        second = run_cli(*argv)
        self.assertEqual(first[0], 0)
        self.assertEqual(first[1], second[1])
        header = [line for line in first[1].splitlines() if line.startswith('#')]
        self.assertIn('# seed=11', header)
        self.assertIn(f'# generator={GENERATOR_ID}', header)
        self.assertIn('# samples=500', header)

    def test_backward_grid_outputs(self):
        png = os.path.join(self.tmpdir.name, 'grid.png')
        code, out, _ = run_cli('backward', fixture('z_squared.json'), '--n', '8',
                               '--format', 'pgm', '--resolution', '8', '8', '--png', png)
        self.assertEqual(code, 0)
        self.assertTrue(out.startswith('P2\n'))
        self.assertTrue(os.path.exists(png))

    def test_julia_report(self):
        code, out, _ = run_cli('julia', '--p', '1', '--q', '2', '--c', '0', '--n', '40',
                               '--burn', '10', '--samples', '8', '--format', 'report')
        self.assertEqual(code, 0)
        report = json.loads(out)
        self.assertEqual(report['points'], 8 * 30)
        self.assertLessEqual(report['max_modulus'], 1.001)

    def test_rasterize_point_file(self):
        source = os.path.join(self.tmpdir.name, 'points.txt')
        export_service.write_text(
            export_service.render_points(np.array([0.1 + 0.1j, -0.5 + 0.2j, 3 + 3j])), source
        )
        code, out, err = run_cli('rasterize', source, '--format', 'csv',
                                 '--resolution', '4', '4', '--bounds', '-1', '1', '-1', '1')
        self.assertEqual(code, 0)
        rows = [line for line in out.splitlines() if not line.startswith('#')]
        self.assertEqual(len(rows), 17)
        self.assertIn('outside=3.333e-01', err)
