import math

import numpy as np
import pytest

from regionmap.exceptions import InvalidArgumentError
from regionmap.schemas import BenchmarkCase
from regionmap.services.problem_service import (
    Problem,
    benchmark,
    c_shape,
    exact_region_points,
    flatten,
    gaussian_valley,
)


def test_gaussian_valley_reference_values():
    """
    The valley is zero at its center, one half one radius away along an
    axis, and 1 - 2^-4 two radii away.
    """
    assert gaussian_valley([0.3, -1.0], [0.3, -1.0], [0.5, 1.0]) == 0.0
    assert gaussian_valley([0.0, 1.0], [0.0, 0.0], [0.5, 1.0]) == pytest.approx(0.5)
    assert gaussian_valley([1.0, 0.0], [0.0, 0.0], [0.5, 1.0]) == pytest.approx(0.9375)


def test_gaussian_valley_rejects_dimension_mismatch():
    """Point, center and radii must agree in dimension."""
    with pytest.raises(InvalidArgumentError):
        gaussian_valley([0.0, 0.0, 0.0], [0.0, 0.0], [1.0, 1.0])


def test_c_shape_vanishes_at_valley_centers():
    """Each valley center of the unrotated C-shape is a zero of the product."""
    assert c_shape([-0.8, 0.0]) == 0.0
    assert c_shape([0.0, -0.8]) == 0.0
    x = np.array([[0.3, 0.7], [1.5, -0.2]])
    np.testing.assert_allclose(c_shape(x, 0.0), c_shape(x))


def test_flatten_values_and_threshold_check():
    """Flatten maps T to 0 and 1 to 1; a threshold of 1 is rejected."""
    assert flatten(0.1, 0.1) == 0.0
    assert flatten(1.0, 0.1) == pytest.approx(1.0)
    assert flatten(0.55, 0.1) == pytest.approx(0.5)
    with pytest.raises(InvalidArgumentError):
        flatten(0.5, 1.0)


def test_benchmark_reference_points():
    """Case I vanishes inside a lowland; the cosine landscape spans [0, 4]."""
    problem_1, _ = benchmark(BenchmarkCase.I)
    problem_3, _ = benchmark("III")

    assert problem_1.evaluate([1.2, 2.0]) == 0.0
    assert problem_3.evaluate([0.0, 0.0, 0.0, 0.0]) == pytest.approx(0.0, abs=1e-15)
    assert problem_3.evaluate([5.0, 1.0, 1.0, 1.0]) == pytest.approx(4.0)


def test_benchmark_unknown_case():
    """Unknown case labels are invalid arguments."""
    with pytest.raises(InvalidArgumentError):
        benchmark("IV")


def test_problem_counts_evaluations_and_checks_dimension():
    """Every evaluated point increments the counter; wrong dimensions raise."""
    problem, _ = benchmark(BenchmarkCase.I)
    problem.evaluate([1.0, 1.0])
    problem.evaluate_many(np.zeros((4, 2)))
    points = problem.evaluate_points(np.ones((3, 2)))

    assert problem.eval_counter == 8
    assert [p.index for p in points] == [5, 6, 7]
    with pytest.raises(InvalidArgumentError):
        problem.evaluate([1.0, 1.0, 1.0])


def test_objective_is_deterministic():
    """Same point, same value, and the raw objective does not count."""
    problem, _ = benchmark(BenchmarkCase.II)
    x = np.array([[3.3, 7.1], [12.0, 4.4]])
    np.testing.assert_array_equal(problem.objective(x), problem.objective(x))
    assert problem.eval_counter == 0


@pytest.mark.parametrize("case, expected", [(BenchmarkCase.I, 4), (BenchmarkCase.II, 25)])
def test_exact_regions_component_count(case, expected):
    """The grid at step 0.05 separates every lowland of the 2D cases."""
    problem, truth = benchmark(case)
    components = exact_region_points(problem, truth.region_cutoff, truth.grid_step)
    assert len(components) == expected


def test_exact_regions_cutoff_above_maximum_is_whole_grid():
    """A cutoff above the global maximum yields a single component covering the grid."""
    problem = Problem("plane", [[0.0, 1.0], [0.0, 1.0]], lambda X: np.atleast_2d(X)[:, 0])
    components = exact_region_points(problem, 5.0, 0.25)
    assert len(components) == 1
    assert components[0].shape == (25, 2)


def test_ground_truth_regions_match_centers():
    """Each exact region of case I is matched to the tile it belongs to."""
    _, truth = benchmark(BenchmarkCase.I)
    for k, region in enumerate(truth.regions):
        pts = truth.region_points(k)
        nearest = np.linalg.norm(pts.mean(axis=0) - region.center)
        assert nearest < 1.5


def test_case_three_minima():
    """The cosine landscape has 27 minima on {0} x {-2, 0, 2}^3, all of value 0."""
    problem, truth = benchmark(BenchmarkCase.III)
    assert truth.minima.shape == (27, 4)
    np.testing.assert_allclose(problem.objective(truth.minima), 0.0, atol=1e-12)
    assert math.isclose(truth.minima_radius, 0.4)
