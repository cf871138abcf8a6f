import numpy as np
import pytest

from regionmap.exceptions import EngineDegenerateError, InvalidArgumentError
from regionmap.schemas import HmsConfig, SeaParams, StopSpec
from regionmap.services.engine_service import (
    CmaParams,
    GaussianSampler,
    arithmetic_crossover,
    cma_init,
    cma_run,
    cma_step,
    current_best,
    init_population,
    mahalanobis,
    sea_epoch,
    sea_offspring,
)
from regionmap.services.problem_service import Problem
from regionmap.utils.budget import Budget


def _sphere() -> Problem:
    return Problem("sphere", [[-5.0, 5.0], [-5.0, 5.0]], lambda X: np.sum(np.atleast_2d(X) ** 2, axis=1))


def _flat() -> Problem:
    return Problem("flat", [[-5.0, 5.0], [-5.0, 5.0]], lambda X: np.zeros(np.atleast_2d(X).shape[0]))


def test_mahalanobis_reference_values():
    """Distance is zero at the mean and scales inversely with sigma."""
    unit = GaussianSampler.isotropic([0.0, 0.0], 1.0)
    wide = GaussianSampler.isotropic([0.0, 0.0], 2.0)

    assert mahalanobis(unit, [0.0, 0.0]) == 0.0
    assert mahalanobis(unit, [1.0, 0.0]) == pytest.approx(1.0)
    assert mahalanobis(wide, [1.0, 0.0]) == pytest.approx(0.5)


def test_sampler_rejects_singular_covariance():
    """A covariance that is not positive definite is a degenerate engine state."""
    with pytest.raises(EngineDegenerateError):
        GaussianSampler(mean=np.zeros(2), sigma=1.0, cov=np.diag([1.0, 0.0]))
    with pytest.raises(EngineDegenerateError):
        GaussianSampler(mean=np.zeros(2), sigma=0.0, cov=np.eye(2))


def test_default_population_size():
    """lambda = 4 + floor(3 ln n) and mu = lambda / 2 with normalized weights."""
    params = CmaParams.for_dimension(4)
    assert params.popsize == 8
    assert params.mu == 4
    assert params.weights.sum() == pytest.approx(1.0)
    assert np.all(np.diff(params.weights) < 0)


def test_cma_step_keeps_covariance_symmetric_and_positive():
    """After an update C is symmetric and positive definite and sigma positive."""
    state = cma_init([1.0, 1.0], 0.5, np.random.default_rng(0), popsize=8)
    for _ in range(10):
        state = cma_step(state, _sphere())
    cov = state.sampler.cov
    np.testing.assert_allclose(cov, cov.T)
    assert np.linalg.eigvalsh(cov).min() > 0
    assert state.sampler.sigma > 0
    assert state.evaluations == 80


def test_cma_run_solves_sphere():
    """From (1, 1) with sigma 0.5 the sphere drops below 1e-8 within 2000 evaluations."""
    stop = StopSpec(stagnation_tol=None, stop_fitness=1e-8, max_evaluations=2000)
    state = cma_run(_sphere(), [1.0, 1.0], 0.5, stop, np.random.default_rng(0), popsize=8)

    assert state.best.f < 1e-8
    assert state.evaluations <= 2000
    assert state.stop_reason == "stop_fitness"


def test_cma_run_zero_budget_returns_immediately():
    """An evaluation limit of zero stops before the first iteration."""
    problem = _sphere()
    stop = StopSpec(stagnation_tol=None, max_evaluations=0)
    state = cma_run(problem, [1.0, 1.0], 0.5, stop, np.random.default_rng(0))

    assert state.iteration == 0
    assert state.stop_reason == "budget"
    assert problem.eval_counter == 0


def test_cma_run_flat_objective_triggers_sigma_increase():
    """On a constant objective sigma grows and the sigma-increase stop fires."""
    stop = StopSpec(stagnation_tol=None, sigma_increase=True, max_iterations=50)
    reasons = [
        cma_run(_flat(), [0.0, 0.0], 0.5, stop, np.random.default_rng(seed)).stop_reason
        for seed in range(5)
    ]
    assert reasons.count("sigma_increase") >= 4


def test_cma_run_respects_shared_budget():
    """A shared budget caps the run, the last population may be partial."""
    budget = Budget(21)
    problem = _sphere()
    stop = StopSpec(stagnation_tol=None)
    state = cma_run(problem, [1.0, 1.0], 0.5, stop, np.random.default_rng(1), popsize=8, budget=budget)

    assert problem.eval_counter == 21
    assert state.stop_reason == "budget"
    assert len(state.population) == 5


def test_cma_run_requires_mean_inside_bounds():
    """The start mean must be a feasible point."""
    with pytest.raises(InvalidArgumentError):
        cma_run(_sphere(), [9.0, 0.0], 0.5, StopSpec(), np.random.default_rng(0))


def test_cma_run_is_deterministic():
    """Equal seeds give bit-identical traces."""
    stop = StopSpec(stagnation_tol=None, max_evaluations=200)
    a = cma_run(_sphere(), [2.0, -1.0], 0.5, stop, np.random.default_rng(3))
    b = cma_run(_sphere(), [2.0, -1.0], 0.5, stop, np.random.default_rng(3))
    np.testing.assert_array_equal(
        np.vstack([p.x for p in a.points()]), np.vstack([p.x for p in b.points()])
    )
    assert a.sigma_history == b.sigma_history


def test_arithmetic_crossover_midpoint():
    """u = 0.5 gives the midpoint of the parents."""
    child = arithmetic_crossover(np.array([0.0, 0.0]), np.array([2.0, 2.0]), 0.5)
    np.testing.assert_allclose(child, [1.0, 1.0])


def test_sea_epoch_without_variation_resamples_parents():
    """With both operators disabled every offspring repeats a parent's fitness."""
    problem = _sphere()
    rng = np.random.default_rng(4)
    population = init_population(problem, 10, rng)
    params = SeaParams(population_size=10, crossover_probability=0.0, mutation_probability=0.0)

    offspring = sea_epoch(population, params, problem, rng)

    parent_f = {p.f for p in population}
    assert len(offspring) == 10
    assert {p.f for p in offspring} <= parent_f


def test_sea_epoch_keeps_the_elite():
    """The best fitness of a generation never gets worse."""
    problem = _sphere()
    rng = np.random.default_rng(5)
    population = init_population(problem, 20, rng)
    params = SeaParams(population_size=20)
    best = current_best(population).f
    for _ in range(5):
        population = sea_epoch(population, params, problem, rng)
        assert current_best(population).f <= best
        best = current_best(population).f


def test_sea_epoch_partial_grant_fills_with_survivors():
    """A short budget evaluates fewer offspring but keeps the population size."""
    problem = _sphere()
    rng = np.random.default_rng(6)
    population = init_population(problem, 10, rng)
    budget = Budget(4)

    offspring = sea_epoch(population, SeaParams(population_size=10), problem, rng, budget)

    assert len(offspring) == 10
    assert problem.eval_counter == 14


def test_cma_run_ignores_a_constant_offset():
    """Ranking-based updates make f and f + 7 produce the same trajectory."""
    shifted = Problem("shifted", [[-5.0, 5.0], [-5.0, 5.0]], lambda X: np.sum(np.atleast_2d(X) ** 2, axis=1) + 7.0)
    stop = StopSpec(stagnation_tol=None, max_evaluations=160)
    for seed in range(3):
        a = cma_run(_sphere(), [2.0, -1.0], 0.5, stop, np.random.default_rng(seed))
        b = cma_run(shifted, [2.0, -1.0], 0.5, stop, np.random.default_rng(seed))
        np.testing.assert_array_equal(
            np.vstack([p.x for p in a.points()]), np.vstack([p.x for p in b.points()])
        )
        assert a.sigma_history == b.sigma_history


def test_cma_samples_stay_inside_the_bounds():
    """A wide sampler next to the corner never evaluates an infeasible point."""
    problem = _sphere()
    stop = StopSpec(stagnation_tol=None, max_evaluations=400)
    for seed in range(3):
        state = cma_run(problem, [4.9, 4.9], 3.0, stop, np.random.default_rng(seed))
        X = np.vstack([p.x for p in state.points()])
        assert problem.contains(X).all()


def test_mahalanobis_matches_a_cholesky_solve():
    """On random SPD covariances the distance equals |L^-1 (x - m)| with L L^T = sigma^2 C."""
    rng = np.random.default_rng(8)
    for _ in range(20):
        d = int(rng.integers(1, 6))
        M = rng.normal(size=(d, d))
        cov = M @ M.T + d * np.eye(d)
        cov = 0.5 * (cov + cov.T)
        sigma = float(rng.uniform(0.1, 3.0))
        mean, x = rng.normal(size=d), rng.normal(size=d)

        L = np.linalg.cholesky(sigma ** 2 * cov)
        expected = float(np.linalg.norm(np.linalg.solve(L, x - mean)))

        assert mahalanobis(GaussianSampler(mean=mean, sigma=sigma, cov=cov), x) == pytest.approx(expected, rel=1e-9)


def test_sampler_moments_match_the_distribution():
    """Empirical mean and covariance of 100000 draws agree with (m, sigma^2 C)."""
    cov = np.array([[2.0, 0.6], [0.6, 1.0]])
    sampler = GaussianSampler(mean=np.array([1.0, -2.0]), sigma=0.5, cov=cov)

    X = sampler.sample(np.random.default_rng(9), 100000)

    np.testing.assert_allclose(X.mean(axis=0), [1.0, -2.0], atol=0.01)
    np.testing.assert_allclose(np.cov(X.T), 0.25 * cov, atol=0.01)


def test_sea_mutation_has_the_configured_spread():
    """Mutation only, far from the bounds: offspring scatter with std mutation_std."""
    problem = Problem("wide", [[-100.0, 100.0], [-100.0, 100.0]], lambda X: np.sum(np.atleast_2d(X) ** 2, axis=1))
    population = problem.evaluate_points(np.zeros((2000, 2)))
    params = SeaParams(population_size=2000, crossover_probability=0.0, mutation_probability=1.0, mutation_std=2.0)

    children = sea_offspring(population, params, problem, np.random.default_rng(10))

    assert abs(children.mean()) < 0.1
    assert children.std() == pytest.approx(2.0, abs=0.1)


def test_leaf_stop_on_a_plateau_defaults_to_stagnation():
    """With the default warmup the stagnation window fills before sigma increase is armed."""
    state = cma_run(_flat(), [0.0, 0.0], 0.5, HmsConfig().leaf_stop(), np.random.default_rng(0))

    assert state.stop_reason == "stagnation"
    assert state.iteration == 4


def test_leaf_stop_without_warmup_prefers_sigma_increase():
    """Armed from the start, the sigma-increase check wins on a plateau."""
    stop = HmsConfig(leaf_sigma_warmup=0).leaf_stop()
    state = cma_run(_flat(), [0.0, 0.0], 0.5, stop, np.random.default_rng(0))

    assert state.stop_reason == "sigma_increase"
    assert state.iteration == 1
