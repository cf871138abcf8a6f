"""
Single-population search engines: CMA-ES and a simple evolutionary algorithm.

CMA-ES follows the standard (mu/mu_w, lambda) update with log-linear
recombination weights, cumulative step-size adaptation and rank-one plus
rank-mu covariance updates. Engine states are plain values; `cma_step`
returns a new state and never mutates its input, except for the random
generator which is shared along a run.

Both engines draw from an explicit `numpy.random.Generator`, so a run is
reproducible from its seed. Evaluations may be capped by a shared `Budget`.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from regionmap.exceptions import EngineDegenerateError, InvalidArgumentError
from regionmap.models import EvaluatedPoint, best_point
from regionmap.schemas import SeaParams, StopSpec
from regionmap.services.problem_service import Problem
from regionmap.utils.budget import Budget

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-10
MAX_RESAMPLES = 10
FLAT_PERCENTILE = 0.7


# ---- Sampling measure ----
@dataclass(frozen=True)
class GaussianSampler:
    """N(mean, sigma^2 C) with a cached eigendecomposition of C."""

    mean: np.ndarray
    sigma: float
    cov: np.ndarray
    eigvals: np.ndarray = field(init=False, repr=False, compare=False)
    eigvecs: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape != (mean.size, mean.size):
            raise InvalidArgumentError("covariance shape does not match the mean")
        if not math.isfinite(self.sigma) or self.sigma <= 0:
            raise EngineDegenerateError(f"step size must be positive, got {self.sigma}")
        if not np.all(np.isfinite(cov)):
            raise EngineDegenerateError("covariance has non-finite entries")
        scale = max(1.0, float(np.max(np.abs(cov))))
        if np.max(np.abs(cov - cov.T)) > SYMMETRY_TOL * scale:
            raise EngineDegenerateError("covariance is not symmetric")
        eigvals, eigvecs = np.linalg.eigh(cov)
        if eigvals[0] <= 0:
            raise EngineDegenerateError(f"covariance lost positive definiteness (min eigenvalue {eigvals[0]:.3g})")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "eigvals", eigvals)
        object.__setattr__(self, "eigvecs", eigvecs)

    @classmethod
    def isotropic(cls, mean, sigma: float) -> "GaussianSampler":
        mean = np.asarray(mean, dtype=float)
        return cls(mean=mean, sigma=float(sigma), cov=np.eye(mean.size))

    @property
    def dimension(self) -> int:
        return self.mean.size

    @property
    def condition(self) -> float:
        return float(self.eigvals[-1] / self.eigvals[0])

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        z = rng.standard_normal((n, self.dimension))
        return self.mean + self.sigma * (z * np.sqrt(self.eigvals)) @ self.eigvecs.T

    def invsqrt(self) -> np.ndarray:
        return (self.eigvecs / np.sqrt(self.eigvals)) @ self.eigvecs.T

    def distances(self, X) -> np.ndarray:
        """Mahalanobis distances of the rows of X under sigma^2 C."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dimension:
            raise InvalidArgumentError("point dimension does not match the sampler")
        u = (X - self.mean) @ self.eigvecs / np.sqrt(self.eigvals)
        return np.linalg.norm(u, axis=1) / self.sigma

    def snapshot(self) -> Dict[str, Any]:
        return {"mean": self.mean.tolist(), "sigma": self.sigma, "cov": self.cov.tolist()}


def mahalanobis(sampler: GaussianSampler, x) -> float:
    """sqrt((x - m)^T (sigma^2 C)^-1 (x - m))."""
    x = np.asarray(x, dtype=float)
    if x.shape != sampler.mean.shape:
        raise InvalidArgumentError("point dimension does not match the sampler")
    return float(sampler.distances(x[None, :])[0])


# ---- CMA-ES ----
@dataclass(frozen=True)
class CmaParams:
    """Static strategy parameters for a given dimension and population size."""

    dimension: int
    popsize: int
    mu: int
    weights: np.ndarray
    mueff: float
    cc: float
    cs: float
    c1: float
    cmu: float
    damps: float

    @classmethod
    def for_dimension(cls, n: int, popsize: Optional[int] = None) -> "CmaParams":
        lam = popsize if popsize is not None else 4 + int(3 * math.log(n))
        if lam < 4:
            raise InvalidArgumentError("CMA-ES needs a population of at least 4")
        mu = lam // 2
        raw = math.log(lam / 2 + 0.5) - np.log(np.arange(1, mu + 1))
        weights = raw / raw.sum()
        mueff = 1.0 / float(np.sum(weights ** 2))
        cc = (4 + mueff / n) / (n + 4 + 2 * mueff / n)
        cs = (mueff + 2) / (n + mueff + 5)
        c1 = 2 / ((n + 1.3) ** 2 + mueff)
        cmu = min(1 - c1, 2 * (mueff - 2 + 1 / mueff) / ((n + 2) ** 2 + mueff))
        damps = 2 * mueff / lam + 0.3 + cs
        return cls(n, lam, mu, weights, mueff, cc, cs, c1, cmu, damps)


@dataclass(frozen=True)
class TraceEntry:
    iteration: int
    points: List[EvaluatedPoint]
    sampler: GaussianSampler


@dataclass
class CmaState:
    sampler: GaussianSampler
    params: CmaParams
    rng: np.random.Generator
    ps: np.ndarray
    pc: np.ndarray
    iteration: int = 0
    evaluations: int = 0
    best: Optional[EvaluatedPoint] = None
    population: List[EvaluatedPoint] = field(default_factory=list)
    trace: List[TraceEntry] = field(default_factory=list)
    # mean population fitness per iteration
    mean_history: List[float] = field(default_factory=list)
    # sigma before the first iteration and after each one
    sigma_history: List[float] = field(default_factory=list)
    stop_reason: Optional[str] = None

    @property
    def popsize(self) -> int:
        return self.params.popsize

    @property
    def stopped(self) -> bool:
        return self.stop_reason is not None

    def points(self) -> List[EvaluatedPoint]:
        """Every point sampled by this run, in evaluation order."""
        return [p for entry in self.trace for p in entry.points]


def cma_init(
    m0,
    sigma0: float,
    rng: np.random.Generator,
    popsize: Optional[int] = None,
) -> CmaState:
    m0 = np.asarray(m0, dtype=float)
    if sigma0 <= 0:
        raise InvalidArgumentError("sigma0 must be positive")
    params = CmaParams.for_dimension(m0.size, popsize)
    return CmaState(
        sampler=GaussianSampler.isotropic(m0, sigma0),
        params=params,
        rng=rng,
        ps=np.zeros(m0.size),
        pc=np.zeros(m0.size),
        sigma_history=[float(sigma0)],
    )


def sample_in_bounds(sampler: GaussianSampler, n: int, problem: Problem, rng: np.random.Generator) -> np.ndarray:
    """Resample out-of-box rows up to MAX_RESAMPLES times, then clamp."""
    X = sampler.sample(rng, n)
    for _ in range(MAX_RESAMPLES):
        outside = ~problem.contains(X)
        if not outside.any():
            break
        X[outside] = sampler.sample(rng, int(outside.sum()))
    return problem.clip(X)


def _grant(requested: int, budget: Optional[Budget]) -> int:
    if budget is None:
        return requested
    return budget.take(requested)


def cma_step(
    state: CmaState,
    problem: Problem,
    budget: Optional[Budget] = None,
    limit: Optional[int] = None,
) -> CmaState:
    """
    One CMA-ES iteration: sample, evaluate and update (m, sigma, C).

    `limit` caps the evaluations of this run as a whole, `budget` is the
    shared allowance. When fewer than lambda evaluations are granted the
    partial population is recorded and the state stops with reason "budget".
    Raises EngineDegenerateError if the updated covariance is unusable.
    """
    par = state.params
    requested = par.popsize
    if limit is not None:
        requested = max(0, min(requested, limit - state.evaluations))
    granted = _grant(requested, budget)
    if granted == 0:
        return dataclasses.replace(state, stop_reason="budget")

    sampler = state.sampler
    X = sample_in_bounds(sampler, par.popsize, problem, state.rng)[:granted]
    points = problem.evaluate_points(X)
    best = best_point(points if state.best is None else [state.best, *points])
    mean_f = float(np.mean([p.f for p in points]))
    entry = TraceEntry(state.iteration + 1, points, sampler)
    common = dict(
        iteration=state.iteration + 1,
        evaluations=state.evaluations + granted,
        best=best,
        population=points,
        trace=[*state.trace, entry],
        mean_history=[*state.mean_history, mean_f],
    )
    if granted < par.popsize:
        return dataclasses.replace(
            state, sigma_history=[*state.sigma_history, sampler.sigma], stop_reason="budget", **common
        )

    n = par.dimension
    ranked = sorted(points, key=EvaluatedPoint.sort_key)
    fvals = np.array([p.f for p in ranked])
    Xs = np.vstack([p.x for p in ranked])
    sigma = sampler.sigma
    m_old = sampler.mean

    m_new = par.weights @ Xs[: par.mu]
    y = (m_new - m_old) / sigma
    ps = (1 - par.cs) * state.ps + math.sqrt(par.cs * (2 - par.cs) * par.mueff) * (sampler.invsqrt() @ y)
    generation = state.iteration + 1
    hsig = float(
        np.sum(ps ** 2) / n / (1 - (1 - par.cs) ** (2 * generation)) < 2 + 4.0 / (n + 1)
    )
    pc = (1 - par.cc) * state.pc + hsig * math.sqrt(par.cc * (2 - par.cc) * par.mueff) * y

    c1a = par.c1 * (1 - (1 - hsig ** 2) * par.cc * (2 - par.cc))
    steps = (Xs[: par.mu] - m_old) / sigma
    C = (1 - c1a - par.cmu) * sampler.cov
    C += par.c1 * np.outer(pc, pc)
    C += par.cmu * (steps.T * par.weights) @ steps
    C = 0.5 * (C + C.T)

    sigma_new = sigma * math.exp(min(1.0, par.cs / par.damps * (np.sum(ps ** 2) / n - 1) / 2))
    # flat fitness: best equals the upper percentile, the step size is pushed up
    k = int(math.ceil(FLAT_PERCENTILE * par.popsize)) - 1
    if fvals[0] == fvals[k]:
        sigma_new *= math.exp(0.2 + par.cs / par.damps)
        logger.debug("cma_step: flat fitness at iteration %d, sigma %.3g", generation, sigma_new)

    new_sampler = GaussianSampler(mean=m_new, sigma=sigma_new, cov=C)
    return dataclasses.replace(
        state,
        sampler=new_sampler,
        ps=ps,
        pc=pc,
        sigma_history=[*state.sigma_history, sigma_new],
        **common,
    )


def check_stop(state: CmaState, stop: StopSpec) -> Optional[str]:
    """First satisfied stop condition of a state that can still step, or None."""
    if stop.stop_fitness is not None and state.best is not None and state.best.f <= stop.stop_fitness:
        return "stop_fitness"
    if stop.sigma_increase and state.iteration > stop.sigma_warmup and len(state.sigma_history) >= 2:
        if state.sigma_history[-1] > state.sigma_history[-2]:
            return "sigma_increase"
    if stop.stagnation_tol is not None and len(state.mean_history) > stop.stagnation_window:
        window = state.mean_history[-(stop.stagnation_window + 1):]
        if max(window) - min(window) <= stop.stagnation_tol:
            return "stagnation"
    if stop.max_evaluations is not None and state.evaluations >= stop.max_evaluations:
        return "budget"
    if state.iteration >= stop.max_iterations:
        return "max_iterations"
    if state.sampler.condition > stop.max_condition:
        return "condition"
    return None


def cma_advance(
    state: CmaState,
    problem: Problem,
    stop: StopSpec,
    budget: Optional[Budget] = None,
) -> CmaState:
    """One guarded step: checks stop conditions and maps degeneracy to a stop."""
    if state.stopped:
        return state
    if budget is not None and budget.exhausted:
        return dataclasses.replace(state, stop_reason="budget")
    try:
        state = cma_step(state, problem, budget=budget, limit=stop.max_evaluations)
    except EngineDegenerateError as exc:
        logger.warning("cma: degenerate sampler at iteration %d: %s", state.iteration, exc)
        return dataclasses.replace(state, stop_reason="degenerate")
    if state.stopped:
        return state
    reason = check_stop(state, stop)
    if reason is not None:
        state = dataclasses.replace(state, stop_reason=reason)
    return state


def cma_run(
    problem: Problem,
    m0,
    sigma0: float,
    stop: StopSpec,
    rng: np.random.Generator,
    popsize: Optional[int] = None,
    budget: Optional[Budget] = None,
) -> CmaState:
    """Iterate CMA-ES from (m0, sigma0) until the first stop condition holds."""
    m0 = np.asarray(m0, dtype=float)
    if not problem.contains(m0):
        raise InvalidArgumentError("m0 must lie within the problem bounds")
    state = cma_init(m0, sigma0, rng, popsize)
    if stop.max_evaluations == 0 or (budget is not None and budget.exhausted):
        return dataclasses.replace(state, stop_reason="budget")
    while not state.stopped:
        state = cma_advance(state, problem, stop, budget)
    logger.debug(
        "cma_run: %s after %d iterations, %d evaluations, best %.4g",
        state.stop_reason, state.iteration, state.evaluations,
        state.best.f if state.best else float("nan"),
    )
    return state


# ---- SEA ----
def current_best(population: List[EvaluatedPoint]) -> EvaluatedPoint:
    """Minimum fitness, ties going to the most recent evaluation."""
    return min(population, key=lambda p: (p.f, -p.index))


def init_population(
    problem: Problem,
    size: int,
    rng: np.random.Generator,
    budget: Optional[Budget] = None,
) -> List[EvaluatedPoint]:
    granted = _grant(size, budget)
    X = rng.uniform(problem.lower, problem.upper, size=(size, problem.dimension))[:granted]
    return problem.evaluate_points(X)


def select_parents(fitness: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Fitness-proportional choice on min-max normalized inverted fitness."""
    fmin, fmax = float(fitness.min()), float(fitness.max())
    if fmax > fmin:
        weights = (fmax - fitness) / (fmax - fmin)
    else:
        weights = np.ones_like(fitness)
    return rng.choice(fitness.size, size=n, p=weights / weights.sum())


def arithmetic_crossover(a: np.ndarray, b: np.ndarray, u) -> np.ndarray:
    """u * a + (1 - u) * b."""
    return u * a + (1.0 - u) * b


def sea_offspring(
    population: List[EvaluatedPoint],
    params: SeaParams,
    problem: Problem,
    rng: np.random.Generator,
) -> np.ndarray:
    size = len(population)
    X = np.vstack([p.x for p in population])
    fitness = np.array([p.f for p in population])
    first = X[select_parents(fitness, size, rng)]
    second = X[select_parents(fitness, size, rng)]
    crossing = rng.random(size) < params.crossover_probability
    u = rng.random((size, 1))
    children = np.where(crossing[:, None], arithmetic_crossover(first, second, u), first)
    mutate = rng.random(children.shape) < params.mutation_probability
    children = children + mutate * rng.normal(0.0, params.mutation_std, size=children.shape)
    return problem.clip(children)


def sea_epoch(
    population: List[EvaluatedPoint],
    params: SeaParams,
    problem: Problem,
    rng: np.random.Generator,
    budget: Optional[Budget] = None,
) -> List[EvaluatedPoint]:
    """
    One SEA generation of equal size with one elite preserved.

    If the budget grants fewer evaluations than the population size, the
    evaluated offspring are completed with the best survivors of the
    previous generation.
    """
    if not population:
        raise InvalidArgumentError("sea_epoch needs a nonempty population")
    size = len(population)
    children = sea_offspring(population, params, problem, rng)
    granted = _grant(size, budget)
    if granted == 0:
        return list(population)
    offspring = problem.evaluate_points(children[:granted])
    if granted < size:
        survivors = sorted(population, key=EvaluatedPoint.sort_key)[: size - granted]
        offspring = offspring + survivors

    elite = current_best(population)
    if min(p.f for p in offspring) > elite.f:
        worst = max(range(len(offspring)), key=lambda i: (offspring[i].f, offspring[i].index))
        offspring[worst] = elite
    return offspring
