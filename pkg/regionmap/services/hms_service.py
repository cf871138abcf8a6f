"""
Two-level Hierarchic Memetic Strategy.

The root deme runs a simple evolutionary algorithm over the whole domain;
after every metaepoch its current best individual may sprout a CMA-ES leaf
deme. Leaves stop on stagnation or as soon as their step size starts to
grow, which is what happens once they sit on a plateau. The clusters
handed to the reduction step are the pooled CMA-ES samples lying within one
standard deviation of each leaf's final sampling measure.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from regionmap.exceptions import EngineDegenerateError, InvalidArgumentError
from regionmap.models import Cluster, ClusterStage, EvaluatedPoint
from regionmap.schemas import HmsConfig
from regionmap.services.engine_service import (
    CmaState,
    cma_advance,
    cma_init,
    current_best,
    init_population,
    sea_epoch,
)
from regionmap.services.problem_service import Problem
from regionmap.utils.budget import Budget

logger = logging.getLogger(__name__)

ROOT_LEVEL = 1
LEAF_LEVEL = 2
MAHALANOBIS_SLACK = 1e-12


@dataclass
class DemeNode:
    id: int
    level: int
    engine: Union[List[EvaluatedPoint], CmaState]
    rng: np.random.Generator
    status: str = "active"
    stop_reason: Optional[str] = None
    seed_point: Optional[np.ndarray] = None
    children: List["DemeNode"] = field(default_factory=list)
    # root only: spawns the random streams of new leaves
    seed_sequence: Optional[np.random.SeedSequence] = None
    # root only: per-metaepoch snapshot of every deme
    history: List[Dict[str, Any]] = field(default_factory=list)
    evaluations: int = 0

    @property
    def active(self) -> bool:
        return self.status == "active"

    def stop(self, reason: str) -> None:
        self.status = "stopped"
        self.stop_reason = reason

    def summary(self) -> Dict[str, Any]:
        if isinstance(self.engine, CmaState):
            state = self.engine
            mean, sigma = state.sampler.mean.tolist(), state.sampler.sigma
            best = state.best.f if state.best is not None else None
        else:
            X = np.vstack([p.x for p in self.engine]) if self.engine else np.empty((0,))
            mean = X.mean(axis=0).tolist() if self.engine else []
            sigma = None
            best = current_best(self.engine).f if self.engine else None
        return {
            "id": self.id,
            "level": self.level,
            "status": self.status,
            "stop_reason": self.stop_reason,
            "mean": mean,
            "sigma": sigma,
            "best": best,
            "evaluations": self.evaluations,
        }


def hms_init(
    problem: Problem,
    config: HmsConfig,
    seed: Union[int, np.random.SeedSequence],
    budget: Budget,
) -> DemeNode:
    """Root deme with its initial population charged to the budget."""
    seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    root_seq, leaf_seq = seq.spawn(2)
    rng = np.random.default_rng(root_seq)
    population = init_population(problem, config.root.population_size, rng, budget)
    root = DemeNode(id=0, level=ROOT_LEVEL, engine=population, rng=rng, seed_sequence=leaf_seq)
    root.evaluations = len(population)
    if not population:
        root.stop("budget")
    return root


def metaepoch(tree: DemeNode, config: HmsConfig, problem: Problem, budget: Budget) -> DemeNode:
    """Advance every active deme by `metaepoch_length` engine epochs."""
    root = tree
    if root.active:
        for _ in range(config.metaepoch_length):
            if budget.exhausted:
                root.stop("budget")
                break
            before = budget.used
            root.engine = sea_epoch(root.engine, config.root, problem, root.rng, budget)
            root.evaluations += budget.used - before

    stop = config.leaf_stop()
    for leaf in root.children:
        if not leaf.active:
            continue
        for _ in range(config.metaepoch_length):
            state = cma_advance(leaf.engine, problem, stop, budget)
            leaf.evaluations += state.evaluations - leaf.engine.evaluations
            leaf.engine = state
            if state.stopped:
                leaf.stop(state.stop_reason)
                logger.debug("hms: leaf %d stopped (%s) after %d evaluations", leaf.id, leaf.stop_reason, leaf.evaluations)
                break

    if budget.exhausted and root.active:
        root.stop("budget")
    return tree


def try_sprout(parent: DemeNode, tree: DemeNode, config: HmsConfig) -> Optional[DemeNode]:
    """Sprout a CMA-ES leaf from the parent's current best, if it is good and far enough."""
    if parent.level != ROOT_LEVEL:
        raise InvalidArgumentError("only the root deme sprouts")
    if not parent.engine:
        return None
    candidate = current_best(parent.engine)
    if not candidate.f < config.sprout_max_fitness:
        return None
    for leaf in tree.children:
        anchors = (leaf.seed_point, leaf.engine.sampler.mean)
        if any(np.linalg.norm(candidate.x - a) < config.sprout_min_distance for a in anchors):
            return None

    rng = np.random.default_rng(tree.seed_sequence.spawn(1)[0])
    state = cma_init(candidate.x, config.leaf_sigma0, rng, config.leaf_population)
    leaf = DemeNode(
        id=len(tree.children) + 1,
        level=LEAF_LEVEL,
        engine=state,
        rng=rng,
        seed_point=candidate.x.copy(),
    )
    parent.children.append(leaf)
    logger.debug("hms: sprouted leaf %d at %s (f=%.4g)", leaf.id, np.round(candidate.x, 4), candidate.f)
    return leaf


def cma_points(tree: DemeNode) -> List[EvaluatedPoint]:
    """Every point sampled by any CMA-ES deme across all its steps."""
    return [p for leaf in tree.children for p in leaf.engine.points()]


def hms_run(
    problem: Problem,
    config: HmsConfig,
    seed: Union[int, np.random.SeedSequence] = 0,
    budget: Optional[Budget] = None,
) -> Tuple[DemeNode, List[EvaluatedPoint]]:
    """Alternate metaepochs and sprouting until the budget runs out or every deme stopped."""
    budget = budget if budget is not None else Budget(config.budget)
    tree = hms_init(problem, config, seed, budget)
    count = 0
    while not budget.exhausted and (tree.active or any(leaf.active for leaf in tree.children)):
        before = budget.used
        metaepoch(tree, config, problem, budget)
        count += 1
        if tree.active:
            try_sprout(tree, tree, config)
        tree.history.append(
            {
                "metaepoch": count,
                "evaluations": budget.used,
                "demes": [tree.summary()] + [leaf.summary() for leaf in tree.children],
            }
        )
        if budget.used == before and not any(leaf.active for leaf in tree.children):
            break

    points = cma_points(tree)
    logger.info(
        "hms_run: %d metaepochs, %d leaves, %d evaluations, |Q|=%d",
        count, len(tree.children), budget.used, len(points),
    )
    return tree, points


def extract_clusters(tree: DemeNode, all_points: List[EvaluatedPoint]) -> List[Cluster]:
    """Pooled points within Mahalanobis distance 1 of each leaf's final sampler."""
    clusters: List[Cluster] = []
    if not all_points:
        return clusters
    X = np.vstack([p.x for p in all_points])
    for leaf in tree.children:
        try:
            d = leaf.engine.sampler.distances(X)
        except EngineDegenerateError as exc:
            logger.warning("hms: leaf %d has a degenerate final sampler, no cluster: %s", leaf.id, exc)
            continue
        if not np.all(np.isfinite(d)):
            logger.warning("hms: leaf %d gives non-finite distances, no cluster", leaf.id)
            continue
        members = [p for p, di in zip(all_points, d) if di <= 1.0 + MAHALANOBIS_SLACK]
        if not members:
            continue
        clusters.append(
            Cluster(
                id=len(clusters),
                stage=ClusterStage.RAW,
                points=members,
                provenance=[leaf.id],
                converged=leaf.stop_reason not in (None, "budget"),
            )
        )
    logger.info("extract_clusters: %d of %d leaves gave clusters", len(clusters), len(tree.children))
    return clusters
