import numpy as np

from regionmap.models import ClusterStage, EvaluatedPoint
from regionmap.schemas import BenchmarkCase, HmsConfig
from regionmap.services.engine_service import cma_init
from regionmap.services.hms_service import (
    DemeNode,
    extract_clusters,
    hms_init,
    hms_run,
    metaepoch,
    try_sprout,
)
from regionmap.services.problem_service import benchmark
from regionmap.utils.budget import Budget


def _root(points, seed=0):
    """A root deme holding a fixed population."""
    return DemeNode(
        id=0,
        level=1,
        engine=points,
        rng=np.random.default_rng(seed),
        seed_sequence=np.random.SeedSequence(seed),
    )


def _point(x, f, index):
    return EvaluatedPoint(np.asarray(x, dtype=float), f, index)


def test_metaepoch_root_only_consumes_three_epochs():
    """A lone root of 40 individuals spends 3 x 40 evaluations per metaepoch."""
    problem, _ = benchmark(BenchmarkCase.I)
    budget = Budget(1000)
    tree = hms_init(problem, HmsConfig(), 0, budget)
    assert budget.used == 40

    metaepoch(tree, HmsConfig(), problem, budget)

    assert budget.used == 160
    assert problem.eval_counter == 160


def test_metaepoch_with_every_deme_stopped_is_a_no_op():
    """Stopped demes consume nothing."""
    problem, _ = benchmark(BenchmarkCase.I)
    budget = Budget(1000)
    tree = hms_init(problem, HmsConfig(), 0, budget)
    tree.stop("test")
    used = budget.used

    metaepoch(tree, HmsConfig(), problem, budget)

    assert budget.used == used


def test_metaepoch_honours_a_short_budget():
    """With 10 evaluations left at most 10 are performed and the root stops."""
    problem, _ = benchmark(BenchmarkCase.I)
    budget = Budget(50)
    tree = hms_init(problem, HmsConfig(), 0, budget)

    metaepoch(tree, HmsConfig(), problem, budget)

    assert problem.eval_counter == 50
    assert not tree.active


def test_sprout_rejects_poor_candidates():
    """A best individual at fitness 0.6 does not sprout."""
    root = _root([_point([1.0, 1.0], 0.6, 0)])
    assert try_sprout(root, root, HmsConfig()) is None
    assert root.children == []


def test_sprout_rejects_candidates_near_existing_leaves():
    """A good candidate within distance 1 of a leaf seed does not sprout."""
    config = HmsConfig()
    root = _root([_point([3.0, 3.0], 0.2, 0)])
    first = try_sprout(root, root, config)
    assert first is not None

    root.engine = [_point([3.5, 3.0], 0.1, 1)]
    assert try_sprout(root, root, config) is None
    assert len(root.children) == 1


def test_first_sprout_starts_at_the_candidate():
    """Without leaves the distance rule holds vacuously; the leaf mean is the candidate."""
    config = HmsConfig()
    root = _root([_point([2.0, 4.0], 0.2, 0), _point([1.0, 1.0], 0.9, 1)])

    leaf = try_sprout(root, root, config)

    assert leaf is not None
    np.testing.assert_array_equal(leaf.engine.sampler.mean, [2.0, 4.0])
    assert leaf.engine.sampler.sigma == config.leaf_sigma0
    assert leaf.level == 2


def test_hms_run_stays_within_budget_and_sprouts():
    """Case I with 500 evaluations never overspends and sprouts at least one leaf."""
    for seed in range(3):
        problem, _ = benchmark(BenchmarkCase.I)
        tree, points = hms_run(problem, HmsConfig(budget=500), seed)
        assert problem.eval_counter <= 500
        assert len(tree.children) >= 1
        assert points
        assert tree.history


def test_hms_run_budget_below_one_epoch_keeps_root_only():
    """A budget smaller than the first population leaves no room for leaves."""
    problem, _ = benchmark(BenchmarkCase.I)
    tree, points = hms_run(problem, HmsConfig(budget=30), 0)
    assert tree.children == []
    assert points == []
    assert problem.eval_counter == 30


def test_hms_run_is_deterministic():
    """Same seed, same sampled points."""
    problem_a, _ = benchmark(BenchmarkCase.I)
    problem_b, _ = benchmark(BenchmarkCase.I)
    _, a = hms_run(problem_a, HmsConfig(budget=300), 7)
    _, b = hms_run(problem_b, HmsConfig(budget=300), 7)
    assert a
    assert [p.index for p in a] == [p.index for p in b]
    np.testing.assert_array_equal(np.vstack([p.x for p in a]), np.vstack([p.x for p in b]))


def test_extract_clusters_one_sigma_ball():
    """With sigma 1 and C = I around 0, only points within distance 1 are kept."""
    root = _root([])
    state = cma_init([0.0, 0.0], 1.0, np.random.default_rng(0))
    root.children.append(DemeNode(id=1, level=2, engine=state, rng=state.rng, seed_point=np.zeros(2)))
    points = [_point([0.0, 0.0], 0.0, 0), _point([1.0, 0.0], 0.0, 1), _point([2.0, 0.0], 0.0, 2)]

    clusters = extract_clusters(root, points)

    assert len(clusters) == 1
    assert [p.index for p in clusters[0].points] == [0, 1]
    assert clusters[0].stage is ClusterStage.RAW
    assert clusters[0].provenance == [1]
    # the leaf never ran, so it cannot claim convergence
    assert clusters[0].converged is False


def test_extract_clusters_without_leaves():
    """No leaves, no clusters."""
    assert extract_clusters(_root([]), [_point([0.0, 0.0], 0.0, 0)]) == []


def test_sprout_rejects_candidates_near_a_moved_leaf_mean():
    """The distance rule checks the leaf's current mean as well as its seed."""
    config = HmsConfig()
    root = _root([_point([3.0, 3.0], 0.2, 0)])
    leaf = try_sprout(root, root, config)
    leaf.engine = cma_init([5.0, 5.0], 0.5, leaf.rng)

    root.engine = [_point([5.5, 5.0], 0.1, 1)]
    assert try_sprout(root, root, config) is None

    root.engine = [_point([4.0, 4.0], 0.1, 2)]
    second = try_sprout(root, root, config)
    assert second is not None
    assert len(root.children) == 2


def test_every_sprout_keeps_its_distance_from_earlier_leaves():
    """At sprouting time a new seed is at least sprout_min_distance from older seeds and means."""
    config = HmsConfig(budget=1500)
    for seed in range(3):
        problem, _ = benchmark(BenchmarkCase.I)
        tree, _ = hms_run(problem, config, seed)
        seeds = {leaf.id: leaf.seed_point for leaf in tree.children}
        known = set()
        for entry in tree.history:
            leaves = [d for d in entry["demes"] if d["level"] == 2]
            for new in (d for d in leaves if d["id"] not in known):
                for older in (d for d in leaves if d["id"] in known):
                    assert np.linalg.norm(seeds[new["id"]] - seeds[older["id"]]) >= config.sprout_min_distance
                    assert np.linalg.norm(seeds[new["id"]] - np.array(older["mean"])) >= config.sprout_min_distance
            known |= {d["id"] for d in leaves}


def test_extracted_clusters_are_the_unit_mahalanobis_balls():
    """Members lie within distance 1 of their leaf's final sampler, every other point outside."""
    problem, _ = benchmark(BenchmarkCase.I)
    tree, points = hms_run(problem, HmsConfig(budget=800), 1)
    leaves = {leaf.id: leaf for leaf in tree.children}

    clusters = extract_clusters(tree, points)

    for cluster in clusters:
        sampler = leaves[cluster.provenance[0]].engine.sampler
        inside = {p.index for p in cluster.points}
        assert np.all(sampler.distances(cluster.array) <= 1.0 + 1e-12)
        outside = [p for p in points if p.index not in inside]
        if outside:
            assert np.all(sampler.distances(np.vstack([p.x for p in outside])) > 1.0 + 1e-12)
