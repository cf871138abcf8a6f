from types import SimpleNamespace

from regionmap.schemas import Algorithm, MetricSummary
from regionmap.services import verify_service
from regionmap.services.verify_service import (
    CASE_TWO_BUDGETS,
    CheckResult,
    check_case_two_sweep,
    evaluate_case_three,
    evaluate_case_two_hausdorff,
    evaluate_case_two_sweep,
    run_checks,
)


def _sweep_aggregates(hms_hausdorff, nea2_hausdorff, hms_coverage, nea2_coverage, std=0.05):
    aggregates = {}
    for k, budget in enumerate(CASE_TWO_BUDGETS):
        aggregates[(Algorithm.HMS, budget)] = {
            "hausdorff_kriging": MetricSummary(mean=hms_hausdorff[k], std=std, count=10),
            "covered_ratio": MetricSummary(mean=hms_coverage[k], std=0.02, count=10),
        }
        aggregates[(Algorithm.NEA2, budget)] = {
            "hausdorff_kriging": MetricSummary(mean=nea2_hausdorff[k], std=std, count=10),
            "covered_ratio": MetricSummary(mean=nea2_coverage[k], std=0.02, count=10),
        }
    return aggregates


def _good_sweep(**changes):
    values = dict(
        hms_hausdorff=[1.05, 0.9, 0.75, 0.61, 0.6],
        nea2_hausdorff=[1.31, 1.30, 1.33, 1.32, 1.30],
        hms_coverage=[0.5, 0.6, 0.7, 0.75, 0.8],
        nea2_coverage=[0.5, 0.5, 0.5, 0.5, 0.5],
    )
    values.update(changes)
    return _sweep_aggregates(**values)


def test_case_two_sweep_accepts_the_expected_shape():
    """Falling HMS distances, flat NEA2 distances and growing HMS coverage pass."""
    result = evaluate_case_two_sweep(_good_sweep())
    assert result.passed, result.detail


def test_case_two_sweep_tolerates_noise_within_the_pooled_std():
    """A rise smaller than one pooled standard deviation still counts as non-increasing."""
    result = evaluate_case_two_sweep(_good_sweep(hms_hausdorff=[1.05, 1.09, 0.75, 0.61, 0.6]))
    assert result.passed, result.detail


def test_case_two_sweep_rejects_a_rising_hms_trend():
    """HMS distances growing with the budget fail the check."""
    result = evaluate_case_two_sweep(_good_sweep(hms_hausdorff=[0.6, 0.7, 0.8, 0.9, 0.9]))
    assert not result.passed
    assert "broken" in result.detail


def test_case_two_sweep_rejects_a_drifting_nea2():
    """NEA2 means spread over 0.15 or more fail the check."""
    result = evaluate_case_two_sweep(_good_sweep(nea2_hausdorff=[1.4, 1.3, 1.25, 1.3, 1.2]))
    assert not result.passed


def test_case_two_sweep_requires_coverage_growth_and_lead():
    """HMS coverage must rise by 0.1 and end above NEA2."""
    assert not evaluate_case_two_sweep(_good_sweep(hms_coverage=[0.5, 0.5, 0.5, 0.55, 0.55])).passed
    assert not evaluate_case_two_sweep(_good_sweep(nea2_coverage=[0.5, 0.6, 0.7, 0.8, 0.85])).passed


def test_case_two_sweep_fails_on_missing_cells():
    """A budget without aggregates cannot pass."""
    aggregates = _good_sweep()
    del aggregates[(Algorithm.NEA2, 6000)]
    assert not evaluate_case_two_sweep(aggregates).passed


def test_case_two_hausdorff_reads_the_top_budget():
    """The budget-10000 cell decides the Hausdorff thresholds."""
    assert evaluate_case_two_hausdorff(_good_sweep()).passed
    assert not evaluate_case_two_hausdorff(_good_sweep(hms_hausdorff=[1.05, 0.9, 0.75, 0.61, 0.95])).passed


def test_case_two_sweep_runs_every_budget_for_both_algorithms(monkeypatch):
    """The sweep check covers 2000 to 10000 in steps of 2000 for HMS and NEA2 and reuses the result."""
    calls = []
    aggregates = _good_sweep()

    def fake_sweep(config, budgets, algorithms, out_root, jobs=None):
        calls.append((config.case.value, list(budgets), list(algorithms), config.repeats))
        return [(a, b, SimpleNamespace(aggregate=aggregates[(a, b)])) for a in algorithms for b in budgets]

    monkeypatch.setattr(verify_service, "sweep", fake_sweep)
    verify_service._case_two_aggregates.cache_clear()
    try:
        assert check_case_two_sweep(3).passed
        assert verify_service.check_case_two_hausdorff(3).passed
    finally:
        verify_service._case_two_aggregates.cache_clear()

    assert calls == [("II", [2000, 4000, 6000, 8000, 10000], [Algorithm.HMS, Algorithm.NEA2], 3)]


def _case_three(hms_kriging, nea2_kriging, h1=2.6, hms_cov=0.59, nea2_cov=0.44):
    hms = {
        "minima_coverage": MetricSummary(mean=hms_cov),
        "hausdorff_h1": MetricSummary(mean=h1),
        "hausdorff_kriging": MetricSummary(mean=hms_kriging),
    }
    nea2 = {
        "minima_coverage": MetricSummary(mean=nea2_cov),
        "hausdorff_kriging": MetricSummary(mean=nea2_kriging),
    }
    return hms, nea2


def test_case_three_requires_hms_kriging_below_nea2():
    """Coverage and the H1 gap alone do not pass when HMS Kriging is not closer than NEA2."""
    assert evaluate_case_three(*_case_three(0.72, 1.41)).passed
    assert not evaluate_case_three(*_case_three(1.5, 1.41, h1=2.6)).passed
    assert not evaluate_case_three(*_case_three(0.72, None)).passed


def test_full_suite_lists_the_replication_checks(monkeypatch):
    """Full mode adds the case I, both case II and the case III checks."""
    for name in (
        "check_benchmark_oracles", "check_cma_sphere", "check_cma_flat", "check_nbc_oracle",
        "check_approximation", "check_hausdorff_oracle", "check_determinism", "check_case_one_clusters",
        "check_case_two_hausdorff", "check_case_two_sweep", "check_case_three",
    ):
        monkeypatch.setattr(verify_service, name, lambda *args, _n=name, **kwargs: CheckResult(_n, True))

    quick = [r.name for r in run_checks()]
    full = [r.name for r in run_checks(full=True)]

    assert "check_case_two_sweep" not in quick
    assert full[-4:] == [
        "check_case_one_clusters", "check_case_two_hausdorff", "check_case_two_sweep", "check_case_three",
    ]
