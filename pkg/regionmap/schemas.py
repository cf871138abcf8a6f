import math
from enum import Enum
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator


# ---- Enumerations ----
class BenchmarkCase(str, Enum):
    I = "I"
    II = "II"
    III = "III"


class Algorithm(str, Enum):
    HMS = "hms"
    NEA2 = "nea2"


class ApproxMethod(str, Enum):
    L2 = "l2"
    H1 = "h1"
    KRIGING = "kriging"


# ---- Engine parameters ----
class SeaParams(BaseModel):
    population_size: int = Field(40, ge=2)
    crossover_probability: float = Field(0.1, ge=0.0, le=1.0)
    mutation_probability: float = Field(0.5, ge=0.0, le=1.0)
    mutation_std: float = Field(2.0, gt=0.0)


class StopSpec(BaseModel):
    """Stop conditions of a CMA-ES run; `None` disables a condition."""

    stagnation_tol: Optional[float] = Field(0.01, ge=0.0)
    stagnation_window: int = Field(3, ge=1)
    sigma_increase: bool = False
    # iterations before the sigma-increase trigger is armed
    sigma_warmup: int = Field(5, ge=0)
    stop_fitness: Optional[float] = None
    max_evaluations: Optional[int] = Field(None, ge=0)
    max_iterations: int = Field(1000, ge=1)
    max_condition: float = Field(1e14, gt=1.0)


# ---- Global phase ----
class HmsConfig(BaseModel):
    """
    Two-level HMS: an SEA root sprouting CMA-ES leaves.

    Leaf stop conditions are checked in the order stop fitness, sigma
    increase, stagnation. The sigma-increase trigger is armed only after
    `leaf_sigma_warmup` iterations while stagnation can fire once
    `leaf_stagnation_window` + 1 iterations are recorded, so with the
    defaults a leaf on a plateau stops on stagnation at iteration 4. Lower
    `leaf_sigma_warmup` below the window to let sigma increase win.
    """

    metaepoch_length: int = Field(3, ge=1)
    root: SeaParams = SeaParams()
    sprout_min_distance: float = Field(1.0, ge=0.0)
    sprout_max_fitness: float = 0.5
    leaf_sigma0: float = Field(0.5, gt=0.0)
    # None -> 4 + floor(3 ln n)
    leaf_population: Optional[int] = Field(None, ge=4)
    leaf_stagnation_tol: float = Field(0.01, ge=0.0)
    leaf_stagnation_window: int = Field(3, ge=1)
    leaf_sigma_increase: bool = True
    leaf_sigma_warmup: int = Field(5, ge=0)
    budget: int = Field(500, gt=0)

    def leaf_stop(self) -> StopSpec:
        return StopSpec(
            stagnation_tol=self.leaf_stagnation_tol,
            stagnation_window=self.leaf_stagnation_window,
            sigma_increase=self.leaf_sigma_increase,
            sigma_warmup=self.leaf_sigma_warmup,
        )


class NbcParams(BaseModel):
    phi: float = Field(2.0, gt=0.0)
    b: float = Field(3.0, gt=0.0)
    # None -> 40 * dimension
    sample_size: Optional[int] = Field(None, ge=1)

    def sample_size_for(self, dimension: int) -> int:
        return self.sample_size if self.sample_size is not None else 40 * dimension


class Nea2Config(BaseModel):
    nbc: NbcParams = NbcParams()
    sigma0: float = Field(0.5, gt=0.0)
    population: Optional[int] = Field(None, ge=4)
    stagnation_tol: float = Field(0.01, ge=0.0)
    stagnation_window: int = Field(3, ge=1)

    def cma_stop(self) -> StopSpec:
        return StopSpec(
            stagnation_tol=self.stagnation_tol,
            stagnation_window=self.stagnation_window,
            sigma_increase=False,
        )


# ---- Local phase and approximation ----
class MweaConfig(BaseModel):
    epochs: int = Field(3, ge=0)
    alpha: float = Field(0.5, ge=0.0, le=1.0)
    min_size: int = Field(10, ge=1)
    max_size: int = Field(100, ge=1)
    # mutation std used when the initial population has no extent
    fallback_std: float = Field(0.5, gt=0.0)

    @model_validator(mode="after")
    def _check_band(self):
        if self.min_size > self.max_size:
            raise ValueError("min_size must not exceed max_size")
        return self


class GridSpec(BaseModel):
    cells_2d: int = Field(8, ge=1)
    cells_4d: int = Field(4, ge=1)
    inflation: float = Field(0.1, ge=0.0)
    region_step_2d: float = Field(0.05, gt=0.0)
    region_step_4d: float = Field(0.1, gt=0.0)
    region_box_radius_4d: float = Field(1.5, gt=0.0)

    def cells_for(self, dimension: int) -> int:
        return self.cells_2d if dimension <= 2 else self.cells_4d

    def region_step_for(self, dimension: int) -> float:
        return self.region_step_2d if dimension <= 2 else self.region_step_4d


# ---- Experiment ----
class ExperimentConfig(BaseModel):
    case: BenchmarkCase = BenchmarkCase.I
    algorithm: Algorithm = Algorithm.HMS
    budget: int = Field(500, gt=0)
    repeats: int = Field(1, ge=1)
    seed: int = Field(0, ge=0)
    methods: List[ApproxMethod] = [ApproxMethod.L2, ApproxMethod.H1, ApproxMethod.KRIGING]
    epsilon: float = Field(0.1, gt=0.0)
    hms: HmsConfig = HmsConfig()
    nea2: Nea2Config = Nea2Config()
    mwea: MweaConfig = MweaConfig()
    hill_valley_points: int = Field(3, ge=1)
    local_budget: Optional[int] = Field(None, ge=0)
    grid: GridSpec = GridSpec()
    ellipsoid_axes: Literal["semiaxes", "full"] = "semiaxes"
    jobs: int = Field(1, ge=1)

    @field_validator("methods")
    @classmethod
    def _dedupe_methods(cls, v: List[ApproxMethod]) -> List[ApproxMethod]:
        out: List[ApproxMethod] = []
        for m in v:
            if m not in out:
                out.append(m)
        return out

    @model_validator(mode="before")
    @classmethod
    def _lift_nested_budget(cls, data: Any) -> Any:
        # a budget given only under "hms" becomes the global budget
        if isinstance(data, dict) and "budget" not in data:
            hms = data.get("hms")
            if isinstance(hms, dict) and hms.get("budget") is not None:
                return {**data, "budget": hms["budget"]}
        return data

    @model_validator(mode="after")
    def _sync_budget(self):
        # the global budget is a single number for both algorithms
        if self.hms.budget != self.budget:
            self.hms = self.hms.model_copy(update={"budget": self.budget})
        return self


# ---- Reports ----
class RegionDistance(BaseModel):
    region: int
    method: ApproxMethod
    cluster: int
    # None when the approximation is empty
    distance: Optional[float] = None


class RunRecord(BaseModel):
    seed: int
    case: BenchmarkCase
    algorithm: Algorithm
    budget: int
    evaluations: int
    local_evaluations: int = 0
    clusters_global: int = 0
    clusters_reduced: int = 0
    clusters_local: int = 0
    covered_ratio: Optional[float] = None
    minima_coverage: Optional[float] = None
    hausdorff: Dict[str, Optional[float]] = {}
    regions_missed: int = 0
    region_distances: List[RegionDistance] = []
    stop_reasons: Dict[str, int] = {}
    downgrades: int = 0
    cluster_errors: List[str] = []
    wall_time: float = 0.0
    trace: List[Dict[str, Any]] = []


class MetricSummary(BaseModel):
    mean: Optional[float] = None
    std: Optional[float] = None
    count: int = 0


class RunFailure(BaseModel):
    seed: int
    error: str


AGGREGATED_FIELDS = (
    "evaluations",
    "local_evaluations",
    "clusters_global",
    "clusters_reduced",
    "clusters_local",
    "covered_ratio",
    "minima_coverage",
    "regions_missed",
)


def aggregate_records(records: List[RunRecord]) -> Dict[str, MetricSummary]:
    """Mean and sample standard deviation of every scalar metric over the runs."""
    columns: Dict[str, List[float]] = {name: [] for name in AGGREGATED_FIELDS}
    for rec in records:
        for name in AGGREGATED_FIELDS:
            value = getattr(rec, name)
            if value is not None:
                columns[name].append(float(value))
        for method, value in rec.hausdorff.items():
            columns.setdefault(f"hausdorff_{method}", [])
            if value is not None and math.isfinite(value):
                columns[f"hausdorff_{method}"].append(float(value))

    out: Dict[str, MetricSummary] = {}
    for name, values in columns.items():
        if not values:
            out[name] = MetricSummary()
            continue
        mean = math.fsum(values) / len(values)
        if len(values) > 1:
            var = math.fsum((v - mean) ** 2 for v in values) / (len(values) - 1)
        else:
            var = 0.0
        out[name] = MetricSummary(mean=mean, std=math.sqrt(var), count=len(values))
    return out


class RunReport(BaseModel):
    config: ExperimentConfig
    runs: List[RunRecord]
    failures: List[RunFailure] = []
    aggregate: Dict[str, MetricSummary] = {}

    @model_validator(mode="after")
    def _check_aggregate(self):
        expected = aggregate_records(self.runs)
        if not self.aggregate:
            self.aggregate = expected
            return self
        for name, summary in expected.items():
            got = self.aggregate.get(name)
            if got is None or got.count != summary.count:
                raise ValueError(f"aggregate for {name} does not match the per-run rows")
            for a, b in ((got.mean, summary.mean), (got.std, summary.std)):
                if (a is None) != (b is None) or (a is not None and not math.isclose(a, b, rel_tol=1e-9, abs_tol=1e-12)):
                    raise ValueError(f"aggregate for {name} does not match the per-run rows")
        return self


# ---- API models ----
class BenchmarkInfo(BaseModel):
    case: BenchmarkCase
    dimension: int
    bounds: List[List[float]]
    region_count: int
    minima: List[List[float]] = []


class EvaluateRequest(BaseModel):
    points: List[List[float]]


class EvaluateResponse(BaseModel):
    values: List[float]


class RunRequest(BaseModel):
    config: ExperimentConfig = ExperimentConfig()
    seed: Optional[int] = None


class RunResponse(BaseModel):
    run_id: str
    record: RunRecord
