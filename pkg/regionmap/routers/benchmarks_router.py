from fastapi import APIRouter, HTTPException, status

from regionmap.exceptions import InvalidArgumentError
from regionmap.schemas import BenchmarkCase, BenchmarkInfo, EvaluateRequest, EvaluateResponse
from regionmap.services.problem_service import benchmark

# Router exposing the benchmark objectives
router = APIRouter()


def _load(case: str):
    """Resolve a case label or answer 404."""
    try:
        return benchmark(case)
    except InvalidArgumentError:
        raise HTTPException(
            status_code=status.HTTP_404_NOT_FOUND,
            detail=f"unknown benchmark case {case!r}",
        )


@router.get("/{case}", response_model=BenchmarkInfo)
async def describe(case: str):
    """
    Describes a benchmark case: dimension, box bounds, number of
    insensitivity regions and, for the cosine landscape, its minima.
    """
    problem, truth = _load(case)
    return BenchmarkInfo(
        case=BenchmarkCase(case),
        dimension=problem.dimension,
        bounds=problem.bounds.tolist(),
        region_count=truth.region_count,
        minima=truth.minima.tolist() if truth.minima.size else [],
    )


@router.post("/{case}/evaluate", response_model=EvaluateResponse)
async def evaluate(case: str, req: EvaluateRequest):
    """Evaluates the objective of a benchmark case at the posted points."""
    problem, _ = _load(case)
    if not req.points:
        return {"values": []}

    # Dimension mismatches are a client error
    try:
        values = problem.evaluate_many(req.points)
    except InvalidArgumentError as e:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e))
    return {"values": [float(v) for v in values]}
