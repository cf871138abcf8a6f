import logging
from typing import List
from uuid import uuid4

from fastapi import APIRouter, HTTPException, status

from regionmap.config import get_settings
from regionmap.exceptions import ConfigurationError, InvalidArgumentError
from regionmap.schemas import RunRecord, RunRequest, RunResponse
from regionmap.services.experiment_service import run_pipeline
from regionmap.services.storage_service import delete_run, get_run, list_runs, save_run

logger = logging.getLogger(__name__)

# Router dedicated to single pipeline runs
router = APIRouter()


@router.post("/", response_model=RunResponse, status_code=status.HTTP_201_CREATED)
def create_run(req: RunRequest):
    """
    Executes one pipeline run for the posted configuration, stores the
    record under a fresh run id and returns both.

    The seed defaults to the configuration's base seed.
    """
    # Identifier used by subsequent GET requests
    run_id = str(uuid4())
    seed = req.seed if req.seed is not None else req.config.seed

    try:
        result = run_pipeline(req.config, seed)
    except (InvalidArgumentError, ConfigurationError) as e:
        raise HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(e))
    except Exception as e:
        logger.exception("run %s failed", run_id)
        raise HTTPException(
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
            detail=f"run failed: {e}",
        )

    record = result.record.model_dump(mode="json")
    save_run(run_id, record, persist=get_settings().PERSIST_RUNS)
    return {"run_id": run_id, "record": record}


@router.get("/", response_model=List[str])
async def read_run_ids():
    """Lists the ids of every stored run."""
    return list_runs()


@router.get("/{run_id}", response_model=RunRecord)
async def read_run(run_id: str):
    """Returns a stored run record, 404 if the id is unknown."""
    record = get_run(run_id)
    if not record:
        raise HTTPException(
            status_code=status.HTTP_404_NOT_FOUND,
            detail="run not found",
        )
    return record


@router.delete("/{run_id}", status_code=status.HTTP_204_NO_CONTENT)
def remove_run(run_id: str):
    """Deletes a stored run record, 404 if the id is unknown."""
    if not delete_run(run_id, persist=get_settings().PERSIST_RUNS):
        raise HTTPException(
            status_code=status.HTTP_404_NOT_FOUND,
            detail="run not found",
        )
