from fastapi import FastAPI

from regionmap import __version__
from regionmap.config import get_settings
from regionmap.routers import benchmarks_router, runs_router
from regionmap.services.storage_service import load_from_disk

app = FastAPI(
    title="Insensitivity Region Discovery Service",
    version=__version__,
    description="Runs region-discovery pipelines on the benchmark objectives and serves their records.",
)

# include routers
app.include_router(benchmarks_router.router, prefix="/benchmarks", tags=["benchmarks"])
app.include_router(runs_router.router, prefix="/runs", tags=["runs"])

# restore stored runs when the store is mirrored to disk
if get_settings().PERSIST_RUNS:
    load_from_disk()


@app.get("/", tags=["root"])
async def root():
    """
    Quick health-check endpoint to confirm the service is running.
    """
    return {"message": "Region discovery service is live."}
