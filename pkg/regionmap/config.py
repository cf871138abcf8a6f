"""
Process-level settings for regionmap.

Covers parallelism, logging and output locations. Algorithm parameters are
not settings; they live in the pydantic models of `regionmap.schemas` and
travel with each experiment configuration.
All settings can be overridden via `REGIONMAP_*` environment variables or a
`.env` file.
"""

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="REGIONMAP_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    # ==== Execution ====
    # Default for --jobs: number of repeats run concurrently
    JOBS: int = 1

    # ==== Paths ====
    OUTPUT_ROOT: str = "runs"
    STORE_PATH: str = "runs/run_store.json"

    # Whether the HTTP run store mirrors itself to STORE_PATH
    PERSIST_RUNS: bool = False

    # ==== Logging ====
    LOG_LEVEL: str = "INFO"


def get_settings() -> Settings:
    """Helper to get current settings instance."""
    return Settings()
