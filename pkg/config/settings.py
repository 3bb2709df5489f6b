"""
Runtime settings read from the environment (prefix UWBEM_) or a local .env file.
These knobs change how a run executes, never what it computes.
"""

from typing import Literal

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class RuntimeSettings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="UWBEM_", env_file=".env", extra="ignore")

    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"
    workers: int = Field(1, ge=1, description="Frame-level worker threads")
    output_dir: str = "results"
    mmse_draws: int = Field(10_000, ge=1, description="Channel draws for the MMSE covariance")


def get_settings() -> RuntimeSettings:
    return RuntimeSettings()
