"""Process-level settings for seqrec."""

from functools import lru_cache
from pathlib import Path

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Settings read from SEQREC_* environment variables and an optional .env file."""

    model_config = SettingsConfigDict(env_prefix="SEQREC_", env_file=".env", extra="ignore")

    log_level: str = Field(default="INFO", description="Root logger level")
    environment: str = Field(default="development", description="Deployment environment name")
    output_root: Path = Field(default=Path("runs"), description="Default parent directory for run outputs")
    progress: bool = Field(default=True, description="Show progress bars when stderr is a terminal")


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()
