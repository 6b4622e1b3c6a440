"""
Application Settings

This module handles configuration settings for the workbench,
loading values from environment variables with sensible defaults.
"""

import logging
from typing import Optional

from pydantic import BaseModel, Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class LogSettings(BaseModel):
    """Log configuration settings."""
    LEVEL: str = Field("INFO", description="Logging level")
    FORMAT: str = Field("text", description="Log format (json or text)")
    CONSOLE: bool = Field(False, description="Mirror logfire events to the console")
    LOGFIRE_TOKEN: Optional[str] = Field(None, description="Logfire write token if used")


class RuntimeSettings(BaseModel):
    """Execution defaults shared by every CLI command."""
    JOBS: int = Field(1, ge=1, description="Worker processes for simulation and fold training")
    SEED: int = Field(42, description="Default seed when no experiment config is given")
    OUTPUT_DIR: str = Field("results", description="Directory for CSV and SVG artifacts")


class SimulationSettings(BaseModel):
    """Time grid of the transient simulator."""
    DT_OUTPUT: float = Field(1e-3, gt=0, description="Output sample period in seconds (1 kHz)")
    MAX_DT_INTERNAL: float = Field(10e-6, gt=0, description="Upper bound on the integration step")
    DURATION: float = Field(0.1, gt=0, description="Simulation window in seconds")
    INCEPTION_TIME: float = Field(0.02, gt=0, description="Event time inside the window")


class Settings(BaseSettings):
    """Application settings loaded from environment variables."""

    # App and environment configuration
    APP_NAME: str = Field("hvdc-fault-locator", description="Application name")
    DEBUG: bool = Field(False, description="Debug logging for every command, same as --verbose")
    ENVIRONMENT: str = Field("development", description="deployment environment")

    LOG: LogSettings = Field(default_factory=LogSettings)
    RUNTIME: RuntimeSettings = Field(default_factory=RuntimeSettings)
    SIMULATION: SimulationSettings = Field(default_factory=SimulationSettings)

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        env_nested_delimiter="__",
        extra="ignore"
    )


# Create a global settings instance
settings = Settings()

log_level = getattr(logging, settings.LOG.LEVEL.upper(), logging.INFO)
logging.basicConfig(level=log_level)
logging.debug("Application settings loaded, environment=%s", settings.ENVIRONMENT)
