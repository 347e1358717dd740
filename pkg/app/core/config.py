"""Configuration management for the HrSegNet engine."""

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Engine settings loaded from environment variables (prefix ``HRSEG_``)."""

    model_config = SettingsConfigDict(
        env_prefix="HRSEG_",
        env_file=".env",
        case_sensitive=False,
        extra="ignore",
    )

    # Logging
    log_level: str = Field(default="INFO")

    # Execution
    deterministic: bool = Field(default=False)
    debug_checks: bool = Field(default=False)
    data_workers: int = Field(default=2, ge=0)

    # Model planning
    reference_input_size: int = Field(default=400, ge=4)

    # Checkpoints
    checkpoint_version: int = Field(default=1, ge=1)


# Global settings instance
settings = Settings()
