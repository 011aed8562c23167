"""Core Configuration Module
Centralized settings for graph sizes, solver tolerances and output locations"""

from pathlib import Path
from typing import Literal

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Lab settings, overridable through LAB_* environment variables or a .env file"""

    model_config = SettingsConfigDict(
        env_prefix="LAB_",
        env_file=".env",
        case_sensitive=True,
        extra="ignore",
    )

    # Application Core
    APP_NAME: str = "Laakso Lab"
    APP_VERSION: str = "0.3.0"
    ENVIRONMENT: str = Field(default="development")
    LOG_LEVEL: str = Field(default="INFO")
    LOG_FORMAT: Literal["console", "json"] = Field(default="console")

    # Artifacts
    OUTPUT_ROOT: str = Field(default="runs", description="Root directory for run artifacts")
    DEFAULT_SEED: int = 20240607

    # Graph guardrails
    MAX_VERTICES: int = Field(default=5_000_000, description="Refuse graphs with more vertices")
    FORMULA_ENUMERATION_CAP: int = Field(default=12, description="Max |Δ| enumerated by dist_formula")
    ETA_DENOMINATOR_BITS: int = Field(default=20, description="Dyadic precision for generated η values")

    # Solvers
    SOLVER_TOLERANCE: float = 1e-10
    SOLVER_MAX_ITERATIONS: int = 10_000
    IRLS_EPSILON: float = 1e-12
    COLLINEARITY_TOLERANCE: float = 1e-12
    FLOAT_SLACK: float = 1e-9

    # Experiment defaults
    CAPACITY_LAMBDA: float = 2.0
    SCHEDULE_TAIL_RATIO: float = 0.5
    VERIFY_DEPTH: int = 3

    @field_validator("LOG_LEVEL")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        v = v.upper()
        if v not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
            raise ValueError(f"Unknown log level: {v}")
        return v

    @field_validator(
        "SOLVER_TOLERANCE",
        "IRLS_EPSILON",
        "COLLINEARITY_TOLERANCE",
        "FLOAT_SLACK",
        "CAPACITY_LAMBDA",
        "SCHEDULE_TAIL_RATIO",
    )
    @classmethod
    def validate_positive_float(cls, v: float) -> float:
        if v <= 0:
            raise ValueError("Tolerances and ratios must be positive")
        return v

    @field_validator("MAX_VERTICES", "FORMULA_ENUMERATION_CAP", "SOLVER_MAX_ITERATIONS", "VERIFY_DEPTH")
    @classmethod
    def validate_positive_int(cls, v: int) -> int:
        if v < 1:
            raise ValueError("Caps and depths must be at least 1")
        return v

    def output_dir(self, name: str) -> Path:
        """Resolve a run directory below OUTPUT_ROOT (absolute names are kept)"""
        path = Path(name)
        if not path.is_absolute():
            path = Path(self.OUTPUT_ROOT) / path
        return path

    def ensure_directories(self) -> None:
        """Ensure the output root exists"""
        Path(self.OUTPUT_ROOT).mkdir(parents=True, exist_ok=True)


settings = Settings()
