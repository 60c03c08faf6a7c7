"""
Shared configuration settings for the patch-engine monorepo.
"""

import os
from typing import Any, Dict, Optional

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class BaseConfig(BaseSettings):
    """Base configuration class."""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="PATCHDB_",
        case_sensitive=False,
        extra="ignore",
    )

    # Environment
    environment: str = "development"
    debug: bool = True

    # Service configuration
    service_name: str = "patch-engine"
    service_version: str = "1.0.0"
    data_dir: str = "data"

    # Logging
    log_level: str = "INFO"
    log_file: Optional[str] = None

    # Similarity thresholds (Euclidean, over normalized histograms)
    sim_tau: float = Field(default=0.1, gt=0)
    dedup_tau: float = Field(default=0.1, gt=0)

    # Featurization
    histogram_bins: int = Field(default=8, ge=2, le=256)

    # Storage
    clip_len: int = Field(default=64, ge=1)
    quant_high: int = Field(default=4, ge=1, le=128)
    quant_medium: int = Field(default=16, ge=1, le=128)
    quant_low: int = Field(default=64, ge=1, le=128)

    # Indexes
    leaf_size: int = Field(default=32, ge=1)
    rtree_capacity: int = Field(default=16, ge=2)
    rtree_min_fill: float = Field(default=0.4, gt=0, le=0.5)

    # Synthetic detectors and scenes
    color_tolerance: int = Field(default=24, ge=0, le=255)
    min_area: int = Field(default=100, ge=1)
    depth_margin: float = Field(default=0.05, ge=0)
    noise_amplitude: int = Field(default=4, ge=0, le=8)

    # Query execution
    probe_batch: int = Field(default=1024, ge=1)

    def quant_step(self, quality: str) -> int:
        """Map a quality name (high, medium, low) to its quantization step."""
        steps = {
            "high": self.quant_high,
            "medium": self.quant_medium,
            "low": self.quant_low,
        }
        try:
            return steps[quality.lower()]
        except KeyError:
            raise ValueError(f"Unknown quality level: {quality}") from None

    def engine_defaults(self) -> Dict[str, Any]:
        """Values echoed into reports for provenance."""
        return self.model_dump(
            exclude={"environment", "debug", "service_name", "service_version", "log_file", "data_dir"}
        )


class DevelopmentConfig(BaseConfig):
    """Development configuration."""

    environment: str = "development"
    debug: bool = True
    log_level: str = "DEBUG"


class ProductionConfig(BaseConfig):
    """Production configuration."""

    environment: str = "production"
    debug: bool = False
    log_level: str = "INFO"


def get_config(**overrides: Any) -> BaseConfig:
    """Get configuration based on environment; an ``environment`` override wins over ENVIRONMENT."""
    env = str(overrides.pop("environment", None) or os.getenv("ENVIRONMENT", "development")).lower()

    if env == "production":
        return ProductionConfig(**overrides)
    else:
        return DevelopmentConfig(**overrides)
