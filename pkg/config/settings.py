"""
Configuration settings for the mcsim simulator.
"""
from pathlib import Path
from typing import List, Literal, Optional
from pydantic_settings import BaseSettings
from dotenv import load_dotenv

load_dotenv()

PROJECT_ROOT = Path(__file__).resolve().parent.parent


class Settings(BaseSettings):
    """
    Simulator settings, loaded from MCSIM_* environment variables or a .env file.
    """
    APP_NAME: str = "mcsim"

    # Fixture tasksets and scenarios shipped with the repo
    fixtures_dir: Path = PROJECT_ROOT / "fixtures"

    # Simulation defaults (horizon is in model time units, scaled by the taskset)
    default_horizon_units: int = 4000
    record_trace: bool = True

    # Stochastic overrun model
    overrun_probability: float = 0.1

    # Case study harness
    casestudy_p_values: List[float] = [0.005, 0.01]
    casestudy_seeds: int = 20
    casestudy_horizon_units: int = 20000
    max_workers: Optional[int] = None

    # Mode controller
    demand_anchoring: Literal["release", "window"] = "release"
    shrink_policy: Literal["per_window", "one_go"] = "per_window"

    # Web service
    webapp_host: str = "localhost"
    webapp_port: int = 8000
    # Longest horizon one request may simulate, in model time units
    max_horizon_units: int = 200000

    # Development
    debug: bool = False
    log_level: str = "INFO"

    class Config:
        """
        Configuration for loading settings from environment variables or a .env file.
        """
        env_prefix = "MCSIM_"
        env_file = ".env"
        env_file_encoding = "utf-8"


# Global settings instance
settings = Settings()
