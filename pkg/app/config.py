from __future__ import annotations

from pathlib import Path

from dotenv import load_dotenv
from pydantic_settings import BaseSettings

load_dotenv()


class Settings(BaseSettings):
    """Runtime defaults for the chiral imaging solver."""

    output_dir: Path = Path("runs")
    frequency_hz: float = 2.45e9
    solver_tolerance: float = 1e-6
    direct_threshold: int = 300_000
    max_iterations: int = 20_000
    memory_cap_bytes: int = 8 * 1024**3
    absorber_cells: int = 10
    absorber_order: int = 3
    absorber_reflection: float = 1e-4
    cells_per_wavelength: int = 15
    warn_cells_per_wavelength: float = 10.0
    min_cells_per_wavelength: float = 5.0
    tube_rays: int = 5
    db_floor: float = -80.0
    scan_jobs: int = 1
    scan_abort_fraction: float = 0.25
    render_scale: int = 8

    class Config:
        env_file = ".env"
        env_prefix = "CHIRAL_"
        extra = "ignore"


settings = Settings()
