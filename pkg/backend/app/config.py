import os
from typing import Optional

from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    # Logging Configuration
    LOG_LEVEL: str = "INFO"
    LOG_FILE: Optional[str] = None
    LOG_BACKUP_COUNT: int = 30

    # Execution
    THREADS: int = 1
    MC_BLOCK_SIZE: int = 256

    # Critical point search
    NEWTON_MAX_ITER: int = 100
    NEWTON_TOL: float = 1e-12
    DEDUP_RADIUS: float = 1e-6
    SEED_POINTS_PER_DIM: int = 11
    DEGENERATE_DET_TOL: float = 1e-10

    # Builtin field taper (outside every numerical box)
    TAPER_RADIUS: float = 10.0
    TAPER_WIDTH: float = 5.0

    # Riccati certificates
    SPLIT_TOL: float = 1e-10
    BASIS_COND_MAX: float = 1e12
    ASYMMETRY_TOL: float = 1e-8
    RESIDUAL_TOL: float = 1e-10

    # Grid policy for the spectral route
    POINTS_PER_WIDTH: int = 12
    MIN_POINTS_PER_DIM: int = 32
    MAX_POINTS_PER_DIM: int = 801
    BOX_MARGIN_WIDTHS: float = 4.0

    # Eigen-solver / propagation
    EIG_TOL: float = 1e-7
    EIG_MAX_ITER: int = 500
    FK_DT: float = 1e-3

    class Config:
        env_prefix = "EPFLOW_"
        env_file = os.path.join(os.path.dirname(__file__), '..', '.env')
        env_file_encoding = 'utf-8'
        case_sensitive = True
        extra = 'ignore'


settings = Settings()
