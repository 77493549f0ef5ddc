"""Application configuration"""
from pathlib import Path
from typing import Optional

from pydantic_settings import BaseSettings

DATA_DIR = Path(__file__).resolve().parent.parent / "data"


class Settings(BaseSettings):
    """Engine settings loaded from REGCHECK_* environment variables"""

    # Application
    APP_NAME: str = "regcheck"
    LOG_LEVEL: str = "INFO"
    LOG_FORMAT: str = "console"  # "console" or "json"

    # Regulation interpretation defaults (overridden by pack defaults, then by CLI)
    GROUND_DATUM_M: float = 0.0
    FREESPACE_HEIGHT_M: float = 2.0
    ADJACENCY_EPS_M: float = 0.001
    EXEMPT_FLOOR_BENEATH: bool = True
    # no fire threshold table here: only packs define one

    # Shipped documents (None = use the copies under app/data)
    LIFT_CONFIG_PATH: Optional[Path] = None
    VOCAB_PATH: Optional[Path] = None
    DEFAULT_PACK_DIR: Path = DATA_DIR / "packs" / "default"

    # Execution
    RULE_WORKERS: int = 1
    DETERMINISTIC: bool = True

    @property
    def lift_config_path(self) -> Path:
        """Lift configuration actually in use"""
        return self.LIFT_CONFIG_PATH or DATA_DIR / "lift.json"

    @property
    def vocab_path(self) -> Path:
        """Regulation vocabulary actually in use"""
        return self.VOCAB_PATH or DATA_DIR / "reg-vocab.json"

    class Config:
        env_file = ".env"
        env_prefix = "REGCHECK_"
        case_sensitive = True


# Global settings instance
settings = Settings()
