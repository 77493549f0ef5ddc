"""Rule pack manifest (manifest.json) and the numeric defaults rules run with"""
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from app.core.config import settings
from app.core.exceptions import ConfigError

ThresholdRow = Tuple[Optional[float], int]


class PackDefaults(BaseModel):
    """Values a pack may set; anything left out falls back to the engine settings"""

    model_config = ConfigDict(extra="forbid")

    ground_datum_m: Optional[float] = None
    freespace_height_m: Optional[float] = Field(default=None, gt=0)
    adjacency_eps_m: Optional[float] = Field(default=None, gt=0)
    fire_threshold_table: Optional[List[ThresholdRow]] = None
    exempt_floor_beneath: Optional[bool] = None


class EngineDefaults(BaseModel):
    """
    Effective defaults after merging pack values over the engine settings.

    The fire threshold table only ever comes from a pack; None means the pack
    defines none and FIRETHRESHOLD cannot be evaluated.
    """

    model_config = ConfigDict(frozen=True)

    ground_datum_m: float = 0.0
    freespace_height_m: float = 2.0
    adjacency_eps_m: float = 0.001
    fire_threshold_table: Optional[Tuple[ThresholdRow, ...]] = None
    exempt_floor_beneath: bool = True

    @classmethod
    def from_settings(cls) -> "EngineDefaults":
        return cls(
            ground_datum_m=settings.GROUND_DATUM_M,
            freespace_height_m=settings.FREESPACE_HEIGHT_M,
            adjacency_eps_m=settings.ADJACENCY_EPS_M,
            exempt_floor_beneath=settings.EXEMPT_FLOOR_BENEATH,
        )

    def merged(self, overrides: PackDefaults) -> "EngineDefaults":
        values = self.model_dump()
        values.update(overrides.model_dump(exclude_none=True))
        if values["fire_threshold_table"] is not None:
            values["fire_threshold_table"] = tuple(tuple(row) for row in values["fire_threshold_table"])
        return EngineDefaults(**values)


class PackManifest(BaseModel):
    """Pack metadata shown to end users plus the pack defaults"""

    name: str = Field(min_length=1)
    version: str = Field(min_length=1)
    description: str = ""
    topics: List[str] = Field(min_length=1)
    authors: List[str] = []
    defaults: PackDefaults = PackDefaults()
    namespaces: Dict[str, str] = {}

    @classmethod
    def from_json(cls, text: str) -> "PackManifest":
        try:
            return cls.model_validate_json(text)
        except ValidationError as e:
            raise ConfigError(f"invalid manifest.json: {e}") from e
