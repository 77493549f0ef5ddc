"""Lift configuration document (lift.json)"""
from pathlib import Path
from typing import List, Set

from pydantic import BaseModel, ConfigDict, ValidationError, field_validator

from app.core.exceptions import ConfigError
from app.utils.namespaces import expand_curie, is_valid_iri


class PropertyMapping(BaseModel):
    """One property-set property routed to a target predicate"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    pset: str  # property set name, "*" matches any set
    prop: str
    predicate: str

    @field_validator("predicate")
    @classmethod
    def predicate_is_iri(cls, value: str) -> str:
        try:
            iri = expand_curie(value)
        except (KeyError, ValueError) as e:
            raise ValueError(f"predicate {value!r} is not a valid IRI or known CURIE") from e
        if not is_valid_iri(iri):
            raise ValueError(f"predicate {value!r} is not a valid IRI")
        return iri

    def matches(self, pset_name: str, prop_name: str) -> bool:
        return (self.pset == "*" or self.pset == pset_name) and self.prop == prop_name


class LiftConfig(BaseModel):
    """Which STEP entities and relations become triples, and how properties map"""

    model_config = ConfigDict(extra="forbid")

    keep_entities: Set[str]
    keep_relations: Set[str]
    property_map: List[PropertyMapping] = []

    @field_validator("keep_entities", "keep_relations")
    @classmethod
    def uppercase_names(cls, names: Set[str]) -> Set[str]:
        return {n.strip().upper() for n in names if n.strip()}

    @classmethod
    def from_json(cls, text: str) -> "LiftConfig":
        try:
            return cls.model_validate_json(text)
        except ValidationError as e:
            raise ConfigError(f"invalid lift configuration: {e}") from e

    @classmethod
    def load(cls, path: Path) -> "LiftConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read lift configuration {path}: {e}") from e
        return cls.from_json(text)
