"""Regulation vocabulary document (reg-vocab.json)

Terms in rule patterns are written as JSON values:
    "?x"            variable
    "reg:WC"        CURIE, or "<https://...>" for a full IRI
    "\"WCSEAT\""    text literal (quoted inside the JSON string)
    9, 9.5, true    integer, decimal and boolean literals
Compute arguments may also be "$name" parameters.
"""
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, StrictBool, StrictFloat, StrictInt, StrictStr, ValidationError

from app.core.exceptions import ConfigError

JsonTerm = Union[StrictBool, StrictInt, StrictFloat, StrictStr]
JsonPattern = Tuple[JsonTerm, JsonTerm, JsonTerm]


class VocabLayer(BaseModel):
    """One layer of the regulation vocabulary (terms as CURIEs)"""

    name: str
    description: str = ""
    terms: List[str]


class ComputeSpec(BaseModel):
    """Arithmetic binding evaluated after the antecedent matched"""

    model_config = ConfigDict(extra="forbid")

    var: str
    op: Literal["add", "sub", "mul", "div"]
    args: Tuple[JsonTerm, JsonTerm]


class RewriteRuleSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    description: str = ""
    stratum: int = Field(default=0, ge=0)
    antecedent: List[JsonPattern] = Field(min_length=1)
    consequent: List[JsonPattern] = Field(min_length=1)
    compute: List[ComputeSpec] = []


class AggregateRuleSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    description: str = ""
    stratum: int = Field(default=1, ge=0)
    group: List[JsonPattern] = Field(min_length=1)
    by: Optional[str] = None
    select: str
    value: str
    kind: Literal["MAX", "MIN"]
    consequent: List[JsonPattern] = Field(min_length=1)


class VocabDocument(BaseModel):
    """Layered namespaces, forward-chaining rules and the prune list"""

    model_config = ConfigDict(extra="forbid")

    namespaces: Dict[str, str]
    layers: List[VocabLayer] = []
    parameters: Dict[str, float] = {}
    rules: List[RewriteRuleSpec] = []
    aggregates: List[AggregateRuleSpec] = []
    prune: List[JsonPattern] = []

    @classmethod
    def from_json(cls, text: str) -> "VocabDocument":
        try:
            return cls.model_validate_json(text)
        except ValidationError as e:
            raise ConfigError(f"invalid vocabulary document: {e}") from e

    @classmethod
    def load(cls, path: Path) -> "VocabDocument":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read vocabulary {path}: {e}") from e
        return cls.from_json(text)
