"""Compliance report and check configuration"""
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_serializer

from app.core.config import settings


class CheckConfig(BaseModel):
    """Per-run options; unset values fall back to pack defaults, then settings"""

    model_config = ConfigDict(extra="forbid")

    topics: Optional[List[str]] = None  # None = every pack topic
    ground_datum_m: Optional[float] = None
    lift_config_path: Optional[Path] = None
    deterministic: bool = Field(default_factory=lambda: settings.DETERMINISTIC)
    workers: int = Field(default_factory=lambda: settings.RULE_WORKERS, ge=1)


class ModelInfo(BaseModel):
    path: str
    hash: str


class PackInfo(BaseModel):
    name: str
    version: str


class RuleStat(BaseModel):
    """Execution statistics of one rule; ``error`` only appears for failed rules"""

    id: str
    topic: str
    candidates: int = 0
    findings: int = 0
    ms: float = 0
    error: Optional[str] = None

    @model_serializer(mode="wrap")
    def _drop_empty_error(self, handler) -> Dict[str, Any]:
        data = handler(self)
        if data.get("error") is None:
            data.pop("error", None)
        return data


class ExplanationEntry(BaseModel):
    role: str
    iri: str
    guid: Optional[str] = None


class Finding(BaseModel):
    rule: str
    topic: str
    severity: str
    guid: Optional[str] = None
    iri: str
    message: str
    explanation: List[ExplanationEntry] = []


class Diagnostic(BaseModel):
    stage: str  # parse | lift | geometry | inference | compile | rules | report
    code: str
    message: str
    iri: Optional[str] = None


class ComplianceReport(BaseModel):
    """Outcome of one check run; field order is the report.json key order"""

    model: ModelInfo
    pack: PackInfo
    rules: List[RuleStat] = []
    findings: List[Finding] = []
    diagnostics: List[Diagnostic] = []
    # graph size after lift / geometry / inference / pruning
    stage_sizes: Dict[str, int] = Field(default_factory=dict, exclude=True)

    @property
    def failed(self) -> bool:
        """True when the model could not be processed at all"""
        return any(d.code == "parse-error" for d in self.diagnostics)

    def findings_for(self, rule_id: str) -> List[Finding]:
        return [f for f in self.findings if f.rule == rule_id]
