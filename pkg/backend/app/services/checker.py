"""
Compliance Checker

Runs the whole chain for one model:

    parse -> lift -> geometry pre-processing -> semantic pre-processing -> rules

and assembles the ComplianceReport. Stages run in order; rules may run on a
thread pool once the graph is final (execution only reads the graph and the
GeomIndex). Every stage reports its warnings as diagnostics, and a failing
rule only fails its own statistics entry.
"""
import hashlib
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import structlog

from app.core.config import settings
from app.core.exceptions import ConfigError, StepParseError
from app.models.pack import EngineDefaults
from app.models.report import (
    CheckConfig,
    ComplianceReport,
    Diagnostic,
    ExplanationEntry,
    Finding,
    ModelInfo,
    PackInfo,
    RuleStat,
)
from app.services.geometry import GeomIndex, get_geometry_preprocessor
from app.services.graph_store import Graph, Iri, Literal
from app.services.model_lift import UnitScale, extract_units, ifc, lift_model, load_lift_config
from app.services.reg_infer import get_semantic_preprocessor
from app.services.rule_compiler import QueryPlan
from app.services.rule_executor import ExecutionResult, RuleExecutor, render_message
from app.services.rule_packs import RulePack
from app.services.step_parser import StepFile, parse_step
from app.utils.namespaces import compact_iri, iri_sort_key

logger = structlog.get_logger()

GLOBAL_ID = ifc("globalId")


class Stage(str, Enum):
    """How far build_knowledge_base carries the pipeline"""

    LIFTED = "lifted"
    GEOM = "geom"
    INFERRED = "inferred"


@dataclass
class KnowledgeBase:
    """Graph and GeomIndex of one model plus the diagnostics produced on the way"""

    step_file: StepFile
    scale: UnitScale
    graph: Graph
    geom: GeomIndex = field(default_factory=GeomIndex)
    diagnostics: List[Diagnostic] = field(default_factory=list)
    stage_sizes: Dict[str, int] = field(default_factory=dict)


def _lift_code(message: str) -> str:
    return "relation-skipped" if "relation skipped" in message else "lift-warning"


class ComplianceChecker:
    """Pipeline orchestration for check and convert"""

    def build_knowledge_base(
        self,
        source: str,
        config: Optional[CheckConfig] = None,
        stage: Stage = Stage.INFERRED,
        defaults: Optional[EngineDefaults] = None,
    ) -> KnowledgeBase:
        """
        Parse and pre-process a model up to ``stage``.

        Args:
            source: IFC STEP text
            config: Lift config path and ground datum override
            stage: lifted, geom (plus geometric triples) or inferred (plus
                forward chaining and pruning)
            defaults: Merged pack defaults; their ground datum applies unless
                config overrides it

        Raises:
            StepParseError: the model text is not valid STEP
            ConfigError: invalid lift configuration
        """
        config = config or CheckConfig()
        step_file = parse_step(source)
        diagnostics = [Diagnostic(stage="parse", code="parse-warning", message=w) for w in step_file.warnings]

        scale = extract_units(step_file)
        diagnostics += [Diagnostic(stage="lift", code="unit-warning", message=w) for w in scale.warnings]
        lift_warnings: List[str] = []
        graph = lift_model(step_file, scale, load_lift_config(config.lift_config_path), lift_warnings)
        diagnostics += [Diagnostic(stage="lift", code=_lift_code(w), message=w) for w in lift_warnings]
        kb = KnowledgeBase(step_file, scale, graph, diagnostics=diagnostics)
        kb.stage_sizes["lifted"] = graph.count()
        if stage is Stage.LIFTED:
            return kb

        kb.geom = get_geometry_preprocessor().build_index(step_file, graph, scale)
        for element, reason in kb.geom.missing.items():
            kb.diagnostics.append(
                Diagnostic(
                    stage="geometry",
                    code="missing-geometry",
                    message=f"{compact_iri(element.value)}: {reason}",
                    iri=element.value,
                )
            )
        kb.stage_sizes["geometry"] = graph.count()
        if stage is Stage.GEOM:
            return kb

        if config.ground_datum_m is not None:
            ground = config.ground_datum_m
        elif defaults is not None:
            ground = defaults.ground_datum_m
        else:
            ground = settings.GROUND_DATUM_M
        stats = get_semantic_preprocessor().run(graph, {"ground_datum": ground})
        kb.stage_sizes["inferred"] = graph.count() + stats.pruned
        kb.stage_sizes["pruned"] = graph.count()
        return kb

    # ----- rules -----

    def _select(self, pack: RulePack, config: CheckConfig) -> List[QueryPlan]:
        if config.topics is None:
            return list(pack.plans)
        unknown = sorted(set(config.topics) - set(pack.topics))
        if unknown:
            raise ConfigError(f"topics {', '.join(unknown)} are not in pack {pack.name} ({', '.join(pack.topics)})")
        selected = set(config.topics)
        return [plan for plan in pack.plans if plan.rule.topic in selected]

    def _execute_one(self, executor: RuleExecutor, plan: QueryPlan) -> Tuple[Optional[ExecutionResult], float, Optional[str]]:
        started = time.perf_counter()
        try:
            result = executor.execute(plan)
            error = None
        except Exception as e:
            logger.error("rule_execution_failed", rule=plan.rule_id, error=str(e))
            result, error = None, f"{type(e).__name__}: {e}"
        return result, (time.perf_counter() - started) * 1000.0, error

    def _guid(self, graph: Graph, iri: Iri) -> Optional[str]:
        value = graph.value(iri, GLOBAL_ID)
        return value.lexical if isinstance(value, Literal) else None

    def run_check(
        self,
        model_path: Union[str, Path],
        pack: RulePack,
        config: Optional[CheckConfig] = None,
    ) -> ComplianceReport:
        """
        Check one IFC model against a rule pack.

        Args:
            model_path: IFC STEP file
            pack: Loaded rule pack
            config: Topic selection, ground datum, lift config, determinism

        Returns:
            ComplianceReport; a model that cannot be parsed yields a report
            with no rules, no findings and a parse-error diagnostic

        Raises:
            ConfigError: unreadable model file or topics outside the pack
        """
        config = config or CheckConfig()
        model_path = Path(model_path)
        try:
            data = model_path.read_bytes()
        except OSError as e:
            raise ConfigError(f"cannot read model {model_path}: {e}") from e

        report = ComplianceReport(
            model=ModelInfo(path=str(model_path), hash=hashlib.sha256(data).hexdigest()),
            pack=PackInfo(name=pack.name, version=pack.version),
        )
        plans = self._select(pack, config)
        logger.info("check_started", model=str(model_path), pack=pack.name, rules=len(plans))

        try:
            kb = self.build_knowledge_base(data.decode("utf-8", errors="replace"), config, defaults=pack.defaults)
        except StepParseError as e:
            report.diagnostics.append(Diagnostic(stage="parse", code="parse-error", message=str(e)))
            logger.error("check_aborted", model=str(model_path), error=str(e))
            return report

        report.diagnostics.extend(kb.diagnostics)
        report.stage_sizes = dict(kb.stage_sizes)
        for warning in (w for plan in plans for w in plan.warnings):
            report.diagnostics.append(Diagnostic(stage="compile", code="unknown-term", message=warning))

        executor = RuleExecutor(kb.graph, kb.geom, pack.defaults)
        if config.workers > 1 and len(plans) > 1:
            with ThreadPoolExecutor(max_workers=config.workers) as pool:
                outcomes = list(pool.map(lambda p: self._execute_one(executor, p), plans))
        else:
            outcomes = [self._execute_one(executor, plan) for plan in plans]

        findings: List[Finding] = []
        for plan, (result, elapsed, error) in zip(plans, outcomes):
            ms = 0 if config.deterministic else round(elapsed, 3)
            stat = RuleStat(id=plan.rule_id, topic=plan.rule.topic, ms=ms)
            if result is None:
                stat.error = error
                report.diagnostics.append(
                    Diagnostic(stage="rules", code="rule-error", message=f"rule {plan.rule_id}: {error}")
                )
                report.rules.append(stat)
                continue
            stat.candidates = result.candidates
            stat.findings = len(result.matches)
            report.rules.append(stat)
            for note in result.diagnostics:
                report.diagnostics.append(
                    Diagnostic(
                        stage="rules",
                        code=note.code,
                        message=note.message,
                        iri=note.iri.value if note.iri else None,
                    )
                )
            for match in result.matches:
                if not isinstance(match.target, Iri):
                    continue
                findings.append(
                    Finding(
                        rule=plan.rule_id,
                        topic=plan.rule.topic,
                        severity=plan.rule.severity,
                        guid=self._guid(kb.graph, match.target),
                        iri=match.target.value,
                        message=render_message(plan.rule.message, match.bindings, f"{plan.rule_id} violated"),
                        explanation=[
                            ExplanationEntry(role=e.role, iri=e.iri.value, guid=self._guid(kb.graph, e.iri))
                            for e in match.explanations
                        ],
                    )
                )

        findings.sort(key=lambda f: (f.rule, iri_sort_key(f.iri)))
        for finding in findings:
            if finding.guid is None:
                report.diagnostics.append(
                    Diagnostic(
                        stage="report",
                        code="bcf-missing-guid",
                        message=f"finding {finding.rule} on {compact_iri(finding.iri)} has no GUID",
                        iri=finding.iri,
                    )
                )
        report.findings = findings
        logger.info(
            "check_complete",
            model=str(model_path),
            rules=len(report.rules),
            findings=len(findings),
            diagnostics=len(report.diagnostics),
        )
        return report


_compliance_checker: Optional[ComplianceChecker] = None


def get_checker_service() -> ComplianceChecker:
    """Get the global compliance checker instance"""
    global _compliance_checker
    if _compliance_checker is None:
        _compliance_checker = ComplianceChecker()
    return _compliance_checker


def run_check(model_path: Union[str, Path], pack: RulePack, config: Optional[CheckConfig] = None) -> ComplianceReport:
    """Check a model (see ComplianceChecker.run_check)"""
    return get_checker_service().run_check(model_path, pack, config)
