"""
Rule Pack Linter

Static checks over a loaded pack. Findings are data, never exceptions:

- unknown-term        IRI not declared in any vocabulary layer
- unused-variable     variable bound once and never used again
                      (names starting with ``_`` and NOT EXISTS bodies are exempt)
- unreachable-clause  FILTER over constants only
- vacuous-rule        no geometric or property constraint at all
"""
from collections import Counter
from dataclasses import dataclass
from typing import List, Optional

import structlog

from app.services.graph_store import Iri, Var
from app.services.reg_infer import Vocabulary, load_vocabulary
from app.services.rule_compiler import unknown_terms
from app.services.rule_packs import RulePack
from app.services.rule_parser import (
    BindClause,
    FilterClause,
    GeoClause,
    NotExistsClause,
    PatternClause,
    RuleAst,
    expr_calls,
    expr_variables,
)
from app.utils.namespaces import RDF_TYPE, compact_iri

logger = structlog.get_logger()

GEOMETRIC_BUILTINS = frozenset({"FREESPACE", "CLEAR"})


@dataclass(frozen=True)
class LintDiagnostic:
    rule_id: str
    code: str
    message: str
    line: int = 0

    def __str__(self) -> str:
        return f"{self.rule_id}:{self.line}: {self.code}: {self.message}"


def _variable_uses(ast: RuleAst) -> Counter:
    uses: Counter = Counter()
    for clause in ast.clauses:
        if isinstance(clause, PatternClause):
            uses.update(t.name for t in clause.pattern.positions if isinstance(t, Var))
        elif isinstance(clause, FilterClause):
            uses.update(expr_variables(clause.expr))
        elif isinstance(clause, BindClause):
            uses.update(expr_variables(clause.call))
            uses[clause.var] += 1
        elif isinstance(clause, GeoClause):
            uses.update([clause.left, clause.right])
        elif isinstance(clause, NotExistsClause):
            uses.update(clause.variables())
    uses[ast.target] += 1
    uses.update(ast.message_variables())
    return uses


def _is_constrained(ast: RuleAst) -> bool:
    for clause in ast.clauses:
        if isinstance(clause, (GeoClause, FilterClause, NotExistsClause)):
            return True
        if isinstance(clause, PatternClause) and clause.pattern.predicate != Iri(RDF_TYPE):
            return True
        if isinstance(clause, BindClause) and any(c.name in GEOMETRIC_BUILTINS for c in expr_calls(clause.call)):
            return True
    return False


def lint_rule(ast: RuleAst, vocabulary: Vocabulary) -> List[LintDiagnostic]:
    diagnostics: List[LintDiagnostic] = []

    for iri in unknown_terms(ast, vocabulary):
        diagnostics.append(
            LintDiagnostic(ast.id, "unknown-term", f"{compact_iri(iri.value)} is not a declared vocabulary term", ast.line)
        )

    uses = _variable_uses(ast)
    for clause in ast.clauses:
        if isinstance(clause, PatternClause):
            produced = sorted(clause.variables())
        elif isinstance(clause, BindClause):
            produced = [clause.var]
        else:
            continue
        for name in produced:
            if name.startswith("_") or uses[name] > 1:
                continue
            diagnostics.append(
                LintDiagnostic(ast.id, "unused-variable", f"?{name} is bound but never used", clause.line)
            )

    for clause in ast.clauses:
        if isinstance(clause, FilterClause) and not expr_variables(clause.expr):
            diagnostics.append(
                LintDiagnostic(ast.id, "unreachable-clause", "FILTER over constants only", clause.line)
            )

    if not _is_constrained(ast):
        diagnostics.append(
            LintDiagnostic(ast.id, "vacuous-rule", "rule has no geometric or property constraint", ast.line)
        )
    return diagnostics


def lint_pack(pack: RulePack, vocabulary: Optional[Vocabulary] = None) -> List[LintDiagnostic]:
    """
    Lint every rule of a pack.

    Args:
        pack: Loaded pack
        vocabulary: Declared vocabulary (defaults to the shipped one)

    Returns:
        Diagnostics in pack order
    """
    vocabulary = vocabulary or load_vocabulary()
    diagnostics: List[LintDiagnostic] = []
    for ast in pack.rules:
        diagnostics.extend(lint_rule(ast, vocabulary))
    logger.info("pack_linted", pack=pack.name, diagnostics=len(diagnostics))
    return diagnostics
