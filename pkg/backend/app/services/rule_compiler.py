"""
Rule Compiler

Turns a validated RuleAst into a QueryPlan: an ordered list of operators the
executor runs over the graph and the GeomIndex.

Planning:
- positive patterns are ordered most-selective-first (more constant
  positions first, ties by source order); the first one is a Scan, every
  later one a HashJoin on the variables it shares with what is already bound
- FILTER, GEO and BIND operators are placed right after the first operator
  that makes all of their inputs available
- NOT EXISTS bodies are compiled recursively into AntiJoin sub-plans keyed on
  the outer variables they mention
- a final Project keeps the target plus the variables the message template
  and the explanations need
"""
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Set, Tuple, Union

import structlog

from app.core.exceptions import RuleCompileError
from app.services.graph_store import Iri, TriplePattern, Var
from app.services.reg_infer import Vocabulary
from app.services.rule_parser import (
    BindClause,
    Call,
    Clause,
    FilterClause,
    GeoClause,
    NotExistsClause,
    PatternClause,
    RuleAst,
    expr_calls,
    expr_constants,
)
from app.utils.namespaces import compact_iri

logger = structlog.get_logger()


@dataclass(frozen=True)
class Scan:
    pattern: TriplePattern


@dataclass(frozen=True)
class HashJoin:
    pattern: TriplePattern
    keys: Tuple[str, ...]


@dataclass(frozen=True)
class Filter:
    clause: FilterClause


@dataclass(frozen=True)
class GeoPredicate:
    clause: GeoClause


@dataclass(frozen=True)
class Bind:
    clause: BindClause


@dataclass(frozen=True)
class AntiJoin:
    keys: Tuple[str, ...]
    operators: Tuple["Operator", ...]


@dataclass(frozen=True)
class Project:
    target: str
    keep: Tuple[str, ...]


Operator = Union[Scan, HashJoin, Filter, GeoPredicate, Bind, AntiJoin, Project]


@dataclass(frozen=True)
class QueryPlan:
    """Compiled, immutable form of one rule"""

    rule: RuleAst
    operators: Tuple[Operator, ...]
    warnings: Tuple[str, ...] = field(default=(), compare=False)

    @property
    def rule_id(self) -> str:
        return self.rule.id

    def explain(self) -> List[str]:
        """One line per operator, indented for sub-plans"""
        return _describe(self.operators, 0)


def _describe(operators: Sequence[Operator], depth: int) -> List[str]:
    pad = "  " * depth
    lines: List[str] = []
    for op in operators:
        if isinstance(op, Scan):
            lines.append(f"{pad}scan {_pattern_text(op.pattern)}")
        elif isinstance(op, HashJoin):
            keys = ", ".join(f"?{k}" for k in op.keys) or "-"
            lines.append(f"{pad}hash-join [{keys}] {_pattern_text(op.pattern)}")
        elif isinstance(op, Filter):
            lines.append(f"{pad}filter line {op.clause.line}")
        elif isinstance(op, GeoPredicate):
            lines.append(f"{pad}geo {op.clause.op} ?{op.clause.left} ?{op.clause.right}")
        elif isinstance(op, Bind):
            lines.append(f"{pad}bind {op.clause.call.name} -> ?{op.clause.var}")
        elif isinstance(op, AntiJoin):
            keys = ", ".join(f"?{k}" for k in op.keys) or "-"
            lines.append(f"{pad}anti-join [{keys}]")
            lines.extend(_describe(op.operators, depth + 1))
        elif isinstance(op, Project):
            keep = " ".join(f"?{k}" for k in op.keep)
            lines.append(f"{pad}project ?{op.target} {keep}".rstrip())
    return lines


def _pattern_text(pattern: TriplePattern) -> str:
    def text(term) -> str:
        if isinstance(term, Var):
            return str(term)
        if isinstance(term, Iri):
            return compact_iri(term.value)
        return repr(term)

    return " ".join(text(t) for t in pattern.positions)


# ---------------------------------------------------------------------------
# Planning
# ---------------------------------------------------------------------------


def _needs(clause: Clause, outer_vars: Set[str]) -> Set[str]:
    if isinstance(clause, BindClause):
        return clause.inputs()
    if isinstance(clause, NotExistsClause):
        return clause.variables() & outer_vars
    return clause.variables()


def _operator(clause: Clause, outer_vars: Set[str]) -> Operator:
    if isinstance(clause, FilterClause):
        return Filter(clause)
    if isinstance(clause, GeoClause):
        return GeoPredicate(clause)
    if isinstance(clause, BindClause):
        return Bind(clause)
    if isinstance(clause, NotExistsClause):
        keys = tuple(sorted(clause.variables() & outer_vars))
        return AntiJoin(keys, plan_clauses(clause.clauses, frozenset(keys)))
    raise RuleCompileError(f"cannot place clause {clause!r}")


def plan_clauses(clauses: Sequence[Clause], seed: frozenset = frozenset()) -> Tuple[Operator, ...]:
    """
    Order a clause list into operators.

    Args:
        clauses: Clauses of one scope (rule body or NOT EXISTS body)
        seed: Variables already bound when the scope starts

    Raises:
        RuleCompileError: a clause whose inputs never become available
    """
    indexed = list(enumerate(clauses))
    patterns = sorted(
        ((i, c) for i, c in indexed if isinstance(c, PatternClause)),
        key=lambda item: (-item[1].pattern.constant_count(), item[0]),
    )
    scope_vars: Set[str] = set(seed)
    for _, clause in indexed:
        if isinstance(clause, PatternClause):
            scope_vars |= clause.variables()
        elif isinstance(clause, BindClause):
            scope_vars.add(clause.var)
    pending = [(i, c) for i, c in indexed if not isinstance(c, PatternClause)]

    bound: Set[str] = set(seed)
    operators: List[Operator] = []
    first = True

    def place_ready() -> None:
        progress = True
        while progress:
            progress = False
            for item in list(pending):
                _, clause = item
                if _needs(clause, scope_vars) <= bound:
                    operators.append(_operator(clause, scope_vars))
                    if isinstance(clause, BindClause):
                        bound.add(clause.var)
                    pending.remove(item)
                    progress = True

    place_ready()
    for _, clause in patterns:
        pattern = clause.pattern
        if first:
            operators.append(Scan(pattern))
            first = False
        else:
            operators.append(HashJoin(pattern, tuple(sorted(pattern.variables() & bound))))
        bound |= pattern.variables()
        place_ready()

    if pending:
        clause = pending[0][1]
        missing = sorted(_needs(clause, scope_vars) - bound)
        raise RuleCompileError(
            f"line {clause.line}: inputs {', '.join('?' + m for m in missing)} are never bound"
        )
    return tuple(operators)


def _explanation_vars(ast: RuleAst) -> Set[str]:
    keep: Set[str] = set(ast.message_variables())
    for clause in ast.clauses:
        if isinstance(clause, GeoClause):
            keep |= clause.variables()
    return keep


def _iter_iris(clauses: Sequence[Clause]):
    for clause in clauses:
        if isinstance(clause, PatternClause):
            for term in clause.pattern.positions:
                if isinstance(term, Iri):
                    yield term
        elif isinstance(clause, FilterClause):
            yield from (t for t in expr_constants(clause.expr) if isinstance(t, Iri))
        elif isinstance(clause, BindClause):
            yield from (t for t in expr_constants(clause.call) if isinstance(t, Iri))
        elif isinstance(clause, NotExistsClause):
            yield from _iter_iris(clause.clauses)


def rule_iris(ast: RuleAst) -> List[Iri]:
    """Distinct IRI constants of a rule in first-use order"""
    seen: List[Iri] = []
    for iri in _iter_iris(ast.clauses):
        if iri not in seen:
            seen.append(iri)
    return seen


def unknown_terms(ast: RuleAst, vocabulary: Optional[Vocabulary]) -> List[Iri]:
    """IRIs the rule uses that no vocabulary layer declares"""
    if vocabulary is None:
        return []
    return [iri for iri in rule_iris(ast) if not vocabulary.is_known(iri.value)]


def compile_rule(ast: RuleAst, vocabulary: Optional[Vocabulary] = None) -> QueryPlan:
    """
    Compile a rule into a QueryPlan.

    Args:
        ast: Validated rule
        vocabulary: Declared vocabulary layers; unknown terms become warnings

    Returns:
        QueryPlan ending with a Project operator

    Raises:
        RuleCompileError: clauses that can never be scheduled
    """
    operators = list(plan_clauses(ast.clauses))
    keep = tuple(sorted(_explanation_vars(ast) - {ast.target}))
    operators.append(Project(ast.target, keep))

    warnings = tuple(
        f"rule {ast.id}: term {compact_iri(iri.value)} is not declared in any vocabulary layer"
        for iri in unknown_terms(ast, vocabulary)
    )
    for warning in warnings:
        logger.warning("rule_compile_warning", rule=ast.id, warning=warning)
    return QueryPlan(ast, tuple(operators), warnings)


def builtin_calls(ast: RuleAst) -> List[Call]:
    """Every builtin call in a rule (BIND and FILTER positions)"""
    calls: List[Call] = []
    for clause in ast.clauses:
        if isinstance(clause, BindClause):
            calls.extend(expr_calls(clause.call))
        elif isinstance(clause, FilterClause):
            calls.extend(expr_calls(clause.expr))
    return calls
