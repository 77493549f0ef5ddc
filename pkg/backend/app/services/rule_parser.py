"""
Rule Parser

Parses compliance rules written in the rule language into RuleAst values:

    RULE "fire-structure-01" TOPIC fire_safety
    IF ?b TYPE reg:Building
       ?b PROP reg:fireHeight ?h
       BIND FIRETHRESHOLD(?h) AS ?t
       ?e TYPE reg:StructureElement
       ?e PROP reg:fireLoadBearingDuration ?d
       FILTER ?d < ?t
    THEN NON-COMPLIANT ?e
    MESSAGE "Structure element fire resistance below required duration"

The grammar lives in grammar/rules.lark and is parsed with lark (LALR).
CURIEs are expanded against the namespace table passed by the caller (the
pack's table). Variable binding, builtin names and arities are checked here,
so a RuleAst that leaves this module is safe to compile.
"""
import re
from dataclasses import dataclass, field
from decimal import Decimal
from functools import lru_cache
from pathlib import Path
from typing import Dict, FrozenSet, Iterator, List, Mapping, Optional, Set, Tuple, Union

import structlog
from lark import Lark, Token, Transformer, v_args
from lark.exceptions import UnexpectedCharacters, UnexpectedEOF, UnexpectedInput, UnexpectedToken, VisitError

from app.core.exceptions import RuleSyntaxError
from app.services.graph_store import Iri, Literal, Term, TriplePattern, Var
from app.utils.namespaces import DEFAULT_NAMESPACES, RDF_TYPE, expand_curie

logger = structlog.get_logger()

GRAMMAR_PATH = Path(__file__).with_name("grammar") / "rules.lark"

DEFAULT_SEVERITY = "error"

# name -> (min args, max args)
BUILTINS: Dict[str, Tuple[int, int]] = {
    "FREESPACE": (4, 5),
    "CLEAR": (1, 2),
    "FIRETHRESHOLD": (1, 1),
    "HEIGHT_OF": (1, 1),
}
SYMBOLS = frozenset({"LEFT", "RIGHT"})

_TEMPLATE_VAR = re.compile(r"\{\?([A-Za-z_][A-Za-z0-9_]*)\}")


# ---------------------------------------------------------------------------
# Expressions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VarRef:
    name: str


@dataclass(frozen=True)
class Const:
    value: Term


@dataclass(frozen=True)
class Symbol:
    """Bare keyword argument such as LEFT / RIGHT"""

    name: str


@dataclass(frozen=True)
class Call:
    name: str
    args: Tuple["Expr", ...]
    line: int = field(default=0, compare=False)
    column: int = field(default=0, compare=False)


@dataclass(frozen=True)
class UnaryOp:
    op: str  # "NOT" or "-"
    operand: "Expr"


@dataclass(frozen=True)
class BinaryOp:
    op: str  # OR AND < <= > >= = != + - * /
    left: "Expr"
    right: "Expr"


Expr = Union[VarRef, Const, Symbol, Call, UnaryOp, BinaryOp]


def expr_variables(expr: Expr) -> Set[str]:
    """Variables referenced anywhere inside an expression"""
    if isinstance(expr, VarRef):
        return {expr.name}
    if isinstance(expr, Call):
        found: Set[str] = set()
        for arg in expr.args:
            found |= expr_variables(arg)
        return found
    if isinstance(expr, UnaryOp):
        return expr_variables(expr.operand)
    if isinstance(expr, BinaryOp):
        return expr_variables(expr.left) | expr_variables(expr.right)
    return set()


def expr_calls(expr: Expr) -> Iterator[Call]:
    if isinstance(expr, Call):
        yield expr
        for arg in expr.args:
            yield from expr_calls(arg)
    elif isinstance(expr, UnaryOp):
        yield from expr_calls(expr.operand)
    elif isinstance(expr, BinaryOp):
        yield from expr_calls(expr.left)
        yield from expr_calls(expr.right)


def expr_constants(expr: Expr) -> Iterator[Term]:
    if isinstance(expr, Const):
        yield expr.value
    elif isinstance(expr, Call):
        for arg in expr.args:
            yield from expr_constants(arg)
    elif isinstance(expr, UnaryOp):
        yield from expr_constants(expr.operand)
    elif isinstance(expr, BinaryOp):
        yield from expr_constants(expr.left)
        yield from expr_constants(expr.right)


# ---------------------------------------------------------------------------
# Clauses
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PatternClause:
    """``?v TYPE <iri>`` or ``?v PROP <iri> ?w|<literal>``"""

    pattern: TriplePattern
    line: int = field(default=0, compare=False)
    column: int = field(default=0, compare=False)

    def variables(self) -> Set[str]:
        return self.pattern.variables()


@dataclass(frozen=True)
class FilterClause:
    expr: Expr
    line: int = field(default=0, compare=False)
    column: int = field(default=0, compare=False)

    def variables(self) -> Set[str]:
        return expr_variables(self.expr)


@dataclass(frozen=True)
class NotExistsClause:
    clauses: Tuple["Clause", ...]
    line: int = field(default=0, compare=False)
    column: int = field(default=0, compare=False)

    def variables(self) -> Set[str]:
        found: Set[str] = set()
        for clause in self.clauses:
            found |= clause.variables()
        return found


@dataclass(frozen=True)
class GeoClause:
    op: str  # INTERSECTS | ADJACENT
    left: str
    right: str
    eps: Optional[float] = None
    line: int = field(default=0, compare=False)
    column: int = field(default=0, compare=False)

    def variables(self) -> Set[str]:
        return {self.left, self.right}


@dataclass(frozen=True)
class BindClause:
    call: Call
    var: str
    line: int = field(default=0, compare=False)
    column: int = field(default=0, compare=False)

    def variables(self) -> Set[str]:
        return expr_variables(self.call) | {self.var}

    def inputs(self) -> Set[str]:
        return expr_variables(self.call)


Clause = Union[PatternClause, FilterClause, NotExistsClause, GeoClause, BindClause]


@dataclass(frozen=True)
class RuleAst:
    id: str
    topic: str
    clauses: Tuple[Clause, ...]
    target: str
    severity: str = DEFAULT_SEVERITY
    message: Optional[str] = None
    line: int = field(default=0, compare=False)

    @property
    def patterns(self) -> List[PatternClause]:
        """Top-level positive triple patterns in source order"""
        return [c for c in self.clauses if isinstance(c, PatternClause)]

    def bound_variables(self) -> FrozenSet[str]:
        """Variables produced by top-level patterns and BINDs"""
        bound: Set[str] = set()
        for clause in self.clauses:
            if isinstance(clause, PatternClause):
                bound |= clause.variables()
            elif isinstance(clause, BindClause):
                bound.add(clause.var)
        return frozenset(bound)

    def message_variables(self) -> List[str]:
        return _TEMPLATE_VAR.findall(self.message or "")


# ---------------------------------------------------------------------------
# Transformer
# ---------------------------------------------------------------------------


def _unquote(token: Token) -> str:
    text = str(token)[1:-1]
    return re.sub(r"\\(.)", lambda m: {"n": "\n", "t": "\t"}.get(m.group(1), m.group(1)), text)


def _number(token: Token) -> Literal:
    text = str(token)
    if "." in text:
        return Literal.decimal(Decimal(text))
    return Literal.integer(int(text))


@v_args(meta=True, inline=True)
class ToAst(Transformer):
    """Builds RuleAst values from the parse tree"""

    def __init__(self, namespaces: Mapping[str, str]):
        super().__init__()
        self.namespaces = namespaces

    # -- terms --------------------------------------------------------------

    def iri(self, meta, token):
        try:
            return Iri(expand_curie(str(token), self.namespaces))
        except KeyError as e:
            raise RuleSyntaxError(f"unknown prefix {e.args[0]!r}", token.line, token.column) from None
        except ValueError as e:
            raise RuleSyntaxError(str(e), token.line, token.column) from None

    def var(self, meta, token):
        return VarRef(str(token)[1:])

    def number(self, meta, token):
        return Const(_number(token))

    def string(self, meta, token):
        return Const(Literal.text(_unquote(token)))

    def true(self, meta):
        return Const(Literal.boolean(True))

    def false(self, meta):
        return Const(Literal.boolean(False))

    # -- expressions --------------------------------------------------------

    def symbol(self, meta, token):
        if str(token) not in SYMBOLS:
            raise RuleSyntaxError(f"unknown symbol {token!s}", token.line, token.column)
        return Symbol(str(token))

    def arguments(self, meta, *children):
        return tuple(_as_expr(c) for c in children)

    def call(self, meta, name, args):
        return _check_call(Call(str(name), args or (), name.line, name.column))

    def or_op(self, meta, left, right):
        return BinaryOp("OR", _as_expr(left), _as_expr(right))

    def and_op(self, meta, left, right):
        return BinaryOp("AND", _as_expr(left), _as_expr(right))

    def not_op(self, meta, operand):
        return UnaryOp("NOT", _as_expr(operand))

    def compare(self, meta, left, op, right):
        return BinaryOp(str(op), _as_expr(left), _as_expr(right))

    def add(self, meta, left, right):
        return BinaryOp("+", _as_expr(left), _as_expr(right))

    def sub(self, meta, left, right):
        return BinaryOp("-", _as_expr(left), _as_expr(right))

    def mul(self, meta, left, right):
        return BinaryOp("*", _as_expr(left), _as_expr(right))

    def div(self, meta, left, right):
        return BinaryOp("/", _as_expr(left), _as_expr(right))

    def neg(self, meta, operand):
        return UnaryOp("-", _as_expr(operand))

    # -- clauses ------------------------------------------------------------

    def type_clause(self, meta, var, iri):
        pattern = TriplePattern(Var(str(var)[1:]), Iri(RDF_TYPE), iri)
        return PatternClause(pattern, meta.line, meta.column)

    def prop_clause(self, meta, var, predicate, obj):
        if isinstance(obj, VarRef):
            value = Var(obj.name)
        elif isinstance(obj, Const):
            value = obj.value
        else:
            value = obj
        return PatternClause(TriplePattern(Var(str(var)[1:]), predicate, value), meta.line, meta.column)

    def filter_clause(self, meta, expr):
        return FilterClause(_as_expr(expr), meta.line, meta.column)

    def not_exists_clause(self, meta, *children):
        return NotExistsClause(tuple(children), meta.line, meta.column)

    def geo_op(self, meta, token):
        return str(token)

    def geo_clause(self, meta, op, left, right, eps):
        return GeoClause(
            op, str(left)[1:], str(right)[1:], float(str(eps)) if eps is not None else None, meta.line, meta.column
        )

    def bind_clause(self, meta, name, args, var):
        call = _check_call(Call(str(name), args or (), name.line, name.column))
        return BindClause(call, str(var)[1:], meta.line, meta.column)

    # -- rules --------------------------------------------------------------

    def severity(self, meta, token):
        return str(token)

    def message(self, meta, token):
        return _unquote(token)

    def rule(self, meta, *children):
        rule_id, topic, severity = children[0], children[1], children[2]
        clauses = tuple(children[3:-2])
        target, message = children[-2], children[-1]
        ast = RuleAst(
            id=_unquote(rule_id),
            topic=str(topic),
            clauses=clauses,
            target=str(target)[1:],
            severity=severity or DEFAULT_SEVERITY,
            message=message,
            line=meta.line,
        )
        validate_rule(ast, target_position=(target.line, target.column))
        return ast

    def start(self, meta, *children):
        return list(children)


def _as_expr(value) -> Expr:
    # bare iri() results come back as Iri terms
    if isinstance(value, Iri):
        return Const(value)
    return value


def _check_call(call: Call) -> Call:
    if call.name not in BUILTINS:
        raise RuleSyntaxError(f"unknown builtin {call.name}", call.line, call.column)
    low, high = BUILTINS[call.name]
    if not low <= len(call.args) <= high:
        expected = str(low) if low == high else f"{low}-{high}"
        raise RuleSyntaxError(
            f"{call.name} takes {expected} arguments, got {len(call.args)}", call.line, call.column
        )
    return call


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def _unbound(name: str, clause: Clause) -> RuleSyntaxError:
    return RuleSyntaxError(f"unbound variable ?{name}", clause.line, clause.column)


def _check_scope(clauses: Tuple[Clause, ...], outer: FrozenSet[str]) -> None:
    """Every FILTER / GEO / BIND input must be produced by a positive clause in scope"""
    bound: Set[str] = set(outer)
    bind_targets: Set[str] = set()
    for clause in clauses:
        if isinstance(clause, PatternClause):
            bound |= clause.variables()
    for clause in clauses:
        if isinstance(clause, BindClause):
            if clause.var in bound or clause.var in bind_targets:
                raise RuleSyntaxError(f"variable ?{clause.var} bound twice", clause.line, clause.column)
            bind_targets.add(clause.var)
    bound |= bind_targets

    for clause in clauses:
        if isinstance(clause, BindClause):
            if clause.var in clause.inputs():
                raise _unbound(clause.var, clause)
            needed = clause.inputs()
        elif isinstance(clause, (FilterClause, GeoClause)):
            needed = clause.variables()
        elif isinstance(clause, NotExistsClause):
            _check_scope(clause.clauses, frozenset(bound))
            continue
        else:
            continue
        for name in sorted(needed - bound):
            raise _unbound(name, clause)


def validate_rule(ast: RuleAst, target_position: Tuple[int, int] = (0, 0)) -> None:
    """
    Check variable scoping, the target and the message template.

    Raises:
        RuleSyntaxError: unbound variable, target not produced by a positive
            pattern, or a template variable that is never bound
    """
    _check_scope(ast.clauses, frozenset())
    pattern_vars: Set[str] = set()
    for clause in ast.patterns:
        pattern_vars |= clause.variables()
    if ast.target not in pattern_vars:
        raise RuleSyntaxError(
            f"target ?{ast.target} does not appear in a positive clause", *target_position
        )
    bound = ast.bound_variables()
    for name in ast.message_variables():
        if name not in bound:
            raise RuleSyntaxError(f"message uses unbound variable ?{name}", *target_position)


# ---------------------------------------------------------------------------
# Entry points
# ---------------------------------------------------------------------------


@lru_cache(maxsize=1)
def _parser() -> Lark:
    return Lark(
        GRAMMAR_PATH.read_text(encoding="utf-8"),
        start=["start", "rule"],
        parser="lalr",
        propagate_positions=True,
        maybe_placeholders=True,
    )


def _syntax_error(e: UnexpectedInput) -> RuleSyntaxError:
    line = getattr(e, "line", None)
    column = getattr(e, "column", None)
    at_end = isinstance(e, UnexpectedToken) and e.token.type == "$END"
    if at_end or isinstance(e, UnexpectedEOF) or (line is not None and line < 0):
        return RuleSyntaxError("unexpected end of rule text", line if line and line > 0 else None, column)
    if isinstance(e, UnexpectedToken):
        expected = ", ".join(sorted(e.expected)[:6])
        return RuleSyntaxError(f"unexpected {e.token!s} (expected one of: {expected})", line, column)
    if isinstance(e, UnexpectedCharacters):
        return RuleSyntaxError(f"unexpected character {e.char!r}", line, column)
    return RuleSyntaxError(str(e), line, column)


def _parse(source: str, start: str, namespaces: Optional[Mapping[str, str]]):
    table = dict(namespaces) if namespaces is not None else dict(DEFAULT_NAMESPACES)
    try:
        tree = _parser().parse(source, start=start)
        return ToAst(table).transform(tree)
    except UnexpectedInput as e:
        raise _syntax_error(e) from None
    except VisitError as e:
        if isinstance(e.orig_exc, RuleSyntaxError):
            raise e.orig_exc from None
        raise


def parse_rule(source: str, namespaces: Optional[Mapping[str, str]] = None) -> RuleAst:
    """
    Parse the text of exactly one rule.

    Args:
        source: Rule text
        namespaces: Prefix table for CURIEs (defaults to the built-in prefixes)

    Returns:
        Validated RuleAst

    Raises:
        RuleSyntaxError: grammar violation, unbound variable, unknown builtin
    """
    return _parse(source, "rule", namespaces)


def parse_rules(source: str, namespaces: Optional[Mapping[str, str]] = None) -> List[RuleAst]:
    """Parse a rule file holding one or more rules (``#`` starts a comment)"""
    rules = _parse(source, "start", namespaces)
    logger.debug("rules_parsed", count=len(rules))
    return rules
