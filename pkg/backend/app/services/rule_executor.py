"""
Rule Executor

Runs a QueryPlan over the pre-processed graph and the GeomIndex.

Rows flow through the operators in plan order. Results have set semantics:
one RuleMatch per distinct target value, carrying the union of the
explanations gathered by the geometric builtins on the rows that survived
(for CLEAR: every physical element found inside the tested box).

Expression errors (type mismatch, division by zero, missing fact) make the
expression false. A geometric builtin or GEO predicate that meets an element
without an Obb drops the row and records a missing-geometry diagnostic, so a
missing box is never mistaken for a clear one.
"""
import re
from dataclasses import dataclass, field
from decimal import Decimal, DivisionByZero, InvalidOperation
from typing import Any, Dict, List, Mapping, Optional, Sequence, Set, Tuple, Union

import structlog

from app.core.exceptions import GeometryError, RuleExecutionError, ThresholdError
from app.models.pack import EngineDefaults, ThresholdRow
from app.services.geometry import GeomIndex, Obb, Side, adjacent, intersects, make_freespace
from app.services.graph_store import BNode, Graph, Iri, Literal, LiteralKind, Term, Triple, term_sort_key
from app.services.rule_compiler import AntiJoin, Bind, Filter, GeoPredicate, HashJoin, Operator, Project, QueryPlan, Scan
from app.services.rule_parser import BinaryOp, Call, Const, Expr, Symbol, UnaryOp, VarRef
from app.utils.namespaces import REG, RDF_TYPE, compact_iri, iri_sort_key

logger = structlog.get_logger()

PHYSICAL_ELEMENT = Iri(REG + "PhysicalElement")
FIRE_HEIGHT = Iri(REG + "fireHeight")
_TYPE = Iri(RDF_TYPE)

_TEMPLATE_VAR = re.compile(r"\{\?([A-Za-z_][A-Za-z0-9_]*)\}")


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FreeSpace:
    """Virtual box produced by FREESPACE, anchored on one element side"""

    box: Obb
    side: Side
    anchor: Iri

    @property
    def label(self) -> str:
        return f"FreeSpace ({self.side.value})"


@dataclass(frozen=True)
class Explanation:
    """Element that made a rule fire, with the role it played"""

    role: str
    iri: Iri

    def sort_key(self) -> Tuple[str, Any]:
        return (self.role, iri_sort_key(self.iri.value))


@dataclass(frozen=True)
class ExecutionDiagnostic:
    code: str
    message: str
    iri: Optional[Iri] = None


@dataclass(frozen=True)
class RuleMatch:
    target: Term
    bindings: Mapping[str, Term]
    explanations: Tuple[Explanation, ...] = ()


@dataclass
class ExecutionResult:
    rule_id: str
    candidates: int = 0
    matches: List[RuleMatch] = field(default_factory=list)
    diagnostics: List[ExecutionDiagnostic] = field(default_factory=list)


class MissingGeometry(RuleExecutionError):
    """A builtin needed the Obb of an element that has none"""

    def __init__(self, element: Iri):
        self.element = element
        super().__init__(f"{compact_iri(element.value)} has no geometry")


class _EvalError(Exception):
    pass


@dataclass
class _Row:
    values: Dict[str, Any]
    explanations: Tuple[Explanation, ...] = ()

    def extend(self, values: Mapping[str, Any], explanations: Sequence[Explanation] = ()) -> "_Row":
        merged = dict(self.values)
        merged.update(values)
        return _Row(merged, self.explanations + tuple(explanations))


# ---------------------------------------------------------------------------
# Thresholds
# ---------------------------------------------------------------------------


def validate_threshold_table(table: Sequence[ThresholdRow]) -> None:
    """
    Raises:
        ThresholdError: empty table, bounds not strictly increasing, or a
            last row that is not open-ended
    """
    if not table:
        raise ThresholdError("fire threshold table is empty")
    previous: Optional[float] = None
    for i, (upper, minutes) in enumerate(table):
        last = i == len(table) - 1
        if upper is None and not last:
            raise ThresholdError("only the last fire threshold row may be open-ended")
        if last and upper is not None:
            raise ThresholdError("the last fire threshold row must be open-ended (null bound)")
        if upper is not None and previous is not None and upper <= previous:
            raise ThresholdError(f"fire threshold bounds must increase strictly ({previous} then {upper})")
        if minutes < 0:
            raise ThresholdError(f"fire threshold minutes must be non-negative, got {minutes}")
        if upper is not None:
            previous = upper


def resolve_fire_threshold(height: Union[float, Decimal], table: Sequence[ThresholdRow]) -> int:
    """
    Required fire resistance for a building height.

    Rows are (upper bound in metres, minutes) and cover half-open intervals
    (previous bound, upper bound]; the last row has no bound.

    Raises:
        ThresholdError: negative height or malformed table
    """
    validate_threshold_table(table)
    value = Decimal(str(height))
    if value < 0:
        raise ThresholdError(f"building height must be non-negative, got {height}")
    for upper, minutes in table:
        if upper is None or value <= Decimal(str(upper)):
            return minutes
    raise ThresholdError("fire threshold table has no open-ended row")


# ---------------------------------------------------------------------------
# Values
# ---------------------------------------------------------------------------


def _number(value: Any) -> Decimal:
    if isinstance(value, Literal) and value.is_numeric:
        return value.value  # type: ignore[return-value]
    if isinstance(value, bool):
        raise _EvalError("boolean used as number")
    if isinstance(value, (int, Decimal)):
        return Decimal(value)
    if isinstance(value, float):
        return Decimal(repr(value))
    raise _EvalError(f"not a number: {value!r}")


def _boolean(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, Literal) and value.kind is LiteralKind.BOOLEAN:
        return bool(value.value)
    raise _EvalError(f"not a boolean: {value!r}")


def _is_numeric(value: Any) -> bool:
    if isinstance(value, Literal):
        return value.is_numeric
    return isinstance(value, (int, float, Decimal)) and not isinstance(value, bool)


def _compare(op: str, left: Any, right: Any) -> bool:
    if _is_numeric(left) and _is_numeric(right):
        a, b = _number(left), _number(right)
    elif op in ("=", "!="):
        equal = left == right
        return equal if op == "=" else not equal
    elif (
        isinstance(left, Literal)
        and isinstance(right, Literal)
        and left.kind is LiteralKind.TEXT
        and right.kind is LiteralKind.TEXT
    ):
        a, b = left.lexical, right.lexical  # type: ignore[assignment]
    else:
        raise _EvalError(f"cannot compare {left!r} {op} {right!r}")
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    if op == ">=":
        return a >= b
    if op == "=":
        return a == b
    return a != b


def _arithmetic(op: str, left: Any, right: Any) -> Decimal:
    a, b = _number(left), _number(right)
    try:
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        return a / b
    except (DivisionByZero, InvalidOperation) as e:
        raise _EvalError(str(e)) from e


def render_message(template: Optional[str], bindings: Mapping[str, Term], fallback: str) -> str:
    """Fill ``{?var}`` placeholders with compact IRIs or literal text"""
    if not template:
        return fallback

    def text(match: "re.Match[str]") -> str:
        value = bindings.get(match.group(1))
        if isinstance(value, Iri):
            return compact_iri(value.value)
        if isinstance(value, Literal):
            return value.lexical
        return match.group(0)

    return _TEMPLATE_VAR.sub(text, template)


# ---------------------------------------------------------------------------
# Executor
# ---------------------------------------------------------------------------


class RuleExecutor:
    """Read-only evaluation of compiled rules over one graph + GeomIndex"""

    def __init__(self, graph: Graph, geom: GeomIndex, defaults: Optional[EngineDefaults] = None):
        self.graph = graph
        self.geom = geom
        self.defaults = defaults or EngineDefaults.from_settings()

    # -- geometry helpers ---------------------------------------------------

    def _box(self, value: Any) -> Obb:
        if isinstance(value, FreeSpace):
            return value.box
        if isinstance(value, Obb):
            return value
        if isinstance(value, Iri):
            box = self.geom.get(value)
            if box is None:
                raise MissingGeometry(value)
            return box
        raise _EvalError(f"not a box: {value!r}")

    def _is_physical(self, element: Iri) -> bool:
        return Triple(element, _TYPE, PHYSICAL_ELEMENT) in self.graph

    def _clear(self, region: Any, excluded: Any, sink: List[Explanation]) -> bool:
        box = self._box(region)
        eps = self.defaults.adjacency_eps_m
        if isinstance(region, FreeSpace):
            role = f"intersects {region.label}"
        elif isinstance(region, Iri):
            role = f"intersects {compact_iri(region.value)}"
        else:
            role = "intersects box"
        clear = True
        for candidate in self.geom.candidates(box, margin=eps):
            if candidate == excluded or not self._is_physical(candidate):
                continue
            other = self.geom.boxes[candidate]
            if self.defaults.exempt_floor_beneath and abs(other.z_max - box.z_min) <= eps:
                continue
            if intersects(box, other):
                sink.append(Explanation(role, candidate))
                clear = False
        return clear

    def _freespace(self, args: Sequence[Any]) -> FreeSpace:
        anchor = args[0]
        if not isinstance(anchor, Iri):
            raise _EvalError(f"FREESPACE anchor must be an element, got {anchor!r}")
        if args[1] not in ("LEFT", "RIGHT"):
            raise _EvalError(f"FREESPACE side must be LEFT or RIGHT, got {args[1]!r}")
        width, depth = float(_number(args[2])), float(_number(args[3]))
        height = float(_number(args[4])) if len(args) > 4 else self.defaults.freespace_height_m
        side = Side(args[1])
        try:
            box = make_freespace(self._box(anchor), side, width, depth, height)
        except GeometryError as e:
            raise _EvalError(str(e)) from e
        return FreeSpace(box, side, anchor)

    # -- expressions --------------------------------------------------------

    def _call(self, call: Call, row: _Row, sink: List[Explanation]) -> Any:
        args = [self._eval(arg, row, sink) for arg in call.args]
        if call.name == "FREESPACE":
            return self._freespace(args)
        if call.name == "CLEAR":
            return self._clear(args[0], args[1] if len(args) > 1 else None, sink)
        if call.name == "FIRETHRESHOLD":
            if self.defaults.fire_threshold_table is None:
                raise ThresholdError("pack defines no fire threshold table")
            return Literal.integer(resolve_fire_threshold(_number(args[0]), self.defaults.fire_threshold_table))
        if call.name == "HEIGHT_OF":
            if not isinstance(args[0], (Iri, BNode)):
                raise _EvalError(f"HEIGHT_OF needs a building, got {args[0]!r}")
            height = self.graph.value(args[0], FIRE_HEIGHT)
            if height is None:
                raise _EvalError(f"no fire height for {args[0]!r}")
            return height
        raise RuleExecutionError(f"unknown builtin {call.name}")

    def _eval(self, expr: Expr, row: _Row, sink: List[Explanation]) -> Any:
        if isinstance(expr, VarRef):
            if expr.name not in row.values:
                raise _EvalError(f"?{expr.name} is unbound")
            return row.values[expr.name]
        if isinstance(expr, Const):
            return expr.value
        if isinstance(expr, Symbol):
            return expr.name
        if isinstance(expr, Call):
            return self._call(expr, row, sink)
        if isinstance(expr, UnaryOp):
            operand = self._eval(expr.operand, row, sink)
            if expr.op == "NOT":
                return not _boolean(operand)
            return -_number(operand)
        if isinstance(expr, BinaryOp):
            if expr.op == "OR":
                return _boolean(self._eval(expr.left, row, sink)) or _boolean(self._eval(expr.right, row, sink))
            if expr.op == "AND":
                return _boolean(self._eval(expr.left, row, sink)) and _boolean(self._eval(expr.right, row, sink))
            left = self._eval(expr.left, row, sink)
            right = self._eval(expr.right, row, sink)
            if expr.op in ("+", "-", "*", "/"):
                return _arithmetic(expr.op, left, right)
            return _compare(expr.op, left, right)
        raise RuleExecutionError(f"cannot evaluate {expr!r}")

    # -- operators ----------------------------------------------------------

    def _missing(self, error: MissingGeometry, result: ExecutionResult, seen: Set[Iri]) -> None:
        if error.element in seen:
            return
        seen.add(error.element)
        result.diagnostics.append(
            ExecutionDiagnostic(
                "missing-geometry",
                f"rule {result.rule_id}: candidate skipped, {error}",
                error.element,
            )
        )

    def _run(
        self,
        operators: Sequence[Operator],
        rows: List[_Row],
        result: ExecutionResult,
        target: Optional[str] = None,
        seen_missing: Optional[Set[Iri]] = None,
    ) -> List[_Row]:
        seen_missing = seen_missing if seen_missing is not None else set()
        counted = target is None
        for op in operators:
            if not rows:
                break
            if isinstance(op, Scan):
                rows = [
                    row.extend(found)
                    for row in rows
                    for found in self.graph.match_pattern(op.pattern.substitute(row.values))
                ]
            elif isinstance(op, HashJoin):
                rows = self._hash_join(op, rows)
            elif isinstance(op, Filter):
                kept: List[_Row] = []
                for row in rows:
                    sink: List[Explanation] = []
                    try:
                        passed = _boolean(self._eval(op.clause.expr, row, sink))
                    except MissingGeometry as e:
                        self._missing(e, result, seen_missing)
                        continue
                    except _EvalError:
                        continue
                    if passed:
                        kept.append(row.extend({}, sink))
                rows = kept
            elif isinstance(op, Bind):
                bound: List[_Row] = []
                for row in rows:
                    sink = []
                    try:
                        value = self._call(op.clause.call, row, sink)
                    except MissingGeometry as e:
                        self._missing(e, result, seen_missing)
                        continue
                    except _EvalError:
                        continue
                    bound.append(row.extend({op.clause.var: value}, sink))
                rows = bound
            elif isinstance(op, GeoPredicate):
                rows = self._geo(op, rows, result, seen_missing, target)
            elif isinstance(op, AntiJoin):
                rows = self._anti_join(op, rows, result, seen_missing)
            elif isinstance(op, Project):
                continue
            if not counted and target is not None and isinstance(op, (Scan, HashJoin)) and target in op.pattern.variables():
                result.candidates = len({row.values[target] for row in rows})
                counted = True
        return rows

    def _hash_join(self, op: HashJoin, rows: List[_Row]) -> List[_Row]:
        table: Dict[Tuple[Any, ...], List[Dict[str, Term]]] = {}
        for found in self.graph.match_pattern(op.pattern):
            table.setdefault(tuple(found[k] for k in op.keys), []).append(found)
        joined: List[_Row] = []
        for row in rows:
            for found in table.get(tuple(row.values.get(k) for k in op.keys), ()):
                joined.append(row.extend(found))
        return joined

    def _geo(
        self, op: GeoPredicate, rows: List[_Row], result: ExecutionResult, seen: Set[Iri], target: Optional[str]
    ) -> List[_Row]:
        clause = op.clause
        eps = clause.eps if clause.eps is not None else self.defaults.adjacency_eps_m
        kept: List[_Row] = []
        for row in rows:
            left, right = row.values.get(clause.left), row.values.get(clause.right)
            try:
                a, b = self._box(left), self._box(right)
                if clause.op == "INTERSECTS":
                    holds = intersects(a, b)
                else:
                    holds = adjacent(a, b, eps)
            except MissingGeometry as e:
                self._missing(e, result, seen)
                continue
            except (_EvalError, GeometryError):
                continue
            if not holds:
                continue
            notes = []
            target_value = row.values.get(target) if target else None
            for value, other in ((left, clause.right), (right, clause.left)):
                if isinstance(value, Iri) and value != target_value:
                    notes.append(Explanation(f"{clause.op.lower()} ?{other}", value))
            kept.append(row.extend({}, notes))
        return kept

    def _anti_join(self, op: AntiJoin, rows: List[_Row], result: ExecutionResult, seen: Set[Iri]) -> List[_Row]:
        cache: Dict[Tuple[Any, ...], bool] = {}
        kept: List[_Row] = []
        for row in rows:
            key = tuple(row.values.get(k) for k in op.keys)
            if key not in cache:
                seed = _Row({k: v for k, v in zip(op.keys, key)})
                cache[key] = bool(self._run(op.operators, [seed], result, seen_missing=seen))
            if not cache[key]:
                kept.append(row)
        return kept

    def execute(self, plan: QueryPlan) -> ExecutionResult:
        """
        Evaluate one compiled rule.

        Returns:
            ExecutionResult with one RuleMatch per distinct target, sorted by
            target; candidates = distinct target values after the first
            operator binding the target
        """
        project = plan.operators[-1]
        if not isinstance(project, Project):
            raise RuleExecutionError(f"rule {plan.rule_id}: plan does not end with a projection")
        result = ExecutionResult(plan.rule_id)
        rows = self._run(plan.operators, [_Row({})], result, target=project.target)

        grouped: Dict[Term, Tuple[Dict[str, Term], Set[Explanation]]] = {}
        for row in rows:
            value = row.values.get(project.target)
            if not isinstance(value, (Iri, BNode, Literal)):
                continue
            if value not in grouped:
                kept = {k: row.values[k] for k in project.keep if isinstance(row.values.get(k), (Iri, BNode, Literal))}
                kept[project.target] = value
                grouped[value] = (kept, set())
            grouped[value][1].update(row.explanations)

        for value in sorted(grouped, key=term_sort_key):
            bindings, notes = grouped[value]
            result.matches.append(RuleMatch(value, bindings, tuple(sorted(notes, key=Explanation.sort_key))))
        logger.debug(
            "rule_executed", rule=plan.rule_id, candidates=result.candidates, findings=len(result.matches)
        )
        return result


def execute(
    plan: QueryPlan, graph: Graph, geom: GeomIndex, defaults: Optional[EngineDefaults] = None
) -> ExecutionResult:
    """Evaluate a compiled rule (see RuleExecutor.execute)"""
    return RuleExecutor(graph, geom, defaults).execute(plan)
