"""
Tests for query planning
"""
import pytest

from app.core.exceptions import RuleCompileError
from app.services.graph_store import Iri, Literal, TriplePattern, Var
from app.services.reg_infer import load_vocabulary
from app.services.rule_compiler import (
    AntiJoin,
    Bind,
    Filter,
    GeoPredicate,
    HashJoin,
    Project,
    Scan,
    builtin_calls,
    compile_rule,
    plan_clauses,
    rule_iris,
    unknown_terms,
)
from app.services.rule_parser import BinaryOp, Const, FilterClause, PatternClause, RuleAst, VarRef, parse_rule
from app.utils.namespaces import REG, RDF_TYPE

TYPE = Iri(RDF_TYPE)


def rule(body: str, target: str = "?a", tail: str = "") -> str:
    return f'RULE "r1" TOPIC test IF {body} THEN NON-COMPLIANT {target} {tail}'


def kinds(operators):
    return [type(op).__name__ for op in operators]


@pytest.mark.unit
class TestPlanOrder:
    """Operator placement"""

    def test_fire_rule_plan(self, default_pack):
        plan = default_pack.plan("fire-structure-01")
        assert kinds(plan.operators) == ["Scan", "HashJoin", "HashJoin", "Bind", "HashJoin", "Filter", "Project"]
        assert plan.operators[0] == Scan(TriplePattern(Var("b"), TYPE, Iri(REG + "Building")))
        assert plan.operators[1] == HashJoin(TriplePattern(Var("e"), TYPE, Iri(REG + "StructureElement")), ())
        assert plan.operators[2].keys == ("b",)
        assert plan.operators[4].keys == ("e",)
        assert plan.operators[-1] == Project("e", ())

    def test_wc_rule_plan(self, default_pack):
        plan = default_pack.plan("acc-wc-freespace-01")
        assert kinds(plan.operators) == ["Scan", "Bind", "Bind", "Filter", "Project"]

    def test_most_constants_first(self):
        ast = parse_rule(rule("?a PROP reg:x ?v ?a TYPE reg:WC"))
        plan = compile_rule(ast)
        assert plan.operators[0] == Scan(TriplePattern(Var("a"), TYPE, Iri(REG + "WC")))
        assert plan.operators[1] == HashJoin(TriplePattern(Var("a"), Iri(REG + "x"), Var("v")), ("a",))

    def test_ties_keep_source_order(self):
        ast = parse_rule(rule("?a TYPE reg:Storey ?b TYPE reg:Building ?b PROP reg:highestStorey ?a"))
        plan = compile_rule(ast)
        assert plan.operators[0].pattern.object == Iri(REG + "Storey")
        assert plan.operators[1].pattern.object == Iri(REG + "Building")
        assert plan.operators[2].keys == ("a", "b")

    def test_filter_placed_when_inputs_bound(self):
        ast = parse_rule(rule("?a PROP reg:x ?x ?a PROP reg:y ?y FILTER ?x > 1 FILTER ?x < ?y"))
        plan = compile_rule(ast)
        assert kinds(plan.operators) == ["Scan", "Filter", "HashJoin", "Filter", "Project"]

    def test_geo_predicate(self):
        ast = parse_rule(rule("?a TYPE reg:WC ?b TYPE reg:PhysicalElement GEO INTERSECTS ?a ?b"))
        plan = compile_rule(ast)
        assert kinds(plan.operators) == ["Scan", "HashJoin", "GeoPredicate", "Project"]
        assert isinstance(plan.operators[2], GeoPredicate)
        assert plan.operators[-1] == Project("a", ("b",))

    def test_not_exists_becomes_anti_join(self):
        ast = parse_rule(rule("?a TYPE reg:PhysicalElement NOT EXISTS { ?a PROP reg:hasClassification ?c }"))
        plan = compile_rule(ast)
        anti = plan.operators[1]
        assert isinstance(anti, AntiJoin)
        assert anti.keys == ("a",)
        assert anti.operators == (Scan(TriplePattern(Var("a"), Iri(REG + "hasClassification"), Var("c"))),)

    def test_message_variables_kept(self):
        ast = parse_rule(rule("?a PROP reg:x ?x", tail='MESSAGE "{?a} has {?x}"'))
        assert compile_rule(ast).operators[-1] == Project("a", ("x",))

    def test_explain(self, default_pack):
        lines = default_pack.plan("fire-structure-01").explain()
        assert lines[0] == "scan ?b rdf:type reg:Building"
        assert lines[1] == "hash-join [-] ?e rdf:type reg:StructureElement"
        assert lines[2].startswith("hash-join [?b]")
        assert lines[3] == "bind FIRETHRESHOLD -> ?t"
        assert lines[-1] == "project ?e"

    def test_explain_nested(self):
        ast = parse_rule(rule("?a TYPE reg:PhysicalElement NOT EXISTS { ?a PROP reg:hasClassification ?c }"))
        lines = compile_rule(ast).explain()
        assert lines[1] == "anti-join [?a]"
        assert lines[2].startswith("  scan ?a reg:hasClassification")


@pytest.mark.unit
class TestCompileErrors:
    def test_input_never_bound(self):
        """A hand-built AST that skipped validation"""
        ast = RuleAst(
            id="broken",
            topic="test",
            clauses=(
                PatternClause(TriplePattern(Var("a"), TYPE, Iri(REG + "WC"))),
                FilterClause(BinaryOp(">", VarRef("z"), Const(Literal.integer(1))), line=4),
            ),
            target="a",
        )
        with pytest.raises(RuleCompileError, match=r"line 4: inputs \?z are never bound"):
            compile_rule(ast)

    def test_seed_counts_as_bound(self):
        clauses = (FilterClause(BinaryOp(">", VarRef("z"), Const(Literal.integer(1)))),)
        operators = plan_clauses(clauses, frozenset({"z"}))
        assert kinds(operators) == ["Filter"]
        assert isinstance(operators[0], Filter)


@pytest.mark.unit
class TestVocabularyChecks:
    """Terms outside the declared layers become warnings"""

    def test_pack_rules_use_known_terms(self, default_pack):
        assert default_pack.warnings == []

    def test_unknown_term_warning(self):
        ast = parse_rule(rule("?a TYPE reg:Unicorn ?a PROP reg:fireHeight ?h"))
        vocabulary = load_vocabulary()
        assert unknown_terms(ast, vocabulary) == [Iri(REG + "Unicorn")]
        plan = compile_rule(ast, vocabulary)
        assert plan.warnings == ("rule r1: term reg:Unicorn is not declared in any vocabulary layer",)

    def test_no_vocabulary_no_warnings(self):
        ast = parse_rule(rule("?a TYPE reg:Unicorn"))
        assert unknown_terms(ast, None) == []
        assert compile_rule(ast).warnings == ()

    def test_rule_iris_first_use_order(self):
        ast = parse_rule(rule("?a TYPE reg:WC ?a PROP reg:x ?v NOT EXISTS { ?a TYPE reg:WC ?a PROP reg:y ?w }"))
        assert rule_iris(ast) == [TYPE, Iri(REG + "WC"), Iri(REG + "x"), Iri(REG + "y")]

    def test_builtin_calls(self, default_pack):
        calls = builtin_calls(default_pack.plan("acc-wc-freespace-01").rule)
        assert [c.name for c in calls] == ["FREESPACE", "FREESPACE", "CLEAR", "CLEAR"]

    def test_plans_are_values(self, default_pack):
        ast = default_pack.plan("fire-structure-01").rule
        assert compile_rule(ast) == compile_rule(ast)
        assert isinstance(compile_rule(ast).operators[3], Bind)
