"""
Tests for the rule language parser
"""
from decimal import Decimal

import pytest

from app.core.exceptions import RuleSyntaxError
from app.services.graph_store import Iri, Literal, TriplePattern, Var
from app.services.rule_parser import (
    BindClause,
    BinaryOp,
    Call,
    Const,
    FilterClause,
    GeoClause,
    NotExistsClause,
    PatternClause,
    Symbol,
    UnaryOp,
    VarRef,
    parse_rule,
    parse_rules,
)
from app.utils.namespaces import IFC, REG, RDF_TYPE

TYPE = Iri(RDF_TYPE)


def rule(body: str, target: str = "?a", tail: str = "") -> str:
    return f'RULE "r1" TOPIC test IF {body} THEN NON-COMPLIANT {target} {tail}'


@pytest.mark.unit
class TestPackRules:
    """The shipped rules parse into the expected clause lists"""

    def test_fire_rule(self, default_pack):
        ast = default_pack.plan("fire-structure-01").rule
        assert ast.topic == "fire_safety"
        assert ast.severity == "error"
        assert ast.target == "e"
        assert [type(c) for c in ast.clauses] == [
            PatternClause,
            PatternClause,
            BindClause,
            PatternClause,
            PatternClause,
            FilterClause,
        ]
        assert ast.clauses[0].pattern == TriplePattern(Var("b"), TYPE, Iri(REG + "Building"))
        assert ast.clauses[2].call == Call("FIRETHRESHOLD", (VarRef("h"),))
        assert ast.clauses[2].var == "t"
        assert ast.clauses[5].expr == BinaryOp("<", VarRef("d"), VarRef("t"))
        assert ast.message == "Structure element fire resistance below required duration"

    def test_wc_rule(self, default_pack):
        ast = default_pack.plan("acc-wc-freespace-01").rule
        left = ast.clauses[1]
        assert isinstance(left, BindClause)
        assert left.call.args == (
            VarRef("wc"),
            Symbol("LEFT"),
            Const(Literal.decimal(Decimal("0.8"))),
            Const(Literal.decimal(Decimal("1.0"))),
        )
        check = ast.clauses[3].expr
        assert check == UnaryOp(
            "NOT",
            BinaryOp("OR", Call("CLEAR", (VarRef("L"), VarRef("wc"))), Call("CLEAR", (VarRef("R"), VarRef("wc")))),
        )


@pytest.mark.unit
class TestParseRule:
    """Clause forms"""

    def test_header_fields(self):
        ast = parse_rule(rule("?a TYPE reg:WC", tail='MESSAGE "WC {?a} fails"').replace("TOPIC test", "TOPIC test SEVERITY warning"))
        assert ast.id == "r1"
        assert ast.topic == "test"
        assert ast.severity == "warning"
        assert ast.message == "WC {?a} fails"
        assert ast.message_variables() == ["a"]

    def test_message_is_optional(self):
        assert parse_rule(rule("?a TYPE reg:WC")).message is None

    def test_prop_objects(self):
        ast = parse_rule(
            rule('?a PROP ifc:predefinedType "WCSEAT" ?a PROP ifc:loadBearing true ?a PROP ifc:elevation 3 ?a PROP reg:x ?v')
        )
        objects = [c.pattern.object for c in ast.clauses]
        assert objects == [Literal.text("WCSEAT"), Literal.boolean(True), Literal.integer(3), Var("v")]
        assert ast.clauses[0].pattern.predicate == Iri(IFC + "predefinedType")

    def test_full_iri(self):
        ast = parse_rule(rule("?a TYPE <https://example.org/Thing>"))
        assert ast.clauses[0].pattern.object == Iri("https://example.org/Thing")

    def test_custom_namespaces(self):
        ast = parse_rule(rule("?a TYPE ex:Thing"), {"ex": "https://example.org/"})
        assert ast.clauses[0].pattern.object == Iri("https://example.org/Thing")

    def test_expression_precedence(self):
        ast = parse_rule(rule("?a PROP reg:x ?x FILTER ?x + 1 * 2 > 3 AND NOT ?x = 4 OR ?x < -5"))
        expr = ast.clauses[1].expr
        assert expr.op == "OR"
        assert expr.left.op == "AND"
        assert expr.left.left == BinaryOp(">", BinaryOp("+", VarRef("x"), BinaryOp("*", Const(Literal.integer(1)), Const(Literal.integer(2)))), Const(Literal.integer(3)))
        assert expr.left.right == UnaryOp("NOT", BinaryOp("=", VarRef("x"), Const(Literal.integer(4))))
        assert expr.right == BinaryOp("<", VarRef("x"), UnaryOp("-", Const(Literal.integer(5))))

    def test_not_exists(self):
        ast = parse_rule(rule("?a TYPE reg:PhysicalElement NOT EXISTS { ?a PROP reg:hasClassification ?c }"))
        clause = ast.clauses[1]
        assert isinstance(clause, NotExistsClause)
        assert clause.variables() == {"a", "c"}
        assert ast.bound_variables() == frozenset({"a"})

    def test_geo_clause(self):
        ast = parse_rule(rule("?a TYPE reg:WC ?b TYPE reg:PhysicalElement GEO ADJACENT ?a ?b EPS 0.01"))
        assert ast.clauses[2] == GeoClause("ADJACENT", "a", "b", 0.01)
        ast = parse_rule(rule("?a TYPE reg:WC ?b TYPE reg:PhysicalElement GEO INTERSECTS ?a ?b"))
        assert ast.clauses[2] == GeoClause("INTERSECTS", "a", "b", None)

    def test_string_escapes(self):
        ast = parse_rule(rule('?a PROP ifc:name "say \\"hi\\""'))
        assert ast.clauses[0].pattern.object == Literal.text('say "hi"')

    def test_positions_recorded(self):
        ast = parse_rule('RULE "r1" TOPIC test\nIF ?a TYPE reg:WC\n   FILTER CLEAR(?a)\nTHEN NON-COMPLIANT ?a')
        assert ast.line == 1
        assert ast.clauses[0].line == 2
        assert ast.clauses[1].line == 3

    def test_several_rules_with_comments(self):
        text = "# first\n" + rule("?a TYPE reg:WC") + "\n# second\n" + rule("?a TYPE reg:Storey").replace('"r1"', '"r2"')
        asts = parse_rules(text)
        assert [a.id for a in asts] == ["r1", "r2"]


@pytest.mark.unit
class TestParseErrors:
    """Invalid rules raise RuleSyntaxError with a position"""

    @pytest.mark.parametrize(
        "text,message",
        [
            (rule("?a TYPE nope:WC"), "unknown prefix 'nope'"),
            (rule("?a TYPE reg:WC BIND FOO(?a) AS ?b"), "unknown builtin FOO"),
            (rule("?a PROP reg:h ?h BIND FIRETHRESHOLD(?h, 2) AS ?t"), "FIRETHRESHOLD takes 1 arguments, got 2"),
            (rule("?a TYPE reg:WC BIND FREESPACE(?a, LEFT) AS ?s"), "FREESPACE takes 4-5 arguments, got 2"),
            (rule("?a TYPE reg:WC FILTER ?x > 1"), "unbound variable ?x"),
            (rule("?a TYPE reg:WC GEO INTERSECTS ?a ?b"), "unbound variable ?b"),
            (rule("?a PROP reg:h ?h BIND FIRETHRESHOLD(?h) AS ?h"), "variable ?h bound twice"),
            (rule("?a PROP reg:h ?h BIND FIRETHRESHOLD(?h) AS ?t", target="?t"), "target ?t does not appear"),
            (rule("?a TYPE reg:WC NOT EXISTS { ?b TYPE reg:WC }", target="?b"), "target ?b does not appear"),
            (rule("?a TYPE reg:WC NOT EXISTS { ?a PROP reg:x ?v FILTER ?zz > 1 }"), "unbound variable ?zz"),
            (rule("?a TYPE reg:WC", tail='MESSAGE "bad {?q}"'), "message uses unbound variable ?q"),
            (rule("?a TYPE reg:WC BIND FREESPACE(?a, UP, 0.8, 1.0) AS ?s"), "unknown symbol UP"),
            ('RULE "r1" TOPIC test IF ?a TYPE reg:WC', "unexpected end of rule text"),
            (rule("?a TYPE reg:WC @"), "unexpected character"),
            ('RULE "r1" TOPIC test IF THEN NON-COMPLIANT ?a', "unexpected"),
        ],
    )
    def test_rejected(self, text, message):
        with pytest.raises(RuleSyntaxError) as info:
            parse_rule(text)
        assert message in str(info.value)

    def test_error_position(self):
        with pytest.raises(RuleSyntaxError) as info:
            parse_rule('RULE "r1" TOPIC test\nIF ?a TYPE reg:WC\n   FILTER ?x > 1\nTHEN NON-COMPLIANT ?a')
        assert info.value.line == 3
        assert info.value.column == 4
        assert str(info.value).startswith("line 3, column 4:")

    def test_one_rule_expected(self):
        with pytest.raises(RuleSyntaxError):
            parse_rule(rule("?a TYPE reg:WC") + " " + rule("?a TYPE reg:WC"))
