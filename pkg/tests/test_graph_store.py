"""
Tests for the in-memory triple store
"""
from decimal import Decimal

import pytest
from hypothesis import given, settings, strategies as st

from app.services.graph_store import (
    BNode,
    Graph,
    Iri,
    Literal,
    LiteralKind,
    Triple,
    TriplePattern,
    Var,
    serialize_ntriples,
    term_sort_key,
    term_text,
)

EX = "https://example.org/"
TYPE = Iri("http://www.w3.org/1999/02/22-rdf-syntax-ns#type")
WALL = Iri(EX + "Wall")
NAME = Iri(EX + "name")
HEIGHT = Iri(EX + "height")


def iri(local: str) -> Iri:
    return Iri(EX + local)


@pytest.fixture
def graph() -> Graph:
    g = Graph()
    g.insert_many(
        [
            Triple(iri("w1"), TYPE, WALL),
            Triple(iri("w2"), TYPE, WALL),
            Triple(iri("w1"), NAME, Literal.text("north")),
            Triple(iri("w1"), HEIGHT, Literal.decimal("2.5")),
            Triple(iri("w2"), HEIGHT, Literal.decimal("3.0")),
            Triple(iri("a"), iri("knows"), iri("a")),
            Triple(iri("a"), iri("knows"), iri("b")),
        ]
    )
    return g


@pytest.mark.unit
class TestLiteral:
    """Literal equality and lexical forms"""

    def test_decimal_normalised(self):
        assert Literal.decimal("9.000").lexical == "9.0"
        assert Literal.decimal(Decimal("2.50")).lexical == "2.5"
        assert Literal.decimal(0.1).lexical == "0.1"

    def test_decimal_fixed_places(self):
        assert Literal.decimal(2.8, places=6).lexical == "2.800000"
        assert Literal.decimal(-0.0000001, places=6).lexical == "0.000000"

    def test_decimal_equals_by_value(self):
        assert Literal("9.0", LiteralKind.DECIMAL) == Literal("9.000000", LiteralKind.DECIMAL)
        assert hash(Literal("9.0", LiteralKind.DECIMAL)) == hash(Literal("9.000000", LiteralKind.DECIMAL))

    def test_kinds_never_cross(self):
        assert Literal.decimal(9) != Literal.integer(9)
        assert Literal.integer(9) != Literal.text("9")
        assert Literal.boolean(True) != Literal.text("true")

    def test_python_values(self):
        assert Literal.integer(30).value == Decimal(30)
        assert Literal.boolean(False).value is False
        assert Literal.text("x").value == "x"

    @pytest.mark.parametrize(
        "lexical,kind",
        [("abc", LiteralKind.DECIMAL), ("1.5", LiteralKind.INTEGER), ("yes", LiteralKind.BOOLEAN), ("NaN", LiteralKind.DECIMAL)],
    )
    def test_invalid_lexical_rejected(self, lexical, kind):
        with pytest.raises(ValueError):
            Literal(lexical, kind)


@pytest.mark.unit
class TestTriple:
    def test_literal_subject_rejected(self):
        with pytest.raises(TypeError):
            Triple(Literal.text("x"), TYPE, WALL)

    def test_blank_predicate_rejected(self):
        with pytest.raises(TypeError):
            Triple(iri("a"), BNode(1), WALL)


@pytest.mark.unit
class TestGraphWrites:
    """Insert and remove"""

    def test_insert_reports_new(self):
        g = Graph()
        assert g.insert(Triple(iri("a"), TYPE, WALL)) is True
        assert g.insert(Triple(iri("a"), TYPE, WALL)) is False
        assert len(g) == 1

    def test_insert_equal_decimal_is_duplicate(self):
        g = Graph()
        g.insert(Triple(iri("a"), HEIGHT, Literal.decimal("9.0")))
        assert g.insert(Triple(iri("a"), HEIGHT, Literal("9.000000", LiteralKind.DECIMAL))) is False
        assert g.count() == 1

    def test_insert_many_counts_new(self, graph):
        assert graph.insert_many([Triple(iri("w1"), TYPE, WALL), Triple(iri("w3"), TYPE, WALL)]) == 1

    def test_remove_matching(self, graph):
        removed = graph.remove_matching(TriplePattern(Var("s"), TYPE, WALL))
        assert removed == 2
        assert graph.match_pattern(TriplePattern(Var("s"), TYPE, WALL)) == []
        assert len(graph) == 5

    def test_remove_then_reinsert(self, graph):
        graph.remove_matching(TriplePattern(iri("w1"), Var("p"), Var("o")))
        assert Triple(iri("w1"), NAME, Literal.text("north")) not in graph
        assert graph.insert(Triple(iri("w1"), NAME, Literal.text("north"))) is True

    def test_remove_nothing(self, graph):
        assert graph.remove_matching(TriplePattern(iri("zzz"), Var("p"), Var("o"))) == 0
        assert len(graph) == 7

    def test_new_bnodes_are_distinct(self):
        g = Graph()
        assert g.new_bnode() != g.new_bnode()


@pytest.mark.unit
class TestGraphReads:
    """Pattern matching and queries"""

    def test_match_by_type(self, graph):
        found = graph.match_pattern(TriplePattern(Var("w"), TYPE, WALL))
        assert sorted(b["w"].value for b in found) == [EX + "w1", EX + "w2"]

    def test_fully_constant_pattern(self, graph):
        assert graph.match_pattern(TriplePattern(iri("w1"), TYPE, WALL)) == [{}]
        assert graph.match_pattern(TriplePattern(iri("w1"), TYPE, iri("Slab"))) == []

    def test_unknown_constant_matches_nothing(self, graph):
        assert graph.match_pattern(TriplePattern(Var("s"), iri("never"), Var("o"))) == []

    def test_repeated_variable_joins(self, graph):
        found = graph.match_pattern(TriplePattern(Var("x"), iri("knows"), Var("x")))
        assert found == [{"x": iri("a")}]

    def test_numeric_constant_matches_by_value(self, graph):
        found = graph.match_pattern(TriplePattern(Var("w"), HEIGHT, Literal("3.000", LiteralKind.DECIMAL)))
        assert found == [{"w": iri("w2")}]

    def test_variable_predicate(self, graph):
        found = graph.match_pattern(TriplePattern(iri("w1"), Var("p"), Var("o")))
        assert len(found) == 3

    def test_contains(self, graph):
        assert Triple(iri("w1"), NAME, Literal.text("north")) in graph
        assert Triple(iri("w1"), NAME, Literal.text("south")) not in graph

    def test_objects_subjects_value(self, graph):
        assert graph.objects(iri("w1"), NAME) == [Literal.text("north")]
        assert sorted(s.value for s in graph.subjects(TYPE, WALL)) == [EX + "w1", EX + "w2"]
        assert graph.value(iri("a"), iri("knows")) == iri("a")
        assert graph.value(iri("w2"), NAME) is None

    def test_query_joins_patterns(self, graph):
        rows = graph.query(
            [TriplePattern(Var("w"), TYPE, WALL), TriplePattern(Var("w"), NAME, Var("n"))]
        )
        assert rows == [{"w": iri("w1"), "n": Literal.text("north")}]

    def test_query_with_seed(self, graph):
        rows = graph.query([TriplePattern(Var("w"), HEIGHT, Var("h"))], seed={"w": iri("w2")})
        assert rows == [{"w": iri("w2"), "h": Literal.decimal("3.0")}]

    def test_triples_iterates_all(self, graph):
        assert len(list(graph.triples())) == 7


@pytest.mark.unit
class TestSerialisation:
    """N-Triples output"""

    def test_term_text(self):
        assert term_text(iri("a")) == f"<{EX}a>"
        assert term_text(BNode(3)) == "_:b3"
        assert term_text(Literal.text('say "hi"\n')) == '"say \\"hi\\"\\n"'
        assert term_text(Literal.integer(30)) == '"30"^^<http://www.w3.org/2001/XMLSchema#integer>'

    def test_empty_graph(self):
        assert serialize_ntriples(Graph()) == ""

    def test_sorted_lines(self, graph):
        text = serialize_ntriples(graph)
        lines = text.splitlines()
        assert len(lines) == 7
        assert all(line.endswith(" .") for line in lines)
        assert lines == sorted(lines, key=lambda line: tuple(line.split(" ")[:3]))

    def test_insertion_order_irrelevant(self, graph):
        reversed_graph = Graph(reversed(list(graph.triples())))
        assert serialize_ntriples(reversed_graph) == serialize_ntriples(graph)

    def test_natural_iri_order(self):
        keys = sorted([iri("e10"), iri("e9"), iri("e100")], key=term_sort_key)
        assert keys == [iri("e9"), iri("e10"), iri("e100")]


_subjects = st.sampled_from([iri(f"s{i}") for i in range(5)])
_predicates = st.sampled_from([iri(f"p{i}") for i in range(3)])
_objects = st.one_of(_subjects, st.integers(0, 3).map(Literal.integer), st.sampled_from(["x", "y"]).map(Literal.text))
_triples = st.builds(Triple, _subjects, _predicates, _objects)


@pytest.mark.unit
@settings(max_examples=80, deadline=None)
@given(st.lists(_triples, max_size=30), st.sampled_from([0, 1, 2, 3, 4, 5, 6, 7]))
def test_match_pattern_agrees_with_scan(triples, mask):
    """Index lookups return exactly the triples a full scan would"""
    g = Graph(triples)
    sample = triples[0] if triples else Triple(iri("s0"), iri("p0"), iri("s1"))
    pattern = TriplePattern(
        sample.subject if mask & 1 else Var("s"),
        sample.predicate if mask & 2 else Var("p"),
        sample.object if mask & 4 else Var("o"),
    )
    expected = {
        t
        for t in set(triples)
        if all(isinstance(p, Var) or p == v for p, v in zip(pattern.positions, (t.subject, t.predicate, t.object)))
    }
    found = set(g.triples(pattern))
    assert found == expected
    assert len(g) == len(set(triples))
