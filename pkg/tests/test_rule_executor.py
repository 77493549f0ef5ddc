"""
Tests for rule execution, builtins and fire thresholds
"""
import dataclasses
import itertools
from decimal import Decimal
from functools import lru_cache

import pytest

from app.core.exceptions import ThresholdError
from app.models.pack import EngineDefaults
from app.models.report import CheckConfig
from app.services.checker import ComplianceChecker, KnowledgeBase
from app.services.geometry import GeomIndex, Obb
from app.services.graph_store import Graph, Iri, Literal, Triple
from app.services.rule_compiler import compile_rule
from app.services.rule_executor import (
    Explanation,
    RuleExecutor,
    execute,
    render_message,
    resolve_fire_threshold,
    validate_threshold_table,
)
from app.services.rule_parser import PatternClause, RuleAst, parse_rule
from app.utils.namespaces import IFC, REG, RDF_TYPE, inst_iri

from conftest import FIXTURE_MODELS, FIXTURES
from oracles import naive_execute

TYPE = Iri(RDF_TYPE)
TABLE = ((8.0, 30), (28.0, 60), (None, 90))
# top face 0.5 mm above the free space base
SLAB = Obb.axis_aligned((0.0, 0.0, -0.09975), (3.0, 3.0, 0.10025))

ORACLE_RULES = (
    'RULE "o-adjacent" TOPIC test IF ?w TYPE reg:WC ?x TYPE reg:PhysicalElement'
    " GEO ADJACENT ?w ?x EPS 0.01 THEN NON-COMPLIANT ?x",
    'RULE "o-intersects" TOPIC test IF ?a TYPE reg:PhysicalElement ?b TYPE reg:PhysicalElement'
    " GEO INTERSECTS ?a ?b FILTER ?a != ?b THEN NON-COMPLIANT ?a",
    'RULE "o-unclassified" TOPIC test IF ?e TYPE reg:PhysicalElement'
    " NOT EXISTS { ?e PROP reg:hasClassification ?c } THEN NON-COMPLIANT ?e",
    'RULE "o-storey" TOPIC test IF ?s TYPE reg:Storey ?s PROP ifc:elevation ?z'
    " FILTER ?z * 2 >= 6 THEN NON-COMPLIANT ?s",
    'RULE "o-height" TOPIC test IF ?b TYPE reg:Building BIND HEIGHT_OF(?b) AS ?h'
    " FILTER ?h / 3 > 2 THEN NON-COMPLIANT ?b",
    'RULE "o-floor" TOPIC test IF ?slab PROP reg:floorOf ?s ?s TYPE reg:Storey'
    " NOT EXISTS { ?s TYPE reg:HighestStorey } FILTER CLEAR(?slab) THEN NON-COMPLIANT ?slab",
    'RULE "o-load" TOPIC test IF ?e TYPE reg:StructureElement ?e PROP reg:fireLoadBearingDuration ?d'
    " ?e PROP ifc:containedIn ?s ?s PROP ifc:elevation ?z FILTER ?d - ?z > 20 THEN NON-COMPLIANT ?e",
)


def inst(number: int) -> Iri:
    return Iri(inst_iri(number))


def reg(local: str) -> Iri:
    return Iri(REG + local)


@lru_cache(maxsize=None)
def knowledge_base(name: str) -> KnowledgeBase:
    source = (FIXTURES / name).read_text(encoding="utf-8")
    return ComplianceChecker().build_knowledge_base(source, CheckConfig())


def findings(result):
    return {m.target: frozenset(m.explanations) for m in result.matches}


def pattern_permutations(ast: RuleAst):
    """The rule with its positive patterns reordered every possible way"""
    positions = [i for i, c in enumerate(ast.clauses) if isinstance(c, PatternClause)]
    for order in itertools.permutations([ast.clauses[i] for i in positions]):
        clauses = list(ast.clauses)
        for position, clause in zip(positions, order):
            clauses[position] = clause
        yield dataclasses.replace(ast, clauses=tuple(clauses))


def wc_scene(*others):
    """WC inst:1 at the origin (0.6 wide, 0.8 deep, 0.8 high) plus extra (iri, box, physical) entries"""
    graph = Graph([Triple(inst(1), TYPE, reg("WC")), Triple(inst(1), TYPE, reg("PhysicalElement"))])
    boxes = {inst(1): Obb.axis_aligned((0.0, 0.0, 0.4), (0.3, 0.4, 0.4))}
    for element, box, physical in others:
        boxes[element] = box
        if physical:
            graph.insert(Triple(element, TYPE, reg("PhysicalElement")))
    return graph, GeomIndex(boxes)


@pytest.mark.unit
class TestFireThreshold:
    """Half-open height intervals"""

    @pytest.mark.parametrize(
        "height,minutes",
        [(0, 30), (8, 30), (8.0001, 60), (9, 60), (28, 60), (30, 90), (Decimal("9.0"), 60)],
    )
    def test_lookup(self, height, minutes):
        assert resolve_fire_threshold(height, TABLE) == minutes

    def test_negative_height(self):
        with pytest.raises(ThresholdError, match="non-negative"):
            resolve_fire_threshold(-1, TABLE)

    @pytest.mark.parametrize(
        "table,message",
        [
            ((), "empty"),
            (((8.0, 30),), "open-ended"),
            (((None, 30), (None, 60)), "only the last"),
            (((8.0, 30), (5.0, 60), (None, 90)), "increase strictly"),
            (((8.0, 30), (8.0, 60), (None, 90)), "increase strictly"),
            (((8.0, -1), (None, 90)), "non-negative"),
        ],
    )
    def test_malformed_tables(self, table, message):
        with pytest.raises(ThresholdError, match=message):
            validate_threshold_table(table)


@pytest.mark.unit
class TestRenderMessage:
    def test_placeholders(self):
        text = render_message("{?e} has {?d} minutes", {"e": inst(5), "d": Literal.integer(30)}, "x")
        assert text == "inst:5 has 30 minutes"

    def test_unbound_placeholder_kept(self):
        assert render_message("{?zz} fails", {}, "x") == "{?zz} fails"

    def test_fallback(self):
        assert render_message(None, {}, "fallback") == "fallback"


@pytest.mark.unit
class TestFreeSpaceRule:
    """The WC rule over hand-built scenes"""

    def run(self, default_pack, graph, geom):
        return execute(default_pack.plan("acc-wc-freespace-01"), graph, geom, default_pack.defaults)

    def test_open_room_is_compliant(self, default_pack):
        graph, geom = wc_scene()
        result = self.run(default_pack, graph, geom)
        assert result.matches == []
        assert result.candidates == 1

    def test_one_blocked_side_is_compliant(self, default_pack):
        wall = (inst(2), Obb.axis_aligned((-0.8, 0.0, 1.0), (0.1, 1.0, 1.0)), True)
        graph, geom = wc_scene(wall)
        assert self.run(default_pack, graph, geom).matches == []

    def test_both_sides_blocked(self, default_pack):
        wall = (inst(2), Obb.axis_aligned((-0.8, 0.0, 1.0), (0.1, 1.0, 1.0)), True)
        rail = (inst(3), Obb.axis_aligned((0.7, 0.0, 1.0), (0.05, 0.5, 0.5)), True)
        graph, geom = wc_scene(wall, rail)
        result = self.run(default_pack, graph, geom)
        assert [m.target for m in result.matches] == [inst(1)]
        assert result.matches[0].explanations == (
            Explanation("intersects FreeSpace (LEFT)", inst(2)),
            Explanation("intersects FreeSpace (RIGHT)", inst(3)),
        )
        assert result.matches[0].bindings == {"wc": inst(1)}

    def test_flush_wall_leaves_space_clear(self, default_pack):
        """A wall face touching the free space does not block it"""
        flush = (inst(2), Obb.axis_aligned((-1.2, 0.0, 1.0), (0.1, 1.0, 1.0)), True)
        rail = (inst(3), Obb.axis_aligned((0.7, 0.0, 1.0), (0.05, 0.5, 0.5)), True)
        graph, geom = wc_scene(flush, rail)
        assert self.run(default_pack, graph, geom).matches == []

    def test_shallow_penetration_blocks(self, default_pack):
        """Half a millimetre into the right free space is an intersection"""
        wall = (inst(2), Obb.axis_aligned((-0.8, 0.0, 1.0), (0.1, 1.0, 1.0)), True)
        cabinet = (inst(3), Obb.axis_aligned((1.14975, 0.0, 1.0), (0.05025, 0.5, 0.5)), True)
        graph, geom = wc_scene(wall, cabinet)
        result = self.run(default_pack, graph, geom)
        assert [m.target for m in result.matches] == [inst(1)]
        assert result.matches[0].explanations == (
            Explanation("intersects FreeSpace (LEFT)", inst(2)),
            Explanation("intersects FreeSpace (RIGHT)", inst(3)),
        )

    def test_floor_beneath_is_exempt(self, default_pack):
        """A slab whose top lies within eps of the free space base"""
        graph, geom = wc_scene((inst(4), SLAB, True))
        assert default_pack.defaults.exempt_floor_beneath
        assert self.run(default_pack, graph, geom).matches == []

    def test_floor_beneath_blocks_without_exemption(self, default_pack):
        graph, geom = wc_scene((inst(4), SLAB, True))
        defaults = default_pack.defaults.model_copy(update={"exempt_floor_beneath": False})
        result = execute(default_pack.plan("acc-wc-freespace-01"), graph, geom, defaults)
        assert [m.target for m in result.matches] == [inst(1)]
        assert result.matches[0].explanations == (
            Explanation("intersects FreeSpace (LEFT)", inst(4)),
            Explanation("intersects FreeSpace (RIGHT)", inst(4)),
        )

    def test_non_physical_boxes_ignored(self, default_pack):
        space = (inst(4), Obb.axis_aligned((0.0, 0.0, 1.0), (3.0, 3.0, 1.0)), False)
        graph, geom = wc_scene(space)
        assert self.run(default_pack, graph, geom).matches == []

    def test_missing_geometry_is_diagnosed(self, default_pack):
        graph = Graph([Triple(inst(1), TYPE, reg("WC"))])
        result = self.run(default_pack, graph, GeomIndex())
        assert result.matches == []
        assert [(d.code, d.iri) for d in result.diagnostics] == [("missing-geometry", inst(1))]
        assert "inst:1 has no geometry" in result.diagnostics[0].message

    def test_empty_graph(self, default_pack):
        result = self.run(default_pack, Graph(), GeomIndex())
        assert result.matches == []
        assert result.candidates == 0
        assert result.diagnostics == []


@pytest.mark.unit
class TestExpressions:
    """FILTER semantics over a small graph"""

    @pytest.fixture
    def graph(self) -> Graph:
        return Graph(
            [
                Triple(inst(1), TYPE, reg("Thing")),
                Triple(inst(1), reg("n"), Literal.integer(4)),
                Triple(inst(2), TYPE, reg("Thing")),
                Triple(inst(2), reg("n"), Literal.decimal("0")),
                Triple(inst(3), TYPE, reg("Thing")),
                Triple(inst(3), reg("n"), Literal.text("many")),
            ]
        )

    def targets(self, graph, condition):
        ast = parse_rule(f'RULE "t" TOPIC test IF ?a TYPE reg:Thing ?a PROP reg:n ?n FILTER {condition} THEN NON-COMPLIANT ?a')
        return [m.target for m in execute(compile_rule(ast), graph, GeomIndex(), EngineDefaults()).matches]

    def test_numeric_comparison(self, graph):
        assert self.targets(graph, "?n > 1") == [inst(1)]

    def test_type_mismatch_is_false(self, graph):
        assert self.targets(graph, "?n >= 0") == [inst(1), inst(2)]

    def test_division_by_zero_is_false(self, graph):
        assert self.targets(graph, "8 / ?n = 2") == [inst(1)]

    def test_text_equality(self, graph):
        assert self.targets(graph, '?n = "many"') == [inst(3)]

    def test_boolean_connectives(self, graph):
        assert self.targets(graph, "?n = 0 OR ?n = 4") == [inst(1), inst(2)]
        assert self.targets(graph, "NOT ?n = 4 AND ?n < 10") == [inst(2)]

    def test_height_of(self):
        graph = Graph([Triple(inst(1), TYPE, reg("Building")), Triple(inst(1), reg("fireHeight"), Literal.decimal("9.0"))])
        ast = parse_rule(
            'RULE "t" TOPIC test IF ?b TYPE reg:Building BIND HEIGHT_OF(?b) AS ?h'
            " BIND FIRETHRESHOLD(?h) AS ?t FILTER ?t = 60 THEN NON-COMPLIANT ?b"
        )
        result = RuleExecutor(graph, GeomIndex(), EngineDefaults(fire_threshold_table=TABLE)).execute(compile_rule(ast))
        assert [m.target for m in result.matches] == [inst(1)]

    def test_fire_threshold_without_table(self):
        graph = Graph([Triple(inst(1), TYPE, reg("Building")), Triple(inst(1), reg("fireHeight"), Literal.decimal("9.0"))])
        ast = parse_rule(
            'RULE "t" TOPIC test IF ?b TYPE reg:Building ?b PROP reg:fireHeight ?h'
            " BIND FIRETHRESHOLD(?h) AS ?t FILTER ?t > 0 THEN NON-COMPLIANT ?b"
        )
        with pytest.raises(ThresholdError, match="pack defines no fire threshold table"):
            execute(compile_rule(ast), graph, GeomIndex(), EngineDefaults())

    def test_not_exists(self, graph):
        graph.insert(Triple(inst(1), reg("tag"), Literal.text("x")))
        ast = parse_rule('RULE "t" TOPIC test IF ?a TYPE reg:Thing NOT EXISTS { ?a PROP reg:tag ?x } THEN NON-COMPLIANT ?a')
        result = execute(compile_rule(ast), graph, GeomIndex(), EngineDefaults())
        assert [m.target for m in result.matches] == [inst(2), inst(3)]


@pytest.mark.integration
class TestFixtureModels:
    """Shipped rules over the fixture models"""

    def test_bathroom_blocked_on_both_sides(self, default_pack):
        kb = knowledge_base("bathroom.ifc")
        result = execute(default_pack.plan("acc-wc-freespace-01"), kb.graph, kb.geom, default_pack.defaults)
        assert [m.target for m in result.matches] == [inst(24)]
        assert result.matches[0].explanations == (
            Explanation("intersects FreeSpace (LEFT)", inst(34)),
            Explanation("intersects FreeSpace (RIGHT)", inst(54)),
        )

    def test_bathroom_with_moved_handrail(self, default_pack):
        kb = knowledge_base("bathroom_clear.ifc")
        result = execute(default_pack.plan("acc-wc-freespace-01"), kb.graph, kb.geom, default_pack.defaults)
        assert result.matches == []
        assert result.candidates == 1

    def test_fire_column_under_rated(self, default_pack):
        kb = knowledge_base("fire.ifc")
        result = execute(default_pack.plan("fire-structure-01"), kb.graph, kb.geom, default_pack.defaults)
        assert [m.target for m in result.matches] == [inst(50)]
        assert result.candidates >= 2

    def test_execution_is_read_only(self, default_pack):
        kb = knowledge_base("bathroom.ifc")
        before = kb.graph.count()
        for plan in default_pack.plans:
            execute(plan, kb.graph, kb.geom, default_pack.defaults)
        assert kb.graph.count() == before


def _oracle_rules(default_pack):
    return [plan.rule for plan in default_pack.plans] + [parse_rule(text) for text in ORACLE_RULES]


@pytest.mark.integration
@pytest.mark.parametrize("name", FIXTURE_MODELS)
def test_planner_agrees_with_naive_interpreter(default_pack, name):
    """Every pattern order compiles to a plan with the naive interpreter's findings"""
    kb = knowledge_base(name)
    for ast in _oracle_rules(default_pack):
        expected = naive_execute(ast, kb.graph, kb.geom, default_pack.defaults)
        for variant in pattern_permutations(ast):
            result = execute(compile_rule(variant), kb.graph, kb.geom, default_pack.defaults)
            assert findings(result) == expected, f"{ast.id} on {name}"
