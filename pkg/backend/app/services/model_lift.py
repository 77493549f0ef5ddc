"""
Model Lifting Service

Turns a parsed STEP file into ifc-namespace triples:

    #12=IFCBUILDINGSTOREY(...,9000.)  ->  (inst:12, rdf:type, ifc:IfcBuildingStorey)
                                          (inst:12, ifc:elevation, "9.0"^^xsd:decimal)

Only entities and relations named in the LiftConfig are lifted. Lengths are
scaled to metres here, so nothing downstream deals with model units.
Placements and representations are left to the geometry pre-processor.
"""
from dataclasses import dataclass, field
from decimal import Decimal
from functools import lru_cache
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Set, Tuple, Union

import structlog

from app.core.config import settings
from app.models.lift import LiftConfig
from app.services.graph_store import Graph, Iri, Literal, Term, Triple
from app.services.step_parser import EnumValue, Ref, StepEntity, StepFile, StepValue, Typed
from app.utils.namespaces import IFC, RDF_TYPE, inst_iri

logger = structlog.get_logger()

TYPE = Iri(RDF_TYPE)

# SI prefixes as exact decimals
SI_PREFIXES: Dict[str, Decimal] = {
    "EXA": Decimal("1E18"),
    "PETA": Decimal("1E15"),
    "TERA": Decimal("1E12"),
    "GIGA": Decimal("1E9"),
    "MEGA": Decimal("1E6"),
    "KILO": Decimal("1E3"),
    "HECTO": Decimal("1E2"),
    "DECA": Decimal("1E1"),
    "DECI": Decimal("1E-1"),
    "CENTI": Decimal("1E-2"),
    "MILLI": Decimal("1E-3"),
    "MICRO": Decimal("1E-6"),
    "NANO": Decimal("1E-9"),
    "PICO": Decimal("1E-12"),
    "FEMTO": Decimal("1E-15"),
    "ATTO": Decimal("1E-18"),
}

# STEP keywords are uppercase; class IRIs keep the schema's casing
IFC_CLASS_NAMES: Dict[str, str] = {
    "IFCPROJECT": "IfcProject",
    "IFCSITE": "IfcSite",
    "IFCBUILDING": "IfcBuilding",
    "IFCBUILDINGSTOREY": "IfcBuildingStorey",
    "IFCSPACE": "IfcSpace",
    "IFCWALL": "IfcWall",
    "IFCWALLSTANDARDCASE": "IfcWallStandardCase",
    "IFCSLAB": "IfcSlab",
    "IFCCOLUMN": "IfcColumn",
    "IFCBEAM": "IfcBeam",
    "IFCDOOR": "IfcDoor",
    "IFCWINDOW": "IfcWindow",
    "IFCRAILING": "IfcRailing",
    "IFCSTAIR": "IfcStair",
    "IFCROOF": "IfcRoof",
    "IFCFLOWTERMINAL": "IfcFlowTerminal",
    "IFCFLOWTERMINALTYPE": "IfcFlowTerminalType",
    "IFCSANITARYTERMINAL": "IfcSanitaryTerminal",
    "IFCSANITARYTERMINALTYPE": "IfcSanitaryTerminalType",
    "IFCFURNISHINGELEMENT": "IfcFurnishingElement",
    "IFCOWNERHISTORY": "IfcOwnerHistory",
    "IFCCLASSIFICATION": "IfcClassification",
    "IFCCLASSIFICATIONREFERENCE": "IfcClassificationReference",
    "IFCRELASSOCIATESCLASSIFICATION": "IfcRelAssociatesClassification",
    "IFCRELCONTAINEDINSPATIALSTRUCTURE": "IfcRelContainedInSpatialStructure",
    "IFCRELAGGREGATES": "IfcRelAggregates",
    "IFCRELDEFINESBYTYPE": "IfcRelDefinesByType",
    "IFCRELDEFINESBYPROPERTIES": "IfcRelDefinesByProperties",
}

SPATIAL_ENTITIES = frozenset({"IFCPROJECT", "IFCSITE", "IFCBUILDING", "IFCBUILDINGSTOREY", "IFCSPACE"})

LENGTH_MEASURES = frozenset(
    {"IFCLENGTHMEASURE", "IFCPOSITIVELENGTHMEASURE", "IFCNONNEGATIVELENGTHMEASURE"}
)

# attribute kinds
_TEXT = "text"
_LENGTH = "length"
_REF = "ref"

AttributeSpec = Tuple[int, str, str]  # (argument index, ifc local name, kind)

_ROOTED_ATTRIBUTES: Tuple[AttributeSpec, ...] = (
    (0, "globalId", _TEXT),
    (2, "name", _TEXT),
    (3, "description", _TEXT),
)

_EXTRA_ATTRIBUTES: Dict[str, Tuple[AttributeSpec, ...]] = {
    "IFCPROJECT": ((5, "longName", _TEXT),),
    "IFCSITE": ((7, "longName", _TEXT),),
    "IFCBUILDING": (
        (7, "longName", _TEXT),
        (9, "elevationOfRefHeight", _LENGTH),
        (10, "elevationOfTerrain", _LENGTH),
    ),
    "IFCBUILDINGSTOREY": ((7, "longName", _TEXT), (9, "elevation", _LENGTH)),
    "IFCSPACE": ((7, "longName", _TEXT),),
}

# entities without a GlobalId; their attributes replace the rooted ones
_UNROOTED_ATTRIBUTES: Dict[str, Tuple[AttributeSpec, ...]] = {
    "IFCCLASSIFICATIONREFERENCE": (
        (0, "location", _TEXT),
        (1, "identification", _TEXT),
        (2, "name", _TEXT),
        (3, "referencedSource", _REF),
    ),
    "IFCCLASSIFICATION": (
        (0, "source", _TEXT),
        (1, "edition", _TEXT),
        (3, "name", _TEXT),
    ),
    "IFCOWNERHISTORY": (),
}


def ifc(local_name: str) -> Iri:
    """IRI in the lifted ifc namespace"""
    return Iri(IFC + local_name)


def ifc_class(entity_name: str) -> Iri:
    """Class IRI for a STEP keyword (IFCWALL -> ifc:IfcWall)"""
    name = entity_name.upper()
    local = IFC_CLASS_NAMES.get(name)
    if local is None:
        local = "Ifc" + name[3:].capitalize() if name.startswith("IFC") else name.capitalize()
    return ifc(local)


def _to_decimal(value: Union[int, float]) -> Decimal:
    return Decimal(value) if isinstance(value, int) else Decimal(repr(value))


# ---------------------------------------------------------------------------
# Units
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UnitScale:
    """Factor converting model length units to metres"""

    length_to_meters: Decimal = Decimal(1)
    warnings: Tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        if self.length_to_meters <= 0:
            raise ValueError(f"length scale must be positive, got {self.length_to_meters}")

    def length(self, value: Union[int, float]) -> Decimal:
        """Model length in metres, exact"""
        return _to_decimal(value) * self.length_to_meters

    @property
    def factor(self) -> float:
        return float(self.length_to_meters)


def extract_units(step_file: StepFile) -> UnitScale:
    """
    Read the model's length unit.

    IFCSIUNIT(*,.LENGTHUNIT.,$,.METRE.) gives 1.0, a MILLI prefix gives 0.001.
    Conversion-based units (feet, inches) resolve through their
    IFCMEASUREWITHUNIT factor. Units listed in the IFCUNITASSIGNMENT win over
    stray declarations. No length unit at all means metres plus a warning.
    """
    assigned: Set[int] = set()
    for assignment in step_file.by_name("IFCUNITASSIGNMENT"):
        units = assignment.arg_or(0, ())
        if isinstance(units, tuple):
            assigned.update(u.id for u in units if isinstance(u, Ref))

    length_units = [
        e
        for e in step_file.by_name("IFCSIUNIT", "IFCCONVERSIONBASEDUNIT")
        if e.arg_or(1) == EnumValue("LENGTHUNIT")
    ]
    preferred = [e for e in length_units if e.id in assigned] or length_units

    if not preferred:
        message = "no length unit declared, assuming metres"
        logger.warning("length_unit_missing")
        return UnitScale(Decimal(1), (message,))

    warnings: List[str] = []
    unit = preferred[0]
    if len(preferred) > 1:
        warnings.append(f"several length units declared, using #{unit.id}")

    factor = _unit_factor(unit, step_file, warnings)
    logger.debug("length_unit_resolved", unit_id=unit.id, length_to_meters=str(factor))
    return UnitScale(factor, tuple(warnings))


def _unit_factor(unit: StepEntity, step_file: StepFile, warnings: List[str]) -> Decimal:
    if unit.name == "IFCSIUNIT":
        name = unit.arg_or(3)
        if not (isinstance(name, EnumValue) and name.tag == "METRE"):
            warnings.append(f"#{unit.id}: length unit is not METRE, assuming metres")
            return Decimal(1)
        prefix = unit.arg_or(2)
        if isinstance(prefix, EnumValue):
            factor = SI_PREFIXES.get(prefix.tag)
            if factor is None:
                warnings.append(f"#{unit.id}: unknown SI prefix {prefix.tag}, ignored")
                return Decimal(1)
            return factor
        return Decimal(1)

    # IFCCONVERSIONBASEDUNIT(dims, type, name, #measure_with_unit)
    measure = step_file.get(unit.arg_or(3)) if isinstance(unit.arg_or(3), Ref) else None
    if measure is None or measure.name != "IFCMEASUREWITHUNIT":
        warnings.append(f"#{unit.id}: conversion factor missing, assuming metres")
        return Decimal(1)
    value = measure.arg_or(0)
    if isinstance(value, Typed):
        value = value.value
    if not isinstance(value, (int, float)) or value <= 0:
        warnings.append(f"#{unit.id}: conversion factor is not a positive number, assuming metres")
        return Decimal(1)
    base = step_file.get(measure.arg_or(1)) if isinstance(measure.arg_or(1), Ref) else None
    base_factor = _unit_factor(base, step_file, warnings) if base is not None else Decimal(1)
    return _to_decimal(value) * base_factor


# ---------------------------------------------------------------------------
# Lifting
# ---------------------------------------------------------------------------


def _refs(value: StepValue) -> List[int]:
    if isinstance(value, Ref):
        return [value.id]
    if isinstance(value, tuple):
        return [v.id for v in value if isinstance(v, Ref)]
    return []


class ModelLifter:
    """Lifts one StepFile at a time; warnings of the last run stay on the instance"""

    def __init__(self, config: LiftConfig):
        self.config = config
        self.warnings: List[str] = []
        self._relation_handlers: Dict[str, Callable[[StepEntity], None]] = {
            "IFCRELCONTAINEDINSPATIALSTRUCTURE": self._lift_containment,
            "IFCRELAGGREGATES": self._lift_aggregation,
            "IFCRELDEFINESBYTYPE": self._lift_typing,
            "IFCRELDEFINESBYPROPERTIES": self._lift_properties,
            "IFCRELASSOCIATESCLASSIFICATION": self._lift_classification,
        }

    def lift(self, step_file: StepFile, scale: UnitScale) -> Graph:
        """
        Lift kept entities and relations into a new Graph.

        Args:
            step_file: Parsed model
            scale: Length unit of the model

        Returns:
            Graph with ifc-namespace triples
        """
        self._file = step_file
        self._scale = scale
        self._graph = Graph()
        self.warnings = []

        kept = [e for e in step_file.entities.values() if e.name in self.config.keep_entities]
        self._lifted: Dict[int, Iri] = {e.id: Iri(inst_iri(e.id)) for e in kept}

        for entity in kept:
            self._lift_entity(entity)

        for relation in step_file.entities.values():
            if relation.name not in self.config.keep_relations:
                continue
            handler = self._relation_handlers.get(relation.name)
            if handler is None:
                self.warnings.append(f"#{relation.id}: relation {relation.name} has no lifting rule")
                continue
            missing = [r for i in (4, 5) for r in _refs(relation.arg_or(i)) if step_file.get(r) is None]
            if missing:
                message = f"#{relation.id} {relation.name} references missing #{missing[0]}, relation skipped"
                logger.warning("relation_skipped", relation=relation.id, missing=missing[0])
                self.warnings.append(message)
                continue
            handler(relation)

        logger.info(
            "model_lifted",
            entities=len(kept),
            triples=self._graph.count(),
            warnings=len(self.warnings),
        )
        return self._graph

    # ----- helpers -----

    def _add(self, subject: Iri, predicate: Iri, obj: Term) -> None:
        self._graph.insert(Triple(subject, predicate, obj))

    def _node(self, ref_id: int) -> Optional[Iri]:
        return self._lifted.get(ref_id)

    def _attribute_literal(self, value: StepValue, kind: str) -> Optional[Term]:
        if kind == _TEXT:
            return Literal.text(value) if isinstance(value, str) else None
        if kind == _LENGTH:
            if isinstance(value, Typed):
                value = value.value
            if isinstance(value, (int, float)) and not isinstance(value, bool):
                return Literal.decimal(self._scale.length(value))
            return None
        if kind == _REF and isinstance(value, Ref):
            return self._node(value.id)
        return None

    def property_literal(self, value: StepValue) -> Optional[Literal]:
        """Literal for a property's nominal value (lengths scaled to metres)"""
        if isinstance(value, Typed):
            if value.name in LENGTH_MEASURES and isinstance(value.value, (int, float)):
                return Literal.decimal(self._scale.length(value.value))
            if value.name in ("IFCBOOLEAN", "IFCLOGICAL"):
                if isinstance(value.value, EnumValue) and value.value.tag in ("T", "F"):
                    return Literal.boolean(value.value.tag == "T")
                return None
            value = value.value
        if isinstance(value, bool):
            return Literal.boolean(value)
        if isinstance(value, int):
            return Literal.integer(value)
        if isinstance(value, float):
            return Literal.decimal(_to_decimal(value))
        if isinstance(value, str):
            return Literal.text(value)
        if isinstance(value, EnumValue):
            return Literal.text(value.tag)
        return None

    # ----- entities -----

    def _lift_entity(self, entity: StepEntity) -> None:
        node = self._lifted[entity.id]
        self._add(node, TYPE, ifc_class(entity.name))

        if entity.name in _UNROOTED_ATTRIBUTES:
            specs: Iterable[AttributeSpec] = _UNROOTED_ATTRIBUTES[entity.name]
        else:
            specs = _ROOTED_ATTRIBUTES + _EXTRA_ATTRIBUTES.get(entity.name, ())
        for index, local_name, kind in specs:
            term = self._attribute_literal(entity.arg_or(index), kind)
            if term is not None:
                self._add(node, ifc(local_name), term)

        if entity.name in _UNROOTED_ATTRIBUTES:
            return

        owner = entity.arg_or(1)
        if isinstance(owner, Ref) and self._node(owner.id) is not None:
            self._add(node, ifc("ownerHistory"), self._node(owner.id))

        if entity.name in SPATIAL_ENTITIES:
            return
        is_type_object = entity.name.endswith("TYPE")
        predefined = entity.arg_or(9 if is_type_object else 8)
        if isinstance(predefined, EnumValue):
            self._add(node, ifc("predefinedType"), Literal.text(predefined.tag))
        if is_type_object:
            for pset_id in _refs(entity.arg_or(5)):
                self._lift_property_set(node, pset_id, entity.id)

    # ----- relations -----

    def _lift_containment(self, relation: StepEntity) -> None:
        structure = self._node(next(iter(_refs(relation.arg_or(5))), -1))
        if structure is None:
            return
        for element_id in _refs(relation.arg_or(4)):
            element = self._node(element_id)
            if element is not None:
                self._add(element, ifc("containedIn"), structure)

    def _lift_aggregation(self, relation: StepEntity) -> None:
        whole = self._node(next(iter(_refs(relation.arg_or(4))), -1))
        if whole is None:
            return
        for part_id in _refs(relation.arg_or(5)):
            part = self._node(part_id)
            if part is not None:
                self._add(whole, ifc("aggregates"), part)

    def _lift_typing(self, relation: StepEntity) -> None:
        type_object = self._node(next(iter(_refs(relation.arg_or(5))), -1))
        if type_object is None:
            return
        for object_id in _refs(relation.arg_or(4)):
            occurrence = self._node(object_id)
            if occurrence is not None:
                self._add(occurrence, ifc("definedByType"), type_object)

    def _lift_properties(self, relation: StepEntity) -> None:
        targets = [n for n in (self._node(i) for i in _refs(relation.arg_or(4))) if n is not None]
        for pset_id in _refs(relation.arg_or(5)):
            for target in targets:
                self._lift_property_set(target, pset_id, relation.id)

    def _lift_property_set(self, target: Iri, pset_id: int, owner_id: int) -> None:
        pset = self._file.get(pset_id)
        if pset is None or pset.name != "IFCPROPERTYSET":
            return
        pset_name = pset.arg_or(2)
        pset_name = pset_name if isinstance(pset_name, str) else ""
        for prop_id in _refs(pset.arg_or(4)):
            prop = self._file.get(prop_id)
            if prop is None:
                self.warnings.append(f"#{pset.id} (used by #{owner_id}) references missing property #{prop_id}")
                continue
            if prop.name != "IFCPROPERTYSINGLEVALUE":
                continue
            prop_name = prop.arg_or(0)
            if not isinstance(prop_name, str):
                continue
            for mapping in self.config.property_map:
                if not mapping.matches(pset_name, prop_name):
                    continue
                literal = self.property_literal(prop.arg_or(2))
                if literal is None:
                    self.warnings.append(f"#{prop.id} {pset_name}.{prop_name} has no usable value")
                    break
                self._add(target, Iri(mapping.predicate), literal)
                break

    def _lift_classification(self, relation: StepEntity) -> None:
        node = Iri(inst_iri(relation.id))
        self._add(node, TYPE, ifc_class(relation.name))
        for index, local_name, kind in _ROOTED_ATTRIBUTES:
            term = self._attribute_literal(relation.arg_or(index), kind)
            if term is not None:
                self._add(node, ifc(local_name), term)
        for object_id in _refs(relation.arg_or(4)):
            obj = self._node(object_id)
            if obj is not None:
                self._add(node, ifc("relatedObjects"), obj)
        reference = self._node(next(iter(_refs(relation.arg_or(5))), -1))
        if reference is not None:
            self._add(node, ifc("relatingClassification"), reference)


@lru_cache(maxsize=8)
def _load_config(path: Path) -> LiftConfig:
    return LiftConfig.load(path)


def load_lift_config(path: Optional[Path] = None) -> LiftConfig:
    """Lift configuration from ``path``, or the configured default"""
    return _load_config(Path(path or settings.lift_config_path))


def lift_model(
    step_file: StepFile,
    scale: UnitScale,
    config: Optional[LiftConfig] = None,
    warnings: Optional[List[str]] = None,
) -> Graph:
    """
    Lift a parsed model into ifc-namespace triples.

    Args:
        step_file: Parsed model
        scale: Length unit of the model (see extract_units)
        config: Entity/relation filter and property mappings (default: lift.json)
        warnings: Optional list that receives lifting warnings

    Returns:
        New Graph; a pure function of the three inputs
    """
    lifter = ModelLifter(config or load_lift_config())
    graph = lifter.lift(step_file, scale)
    if warnings is not None:
        warnings.extend(lifter.warnings)
    return graph
