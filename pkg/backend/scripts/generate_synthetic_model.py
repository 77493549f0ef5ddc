"""
Generate Synthetic Model

Writes a procedurally generated IFC4 model for scale runs. The building has
storeys 3 m apart; every storey is a grid of 4 x 4 m rooms on a floor slab.
Each room holds two walls, one load-bearing column and one WC flow terminal
typed WCSEAT. A seeded share of the rooms pushes its WC against the wall and
puts a handrail into the right-hand free space, so those WCs fail the
free-space rule; every other WC is compliant. Column fire durations cycle
through 30 / 60 / 90 minutes. Lengths are written in millimetres.

Usage:
    # ~10,000 building elements
    python -m scripts.generate_synthetic_model --elements 10000 --out synthetic.ifc

    # Smaller model, every WC blocked
    python -m scripts.generate_synthetic_model --elements 400 --blocked 1.0 --out small.ifc

    # Time a check against the default pack
    regcheck check synthetic.ifc --out report.json
"""
import argparse
import math
import random
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

# Add backend directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

import structlog

from app.core.config import settings
from app.core.logging import configure_logging

logger = structlog.get_logger()

GUID_ALPHABET = "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz_$"

STOREY_HEIGHT_MM = 3000.0
ROOM_MM = 4000.0
WALL_MM = 200.0
WALL_HEIGHT_MM = 2800.0
SLAB_MM = 200.0
FIRE_DURATIONS = (30, 60, 90)

# walls, column, WC
ELEMENTS_PER_ROOM = 4


@dataclass
class ModelStats:
    """What a generated model contains"""

    storeys: int = 0
    rooms: int = 0
    elements: int = 0
    entities: int = 0
    blocked_wcs: List[str] = field(default_factory=list)
    columns_by_duration: Dict[int, int] = field(default_factory=dict)


def make_guid(number: int) -> str:
    """22-character IFC GUID for a counter value"""
    digits = []
    for _ in range(22):
        number, rest = divmod(number, 64)
        digits.append(GUID_ALPHABET[rest])
    return "".join(reversed(digits))


def _real(value: float) -> str:
    return f"{value:.1f}"


def _text(value: str) -> str:
    return "'" + value.replace("'", "''") + "'"


def _refs(ids: Iterable[int]) -> str:
    return "(" + ",".join(f"#{i}" for i in ids) + ")"


class StepWriter:
    """Appends DATA statements with consecutive instance numbers"""

    def __init__(self) -> None:
        self.lines: List[str] = []
        self._guids = 0

    def add(self, keyword: str, *args: str) -> int:
        number = len(self.lines) + 1
        self.lines.append(f"#{number}={keyword}({','.join(args)});")
        return number

    def guid(self) -> str:
        self._guids += 1
        return _text(make_guid(self._guids))

    def point(self, x: float, y: float, z: float) -> int:
        return self.add("IFCCARTESIANPOINT", f"({_real(x)},{_real(y)},{_real(z)})")

    def placement(self, parent: int, x: float, y: float, z: float) -> int:
        axis = self.add("IFCAXIS2PLACEMENT3D", f"#{self.point(x, y, z)}", "$", "$")
        return self.add("IFCLOCALPLACEMENT", f"#{parent}" if parent else "$", f"#{axis}")

    def document(self, name: str) -> str:
        header = [
            "ISO-10303-21;",
            "HEADER;",
            "FILE_DESCRIPTION(('ViewDefinition [ReferenceView]'),'2;1');",
            f"FILE_NAME({_text(name)},'1970-01-01T00:00:00',(''),(''),'regcheck','regcheck','');",
            "FILE_SCHEMA(('IFC4'));",
            "ENDSEC;",
            "DATA;",
        ]
        return "\n".join(header + self.lines + ["ENDSEC;", "END-ISO-10303-21;"]) + "\n"


class ModelGenerator:
    """Builds one synthetic model into a StepWriter"""

    def __init__(self, elements: int, storeys: int, blocked: float, seed: int):
        if elements < ELEMENTS_PER_ROOM:
            raise ValueError(f"need at least {ELEMENTS_PER_ROOM} elements, got {elements}")
        if storeys < 1:
            raise ValueError(f"need at least one storey, got {storeys}")
        if not 0.0 <= blocked <= 1.0:
            raise ValueError(f"blocked share must be within [0, 1], got {blocked}")
        self.rooms = math.ceil(elements / ELEMENTS_PER_ROOM)
        self.storeys = min(storeys, self.rooms)
        self.blocked = blocked
        self.random = random.Random(seed)
        self.writer = StepWriter()
        self.stats = ModelStats(storeys=self.storeys, rooms=self.rooms)
        self._columns: Dict[int, List[int]] = {d: [] for d in FIRE_DURATIONS}
        self._wcs: List[int] = []

    def _box_shape(self, context: int, corner: Tuple[float, float, float], dims: Sequence[float]) -> int:
        w = self.writer
        box = w.add("IFCBOUNDINGBOX", f"#{w.point(*corner)}", *(_real(d) for d in dims))
        representation = w.add("IFCSHAPEREPRESENTATION", f"#{context}", "'Box'", "'BoundingBox'", f"(#{box})")
        return w.add("IFCPRODUCTDEFINITIONSHAPE", "$", "$", f"(#{representation})")

    def _element(
        self,
        keyword: str,
        name: str,
        placement: int,
        context: int,
        corner: Tuple[float, float, float],
        dims: Sequence[float],
    ) -> int:
        shape = self._box_shape(context, corner, dims)
        self.stats.elements += 1
        return self.writer.add(keyword, self.writer.guid(), "$", _text(name), "$", "$", f"#{placement}", f"#{shape}", "$")

    def _room(self, storey: int, index: int, placement: int, context: int, origin: Tuple[float, float]) -> List[int]:
        x0, y0 = origin
        label = f"S{storey}R{index}"
        members = [
            self._element("IFCWALL", f"Wall {label}a", placement, context, (x0, y0, 0.0), (WALL_MM, ROOM_MM, WALL_HEIGHT_MM)),
            self._element(
                "IFCWALL",
                f"Wall {label}b",
                placement,
                context,
                (x0 + WALL_MM, y0, 0.0),
                (ROOM_MM - WALL_MM, WALL_MM, WALL_HEIGHT_MM),
            ),
        ]

        column = self._element(
            "IFCCOLUMN",
            f"Column {label}",
            placement,
            context,
            (x0 + ROOM_MM - 400.0, y0 + ROOM_MM - 400.0, 0.0),
            (300.0, 300.0, WALL_HEIGHT_MM),
        )
        placed = sum(len(ids) for ids in self._columns.values())
        self._columns[FIRE_DURATIONS[placed % len(FIRE_DURATIONS)]].append(column)
        members.append(column)

        blocked = self.random.random() < self.blocked
        # WC 600 x 800 x 800; blocked ones sit 200 mm off the wall
        wc_x = x0 + 400.0 if blocked else x0 + 1700.0
        wc = self._element("IFCFLOWTERMINAL", f"WC {label}", placement, context, (wc_x, y0 + 1600.0, 0.0), (600.0, 800.0, 800.0))
        self._wcs.append(wc)
        members.append(wc)
        if blocked:
            self.stats.blocked_wcs.append(f"WC {label}")
            members.append(
                self._element(
                    "IFCRAILING",
                    f"Handrail {label}",
                    placement,
                    context,
                    (wc_x + 800.0, y0 + 1700.0, 700.0),
                    (50.0, 600.0, 50.0),
                )
            )
        return members

    def generate(self, name: str = "synthetic.ifc") -> Tuple[str, ModelStats]:
        w = self.writer
        unit = w.add("IFCSIUNIT", "*", ".LENGTHUNIT.", ".MILLI.", ".METRE.")
        units = w.add("IFCUNITASSIGNMENT", f"(#{unit})")
        world = w.add("IFCAXIS2PLACEMENT3D", f"#{w.point(0.0, 0.0, 0.0)}", "$", "$")
        context = w.add("IFCGEOMETRICREPRESENTATIONCONTEXT", "$", "'Model'", "3", "1.E-05", f"#{world}", "$")
        project = w.add("IFCPROJECT", w.guid(), "$", "'Synthetic project'", "$", "$", "$", "$", f"(#{context})", f"#{units}")
        site_placement = w.placement(0, 0.0, 0.0, 0.0)
        site = w.add("IFCSITE", w.guid(), "$", "'Site'", "$", "$", f"#{site_placement}", "$", "$", ".ELEMENT.", "$", "$", "$", "$", "$")
        building_placement = w.placement(site_placement, 0.0, 0.0, 0.0)
        building = w.add(
            "IFCBUILDING", w.guid(), "$", "'Synthetic building'", "$", "$", f"#{building_placement}", "$", "$", ".ELEMENT.", "$", "$", "$"
        )
        w.add("IFCRELAGGREGATES", w.guid(), "$", "$", "$", f"#{project}", f"(#{site})")
        w.add("IFCRELAGGREGATES", w.guid(), "$", "$", "$", f"#{site}", f"(#{building})")

        per_storey = math.ceil(self.rooms / self.storeys)
        side = math.ceil(math.sqrt(per_storey))
        storey_ids: List[int] = []
        placed = 0
        for level in range(self.storeys):
            elevation = level * STOREY_HEIGHT_MM
            placement = w.placement(building_placement, 0.0, 0.0, elevation)
            storey = w.add(
                "IFCBUILDINGSTOREY",
                w.guid(),
                "$",
                _text(f"Level {level}"),
                "$",
                "$",
                f"#{placement}",
                "$",
                "$",
                ".ELEMENT.",
                _real(elevation),
            )
            storey_ids.append(storey)
            extent = side * ROOM_MM
            members = [
                self._element("IFCSLAB", f"Floor {level}", placement, context, (0.0, 0.0, -SLAB_MM), (extent, extent, SLAB_MM))
            ]
            for index in range(min(per_storey, self.rooms - placed)):
                origin = ((index % side) * ROOM_MM, (index // side) * ROOM_MM)
                members.extend(self._room(level, index, placement, context, origin))
            placed += min(per_storey, self.rooms - placed)
            w.add("IFCRELCONTAINEDINSPATIALSTRUCTURE", w.guid(), "$", "$", "$", _refs(members), f"#{storey}")
        w.add("IFCRELAGGREGATES", w.guid(), "$", "$", "$", f"#{building}", _refs(storey_ids))

        wc_type = w.add("IFCSANITARYTERMINALTYPE", w.guid(), "$", "'WC seat'", "$", "$", "$", "$", "$", "$", ".WCSEAT.")
        w.add("IFCRELDEFINESBYTYPE", w.guid(), "$", "$", "$", _refs(self._wcs), f"#{wc_type}")

        load_bearing = w.add("IFCPROPERTYSINGLEVALUE", "'LoadBearing'", "$", "IFCBOOLEAN(.T.)", "$")
        common = w.add("IFCPROPERTYSET", w.guid(), "$", "'Pset_ColumnCommon'", "$", f"(#{load_bearing})")
        all_columns = [c for ids in self._columns.values() for c in ids]
        w.add("IFCRELDEFINESBYPROPERTIES", w.guid(), "$", "$", "$", _refs(sorted(all_columns)), f"#{common}")
        for duration, columns in self._columns.items():
            if not columns:
                continue
            value = w.add("IFCPROPERTYSINGLEVALUE", "'LoadBearingDurationMinutes'", "$", f"IFCINTEGER({duration})", "$")
            pset = w.add("IFCPROPERTYSET", w.guid(), "$", "'CPset_FireSafety'", "$", f"(#{value})")
            w.add("IFCRELDEFINESBYPROPERTIES", w.guid(), "$", "$", "$", _refs(columns), f"#{pset}")
            self.stats.columns_by_duration[duration] = len(columns)

        self.stats.entities = len(w.lines)
        logger.info(
            "synthetic_model_generated",
            storeys=self.stats.storeys,
            rooms=self.stats.rooms,
            elements=self.stats.elements,
            entities=self.stats.entities,
            blocked=len(self.stats.blocked_wcs),
        )
        return w.document(name), self.stats


def generate_model(elements: int, storeys: int = 10, blocked: float = 0.1, seed: int = 7) -> Tuple[str, ModelStats]:
    """
    Generate a synthetic model.

    Args:
        elements: Approximate number of building elements (walls, columns,
            WCs, handrails; slabs come on top)
        storeys: Number of storeys (capped by the number of rooms)
        blocked: Share of rooms whose WC lacks free space on both sides
        seed: Random seed for the blocked rooms

    Returns:
        (STEP text, ModelStats)
    """
    return ModelGenerator(elements, storeys, blocked, seed).generate()


def main() -> int:
    """Main entry point"""
    parser = argparse.ArgumentParser(description="Generate a synthetic IFC model for scale runs")
    parser.add_argument("--elements", type=int, default=10000, help="Approximate building element count")
    parser.add_argument("--storeys", type=int, default=10, help="Number of storeys")
    parser.add_argument("--blocked", type=float, default=0.1, help="Share of rooms with an obstructed WC")
    parser.add_argument("--seed", type=int, default=7, help="Random seed")
    parser.add_argument("--out", type=Path, required=True, help="Output .ifc path")
    args = parser.parse_args()

    configure_logging(settings.LOG_LEVEL, settings.LOG_FORMAT)

    try:
        text, stats = generate_model(args.elements, args.storeys, args.blocked, args.seed)
    except ValueError as e:
        print(f"✗ {e}")
        return 1

    args.out.write_text(text, encoding="utf-8")
    print(f"✓ {stats.elements:,} elements on {stats.storeys} storeys ({stats.entities:,} entities) -> {args.out}")
    print(f"  {len(stats.blocked_wcs)} of {stats.rooms} WCs obstructed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
