"""
Geometry Pre-processor

World-space oriented bounding boxes for lifted elements, the separating-axis
kernel behind the topological predicates, FreeSpace synthesis, and the
geometric triples written back into the knowledge graph.

Conventions:
    - lengths are metres once they leave this module's readers
    - Obb axes are stored as rows: axis 0 lateral, axis 1 facing, axis 2 vertical
    - separation < 0 overlap, = 0 touching, > 0 gap in metres
"""
import hashlib
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import structlog

from app.core.exceptions import GeometryError
from app.services.graph_store import BNode, Graph, Iri, Literal, LiteralKind, Triple
from app.services.model_lift import SPATIAL_ENTITIES, UnitScale
from app.services.step_parser import Ref, StepEntity, StepFile, StepValue, Typed
from app.utils.namespaces import GEO, IFC, instance_number, iri_sort_key

logger = structlog.get_logger()

ORTHONORMAL_TOL = 1e-9
CROSS_AXIS_MIN_NORM = 1e-9
# separations smaller than this are rounding noise on touching faces
TOUCH_TOLERANCE = 1e-9

UNSUPPORTED_REPRESENTATION = "unsupported representation"
NO_REPRESENTATION = "no representation"

_X = np.array([1.0, 0.0, 0.0])
_Y = np.array([0.0, 1.0, 0.0])
_Z = np.array([0.0, 0.0, 1.0])


class Side(str, Enum):
    LEFT = "LEFT"
    RIGHT = "RIGHT"


# ---------------------------------------------------------------------------
# Transforms and placements
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Transform:
    """Rigid motion: rotation (3x3, columns = local axes in parent frame) + translation (m)"""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        translation = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.allclose(rotation.T @ rotation, np.eye(3), atol=ORTHONORMAL_TOL * 10):
            raise GeometryError("transform rotation is not orthonormal")
        if abs(np.linalg.det(rotation) - 1.0) > ORTHONORMAL_TOL * 10:
            raise GeometryError("transform rotation is not a proper rotation")
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @classmethod
    def identity(cls) -> "Transform":
        return cls(np.eye(3), np.zeros(3))

    def then(self, outer: "Transform") -> "Transform":
        """Apply self first, then ``outer``"""
        return Transform(outer.rotation @ self.rotation, outer.rotation @ self.translation + outer.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map points (shape (3,) or (n, 3))"""
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def apply_direction(self, vectors: np.ndarray) -> np.ndarray:
        return np.asarray(vectors, dtype=float) @ self.rotation.T

    def matrix(self) -> np.ndarray:
        """Homogeneous 4x4 form"""
        out = np.eye(4)
        out[:3, :3] = self.rotation
        out[:3, 3] = self.translation
        return out


@dataclass(frozen=True)
class AxisPlacement:
    """IFCAXIS2PLACEMENT3D values in model units; axis = local Z, ref_direction = local X"""

    location: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    axis: Optional[Tuple[float, float, float]] = None
    ref_direction: Optional[Tuple[float, float, float]] = None
    label: str = ""

    def to_transform(self, scale: UnitScale) -> Transform:
        z = _unit(self.axis if self.axis is not None else _Z, self.label, "axis")
        if self.ref_direction is not None:
            x_hint = _unit(self.ref_direction, self.label, "ref direction")
        else:
            x_hint = _X if abs(float(np.dot(_X, z))) < 1.0 - 1e-12 else _Y
        # Gram-Schmidt against Z
        x = x_hint - np.dot(x_hint, z) * z
        norm = float(np.linalg.norm(x))
        if norm < 1e-12:
            raise GeometryError(f"placement {self.label or '?'}: ref direction parallel to axis")
        x = x / norm
        y = np.cross(z, x)
        rotation = np.column_stack([x, y, z])
        translation = np.asarray(self.location, dtype=float) * scale.factor
        return Transform(rotation, translation)


def _unit(vector: Sequence[float], label: str, what: str) -> np.ndarray:
    v = np.asarray(vector, dtype=float)
    norm = float(np.linalg.norm(v))
    if norm < 1e-12:
        raise GeometryError(f"placement {label or '?'}: zero-length {what}")
    return v / norm


def compose_placements(chain: Sequence[AxisPlacement], scale: UnitScale) -> Transform:
    """
    World transform of an element.

    Args:
        chain: Axis placements ordered from the element outward to world
        scale: Model length unit (translations end up in metres)

    Returns:
        Composed Transform

    Raises:
        GeometryError: zero-length direction in any placement
    """
    result = Transform.identity()
    for placement in chain:
        result = result.then(placement.to_transform(scale))
    return result


def _coordinates(step_file: StepFile, value: StepValue, what: str, dims: int = 3) -> Optional[Tuple[float, ...]]:
    if not isinstance(value, Ref):
        return None
    entity = step_file.get(value)
    if entity is None:
        raise GeometryError(f"{what} #{value.id} is missing")
    raw = entity.arg_or(0, ())
    if not isinstance(raw, tuple) or not all(isinstance(c, (int, float)) for c in raw):
        raise GeometryError(f"{what} #{entity.id} has no coordinate list")
    coords = [float(c) for c in raw][:dims]
    coords += [0.0] * (dims - len(coords))
    return tuple(coords)


def read_axis_placement(step_file: StepFile, value: StepValue) -> AxisPlacement:
    """AxisPlacement from an IFCAXIS2PLACEMENT3D/2D reference ($ = identity)"""
    if not isinstance(value, Ref):
        return AxisPlacement()
    entity = step_file.get(value)
    if entity is None:
        raise GeometryError(f"placement #{value.id} is missing")
    label = f"#{entity.id}"
    location = _coordinates(step_file, entity.arg_or(0), "point") or (0.0, 0.0, 0.0)
    if entity.name == "IFCAXIS2PLACEMENT2D":
        ref = _coordinates(step_file, entity.arg_or(1), "direction")
        return AxisPlacement(location, None, ref, label)  # type: ignore[arg-type]
    if entity.name != "IFCAXIS2PLACEMENT3D":
        raise GeometryError(f"{label}: {entity.name} is not an axis placement")
    axis = _coordinates(step_file, entity.arg_or(1), "direction")
    ref = _coordinates(step_file, entity.arg_or(2), "direction")
    return AxisPlacement(location, axis, ref, label)  # type: ignore[arg-type]


def placement_chain(step_file: StepFile, placement_id: int) -> List[AxisPlacement]:
    """
    Resolve an IFCLOCALPLACEMENT and its PlacementRelTo parents.

    Returns:
        Axis placements ordered from the element outward to world

    Raises:
        GeometryError: missing placement or a PlacementRelTo cycle
    """
    chain: List[AxisPlacement] = []
    seen = set()
    current: Optional[int] = placement_id
    while current is not None:
        if current in seen:
            raise GeometryError(f"placement cycle through #{current}")
        seen.add(current)
        entity = step_file.get(current)
        if entity is None:
            raise GeometryError(f"placement #{current} is missing")
        if entity.name != "IFCLOCALPLACEMENT":
            raise GeometryError(f"#{current}: {entity.name} is not supported as object placement")
        chain.append(read_axis_placement(step_file, entity.arg_or(1)))
        parent = entity.arg_or(0)
        current = parent.id if isinstance(parent, Ref) else None
    return chain


def world_transform(step_file: StepFile, entity: StepEntity, scale: UnitScale) -> Transform:
    """Composed ObjectPlacement of a product (identity when unset)"""
    placement = entity.arg_or(5)
    if not isinstance(placement, Ref):
        return Transform.identity()
    return compose_placements(placement_chain(step_file, placement.id), scale)


# ---------------------------------------------------------------------------
# Oriented boxes
# ---------------------------------------------------------------------------


class Obb:
    """Oriented bounding box; axes are rows of a 3x3 array"""

    __slots__ = ("center", "axes", "half_extents")

    def __init__(self, center: Iterable[float], axes: Iterable[Iterable[float]], half_extents: Iterable[float]):
        self.center = np.asarray(center, dtype=float).reshape(3)
        self.axes = np.asarray(axes, dtype=float).reshape(3, 3)
        self.half_extents = np.asarray(half_extents, dtype=float).reshape(3)
        if not np.all(self.half_extents > 0):
            raise GeometryError(f"box half extents must be positive, got {self.half_extents.tolist()}")
        if not np.allclose(self.axes @ self.axes.T, np.eye(3), atol=ORTHONORMAL_TOL):
            raise GeometryError("box axes are not orthonormal")

    @classmethod
    def axis_aligned(cls, center: Iterable[float], half_extents: Iterable[float]) -> "Obb":
        return cls(center, np.eye(3), half_extents)

    def __repr__(self) -> str:
        return (
            f"Obb(center={self.center.tolist()}, axes={self.axes.tolist()}, "
            f"half_extents={self.half_extents.tolist()})"
        )

    def corners(self) -> np.ndarray:
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
        return self.center + (signs * self.half_extents) @ self.axes

    def transformed(self, transform: Transform) -> "Obb":
        return Obb(transform.apply(self.center), transform.apply_direction(self.axes), self.half_extents)

    def contains(self, points: np.ndarray, tol: float = 0.0) -> np.ndarray:
        """Membership of points (n, 3) as a boolean array"""
        local = (np.atleast_2d(points) - self.center) @ self.axes.T
        return np.all(np.abs(local) <= self.half_extents + tol, axis=1)

    def extent(self) -> np.ndarray:
        """Half size of the world-axis-aligned envelope"""
        return np.abs(self.axes).T @ self.half_extents

    @property
    def z_min(self) -> float:
        return float(self.center[2] - self.extent()[2])

    @property
    def z_max(self) -> float:
        return float(self.center[2] + self.extent()[2])

    def with_facing_axis(self, facing_axis: int) -> "Obb":
        """
        Re-label axes so ``facing_axis`` becomes the facing direction.

        1 keeps the box; 0 turns (a0, a1, a2) into (a1, -a0, a2), keeping
        right-handedness and the vertical axis.
        """
        if facing_axis == 1:
            return self
        if facing_axis != 0:
            raise GeometryError(f"facing axis must be 0 or 1, got {facing_axis}")
        a0, a1, a2 = self.axes
        h0, h1, h2 = self.half_extents
        return Obb(self.center, [a1, -a0, a2], [h1, h0, h2])


def _box_from_points(points: np.ndarray, axes: np.ndarray) -> Obb:
    local = points @ axes.T
    low = local.min(axis=0)
    high = local.max(axis=0)
    return Obb(((low + high) / 2.0) @ axes, axes, (high - low) / 2.0)


def _positive(value: StepValue, what: str, label: str) -> float:
    if isinstance(value, Typed):
        value = value.value
    if not isinstance(value, (int, float)):
        raise GeometryError(f"{label}: {what} is not a number")
    if value <= 0:
        raise GeometryError(f"{label}: {what} must be positive, got {value}")
    return float(value)


def _item_corners(item: StepEntity, step_file: StepFile, scale: UnitScale) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    """(corners in metres, frame axes) of one representation item in the element frame"""
    label = f"#{item.id}"
    if item.name == "IFCBOUNDINGBOX":
        corner = np.asarray(_coordinates(step_file, item.arg_or(0), "point") or (0.0, 0.0, 0.0))
        dims = np.array([_positive(item.arg_or(i), d, label) for i, d in ((1, "XDim"), (2, "YDim"), (3, "ZDim"))])
        low = corner * scale.factor
        high = (corner + dims) * scale.factor
        box = Obb.axis_aligned((low + high) / 2.0, (high - low) / 2.0)
        return box.corners(), box.axes

    if item.name == "IFCEXTRUDEDAREASOLID":
        profile = step_file.get(item.arg_or(0)) if isinstance(item.arg_or(0), Ref) else None
        if profile is None or profile.name != "IFCRECTANGLEPROFILEDEF":
            return None
        x_dim = _positive(profile.arg_or(3), "XDim", f"#{profile.id}")
        y_dim = _positive(profile.arg_or(4), "YDim", f"#{profile.id}")
        depth = _positive(item.arg_or(3), "Depth", label)

        # rectangle in the profile's 2D position, then the solid's 3D position
        profile_frame = read_axis_placement(step_file, profile.arg_or(2)).to_transform(UnitScale())
        solid_frame = read_axis_placement(step_file, item.arg_or(1)).to_transform(UnitScale())
        direction = _coordinates(step_file, item.arg_or(2), "direction") or (0.0, 0.0, 1.0)
        direction = _unit(direction, label, "extrusion direction")
        if abs(direction[2]) < 1e-12:
            raise GeometryError(f"{label}: extrusion direction lies in the profile plane")

        rect = np.array(
            [[sx * x_dim / 2.0, sy * y_dim / 2.0, 0.0] for sx in (-1, 1) for sy in (-1, 1)]
        )
        base = profile_frame.apply(rect)
        local = np.vstack([base, base + direction * depth])
        corners = solid_frame.apply(local) * scale.factor
        axes = solid_frame.apply_direction(profile_frame.rotation.T)
        return corners, axes

    return None


def representation_items(entity: StepEntity, step_file: StepFile) -> List[StepEntity]:
    """Items of every shape representation of a product (in file order)"""
    shape = step_file.get(entity.arg_or(6)) if isinstance(entity.arg_or(6), Ref) else None
    if shape is None:
        return []
    items: List[StepEntity] = []
    for rep_ref in shape.arg_or(2, ()):
        representation = step_file.get(rep_ref) if isinstance(rep_ref, Ref) else None
        if representation is None:
            continue
        for item_ref in representation.arg_or(3, ()):
            item = step_file.get(item_ref) if isinstance(item_ref, Ref) else None
            if item is not None:
                items.append(item)
    return items


def obb_from_representation(
    entity: StepEntity, step_file: StepFile, world: Transform, scale: UnitScale
) -> Optional[Obb]:
    """
    World Obb of a product's representation.

    Supports IFCBOUNDINGBOX and IFCEXTRUDEDAREASOLID over IFCRECTANGLEPROFILEDEF.
    A bounding box item wins when present; several solid items are enveloped
    in the element frame. Anything else gives None (unsupported representation).

    Raises:
        GeometryError: zero or negative dimensions, degenerate directions
    """
    items = representation_items(entity, step_file)
    boxes = [i for i in items if i.name == "IFCBOUNDINGBOX"]
    solids = [i for i in items if i.name == "IFCEXTRUDEDAREASOLID"]

    parts = []
    for item in boxes[:1] or solids:
        found = _item_corners(item, step_file, scale)
        if found is not None:
            parts.append(found)
    if not parts:
        return None

    if len(parts) == 1:
        corners, axes = parts[0]
    else:
        corners = np.vstack([c for c, _ in parts])
        axes = np.eye(3)
    local_box = _box_from_points(corners, axes)
    return local_box.transformed(world)


# ---------------------------------------------------------------------------
# Separating axis kernel
# ---------------------------------------------------------------------------


def _radius(box: Obb, axis: np.ndarray) -> float:
    projections = np.abs(box.axes @ axis)
    return float(
        box.half_extents[0] * projections[0]
        + box.half_extents[1] * projections[1]
        + box.half_extents[2] * projections[2]
    )


def separation(a: Obb, b: Obb) -> float:
    """
    Signed separation along the best of the 15 candidate axes.

    Returns:
        s < 0 overlap depth, s = 0 touching, s > 0 gap in metres.
        Values within TOUCH_TOLERANCE of zero are reported as touching.
    """
    d = b.center - a.center
    candidates = [a.axes[i] for i in range(3)] + [b.axes[j] for j in range(3)]
    for i in range(3):
        for j in range(3):
            cross = np.cross(a.axes[i], b.axes[j])
            norm = float(np.linalg.norm(cross))
            if norm >= CROSS_AXIS_MIN_NORM:
                candidates.append(cross / norm)

    best = -np.inf
    for axis in candidates:
        gap = abs(float(d @ axis)) - (_radius(a, axis) + _radius(b, axis))
        if gap > best:
            best = gap
    if abs(best) < TOUCH_TOLERANCE:
        return 0.0
    return float(best)


def intersects(a: Obb, b: Obb) -> bool:
    """True iff the boxes overlap (touching is not intersecting)"""
    return separation(a, b) < 0


def adjacent(a: Obb, b: Obb, eps: float = 0.001) -> bool:
    """True iff the boxes touch within ``eps`` metres"""
    if eps <= 0:
        raise GeometryError(f"adjacency tolerance must be positive, got {eps}")
    return abs(separation(a, b)) <= eps


def make_freespace(anchor: Obb, side: Side, width: float, depth: float, height: float) -> Obb:
    """
    FreeSpace box flush against the anchor's left or right face.

    The box shares the anchor's axes: width along lateral (axis 0), depth
    along facing (axis 1), height along vertical (axis 2); its base is level
    with the anchor's base.

    Raises:
        GeometryError: non-positive dimensions
    """
    for name, value in (("width", width), ("depth", depth), ("height", height)):
        if value <= 0:
            raise GeometryError(f"free space {name} must be positive, got {value}")
    side = Side(side)
    lateral, _, vertical = anchor.axes
    e_lateral, _, e_vertical = anchor.half_extents
    sign = -1.0 if side is Side.LEFT else 1.0
    center = anchor.center + sign * lateral * (e_lateral + width / 2.0) + vertical * (height / 2.0 - e_vertical)
    return Obb(center, anchor.axes, (width / 2.0, depth / 2.0, height / 2.0))


# ---------------------------------------------------------------------------
# Triples
# ---------------------------------------------------------------------------

HAS_OBB = Iri(GEO + "hasObb")
BASE_ELEVATION = Iri(GEO + "baseElevation")
TOP_ELEVATION = Iri(GEO + "topElevation")
CENTER_PREDICATES = tuple(Iri(GEO + f"center{c}") for c in "XYZ")
AXIS_PREDICATES = tuple(tuple(Iri(GEO + f"axis{i}{c}") for c in "XYZ") for i in range(3))
HALF_EXTENT_PREDICATES = tuple(Iri(GEO + f"halfExtent{i}") for i in range(3))
FACING_AXIS = Iri(IFC + "facingAxis")


def _number(value: float) -> Literal:
    return Literal.decimal(float(value), places=6)


def _node_for(element: Iri) -> BNode:
    number = instance_number(element.value)
    if number is None:
        number = int.from_bytes(hashlib.sha1(element.value.encode("utf-8")).digest()[:6], "big")
    return BNode(number)


def geometry_triples(element: Iri, box: Obb, node: Optional[BNode] = None) -> List[Triple]:
    """
    Triples describing a box: the hasObb link plus 15 numbers (centre,
    axes, half extents) rendered with six decimals.
    """
    node = node or _node_for(element)
    triples = [Triple(element, HAS_OBB, node)]
    for predicate, value in zip(CENTER_PREDICATES, box.center):
        triples.append(Triple(node, predicate, _number(value)))
    for i in range(3):
        for predicate, value in zip(AXIS_PREDICATES[i], box.axes[i]):
            triples.append(Triple(node, predicate, _number(value)))
    for predicate, value in zip(HALF_EXTENT_PREDICATES, box.half_extents):
        triples.append(Triple(node, predicate, _number(value)))
    return triples


# ---------------------------------------------------------------------------
# Index
# ---------------------------------------------------------------------------


class GeomIndex:
    """Element Obbs, elements without geometry, and a broad-phase envelope table"""

    def __init__(self, boxes: Optional[Dict[Iri, Obb]] = None, missing: Optional[Dict[Iri, str]] = None):
        self.boxes: Dict[Iri, Obb] = dict(sorted((boxes or {}).items(), key=lambda kv: iri_sort_key(kv[0].value)))
        self.missing: Dict[Iri, str] = dict(missing or {})
        self._keys = list(self.boxes)
        if self._keys:
            centers = np.array([self.boxes[k].center for k in self._keys])
            extents = np.array([self.boxes[k].extent() for k in self._keys])
            self._mins = centers - extents
            self._maxs = centers + extents
        else:
            self._mins = np.zeros((0, 3))
            self._maxs = np.zeros((0, 3))

    def get(self, element: Iri) -> Optional[Obb]:
        return self.boxes.get(element)

    def __contains__(self, element: object) -> bool:
        return element in self.boxes

    def __len__(self) -> int:
        return len(self.boxes)

    def candidates(self, box: Obb, margin: float = 0.0) -> List[Iri]:
        """Elements whose envelopes overlap the box's envelope (widened by margin)"""
        if not self._keys:
            return []
        extent = box.extent() + margin
        low = box.center - extent
        high = box.center + extent
        hits = np.all((self._mins <= high) & (self._maxs >= low), axis=1)
        return [self._keys[i] for i in np.flatnonzero(hits)]


class GeometryPreprocessor:
    """Builds the GeomIndex of a lifted model and writes geometric triples"""

    def build_index(self, step_file: StepFile, graph: Graph, scale: UnitScale) -> GeomIndex:
        """
        Compute an Obb for every lifted product with a supported representation.

        Adds geometry_triples plus geo:baseElevation / geo:topElevation for
        each boxed element. Elements whose geometry is missing or broken are
        listed in GeomIndex.missing with the reason; they never abort the run.
        """
        boxes: Dict[Iri, Obb] = {}
        missing: Dict[Iri, str] = {}

        elements = sorted(
            {t.subject for t in graph.triples() if isinstance(t.subject, Iri)},
            key=lambda iri: iri_sort_key(iri.value),
        )
        for element in elements:
            number = instance_number(element.value)
            entity = step_file.get(number) if number is not None else None
            if entity is None or not _is_product(entity):
                continue
            try:
                world = world_transform(step_file, entity, scale)
                box = obb_from_representation(entity, step_file, world, scale)
            except GeometryError as e:
                logger.warning("element_geometry_failed", element=element.value, error=str(e))
                missing[element] = str(e)
                continue
            if box is None:
                if not isinstance(entity.arg_or(6), Ref):
                    if entity.name not in SPATIAL_ENTITIES:
                        missing[element] = NO_REPRESENTATION
                else:
                    missing[element] = UNSUPPORTED_REPRESENTATION
                continue

            facing = graph.value(element, FACING_AXIS)
            if isinstance(facing, Literal) and facing.kind is LiteralKind.INTEGER:
                try:
                    box = box.with_facing_axis(int(facing.value))
                except GeometryError as e:
                    missing[element] = str(e)
                    continue
            boxes[element] = box

        for element, box in boxes.items():
            graph.insert_many(geometry_triples(element, box))
            graph.insert(Triple(element, BASE_ELEVATION, _number(box.z_min)))
            graph.insert(Triple(element, TOP_ELEVATION, _number(box.z_max)))

        index = GeomIndex(boxes, missing)
        logger.info("geometry_index_built", boxes=len(boxes), missing=len(missing))
        return index


def _is_product(entity: StepEntity) -> bool:
    """Occurrences carrying ObjectPlacement/Representation slots (not type objects)"""
    if entity.name.endswith("TYPE") or entity.name.startswith("IFCREL"):
        return False
    return isinstance(entity.arg_or(5), Ref) or isinstance(entity.arg_or(6), Ref)


_geometry_preprocessor: Optional[GeometryPreprocessor] = None


def get_geometry_preprocessor() -> GeometryPreprocessor:
    """Get the global geometry pre-processor instance"""
    global _geometry_preprocessor
    if _geometry_preprocessor is None:
        _geometry_preprocessor = GeometryPreprocessor()
    return _geometry_preprocessor
