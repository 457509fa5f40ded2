"""Shared data types for the assistive planning pipeline and the canonical scene file format.

All geometry lives in a 2-D metric floor-plan frame (x right, y forward, meters).
Pixel coordinates only appear inside :class:`PerceptionBundle`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Optional, Sequence

SCHEMA_VERSION = 1
DEFAULT_FEATURE_DIM = 512

BBox = tuple[float, float, float, float]
Point = tuple[float, float]


class ContractViolation(ValueError):
    """Raised when an operation is called outside its precondition."""


class SceneParseError(ValueError):
    """A scene file does not conform to the canonical schema."""

    def __init__(self, message: str, field_path: str = "", line: Optional[int] = None):
        self.field_path = field_path
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field_path:
            where.append(field_path)
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class Category(str, Enum):
    CHAIR = "chair"
    TABLE = "table"
    SHELF = "shelf"
    DOOR = "door"
    PERSON = "person"
    PET = "pet"
    SWITCH = "switch"
    MEDICATION = "medication"
    SPILL = "spill"
    SHARP_EDGE = "sharp_edge"
    OTHER = "other"


class Mobility(str, Enum):
    WHEELCHAIR = "wheelchair"
    STANDING = "standing"
    WALKER = "walker"


class Provenance(str, Enum):
    ORACLE = "oracle"
    REMOTE_PROVIDER = "remote_provider"
    FILE = "file"


# --- perception-side types (pixel frame) -------------------------------------


@dataclass(frozen=True)
class SceneImage:
    width_px: int
    height_px: int
    pixel_ref: Optional[str] = None


@dataclass(frozen=True)
class GlobalSemanticFeature:
    values: tuple[float, ...]
    dim: int = DEFAULT_FEATURE_DIM

    def __post_init__(self):
        if len(self.values) != self.dim:
            raise ContractViolation(f"feature length {len(self.values)} != {self.dim}")
        if not all(math.isfinite(v) for v in self.values):
            raise ContractViolation("feature contains non-finite entries")


@dataclass(frozen=True)
class SegmentedObject:
    """One instance mask with its derived centroid, box and confidence.

    ``mask`` is a row-major grid of 0/1 values, ``mask[y][x]``.
    """

    mask: tuple[tuple[int, ...], ...]
    pixel_count: int
    centroid_px: Point
    bbox_px: BBox
    confidence: float

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.mask), (len(self.mask[0]) if self.mask else 0)


@dataclass(frozen=True)
class PerceptionBundle:
    image: SceneImage
    global_feature: Optional[GlobalSemanticFeature]
    objects: tuple[SegmentedObject, ...]

    @property
    def n(self) -> int:
        return len(self.objects)


# --- world-frame scene description ---------------------------------------------


@dataclass(frozen=True)
class ObjectRecord:
    id: str
    category: Category
    centroid_m: Point
    bbox_m: BBox
    height_m: float
    movable: bool
    footprint_area_m2: Optional[float] = None
    confidence: float = 1.0

    def __post_init__(self):
        if self.footprint_area_m2 is None:
            x0, y0, x1, y1 = self.bbox_m
            object.__setattr__(self, "footprint_area_m2", max(0.0, (x1 - x0) * (y1 - y0)))

    def moved_to(self, centroid: Point) -> "ObjectRecord":
        """Copy of this object translated so its centroid sits at ``centroid``."""
        dx = centroid[0] - self.centroid_m[0]
        dy = centroid[1] - self.centroid_m[1]
        x0, y0, x1, y1 = self.bbox_m
        return ObjectRecord(
            id=self.id,
            category=self.category,
            centroid_m=(centroid[0], centroid[1]),
            bbox_m=(x0 + dx, y0 + dy, x1 + dx, y1 + dy),
            height_m=self.height_m,
            movable=self.movable,
            footprint_area_m2=self.footprint_area_m2,
            confidence=self.confidence,
        )


@dataclass(frozen=True)
class PassageAttributes:
    id: str
    width_m: float
    direction: Point
    obstacle_ids: tuple[str, ...]
    area_m2: float
    polyline_m: tuple[Point, ...]


@dataclass(frozen=True)
class UserState:
    position_m: Point
    mobility: Mobility
    reach_height_m: float
    activity_radius_m: float


@dataclass(frozen=True)
class Layout:
    """Room bounds and wall boxes; used for rasterised reachability checks."""

    bounds_m: BBox
    walls: tuple[BBox, ...] = ()


@dataclass(frozen=True)
class SceneDescription:
    objects: tuple[ObjectRecord, ...]
    passages: tuple[PassageAttributes, ...]
    user: UserState
    provenance: Provenance = Provenance.FILE
    layout: Optional[Layout] = None
    scene_id: str = "scene"

    def object_by_id(self, object_id: str) -> Optional[ObjectRecord]:
        for obj in self.objects:
            if obj.id == object_id:
                return obj
        return None

    def effective_layout(self) -> Layout:
        """The declared layout, or a wall-free box around every entity plus 1 m."""
        if self.layout is not None:
            return self.layout
        xs = [self.user.position_m[0]]
        ys = [self.user.position_m[1]]
        for obj in self.objects:
            xs += [obj.bbox_m[0], obj.bbox_m[2]]
            ys += [obj.bbox_m[1], obj.bbox_m[3]]
        for p in self.passages:
            for x, y in p.polyline_m:
                xs.append(x)
                ys.append(y)
        return Layout(bounds_m=(min(xs) - 1.0, min(ys) - 1.0, max(xs) + 1.0, max(ys) + 1.0))


# --- geometry helpers --------------------------------------------------------------


def bbox_area(bbox: Sequence[float]) -> float:
    """Area of an axis-aligned box ``[x_min, y_min, x_max, y_max]``."""
    x0, y0, x1, y1 = bbox
    if not (x1 > x0 and y1 > y0):
        raise ContractViolation(f"malformed bbox {list(bbox)}: min must be < max on both axes")
    return (x1 - x0) * (y1 - y0)


def distance(a: Point, b: Point) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def nearest_point_on_polyline(point: Point, polyline: Sequence[Point]) -> Point:
    """Closest point to ``point`` on a polyline (first one on exact ties)."""
    if len(polyline) == 1:
        return tuple(polyline[0])
    best: Optional[Point] = None
    best_d = math.inf
    px, py = point
    for (ax, ay), (bx, by) in zip(polyline, polyline[1:]):
        vx, vy = bx - ax, by - ay
        seg2 = vx * vx + vy * vy
        t = 0.0 if seg2 == 0 else max(0.0, min(1.0, ((px - ax) * vx + (py - ay) * vy) / seg2))
        q = (ax + t * vx, ay + t * vy)
        d = distance(point, q)
        if d < best_d:
            best, best_d = q, d
    return best


# --- validation -----------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}: {self.message}"


@dataclass(frozen=True)
class ValidationOutcome:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def messages(self) -> list[str]:
        return [str(v) for v in self.violations]


def _finite(*values: float) -> bool:
    return all(isinstance(v, (int, float)) and math.isfinite(v) for v in values)


def _check_bbox(path: str, bbox: Sequence[float], out: list[Violation]) -> bool:
    if len(bbox) != 4 or not _finite(*bbox):
        out.append(Violation(path, "bbox must be four finite numbers"))
        return False
    if not (bbox[2] > bbox[0] and bbox[3] > bbox[1]):
        out.append(Violation(path, "bbox malformed: min must be < max on both axes"))
        return False
    return True


def validate_scene(scene: SceneDescription) -> ValidationOutcome:
    """Collect every invariant violation in ``scene``; never raises."""
    out: list[Violation] = []
    seen: set[str] = set()
    for i, obj in enumerate(scene.objects):
        p = f"objects[{i}]"
        if obj.id in seen:
            out.append(Violation(f"{p}.id", f"duplicate object id {obj.id!r}"))
        seen.add(obj.id)
        if _check_bbox(f"{p}.bbox_m", obj.bbox_m, out):
            area = bbox_area(obj.bbox_m)
            if obj.footprint_area_m2 is None or abs(obj.footprint_area_m2 - area) > 1e-9:
                out.append(Violation(f"{p}.footprint_area_m2", f"stored {obj.footprint_area_m2} != derived {area}"))
        if not _finite(obj.height_m) or obj.height_m < 0:
            out.append(Violation(f"{p}.height_m", "height_m must be >= 0"))
        if not _finite(obj.confidence) or not 0.0 <= obj.confidence <= 1.0:
            out.append(Violation(f"{p}.confidence", "confidence out of [0,1]"))
        if not _finite(*obj.centroid_m):
            out.append(Violation(f"{p}.centroid_m", "centroid must be finite"))
    passage_ids: set[str] = set()
    for i, passage in enumerate(scene.passages):
        p = f"passages[{i}]"
        if passage.id in passage_ids:
            out.append(Violation(f"{p}.id", f"duplicate passage id {passage.id!r}"))
        passage_ids.add(passage.id)
        if not _finite(passage.width_m) or passage.width_m <= 0:
            out.append(Violation(f"{p}.width_m", "width_m must be > 0"))
        if not _finite(passage.area_m2) or passage.area_m2 <= 0:
            out.append(Violation(f"{p}.area_m2", "area_m2 must be > 0"))
        if not passage.polyline_m:
            out.append(Violation(f"{p}.polyline_m", "polyline must have at least one point"))
        for j, oid in enumerate(passage.obstacle_ids):
            if oid not in seen:
                out.append(Violation(f"{p}.obstacle_ids[{j}]", f"unresolved obstacle_id {oid!r}"))
    user = scene.user
    if not _finite(user.reach_height_m) or user.reach_height_m <= 0:
        out.append(Violation("user.reach_height_m", "reach_height_m must be > 0"))
    if not _finite(user.activity_radius_m) or user.activity_radius_m <= 0:
        out.append(Violation("user.activity_radius_m", "activity_radius_m must be > 0"))
    if scene.layout is not None:
        _check_bbox("layout.bounds_m", scene.layout.bounds_m, out)
        for i, wall in enumerate(scene.layout.walls):
            _check_bbox(f"layout.walls[{i}]", wall, out)
    return ValidationOutcome(tuple(out))


# --- canonical JSON files ------------------------------------------------------------------


def dumps(payload: Any) -> bytes:
    """Deterministic JSON encoding shared by every emitted file."""
    return (json.dumps(payload, indent=2, ensure_ascii=False, allow_nan=False) + "\n").encode("utf-8")


def loads(data: bytes | str) -> Any:
    text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneParseError(f"invalid JSON: {exc.msg}", line=exc.lineno) from exc


def object_to_dict(obj: ObjectRecord) -> dict:
    return {
        "id": obj.id,
        "category": obj.category.value,
        "centroid_m": list(obj.centroid_m),
        "bbox_m": list(obj.bbox_m),
        "height_m": obj.height_m,
        "movable": obj.movable,
        "footprint_area_m2": obj.footprint_area_m2,
        "confidence": obj.confidence,
    }


def passage_to_dict(p: PassageAttributes) -> dict:
    return {
        "id": p.id,
        "width_m": p.width_m,
        "direction": list(p.direction),
        "obstacle_ids": list(p.obstacle_ids),
        "area_m2": p.area_m2,
        "polyline_m": [list(pt) for pt in p.polyline_m],
    }


def user_to_dict(u: UserState) -> dict:
    return {
        "position_m": list(u.position_m),
        "mobility": u.mobility.value,
        "reach_height_m": u.reach_height_m,
        "activity_radius_m": u.activity_radius_m,
    }


def scene_to_dict(scene: SceneDescription) -> dict:
    out = {
        "schema_version": SCHEMA_VERSION,
        "scene_id": scene.scene_id,
        "provenance": scene.provenance.value,
        "objects": [object_to_dict(o) for o in scene.objects],
        "passages": [passage_to_dict(p) for p in scene.passages],
        "user": user_to_dict(scene.user),
    }
    if scene.layout is not None:
        out["layout"] = {
            "bounds_m": list(scene.layout.bounds_m),
            "walls": [list(w) for w in scene.layout.walls],
        }
    return out


def emit_scene_file(scene: SceneDescription) -> bytes:
    return dumps(scene_to_dict(scene))


class _Reader:
    """Typed field access over decoded JSON with path-aware errors."""

    def __init__(self, data: Any, path: str):
        self.data = data
        self.path = path

    def _sub(self, key) -> str:
        return f"{self.path}[{key}]" if isinstance(key, int) else (f"{self.path}.{key}" if self.path else key)

    def require(self, key: str) -> Any:
        if not isinstance(self.data, dict):
            raise SceneParseError("expected an object", self.path)
        if key not in self.data:
            raise SceneParseError(f"missing required field {key!r}", self._sub(key))
        return self.data[key]

    def child(self, key: str) -> "_Reader":
        return _Reader(self.require(key), self._sub(key))

    def items(self, key: str) -> list["_Reader"]:
        value = self.require(key)
        if not isinstance(value, list):
            raise SceneParseError("expected a list", self._sub(key))
        base = self._sub(key)
        return [_Reader(v, f"{base}[{i}]") for i, v in enumerate(value)]

    def number(self, key: str) -> float:
        value = self.require(key)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SceneParseError("expected a number", self._sub(key))
        return float(value)

    def integer(self, key: str) -> int:
        value = self.require(key)
        if isinstance(value, bool) or not isinstance(value, int):
            raise SceneParseError("expected an integer", self._sub(key))
        return value

    def string(self, key: str) -> str:
        value = self.require(key)
        if not isinstance(value, str):
            raise SceneParseError("expected a string", self._sub(key))
        return value

    def boolean(self, key: str) -> bool:
        value = self.require(key)
        if not isinstance(value, bool):
            raise SceneParseError("expected a boolean", self._sub(key))
        return value

    def vector(self, key: str, length: Optional[int] = None) -> tuple[float, ...]:
        value = self.require(key)
        if not isinstance(value, list) or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value):
            raise SceneParseError("expected a list of numbers", self._sub(key))
        if length is not None and len(value) != length:
            raise SceneParseError(f"expected {length} numbers", self._sub(key))
        return tuple(float(v) for v in value)

    def enum(self, key: str, enum_cls: type[Enum]) -> Any:
        raw = self.string(key)
        try:
            return enum_cls(raw)
        except ValueError:
            allowed = ", ".join(e.value for e in enum_cls)
            raise SceneParseError(f"unknown value {raw!r} (allowed: {allowed})", self._sub(key)) from None

    def optional(self, key: str) -> bool:
        return isinstance(self.data, dict) and key in self.data


def _read_object(r: _Reader) -> ObjectRecord:
    confidence = r.number("confidence") if r.optional("confidence") else 1.0
    if not 0.0 <= confidence <= 1.0:
        raise SceneParseError("confidence out of [0,1]", f"{r.path}.confidence")
    return ObjectRecord(
        id=r.string("id"),
        category=r.enum("category", Category),
        centroid_m=r.vector("centroid_m", 2),
        bbox_m=r.vector("bbox_m", 4),
        height_m=r.number("height_m"),
        movable=r.boolean("movable"),
        footprint_area_m2=r.number("footprint_area_m2"),
        confidence=confidence,
    )


def _read_passage(r: _Reader) -> PassageAttributes:
    ids = r.require("obstacle_ids")
    if not isinstance(ids, list) or not all(isinstance(i, str) for i in ids):
        raise SceneParseError("expected a list of strings", f"{r.path}.obstacle_ids")
    points = []
    for pr in r.items("polyline_m"):
        pt = pr.data
        if not (isinstance(pt, list) and len(pt) == 2 and _finite(*pt) and not any(isinstance(v, bool) for v in pt)):
            raise SceneParseError("expected an [x, y] point", pr.path)
        points.append((float(pt[0]), float(pt[1])))
    return PassageAttributes(
        id=r.string("id"),
        width_m=r.number("width_m"),
        direction=r.vector("direction", 2),
        obstacle_ids=tuple(ids),
        area_m2=r.number("area_m2"),
        polyline_m=tuple(points),
    )


def _read_user(r: _Reader) -> UserState:
    return UserState(
        position_m=r.vector("position_m", 2),
        mobility=r.enum("mobility", Mobility),
        reach_height_m=r.number("reach_height_m"),
        activity_radius_m=r.number("activity_radius_m"),
    )


def scene_from_dict(data: Any, *, validate: bool = True) -> SceneDescription:
    root = _Reader(data, "")
    if not isinstance(data, dict):
        raise SceneParseError("scene file must hold a JSON object")
    version = root.integer("schema_version")
    if version != SCHEMA_VERSION:
        raise SceneParseError(f"unsupported schema_version {version}", "schema_version")
    layout = None
    if root.optional("layout"):
        lr = root.child("layout")
        walls = []
        for i, w in enumerate(lr.require("walls")):
            wr = _Reader({"w": w}, f"layout.walls[{i}]")
            walls.append(wr.vector("w", 4))
        layout = Layout(bounds_m=lr.vector("bounds_m", 4), walls=tuple(walls))
    scene = SceneDescription(
        objects=tuple(_read_object(o) for o in root.items("objects")),
        passages=tuple(_read_passage(p) for p in root.items("passages")),
        user=_read_user(root.child("user")),
        provenance=root.enum("provenance", Provenance),
        layout=layout,
        scene_id=root.string("scene_id") if root.optional("scene_id") else "scene",
    )
    if validate:
        outcome = validate_scene(scene)
        if not outcome.ok:
            first = outcome.violations[0]
            detail = "; ".join(outcome.messages())
            raise SceneParseError(detail, first.path)
    return scene


def parse_scene_file(data: bytes | str) -> SceneDescription:
    return scene_from_dict(loads(data))

