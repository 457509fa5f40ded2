"""Seeded grid-home generator.

Worlds are laid out left to right: rooms joined by straight corridors, with a
dead-end corridor leaving the last room. Every edge sits on the 0.1 m grid so
the rasterised floor matches the declared geometry exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

from ..domain import (
    BBox,
    Category,
    ContractViolation,
    Layout,
    Mobility,
    ObjectRecord,
    Point,
    SceneDescription,
    SceneParseError,
    UserState,
    dumps,
    loads,
    scene_from_dict,
    scene_to_dict,
)
from ..geometry import RESOLUTION_M, Raster, box_circle_distance, boxes_overlap, rasterize

LEVELS = (1, 2, 3)
CORRIDOR_WIDTHS = (0.7, 0.9, 1.0, 1.2, 1.4)
USER_BODY_RADIUS_M = 0.35

# (width, depth) choices in grid cells, height range in meters, movable
_CATALOG: dict[Category, tuple[tuple[tuple[int, int], ...], tuple[float, float], bool]] = {
    Category.CHAIR: (((4, 4), (5, 5)), (0.8, 1.0), True),
    Category.TABLE: (((6, 8), (8, 8), (8, 12)), (0.7, 0.8), True),
    Category.SHELF: (((4, 8), (3, 10)), (1.2, 2.2), True),
    Category.DOOR: (((1, 8),), (2.0, 2.1), False),
    Category.PERSON: (((5, 5),), (1.5, 1.9), True),
    Category.PET: (((3, 5), (5, 3)), (0.3, 0.6), True),
    Category.SWITCH: (((1, 1),), (0.9, 2.1), False),
    Category.MEDICATION: (((1, 1),), (0.4, 2.0), True),
    Category.SPILL: (((4, 4), (6, 4)), (0.0, 0.01), False),
    Category.SHARP_EDGE: (((2, 2), (3, 2)), (0.3, 0.9), True),
    Category.OTHER: (((3, 3), (4, 4)), (0.3, 1.2), True),
}
# draw weights; "other" is rare so most scenes stay inside the action library
_WEIGHTS = {
    Category.CHAIR: 4, Category.TABLE: 2, Category.SHELF: 2, Category.DOOR: 1, Category.PERSON: 1,
    Category.PET: 1, Category.SWITCH: 2, Category.MEDICATION: 2, Category.SPILL: 1, Category.SHARP_EDGE: 1,
    Category.OTHER: 1,
}
_CATEGORIES = tuple(_WEIGHTS)
_PROBS = np.array([_WEIGHTS[c] for c in _CATEGORIES], dtype=float) / sum(_WEIGHTS.values())


@dataclass(frozen=True)
class Corridor:
    id: str
    box: BBox
    width_m: float
    polyline_m: tuple[Point, ...]

    @property
    def direction(self) -> Point:
        return (1.0, 0.0)

    @property
    def area_m2(self) -> float:
        return round((self.box[2] - self.box[0]) * (self.box[3] - self.box[1]), 9)


@dataclass(frozen=True)
class WorldGroundTruth:
    seed: int
    level: int
    bounds_m: BBox
    walls: tuple[BBox, ...]
    rooms: tuple[BBox, ...]
    corridors: tuple[Corridor, ...]
    entities: tuple[ObjectRecord, ...]
    user: UserState
    resolution_m: float = RESOLUTION_M

    @property
    def world_id(self) -> str:
        return f"world-{self.seed}-L{self.level}"

    @property
    def layout(self) -> Layout:
        return Layout(bounds_m=self.bounds_m, walls=self.walls)

    def floor(self) -> Raster:
        """Wall-only occupancy grid at the world resolution."""
        return rasterize(self.layout, (), self.resolution_m)

    def topology(self) -> tuple:
        return (self.bounds_m, self.walls, self.rooms, self.corridors)


def _r(v: float) -> float:
    return round(float(v), 6)


def _rng(seed: int, level: int) -> np.random.Generator:
    # Level 3 shares the Level-2 layout; only the perception channel differs
    topology_level = 2 if level == 3 else level
    return np.random.default_rng([int(seed), topology_level])


def _layout(rng: np.random.Generator, n_rooms: int):
    height_cells = int(rng.integers(40, 56))
    height = height_cells * RESOLUTION_M
    rooms: list[BBox] = []
    corridors: list[Corridor] = []
    walls: list[BBox] = []
    x = 0
    for k in range(n_rooms):
        w_cells = int(rng.integers(40, 61))
        rooms.append((_r(x * RESOLUTION_M), 0.0, _r((x + w_cells) * RESOLUTION_M), _r(height)))
        x += w_cells
        length = int(rng.integers(15, 31))
        width = float(CORRIDOR_WIDTHS[int(rng.integers(len(CORRIDOR_WIDTHS)))])
        w_cells_c = int(round(width / RESOLUTION_M))
        lo = int(rng.integers(5, height_cells - 5 - w_cells_c + 1))
        x0, x1 = _r(x * RESOLUTION_M), _r((x + length) * RESOLUTION_M)
        y0, y1 = _r(lo * RESOLUTION_M), _r((lo + w_cells_c) * RESOLUTION_M)
        cy = _r((y0 + y1) / 2)
        corridors.append(Corridor(id=f"corridor_{k + 1}", box=(x0, y0, x1, y1), width_m=width, polyline_m=((x0, cy), (x1, cy))))
        walls.append((x0, 0.0, x1, y0))
        walls.append((x0, y1, x1, _r(height)))
        x += length
    bounds = (0.0, 0.0, _r(x * RESOLUTION_M), _r(height))
    return bounds, tuple(walls), tuple(rooms), tuple(corridors)


def _place_user(rng: np.random.Generator, room: BBox) -> UserState:
    margin = 0.6
    ux = round(float(rng.uniform(room[0] + margin, room[2] - margin)) * 20) / 20
    uy = round(float(rng.uniform(room[1] + margin, room[3] - margin)) * 20) / 20
    mobility = (Mobility.WHEELCHAIR, Mobility.WALKER, Mobility.STANDING)[int(rng.integers(3))]
    reach = {Mobility.WHEELCHAIR: (1.1, 1.4), Mobility.WALKER: (1.4, 1.7), Mobility.STANDING: (1.7, 2.0)}[mobility]
    return UserState(
        position_m=(_r(ux), _r(uy)),
        mobility=mobility,
        reach_height_m=_r(round(float(rng.uniform(*reach)), 2)),
        activity_radius_m=_r(round(float(rng.uniform(1.0, 1.6)), 1)),
    )


def _object_fits(bbox: BBox, region: BBox, walls, placed, user: UserState) -> bool:
    if bbox[0] < region[0] - 1e-9 or bbox[1] < region[1] - 1e-9 or bbox[2] > region[2] + 1e-9 or bbox[3] > region[3] + 1e-9:
        return False
    if any(boxes_overlap(bbox, w) for w in walls):
        return False
    # one free cell between objects keeps relocation targets available
    grown = (bbox[0] - RESOLUTION_M, bbox[1] - RESOLUTION_M, bbox[2] + RESOLUTION_M, bbox[3] + RESOLUTION_M)
    if any(boxes_overlap(grown, o.bbox_m) for o in placed):
        return False
    return box_circle_distance(bbox, user.position_m) >= USER_BODY_RADIUS_M


def _draw_object(rng: np.random.Generator, category: Category, region: BBox, corridor: Optional[Corridor], index: int, walls, placed, user) -> Optional[ObjectRecord]:
    sizes, (h_lo, h_hi), movable = _CATALOG[category]
    for _ in range(60):
        w, d = sizes[int(rng.integers(len(sizes)))]
        if corridor is not None:
            # corridor obstacles sit across the centerline and never span the full width
            cells = int(round(corridor.width_m / RESOLUTION_M))
            d = min(d, cells - 1)
            if d < 1:
                return None
        rx0 = int(round(region[0] / RESOLUTION_M))
        ry0 = int(round(region[1] / RESOLUTION_M))
        rx1 = int(round(region[2] / RESOLUTION_M))
        ry1 = int(round(region[3] / RESOLUTION_M))
        if rx1 - rx0 < w or ry1 - ry0 < d:
            continue
        cx = int(rng.integers(rx0, rx1 - w + 1))
        cy = int(rng.integers(ry0, ry1 - d + 1))
        bbox = (_r(cx * RESOLUTION_M), _r(cy * RESOLUTION_M), _r((cx + w) * RESOLUTION_M), _r((cy + d) * RESOLUTION_M))
        if not _object_fits(bbox, region, walls, placed, user):
            continue
        height = _r(round(float(rng.uniform(h_lo, h_hi)), 2))
        return ObjectRecord(
            id=f"{category.value}_{index}",
            category=category,
            centroid_m=(_r((bbox[0] + bbox[2]) / 2), _r((bbox[1] + bbox[3]) / 2)),
            bbox_m=bbox,
            height_m=height,
            movable=movable,
            footprint_area_m2=_r(w * d * RESOLUTION_M * RESOLUTION_M),
        )
    return None


def generate_world(seed: int, level: int, n_objects: Optional[int] = None) -> WorldGroundTruth:
    """Deterministic world for ``(seed, level)``.

    Level 1 has one room and one corridor with 2 to 4 objects. Level 2 has 2 to
    3 rooms, at least two corridors, 6 to 12 objects and always a person or
    pet. Level 3 reuses the Level-2 world; its difficulty lives in the oracle
    provider's noise channel. ``n_objects`` overrides the drawn count (0 gives
    a user-only world).
    """
    if level not in LEVELS:
        raise ContractViolation(f"level must be one of {LEVELS}, got {level!r}")
    rng = _rng(seed, level)
    topology_level = 1 if level == 1 else 2
    n_rooms = 1 if topology_level == 1 else int(rng.integers(2, 4))
    bounds, walls, rooms, corridors = _layout(rng, n_rooms)
    user = _place_user(rng, rooms[0])
    if n_objects is None:
        n_objects = int(rng.integers(2, 5)) if topology_level == 1 else int(rng.integers(6, 13))
    if n_objects < 0:
        raise ContractViolation("n_objects must be >= 0")

    categories = [_CATEGORIES[i] for i in rng.choice(len(_CATEGORIES), size=n_objects, p=_PROBS)]
    if topology_level == 2 and n_objects > 0 and not any(c in (Category.PERSON, Category.PET) for c in categories):
        categories[int(rng.integers(n_objects))] = Category.PERSON if rng.random() < 0.5 else Category.PET

    placed: list[ObjectRecord] = []
    for index, category in enumerate(categories, start=1):
        obj = None
        in_corridor = category not in (Category.DOOR, Category.SWITCH, Category.PERSON) and rng.random() < 0.3
        if in_corridor:
            corridor = corridors[int(rng.integers(len(corridors)))]
            obj = _draw_object(rng, category, corridor.box, corridor, index, walls, placed, user)
        if obj is None:
            room_order = rng.permutation(len(rooms))
            for r in room_order:
                obj = _draw_object(rng, category, rooms[int(r)], None, index, walls, placed, user)
                if obj is not None:
                    break
        if obj is None:
            raise RuntimeError(f"could not place object {index} in world ({seed}, {level})")
        placed.append(obj)
    return WorldGroundTruth(
        seed=int(seed),
        level=int(level),
        bounds_m=bounds,
        walls=walls,
        rooms=rooms,
        corridors=corridors,
        entities=tuple(placed),
        user=user,
    )


# --- file format ---------------------------------------------------------------------------


def ground_truth_block(world: WorldGroundTruth) -> dict[str, Any]:
    return {
        "seed": world.seed,
        "level": world.level,
        "resolution_m": world.resolution_m,
        "rooms": [list(r) for r in world.rooms],
        "corridors": [
            {"id": c.id, "box": list(c.box), "width_m": c.width_m, "polyline_m": [list(p) for p in c.polyline_m]}
            for c in world.corridors
        ],
    }


def world_to_dict(world: WorldGroundTruth) -> dict[str, Any]:
    """Exact scene (oracle view, no noise) plus the ground-truth block."""
    from ..perception import exact_scene

    data = scene_to_dict(exact_scene(world))
    data["ground_truth"] = ground_truth_block(world)
    return data


def emit_world_file(world: WorldGroundTruth) -> bytes:
    return dumps(world_to_dict(world))


def world_from_dict(data: dict) -> WorldGroundTruth:
    if not isinstance(data, dict) or "ground_truth" not in data:
        raise SceneParseError("missing required field 'ground_truth'", "ground_truth")
    scene: SceneDescription = scene_from_dict({k: v for k, v in data.items() if k != "ground_truth"})
    gt = data["ground_truth"]
    try:
        corridors = tuple(
            Corridor(c["id"], tuple(c["box"]), float(c["width_m"]), tuple(tuple(p) for p in c["polyline_m"]))
            for c in gt["corridors"]
        )
        return WorldGroundTruth(
            seed=int(gt["seed"]),
            level=int(gt["level"]),
            bounds_m=scene.layout.bounds_m,
            walls=scene.layout.walls,
            rooms=tuple(tuple(r) for r in gt["rooms"]),
            corridors=corridors,
            entities=scene.objects,
            user=scene.user,
            resolution_m=float(gt.get("resolution_m", RESOLUTION_M)),
        )
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise SceneParseError(f"invalid ground_truth block: {exc}", "ground_truth") from exc


def parse_world_file(data: bytes | str) -> WorldGroundTruth:
    return world_from_dict(loads(data))


def is_world_dict(data: Any) -> bool:
    return isinstance(data, dict) and "ground_truth" in data
