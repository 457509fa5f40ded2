"""Risk assessment: typed hazard detection, severity/urgency scoring, levels and priority ranking."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from enum import Enum, IntEnum
from typing import Any, Optional

from .domain import (
    Category,
    ContractViolation,
    ObjectRecord,
    PassageAttributes,
    Point,
    SceneDescription,
    SceneParseError,
    bbox_area,
    distance,
    dumps,
    loads,
    nearest_point_on_polyline,
)
from .geometry import box_circle_distance


class RiskType(str, Enum):
    OBSTRUCTION = "obstruction"
    ACCESSIBILITY = "accessibility"
    COLLISION = "collision"
    USER_SAFETY = "user_safety"
    NAVIGATION = "navigation"
    OTHER = "other"


class RiskLevel(IntEnum):
    LOW = 1
    MEDIUM = 2
    HIGH = 3

    @property
    def label(self) -> str:
        return self.name.capitalize()

    @classmethod
    def from_label(cls, label: str) -> "RiskLevel":
        return cls[label.upper()]


# Severity per Table-1 severity level; High and Low are the anchored values.
SEVERITY_BY_LEVEL = {RiskLevel.HIGH: 0.9, RiskLevel.MEDIUM: 0.6, RiskLevel.LOW: 0.3}

PASSAGE_SCOPED = frozenset({RiskType.OBSTRUCTION, RiskType.NAVIGATION})
INTERACTABLE = frozenset({Category.SWITCH, Category.MEDICATION})
MOVING_BODIES = frozenset({Category.PERSON, Category.PET})
FURNITURE = frozenset({Category.CHAIR, Category.TABLE, Category.SHELF, Category.DOOR})
FLOOR_HAZARDS = frozenset({Category.SPILL, Category.SHARP_EDGE})


@dataclass(frozen=True)
class RiskConfig:
    tau_w_m: float = 0.8
    tau_r: float = 0.3
    tau_h_m: float = 1.8
    alpha_per_m: float = 0.5
    w_sev: float = 0.6
    w_urg: float = 0.4
    level_high: float = 0.7
    level_medium: float = 0.3
    beta_passage: float = 1.2
    beta_local: float = 0.8
    affected_users: int = 1

    def problems(self) -> list[str]:
        out = []
        if abs(self.w_sev + self.w_urg - 1.0) > 1e-12:
            out.append("w_sev + w_urg must equal 1")
        if not 0 < self.level_medium < self.level_high < 1:
            out.append("need 0 < level_medium < level_high < 1")
        for name in ("tau_w_m", "tau_r", "tau_h_m", "alpha_per_m", "beta_passage", "beta_local"):
            if not getattr(self, name) > 0:
                out.append(f"{name} must be > 0")
        if self.affected_users < 1:
            out.append("affected_users must be >= 1")
        return out

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RiskConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown risk config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class Trigger:
    """A detector hit before scoring."""

    risk_type: RiskType
    subject_id: str
    location: Point
    kind: str
    context: dict = field(default_factory=dict, hash=False, compare=False)


@dataclass(frozen=True)
class RiskItem:
    id: str
    risk_type: RiskType
    level: RiskLevel
    score: float
    severity: float
    urgency: float
    priority: float
    affected_users: int
    location: Point
    subject_id: str
    description: str
    distance_m: float
    requires_human: bool = False

    def sort_key(self) -> tuple:
        return (-self.priority, -self.score, self.distance_m, self.subject_id, self.risk_type.value)


@dataclass(frozen=True)
class RiskReport:
    items: tuple[RiskItem, ...]
    scene_ref: str
    config_snapshot: RiskConfig

    @property
    def report_id(self) -> str:
        return f"risk:{self.scene_ref}"

    def by_id(self, risk_id: str) -> Optional[RiskItem]:
        for item in self.items:
            if item.id == risk_id:
                return item
        return None


# --- formulas ------------------------------------------------------------------------


def obstacle_ratio(passage: PassageAttributes, scene: SceneDescription) -> float:
    """Summed obstacle footprint over passage area."""
    if not passage.area_m2 > 0:
        raise ContractViolation(f"passage {passage.id!r} has non-positive area")
    total = 0.0
    for oid in passage.obstacle_ids:
        obj = scene.object_by_id(oid)
        if obj is None:
            raise ContractViolation(f"unresolved obstacle_id {oid!r} in passage {passage.id!r}")
        total += bbox_area(obj.bbox_m)
    return total / passage.area_m2


def urgency(distance_m: float, cfg: RiskConfig = RiskConfig()) -> float:
    if distance_m < 0:
        raise ContractViolation(f"distance must be >= 0, got {distance_m}")
    return math.exp(-cfg.alpha_per_m * distance_m)


def risk_score(s_sev: float, s_urg: float, cfg: RiskConfig = RiskConfig()) -> float:
    return cfg.w_sev * s_sev + cfg.w_urg * s_urg


def risk_level(score: float, cfg: RiskConfig = RiskConfig()) -> RiskLevel:
    if score >= cfg.level_high:
        return RiskLevel.HIGH
    if score >= cfg.level_medium:
        return RiskLevel.MEDIUM
    return RiskLevel.LOW


def scope_coefficient(risk_type: RiskType, cfg: RiskConfig = RiskConfig()) -> float:
    return cfg.beta_passage if risk_type in PASSAGE_SCOPED else cfg.beta_local


def priority_index(level: RiskLevel, risk_type: RiskType, affected: int = 1, cfg: RiskConfig = RiskConfig()) -> float:
    if affected < 1:
        raise ContractViolation("affected user count must be >= 1")
    return int(level) * scope_coefficient(risk_type, cfg) * affected


def severity_level(risk_type: RiskType | str, context: Optional[dict] = None, cfg: RiskConfig = RiskConfig()) -> RiskLevel:
    context = context or {}
    kind = context.get("kind")
    if risk_type == RiskType.OBSTRUCTION:
        return RiskLevel.HIGH
    if risk_type == RiskType.NAVIGATION:
        # graded by how far the width falls short of the threshold
        width = context.get("width_m")
        if width is None:
            return RiskLevel.LOW
        shortfall = (cfg.tau_w_m - width) / cfg.tau_w_m
        if shortfall < 0.25:
            return RiskLevel.LOW
        return RiskLevel.MEDIUM if shortfall < 0.5 else RiskLevel.HIGH
    if risk_type == RiskType.ACCESSIBILITY:
        return RiskLevel.HIGH
    if risk_type == RiskType.COLLISION:
        return RiskLevel.MEDIUM if kind == "moving_body" else RiskLevel.LOW
    if risk_type == RiskType.USER_SAFETY:
        return RiskLevel.HIGH if kind == "floor_hazard" else RiskLevel.MEDIUM
    return RiskLevel.HIGH


def severity_lookup(risk_type: RiskType | str, context: Optional[dict] = None, cfg: RiskConfig = RiskConfig()) -> tuple[float, bool]:
    """Severity score and whether a human must be asked to intervene.

    Unknown types fall into the "Others" row: maximum severity plus escalation.
    """
    try:
        rtype = RiskType(risk_type)
    except ValueError:
        rtype = RiskType.OTHER
    level = severity_level(rtype, context, cfg)
    return SEVERITY_BY_LEVEL[level], rtype == RiskType.OTHER


# --- detectors -------------------------------------------------------------------------


def _passage_location(passage: PassageAttributes, user_pos: Point) -> Point:
    return nearest_point_on_polyline(user_pos, passage.polyline_m)


def detect_passage_risks(scene: SceneDescription, cfg: RiskConfig = RiskConfig()) -> list[Trigger]:
    out = []
    for passage in scene.passages:
        loc = _passage_location(passage, scene.user.position_m)
        if passage.width_m < cfg.tau_w_m:
            out.append(Trigger(RiskType.NAVIGATION, passage.id, loc, "narrow_passage", {"width_m": passage.width_m}))
        if passage.obstacle_ids:
            ratio = obstacle_ratio(passage, scene)
            if ratio > cfg.tau_r:
                ctx = {"ratio": ratio, "obstacles": list(passage.obstacle_ids)}
                out.append(Trigger(RiskType.OBSTRUCTION, passage.id, loc, "blocked_passage", ctx))
    return out


def _in_activity_region(obj: ObjectRecord, scene: SceneDescription) -> bool:
    return distance(obj.centroid_m, scene.user.position_m) <= scene.user.activity_radius_m


def detect_overheight(scene: SceneDescription, cfg: RiskConfig = RiskConfig()) -> list[Trigger]:
    out = []
    for obj in scene.objects:
        if obj.category in MOVING_BODIES or obj.category in INTERACTABLE or obj.category == Category.OTHER:
            continue
        if obj.height_m > cfg.tau_h_m and _in_activity_region(obj, scene):
            out.append(Trigger(RiskType.USER_SAFETY, obj.id, obj.centroid_m, "over_height", {"height_m": obj.height_m}))
    return out


def detect_collision(scene: SceneDescription, cfg: RiskConfig = RiskConfig()) -> list[Trigger]:
    user = scene.user
    out = []
    for obj in scene.objects:
        if obj.category in MOVING_BODIES:
            kind = "moving_body"
        elif obj.movable and obj.category in FURNITURE:
            kind = "static_object"
        else:
            continue
        gap = box_circle_distance(obj.bbox_m, user.position_m)
        if gap <= user.activity_radius_m:
            out.append(Trigger(RiskType.COLLISION, obj.id, obj.centroid_m, kind, {"gap_m": gap}))
    return out


def detect_accessibility(scene: SceneDescription, cfg: RiskConfig = RiskConfig()) -> list[Trigger]:
    reach = scene.user.reach_height_m
    return [
        Trigger(RiskType.ACCESSIBILITY, o.id, o.centroid_m, "out_of_reach", {"height_m": o.height_m, "reach_m": reach})
        for o in scene.objects
        if o.category in INTERACTABLE and o.height_m > reach
    ]


def detect_floor_hazards(scene: SceneDescription, cfg: RiskConfig = RiskConfig()) -> list[Trigger]:
    user = scene.user
    return [
        Trigger(RiskType.USER_SAFETY, o.id, o.centroid_m, "floor_hazard", {"category": o.category.value})
        for o in scene.objects
        if o.category in FLOOR_HAZARDS and box_circle_distance(o.bbox_m, user.position_m) <= user.activity_radius_m
    ]


def detect_unrecognized(scene: SceneDescription, cfg: RiskConfig = RiskConfig()) -> list[Trigger]:
    return [Trigger(RiskType.OTHER, o.id, o.centroid_m, "unrecognized", {}) for o in scene.objects if o.category == Category.OTHER]


DETECTORS = (
    detect_passage_risks,
    detect_overheight,
    detect_collision,
    detect_accessibility,
    detect_floor_hazards,
    detect_unrecognized,
)


def detect_all(scene: SceneDescription, cfg: RiskConfig = RiskConfig()) -> list[Trigger]:
    triggers = []
    for detector in DETECTORS:
        triggers.extend(detector(scene, cfg))
    return triggers


# --- report assembly ---------------------------------------------------------------------

_DESCRIPTIONS = {
    "narrow_passage": "Passage {subject} is {width_m:.2f} m wide, below the {tau_w:.2f} m wheelchair minimum",
    "blocked_passage": "Passage {subject} is obstructed by {obstacles} covering {ratio:.0%} of its area",
    "over_height": "Object {subject} stands {height_m:.2f} m tall inside the user's activity region",
    "moving_body": "Moving body {subject} is {gap_m:.2f} m from the user within the safety buffer",
    "static_object": "Movable object {subject} is {gap_m:.2f} m from the user within the activity region",
    "out_of_reach": "Object {subject} sits at {height_m:.2f} m, above the user's {reach_m:.2f} m reach",
    "floor_hazard": "Floor hazard {subject} ({category}) lies within the user's activity region",
    "unrecognized": "Unrecognized object {subject} is outside the known categories; human intervention requested",
}


def describe_trigger(trigger: Trigger, cfg: RiskConfig) -> str:
    ctx = dict(trigger.context)
    if "obstacles" in ctx:
        ctx["obstacles"] = ", ".join(ctx["obstacles"])
    template = _DESCRIPTIONS.get(trigger.kind, "Risk {kind} at {subject}")
    return template.format(subject=trigger.subject_id, kind=trigger.kind, tau_w=cfg.tau_w_m, **ctx)


def score_trigger(trigger: Trigger, scene: SceneDescription, cfg: RiskConfig = RiskConfig()) -> RiskItem:
    d = distance(scene.user.position_m, trigger.location)
    s_sev, needs_human = severity_lookup(trigger.risk_type, {"kind": trigger.kind, **trigger.context}, cfg)
    s_urg = urgency(d, cfg)
    score = risk_score(s_sev, s_urg, cfg)
    level = risk_level(score, cfg)
    return RiskItem(
        id=f"{trigger.risk_type.value}:{trigger.subject_id}",
        risk_type=trigger.risk_type,
        level=level,
        score=score,
        severity=s_sev,
        urgency=s_urg,
        priority=priority_index(level, trigger.risk_type, cfg.affected_users, cfg),
        affected_users=cfg.affected_users,
        location=(trigger.location[0], trigger.location[1]),
        subject_id=trigger.subject_id,
        description=describe_trigger(trigger, cfg),
        distance_m=d,
        requires_human=needs_human,
    )


def assess(scene: SceneDescription, cfg: RiskConfig = RiskConfig()) -> RiskReport:
    """Run every detector, score each hit and rank by descending priority.

    Ties on priority fall back to higher score, then nearer to the user, then
    subject id and finally risk type name.
    """
    items = [score_trigger(t, scene, cfg) for t in detect_all(scene, cfg)]
    items.sort(key=RiskItem.sort_key)
    return RiskReport(items=tuple(items), scene_ref=scene.scene_id, config_snapshot=cfg)


# --- file format ------------------------------------------------------------------------------


def item_to_dict(item: RiskItem) -> dict:
    return {
        "id": item.id,
        "risk_type": item.risk_type.value,
        "level": item.level.label,
        "score": item.score,
        "severity": item.severity,
        "urgency": item.urgency,
        "priority": item.priority,
        "affected_users": item.affected_users,
        "location": list(item.location),
        "subject_id": item.subject_id,
        "description": item.description,
        "distance_m": item.distance_m,
        "requires_human": item.requires_human,
    }


def item_from_dict(data: dict) -> RiskItem:
    try:
        return RiskItem(
            id=data["id"],
            risk_type=RiskType(data["risk_type"]),
            level=RiskLevel.from_label(data["level"]),
            score=float(data["score"]),
            severity=float(data["severity"]),
            urgency=float(data["urgency"]),
            priority=float(data["priority"]),
            affected_users=int(data["affected_users"]),
            location=(float(data["location"][0]), float(data["location"][1])),
            subject_id=data["subject_id"],
            description=data["description"],
            distance_m=float(data["distance_m"]),
            requires_human=bool(data.get("requires_human", False)),
        )
    except (KeyError, ValueError, TypeError, IndexError) as exc:
        raise SceneParseError(f"invalid risk item: {exc}", "items") from exc


def report_to_dict(report: RiskReport) -> dict[str, Any]:
    return {
        "scene_ref": report.scene_ref,
        "items": [item_to_dict(i) for i in report.items],
        "config_snapshot": report.config_snapshot.to_dict(),
    }


def report_from_dict(data: dict) -> RiskReport:
    if not isinstance(data, dict) or "items" not in data:
        raise SceneParseError("missing required field 'items'", "items")
    return RiskReport(
        items=tuple(item_from_dict(i) for i in data["items"]),
        scene_ref=data.get("scene_ref", "scene"),
        config_snapshot=RiskConfig.from_dict(data.get("config_snapshot", {})),
    )


def emit_report_file(report: RiskReport) -> bytes:
    return dumps(report_to_dict(report))


def parse_report_file(data: bytes | str) -> RiskReport:
    return report_from_dict(loads(data))
