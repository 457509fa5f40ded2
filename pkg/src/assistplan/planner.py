"""Planning agent: risks become tasks, tasks become parameterised robot actions.

Every emitted sequence is checked by folding :func:`apply_transition` from the
initial state, so no action can run before its preconditions hold.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np
import shapely

from .domain import (
    BBox,
    Category,
    ObjectRecord,
    PassageAttributes,
    Point,
    SceneDescription,
    SceneParseError,
    distance,
    dumps,
    loads,
)
from .geometry import (
    EPS,
    RESOLUTION_M,
    RouteCheck,
    box_circle_distance,
    boxes_overlap,
    clearance_map,
    occupancy,
    passage_region,
    rasterize,
    route_check,
)
from .risk import MOVING_BODIES, RiskConfig, RiskItem, RiskLevel, RiskReport, RiskType, detect_all


class ActionType(str, Enum):
    MOVE_OBJECT = "move_object"
    LIFT_OBJECT = "lift_object"
    GUIDE_USER = "guide_user"
    REPOSITION_FURNITURE = "reposition_furniture"
    NOTIFY_CAREGIVER = "notify_caregiver"
    HALT_AND_REQUEST_HUMAN = "halt_and_request_human"


PHYSICAL = frozenset({ActionType.MOVE_OBJECT, ActionType.LIFT_OBJECT, ActionType.REPOSITION_FURNITURE})
USER_TARGETED = frozenset({ActionType.GUIDE_USER, ActionType.NOTIFY_CAREGIVER})
# the robot can always stop and call for help; this keeps the fallback reachable
ALWAYS_CAPABLE = frozenset({ActionType.HALT_AND_REQUEST_HUMAN})

EFFORT_CLASS = {
    ActionType.NOTIFY_CAREGIVER: 0,
    ActionType.HALT_AND_REQUEST_HUMAN: 0,
    ActionType.GUIDE_USER: 1,
    ActionType.MOVE_OBJECT: 2,
    ActionType.LIFT_OBJECT: 2,
    ActionType.REPOSITION_FURNITURE: 3,
}
MAX_EFFORT_CLASS = 3

MASS_CLASS = {
    Category.MEDICATION: 0,
    Category.SWITCH: 0,
    Category.SPILL: 0,
    Category.SHARP_EDGE: 1,
    Category.CHAIR: 1,
    Category.PET: 1,
    Category.OTHER: 1,
    Category.TABLE: 2,
    Category.SHELF: 3,
    Category.DOOR: 3,
    Category.PERSON: 3,
}


class TaskGoal(str, Enum):
    CLEAR_PASSAGE = "clear_passage"
    WIDEN_ROUTE = "widen_route"
    LOWER_OBJECT = "lower_object"
    FETCH_OBJECT = "fetch_object"
    GUIDE_USER = "guide_user"
    SECURE_HAZARD = "secure_hazard"
    REQUEST_HUMAN = "request_human"


class ForceClass(str, Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"


class SpeedClass(str, Enum):
    SLOW = "slow"
    NORMAL = "normal"


class Directive(str, Enum):
    RAISE_RESOLUTION_COVERAGE = "raise_resolution_coverage"
    SHORTEN_PLAN = "shorten_plan"
    ADD_USER_NOTIFICATION = "add_user_notification"
    ADD_SAFETY_FALLBACK = "add_safety_fallback"
    REDUCE_TRAVEL_DISTANCE = "reduce_travel_distance"


@dataclass(frozen=True)
class Task:
    id: str
    source_risk_id: str
    goal: TaskGoal
    description: str


@dataclass(frozen=True)
class Constraints:
    max_force_class: ForceClass = ForceClass.LOW
    clearance_m: float = 0.1
    speed_class: SpeedClass = SpeedClass.SLOW


@dataclass(frozen=True)
class ActionSpec:
    action_type: ActionType
    target: str
    goal_pos: Point
    constraints: Constraints
    priority: float = 0.0
    order_index: int = 0
    move_distance: float = 0.0
    risk_id: Optional[str] = None
    description: str = ""

    def signature(self) -> tuple:
        return (self.action_type.value, self.target, self.goal_pos, self.risk_id)


@dataclass(frozen=True)
class DroppedCandidate:
    risk_id: str
    reason: str


@dataclass(frozen=True)
class ActionSequence:
    actions: tuple[ActionSpec, ...]
    dropped: tuple[DroppedCandidate, ...] = ()
    tasks: tuple[Task, ...] = ()
    covered: tuple[str, ...] = ()
    source_report: str = ""
    iteration: int = 1
    directives: tuple[str, ...] = ()


@dataclass(frozen=True)
class PlanConfig:
    w_p: float = 0.7
    w_c: float = 0.3
    priority_cap: float = 3.6
    distance_cap_m: float = 10.0
    capabilities: frozenset = frozenset(ActionType)
    max_lift_class: int = 1
    literal_cost_sign: bool = False
    guide_step_m: float = 0.6
    relocation_margin_m: float = 0.2
    handover_height_m: float = 0.8
    handover_radius_m: float = 0.5
    user_body_radius_m: float = 0.35
    max_route_checks: int = 60

    def problems(self) -> list[str]:
        out = []
        if abs(self.w_p + self.w_c - 1.0) > 1e-12:
            out.append("w_p + w_c must equal 1")
        if self.priority_cap <= 0 or self.distance_cap_m <= 0:
            out.append("normalization caps must be > 0")
        return out

    def to_dict(self) -> dict:
        data = asdict(self)
        data["capabilities"] = sorted(a.value for a in self.capabilities)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "PlanConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown plan config keys: {sorted(unknown)}")
        data = dict(data)
        if "capabilities" in data:
            data["capabilities"] = frozenset(ActionType(a) for a in data["capabilities"])
        return cls(**data)


class TransitionError(RuntimeError):
    def __init__(self, conjunct: str, action: ActionSpec):
        self.conjunct = conjunct
        self.action = action
        super().__init__(f"{action.action_type.value}({action.target}) infeasible: {conjunct}")


# --- tasks ------------------------------------------------------------------------------

_GOAL_TEXT = {
    TaskGoal.CLEAR_PASSAGE: "Clear passage obstacles",
    TaskGoal.WIDEN_ROUTE: "Secure a usable route",
    TaskGoal.LOWER_OBJECT: "Bring object within reach",
    TaskGoal.FETCH_OBJECT: "Fetch object for the user",
    TaskGoal.GUIDE_USER: "Guide the user clear of the hazard",
    TaskGoal.SECURE_HAZARD: "Secure the hazard",
    TaskGoal.REQUEST_HUMAN: "Request human intervention",
}


def map_risk_to_task(risk: RiskItem, scene: Optional[SceneDescription] = None) -> Task:
    """One task per risk. Scene context picks between the two variants of some types."""
    subject = scene.object_by_id(risk.subject_id) if scene is not None else None
    rtype = risk.risk_type
    if rtype == RiskType.OBSTRUCTION:
        goal = TaskGoal.CLEAR_PASSAGE
    elif rtype == RiskType.NAVIGATION:
        goal = TaskGoal.WIDEN_ROUTE
    elif rtype == RiskType.ACCESSIBILITY:
        goal = TaskGoal.FETCH_OBJECT if subject is None or subject.movable else TaskGoal.LOWER_OBJECT
    elif rtype == RiskType.COLLISION:
        goal = TaskGoal.GUIDE_USER if subject is None or subject.category in MOVING_BODIES else TaskGoal.SECURE_HAZARD
    elif rtype == RiskType.USER_SAFETY:
        goal = TaskGoal.SECURE_HAZARD
    else:
        goal = TaskGoal.REQUEST_HUMAN
    return Task(id=f"task:{risk.id}", source_risk_id=risk.id, goal=goal, description=f"{_GOAL_TEXT[goal]} ({risk.subject_id})")


# --- state ------------------------------------------------------------------------------------


@dataclass(frozen=True)
class PlanState:
    objects: tuple[ObjectRecord, ...]
    user_position: Point
    completed: tuple[int, ...] = ()

    def object(self, object_id: str) -> Optional[ObjectRecord]:
        for obj in self.objects:
            if obj.id == object_id:
                return obj
        return None

    def occupancy(self, passage: PassageAttributes) -> tuple[str, ...]:
        return occupancy(passage, self.objects)

    def as_scene(self, scene: SceneDescription) -> SceneDescription:
        """The scene as it looks in this state; passage obstacles re-derived from positions."""
        passages = tuple(replace(p, obstacle_ids=self.occupancy(p)) for p in scene.passages)
        user = replace(scene.user, position_m=self.user_position)
        return replace(scene, objects=self.objects, passages=passages, user=user)


def initial_state(scene: SceneDescription) -> PlanState:
    return PlanState(objects=scene.objects, user_position=scene.user.position_m)


def _target_position(state: PlanState, target: str) -> Optional[Point]:
    if target == "user":
        return state.user_position
    obj = state.object(target)
    return obj.centroid_m if obj is not None else None


def infeasibility(action: ActionSpec, scene: SceneDescription, cfg: PlanConfig, state: Optional[PlanState] = None) -> Optional[str]:
    """Name of the first violated feasibility conjunct, or None when feasible."""
    state = state or initial_state(scene)
    if action.target != "user" and state.object(action.target) is None:
        return "target not in scene"
    if action.action_type not in cfg.capabilities and action.action_type not in ALWAYS_CAPABLE:
        return "robot not capable"
    if action.action_type in PHYSICAL:
        obj = state.object(action.target)
        if obj is None:
            return "target not in scene"
        if not obj.movable:
            return "target not movable"
        if action.action_type == ActionType.LIFT_OBJECT and MASS_CLASS[obj.category] > cfg.max_lift_class:
            return "target too heavy to lift"
    if action.action_type == ActionType.GUIDE_USER and action.target != "user":
        return "guide target must be the user"
    return None


def feasible(action: ActionSpec, scene: SceneDescription, cfg: PlanConfig = PlanConfig(), state: Optional[PlanState] = None) -> bool:
    return infeasibility(action, scene, cfg, state) is None


def _placement_problem(bbox: BBox, obj_id: str, state: PlanState, scene: SceneDescription, cfg: PlanConfig) -> Optional[str]:
    bx0, by0, bx1, by1 = scene.effective_layout().bounds_m
    if bbox[0] < bx0 - EPS or bbox[1] < by0 - EPS or bbox[2] > bx1 + EPS or bbox[3] > by1 + EPS:
        return "goal outside bounds"
    for wall in scene.effective_layout().walls:
        if boxes_overlap(bbox, wall):
            return "goal overlaps wall"
    for other in state.objects:
        if other.id != obj_id and boxes_overlap(bbox, other.bbox_m):
            return f"goal occupied by {other.id}"
    if box_circle_distance(bbox, state.user_position) < cfg.user_body_radius_m:
        return "goal overlaps user"
    return None


def _point_blocked(point: Point, state: PlanState, scene: SceneDescription) -> bool:
    x, y = point
    bx0, by0, bx1, by1 = scene.effective_layout().bounds_m
    if not (bx0 <= x <= bx1 and by0 <= y <= by1):
        return True
    boxes = list(scene.effective_layout().walls) + [o.bbox_m for o in state.objects]
    return any(b[0] + EPS < x < b[2] - EPS and b[1] + EPS < y < b[3] - EPS for b in boxes)


def apply_transition(state: PlanState, action: ActionSpec, scene: SceneDescription, cfg: PlanConfig = PlanConfig()) -> PlanState:
    """Successor state; the input state is never modified."""
    problem = infeasibility(action, scene, cfg, state)
    if problem:
        raise TransitionError(problem, action)
    start = _target_position(state, action.target)
    if abs(distance(start, action.goal_pos) - action.move_distance) > 1e-6:
        raise TransitionError("move distance does not match position at execution", action)
    completed = state.completed + (action.order_index,)
    atype = action.action_type
    if atype in (ActionType.MOVE_OBJECT, ActionType.REPOSITION_FURNITURE):
        moved = state.object(action.target).moved_to(action.goal_pos)
        problem = _placement_problem(moved.bbox_m, moved.id, state, scene, cfg)
        if problem:
            raise TransitionError(problem, action)
        objects = tuple(moved if o.id == moved.id else o for o in state.objects)
        return PlanState(objects, state.user_position, completed)
    if atype == ActionType.LIFT_OBJECT:
        obj = state.object(action.target)
        moved = replace(obj.moved_to(action.goal_pos), height_m=min(obj.height_m, cfg.handover_height_m))
        if action.move_distance > EPS:
            problem = _placement_problem(moved.bbox_m, moved.id, state, scene, cfg)
            if problem:
                raise TransitionError(problem, action)
        objects = tuple(moved if o.id == moved.id else o for o in state.objects)
        return PlanState(objects, state.user_position, completed)
    if atype == ActionType.GUIDE_USER:
        if _point_blocked(action.goal_pos, state, scene):
            raise TransitionError("guide waypoint is not free space", action)
        return PlanState(state.objects, action.goal_pos, completed)
    return PlanState(state.objects, state.user_position, completed)


@dataclass(frozen=True)
class ReplayResult:
    ok: bool
    states: tuple[PlanState, ...]
    failed_index: Optional[int] = None
    error: Optional[str] = None

    @property
    def final(self) -> PlanState:
        return self.states[-1]


def replay(actions: Sequence[ActionSpec], scene: SceneDescription, cfg: PlanConfig = PlanConfig()) -> ReplayResult:
    """Fold the transition function over the sequence, stopping at the first failure."""
    states = [initial_state(scene)]
    last_order = -1
    for i, action in enumerate(actions):
        if action.order_index <= last_order:
            return ReplayResult(False, tuple(states), i, "order_index not strictly increasing")
        last_order = action.order_index
        try:
            states.append(apply_transition(states[-1], action, scene, cfg))
        except TransitionError as exc:
            return ReplayResult(False, tuple(states), i, str(exc))
    return ReplayResult(True, tuple(states))


# --- priority and cost ---------------------------------------------------------------------------


def action_cost(action_type: ActionType, move_distance: float, cfg: PlanConfig = PlanConfig()) -> float:
    """Normalised execution cost in [0, 1]: travel share plus effort share."""
    travel = min(1.0, move_distance / cfg.distance_cap_m)
    return 0.6 * travel + 0.4 * EFFORT_CLASS[action_type] / MAX_EFFORT_CLASS


def action_priority(risk_priority: float, cost: float, cfg: PlanConfig = PlanConfig()) -> float:
    """Weighted risk priority and execution cost.

    Cost enters inverted so cheaper actions rank higher; ``literal_cost_sign``
    restores the additive form.
    """
    p_norm = min(1.0, max(0.0, risk_priority / cfg.priority_cap))
    c_norm = min(1.0, max(0.0, cost))
    if cfg.literal_cost_sign:
        return cfg.w_p * p_norm + cfg.w_c * c_norm
    return cfg.w_p * p_norm + cfg.w_c * (1.0 - c_norm)


# --- routing and goal selection ------------------------------------------------------------------


def _blockers(objects: Iterable[ObjectRecord], extra: Iterable[BBox] = ()) -> list[BBox]:
    return [o.bbox_m for o in objects] + list(extra)


def route_feasible(start: Point, goal: Point, scene: SceneDescription, cfg: RiskConfig | float = RiskConfig(), objects: Optional[Sequence[ObjectRecord]] = None) -> RouteCheck:
    """Can a body of the minimum passable width travel from ``start`` to ``goal``?"""
    min_width = cfg if isinstance(cfg, (int, float)) else cfg.tau_w_m
    objs = scene.objects if objects is None else objects
    raster = rasterize(scene.effective_layout(), _blockers(objs))
    return route_check(raster, start, goal, min_width)


def _far_end(passage: PassageAttributes, point: Point) -> Point:
    ends = (passage.polyline_m[0], passage.polyline_m[-1])
    return max(ends, key=lambda e: (distance(e, point), -e[0], -e[1]))


def _candidate_centers(scene: SceneDescription, width: float, depth: float):
    x0, y0, x1, y1 = scene.effective_layout().bounds_m
    nx = int(round((x1 - x0) / RESOLUTION_M))
    ny = int(round((y1 - y0) / RESOLUTION_M))
    xs = np.round(x0 + (np.arange(nx) + 0.5) * RESOLUTION_M, 9)
    ys = np.round(y0 + (np.arange(ny) + 0.5) * RESOLUTION_M, 9)
    gx, gy = np.meshgrid(xs, ys)
    cx, cy = gx.ravel(), gy.ravel()
    keep = (cx - width / 2 >= x0 - EPS) & (cx + width / 2 <= x1 + EPS) & (cy - depth / 2 >= y0 - EPS) & (cy + depth / 2 <= y1 + EPS)
    return cx[keep], cy[keep]


def find_goal_position(
    obj: ObjectRecord,
    state: PlanState,
    scene: SceneDescription,
    cfg: PlanConfig,
    risk_cfg: RiskConfig,
    reserved: Sequence[BBox] = (),
    avoid_circle: Optional[tuple[Point, float]] = None,
    keep_route_to: Optional[Point] = None,
) -> Optional[Point]:
    """Nearest 0.1 m cell where ``obj`` fits outside every passage.

    Candidates are ordered by distance from the object, then x, then y. With
    ``avoid_circle`` the footprint must stay outside that disc. With
    ``keep_route_to`` the user must still reach that point afterwards, unless
    the route is blocked even with ``obj`` gone.
    """
    w = obj.bbox_m[2] - obj.bbox_m[0]
    d = obj.bbox_m[3] - obj.bbox_m[1]
    cx, cy = _candidate_centers(scene, w, d)
    bx0, by0, bx1, by1 = cx - w / 2, cy - d / 2, cx + w / 2, cy + d / 2
    ok = np.ones(cx.shape, dtype=bool)
    others = [o for o in state.objects if o.id != obj.id]
    for b in list(scene.effective_layout().walls) + _blockers(others, reserved):
        ok &= ~((bx0 < b[2] - EPS) & (b[0] < bx1 - EPS) & (by0 < b[3] - EPS) & (b[1] < by1 - EPS))
    ux, uy = state.user_position
    gap_x = np.maximum(np.maximum(bx0 - ux, 0.0), ux - bx1)
    gap_y = np.maximum(np.maximum(by0 - uy, 0.0), uy - by1)
    gap = np.hypot(gap_x, gap_y)
    ok &= gap >= cfg.user_body_radius_m
    if avoid_circle is not None:
        (ax, ay), radius = avoid_circle
        agx = np.maximum(np.maximum(bx0 - ax, 0.0), ax - bx1)
        agy = np.maximum(np.maximum(by0 - ay, 0.0), ay - by1)
        ok &= np.hypot(agx, agy) > radius
    if not ok.any():
        return None
    idx = np.flatnonzero(ok)
    shrink = 1e-6
    boxes = shapely.box(bx0[idx] + shrink, by0[idx] + shrink, bx1[idx] - shrink, by1[idx] - shrink)
    outside = np.ones(idx.shape, dtype=bool)
    for passage in scene.passages:
        outside &= ~shapely.intersects(boxes, passage_region(passage))
    idx = idx[outside]
    if idx.size == 0:
        return None
    ox, oy = obj.centroid_m
    dist = np.hypot(cx[idx] - ox, cy[idx] - oy)
    order = np.lexsort((cy[idx], cx[idx], np.round(dist, 9)))
    idx = idx[order]

    check_route = False
    if keep_route_to is not None:
        without = [o for o in state.objects if o.id != obj.id]
        check_route = route_feasible(state.user_position, keep_route_to, scene, risk_cfg, without).feasible
    if not check_route:
        i = idx[0]
        return (float(cx[i]), float(cy[i]))
    for i in idx[: cfg.max_route_checks]:
        goal = (float(cx[i]), float(cy[i]))
        moved = obj.moved_to(goal)
        objs = [moved if o.id == obj.id else o for o in state.objects]
        if route_feasible(state.user_position, keep_route_to, scene, risk_cfg, objs).feasible:
            return goal
    return None


def handover_point(obj: ObjectRecord, state: PlanState, scene: SceneDescription, cfg: PlanConfig) -> Optional[Point]:
    """A free spot ``handover_radius_m`` from the user, preferring the side facing ``obj``."""
    ux, uy = state.user_position
    base = math.atan2(obj.centroid_m[1] - uy, obj.centroid_m[0] - ux)
    for k in range(16):
        # alternate around the preferred bearing: 0, +1, -1, +2, ...
        step = (k + 1) // 2 * (1 if k % 2 else -1)
        angle = base + step * math.pi / 8
        point = (round(ux + cfg.handover_radius_m * math.cos(angle), 6), round(uy + cfg.handover_radius_m * math.sin(angle), 6))
        if _placement_problem(obj.moved_to(point).bbox_m, obj.id, state, scene, cfg) is None:
            return point
    return None


def _guide_waypoint(state: PlanState, scene: SceneDescription, away_from: Optional[Point], cfg: PlanConfig, risk_cfg: RiskConfig) -> Point:
    """A free, wheelchair-passable cell about one guide step away from the hazard."""
    user = state.user_position
    if away_from is None:
        return user
    vx, vy = user[0] - away_from[0], user[1] - away_from[1]
    norm = math.hypot(vx, vy)
    if norm < EPS:
        vx, vy, norm = 1.0, 0.0, 1.0
    target = (user[0] + cfg.guide_step_m * vx / norm, user[1] + cfg.guide_step_m * vy / norm)
    raster = rasterize(scene.effective_layout(), _blockers(state.objects))
    clear = clearance_map(raster)
    passable = np.argwhere(clear >= risk_cfg.tau_w_m - EPS)
    if passable.size == 0:
        return user
    best = None
    for j, i in passable:
        c = raster.center_of((int(j), int(i)))
        key = (round(distance(c, target), 9), c[0], c[1])
        if best is None or key < best[0]:
            best = (key, c)
    point = best[1]
    if _point_blocked(point, state, scene):
        return user
    return point


# --- action construction ------------------------------------------------------------------------


def constraints_for(action_type: ActionType, target: Optional[ObjectRecord], goal: Point, state: PlanState, scene: SceneDescription) -> Constraints:
    """Slow, low-force execution whenever the action happens near the user."""
    radius = scene.user.activity_radius_m
    user = state.user_position
    near = action_type not in PHYSICAL
    if target is not None:
        near = near or distance(target.centroid_m, user) <= radius or distance(goal, user) <= radius
    if near:
        return Constraints(ForceClass.LOW, 0.1, SpeedClass.SLOW)
    mass = MASS_CLASS[target.category] if target is not None else 0
    force = ForceClass.LOW if mass <= 1 else (ForceClass.MEDIUM if mass == 2 else ForceClass.HIGH)
    return Constraints(force, 0.1, SpeedClass.NORMAL)


def make_action(
    action_type: ActionType,
    target: str,
    goal: Point,
    risk: Optional[RiskItem],
    state: PlanState,
    scene: SceneDescription,
    cfg: PlanConfig,
    description: str,
) -> ActionSpec:
    obj = state.object(target) if target != "user" else None
    start = _target_position(state, target) or goal
    d = distance(start, goal)
    p_k = risk.priority if risk is not None else 0.0
    return ActionSpec(
        action_type=action_type,
        target=target,
        goal_pos=(float(goal[0]), float(goal[1])),
        constraints=constraints_for(action_type, obj, goal, state, scene),
        priority=action_priority(p_k, action_cost(action_type, d, cfg), cfg),
        move_distance=d,
        risk_id=risk.id if risk is not None else None,
        description=description,
    )


def _relocation_type(obj: ObjectRecord, cfg: PlanConfig) -> Optional[ActionType]:
    preferred = ActionType.MOVE_OBJECT if MASS_CLASS[obj.category] <= 1 else ActionType.REPOSITION_FURNITURE
    for atype in (preferred, ActionType.REPOSITION_FURNITURE, ActionType.MOVE_OBJECT):
        if atype in cfg.capabilities:
            return atype
    return None


@dataclass
class _Bundle:
    actions: list[ActionSpec] = field(default_factory=list)
    reasons: list[str] = field(default_factory=list)
    handled: bool = False  # resolved or mitigated by the actions


class _Builder:
    """Instantiates task templates against an evolving plan state."""

    def __init__(self, scene: SceneDescription, cfg: PlanConfig, risk_cfg: RiskConfig, directives: frozenset):
        self.scene = scene
        self.cfg = cfg
        self.risk_cfg = risk_cfg
        self.directives = directives
        self.state = initial_state(scene)
        self.reserved: list[BBox] = []

    def commit(self, action: ActionSpec) -> None:
        if action.action_type in (ActionType.MOVE_OBJECT, ActionType.REPOSITION_FURNITURE):
            obj = self.state.object(action.target)
            self.reserved.append(obj.bbox_m)
            self.reserved.append(obj.moved_to(action.goal_pos).bbox_m)
        self.state = apply_transition(self.state, action, self.scene, self.cfg)

    def relocate(self, obj: ObjectRecord, risk: RiskItem, avoid: Optional[tuple[Point, float]], route_to: Optional[Point], why: str) -> tuple[Optional[ActionSpec], Optional[str]]:
        if not obj.movable:
            return None, f"{obj.id}: target not movable"
        atype = _relocation_type(obj, self.cfg)
        if atype is None:
            return None, f"{obj.id}: robot not capable of moving objects"
        goal = None
        if avoid is not None:
            goal = find_goal_position(obj, self.state, self.scene, self.cfg, self.risk_cfg, self.reserved, avoid, route_to)
        if goal is None:
            goal = find_goal_position(obj, self.state, self.scene, self.cfg, self.risk_cfg, self.reserved, None, route_to)
        if goal is None:
            return None, f"{obj.id}: no free goal cell"
        action = make_action(atype, obj.id, goal, risk, self.state, self.scene, self.cfg, why)
        problem = infeasibility(action, self.scene, self.cfg, self.state)
        if problem:
            return None, f"{obj.id}: {problem}"
        return action, None

    def guide(self, risk: RiskItem, away_from: Optional[Point], why: str) -> tuple[Optional[ActionSpec], Optional[str]]:
        if ActionType.GUIDE_USER not in self.cfg.capabilities:
            return None, "robot not capable of guiding"
        if Directive.REDUCE_TRAVEL_DISTANCE.value in self.directives:
            away_from = None
        goal = _guide_waypoint(self.state, self.scene, away_from, self.cfg, self.risk_cfg)
        return make_action(ActionType.GUIDE_USER, "user", goal, risk, self.state, self.scene, self.cfg, why), None

    def halt(self, risk: RiskItem) -> ActionSpec:
        target = risk.subject_id if self.state.object(risk.subject_id) is not None else "user"
        pos = _target_position(self.state, target)
        return make_action(
            ActionType.HALT_AND_REQUEST_HUMAN, target, pos, risk, self.state, self.scene, self.cfg,
            f"Stop and request human help: {risk.description}",
        )

    def build(self, task: Task, risk: RiskItem) -> _Bundle:
        bundle = _Bundle()
        goal = task.goal
        subject = self.state.object(risk.subject_id)
        if goal == TaskGoal.CLEAR_PASSAGE:
            self._clear_passage(risk, bundle)
        elif goal == TaskGoal.WIDEN_ROUTE:
            action, reason = self.guide(risk, None, f"Guide the user through or around narrow passage {risk.subject_id}")
            self._take(bundle, action, reason, handled=True)
        elif goal in (TaskGoal.FETCH_OBJECT, TaskGoal.LOWER_OBJECT):
            if subject is None:
                bundle.reasons.append(f"{risk.subject_id}: target not in scene")
            else:
                dest = handover_point(subject, self.state, self.scene, self.cfg) if goal == TaskGoal.FETCH_OBJECT else None
                if dest is None:
                    dest = subject.centroid_m
                action = make_action(ActionType.LIFT_OBJECT, subject.id, dest, risk, self.state, self.scene, self.cfg,
                                     f"Bring {subject.id} down to the user's reach")
                problem = infeasibility(action, self.scene, self.cfg, self.state)
                self._take(bundle, None if problem else action, f"{subject.id}: {problem}" if problem else None, handled=True)
        elif goal == TaskGoal.GUIDE_USER:
            away = subject.centroid_m if subject is not None else risk.location
            action, reason = self.guide(risk, away, f"Guide the user away from {risk.subject_id}")
            self._take(bundle, action, reason, handled=True)
        elif goal == TaskGoal.SECURE_HAZARD:
            self._secure(risk, subject, bundle)
        # REQUEST_HUMAN has no robot template; the fallback below covers it
        return bundle

    def _take(self, bundle: _Bundle, action: Optional[ActionSpec], reason: Optional[str], handled: bool) -> None:
        if action is None:
            bundle.reasons.append(reason)
            return
        self.commit(action)
        bundle.actions.append(action)
        bundle.handled = bundle.handled or handled

    def _clear_passage(self, risk: RiskItem, bundle: _Bundle) -> None:
        passage = next((p for p in self.scene.passages if p.id == risk.subject_id), None)
        if passage is None:
            bundle.reasons.append(f"{risk.subject_id}: passage not in scene")
            return
        thorough = Directive.RAISE_RESOLUTION_COVERAGE.value in self.directives
        occupants = [self.state.object(i) for i in self.state.occupancy(passage)]
        occupants.sort(key=lambda o: (-o.footprint_area_m2, o.id))
        ratio = sum(o.footprint_area_m2 for o in occupants) / passage.area_m2
        far_end = _far_end(passage, self.state.user_position)
        avoid = (self.state.user_position, self.scene.user.activity_radius_m)
        for obj in occupants:
            if ratio <= self.risk_cfg.tau_r and not thorough:
                break
            action, reason = self.relocate(obj, risk, avoid, far_end, f"Move {obj.id} out of passage {passage.id}")
            if action is None:
                bundle.reasons.append(reason)
                continue
            self.commit(action)
            bundle.actions.append(action)
            ratio -= obj.footprint_area_m2 / passage.area_m2
        bundle.handled = ratio <= self.risk_cfg.tau_r + 1e-12

    def _secure(self, risk: RiskItem, subject: Optional[ObjectRecord], bundle: _Bundle) -> None:
        if subject is None:
            bundle.reasons.append(f"{risk.subject_id}: target not in scene")
            return
        if subject.movable and subject.category not in MOVING_BODIES:
            margin = self.scene.user.activity_radius_m + self.cfg.relocation_margin_m
            action, reason = self.relocate(subject, risk, (self.state.user_position, margin), None,
                                           f"Relocate {subject.id} out of the user's activity region")
            if action is not None:
                self._take(bundle, action, None, handled=True)
                return
            bundle.reasons.append(reason)
        action, reason = self.guide(risk, subject.centroid_m, f"Guide the user away from {subject.id}")
        self._take(bundle, action, reason, handled=True)


def _risk_present(risk: RiskItem, state: PlanState, scene: SceneDescription, risk_cfg: RiskConfig) -> bool:
    current = state.as_scene(scene)
    return any(t.risk_type == risk.risk_type and t.subject_id == risk.subject_id for t in detect_all(current, risk_cfg))


def plan(
    report: RiskReport,
    scene: SceneDescription,
    cfg: PlanConfig = PlanConfig(),
    directives: Iterable[str] = (),
    iteration: int = 1,
) -> ActionSequence:
    """Turn a ranked risk report into an ordered, replay-checked action sequence.

    Risks are instantiated in report order against an evolving state, so
    destinations never collide. Actions are then ordered by descending action
    priority; a caregiver notification closes any plan that handled a High risk.
    """
    directives = frozenset(Directive(d).value for d in directives)
    risk_cfg = report.config_snapshot
    builder = _Builder(scene, cfg, risk_cfg, directives)
    tasks = []
    staged: list[ActionSpec] = []
    dropped: list[DroppedCandidate] = []
    covered: list[str] = []
    handled_high = False
    for risk in report.items:
        task = map_risk_to_task(risk, scene)
        tasks.append(task)
        if builder.state.completed and not _risk_present(risk, builder.state, scene, risk_cfg):
            covered.append(risk.id)
            continue
        if (
            Directive.SHORTEN_PLAN.value in directives
            and risk.level == RiskLevel.LOW
            and task.goal in (TaskGoal.WIDEN_ROUTE, TaskGoal.GUIDE_USER)
        ):
            dropped.append(DroppedCandidate(risk.id, "low-level guidance omitted to shorten the plan"))
            continue
        bundle = builder.build(task, risk)
        for reason in bundle.reasons:
            dropped.append(DroppedCandidate(risk.id, reason))
        if task.goal == TaskGoal.REQUEST_HUMAN and not bundle.actions:
            dropped.append(DroppedCandidate(risk.id, "outside the predefined scope; escalated to a human"))
        # anything the robot cannot handle goes to a human; the fallback directive
        # also escalates High risks that guidance only mitigates
        only_guided = bool(bundle.actions) and all(a.action_type == ActionType.GUIDE_USER for a in bundle.actions)
        needs_fallback = risk.requires_human or not bundle.handled or (
            Directive.ADD_SAFETY_FALLBACK.value in directives and risk.level == RiskLevel.HIGH and only_guided
        )
        if needs_fallback:
            halt = builder.halt(risk)
            builder.commit(halt)
            bundle.actions.append(halt)
        staged.extend(bundle.actions)
        if bundle.actions and risk.level == RiskLevel.HIGH:
            handled_high = True

    indexed = sorted(enumerate(staged), key=lambda p: (-p[1].priority, p[0]))
    ordered = [a for _, a in indexed]
    wants_notify = handled_high or (Directive.ADD_USER_NOTIFICATION.value in directives and report.items)
    if wants_notify:
        top = next((r for r in report.items if r.level == RiskLevel.HIGH), report.items[0])
        notify = make_action(
            ActionType.NOTIFY_CAREGIVER, "user", builder.state.user_position, top, builder.state, scene, cfg,
            "Notify the caregiver: " + "; ".join(r.description for r in report.items if r.level == RiskLevel.HIGH or r is top),
        )
        ordered.append(notify)
    actions = _finalize(ordered, scene, cfg)
    if actions is None:
        # priority order broke a dependency; creation order is valid by construction
        actions = _finalize(staged + ordered[len(staged):], scene, cfg)
    if actions is None:
        raise RuntimeError("staged actions failed replay; planner state tracking is inconsistent")
    return ActionSequence(
        actions=tuple(actions),
        dropped=tuple(dropped),
        tasks=tuple(tasks),
        covered=tuple(covered),
        source_report=report.report_id,
        iteration=iteration,
        directives=tuple(sorted(directives)),
    )


def _finalize(actions: Sequence[ActionSpec], scene: SceneDescription, cfg: PlanConfig) -> Optional[list[ActionSpec]]:
    """Assign order indices and execution-time distances, then replay the result."""
    state = initial_state(scene)
    out = []
    for i, action in enumerate(actions):
        start = _target_position(state, action.target)
        if start is None:
            return None
        if action.action_type in (ActionType.NOTIFY_CAREGIVER, ActionType.HALT_AND_REQUEST_HUMAN):
            action = replace(action, goal_pos=(float(start[0]), float(start[1])))
        action = replace(action, order_index=i, move_distance=distance(start, action.goal_pos))
        try:
            state = apply_transition(state, action, scene, cfg)
        except TransitionError:
            return None
        out.append(action)
    return out


# --- file format ----------------------------------------------------------------------------------


def action_to_dict(a: ActionSpec) -> dict:
    return {
        "action_type": a.action_type.value,
        "target": a.target,
        "goal_pos": list(a.goal_pos),
        "constraints": {
            "max_force_class": a.constraints.max_force_class.value,
            "clearance_m": a.constraints.clearance_m,
            "speed_class": a.constraints.speed_class.value,
        },
        "priority": a.priority,
        "order_index": a.order_index,
        "move_distance": a.move_distance,
        "risk_id": a.risk_id,
        "description": a.description,
    }


def action_from_dict(d: dict) -> ActionSpec:
    c = d["constraints"]
    return ActionSpec(
        action_type=ActionType(d["action_type"]),
        target=d["target"],
        goal_pos=(float(d["goal_pos"][0]), float(d["goal_pos"][1])),
        constraints=Constraints(ForceClass(c["max_force_class"]), float(c["clearance_m"]), SpeedClass(c["speed_class"])),
        priority=float(d["priority"]),
        order_index=int(d["order_index"]),
        move_distance=float(d["move_distance"]),
        risk_id=d.get("risk_id"),
        description=d.get("description", ""),
    )


def plan_to_dict(seq: ActionSequence) -> dict:
    return {
        "source_report": seq.source_report,
        "iteration": seq.iteration,
        "directives": list(seq.directives),
        "actions": [action_to_dict(a) for a in seq.actions],
        "dropped": [{"risk_id": d.risk_id, "reason": d.reason} for d in seq.dropped],
        "covered": list(seq.covered),
        "tasks": [
            {"id": t.id, "source_risk_id": t.source_risk_id, "goal": t.goal.value, "description": t.description}
            for t in seq.tasks
        ],
    }


def plan_from_dict(data: dict) -> ActionSequence:
    try:
        return ActionSequence(
            actions=tuple(action_from_dict(a) for a in data["actions"]),
            dropped=tuple(DroppedCandidate(d["risk_id"], d["reason"]) for d in data.get("dropped", [])),
            tasks=tuple(Task(t["id"], t["source_risk_id"], TaskGoal(t["goal"]), t["description"]) for t in data.get("tasks", [])),
            covered=tuple(data.get("covered", [])),
            source_report=data.get("source_report", ""),
            iteration=int(data.get("iteration", 1)),
            directives=tuple(data.get("directives", [])),
        )
    except (KeyError, ValueError, TypeError, IndexError) as exc:
        raise SceneParseError(f"invalid plan file: {exc}", "actions") from exc


def emit_plan_file(seq: ActionSequence) -> bytes:
    return dumps(plan_to_dict(seq))


def parse_plan_file(data: bytes | str) -> ActionSequence:
    return plan_from_dict(loads(data))
