"""Brute-force reference implementations used to cross-check risk ranking and planning.

``brute_force_rank`` deliberately shares no code with the risk module: it
re-derives every trigger from the raw scene with plain arithmetic.
``brute_force_plan_value`` enumerates action orderings exhaustively.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

from ..domain import SceneDescription
from ..evaluator import EvalConfig, rubric_trace
from ..planner import (
    ActionSequence,
    ActionSpec,
    ActionType,
    PlanConfig,
    TransitionError,
    _guide_waypoint,
    _relocation_type,
    _target_position,
    apply_transition,
    find_goal_position,
    handover_point,
    initial_state,
    make_action,
)
from ..risk import RiskConfig, RiskReport, RiskType

# --- ranking oracle ------------------------------------------------------------------------------

_SEVERITY = {3: 0.9, 2: 0.6, 1: 0.3}


@dataclass(frozen=True)
class OracleRisk:
    risk_type: str
    subject_id: str
    severity: float
    distance_m: float
    score: float
    level: int
    priority: float

    @property
    def id(self) -> str:
        return f"{self.risk_type}:{self.subject_id}"


def _closest_on_segments(p, pts):
    if len(pts) == 1:
        return pts[0]
    best, best_d = None, None
    for (ax, ay), (bx, by) in zip(pts, pts[1:]):
        vx, vy = bx - ax, by - ay
        denom = vx * vx + vy * vy
        t = 0.0 if denom == 0 else ((p[0] - ax) * vx + (p[1] - ay) * vy) / denom
        t = min(1.0, max(0.0, t))
        q = (ax + t * vx, ay + t * vy)
        d = math.hypot(q[0] - p[0], q[1] - p[1])
        if best_d is None or d < best_d:
            best, best_d = q, d
    return best


def _enumerate_triggers(scene: SceneDescription, cfg: RiskConfig):
    """(type, subject, location, severity level) for every hazard."""
    user = scene.user
    up = user.position_m
    by_id = {o.id: o for o in scene.objects}
    found = []
    for p in scene.passages:
        loc = _closest_on_segments(up, p.polyline_m)
        if p.width_m < cfg.tau_w_m:
            short = (cfg.tau_w_m - p.width_m) / cfg.tau_w_m
            found.append(("navigation", p.id, loc, 1 if short < 0.25 else 2 if short < 0.5 else 3))
        if p.obstacle_ids:
            area = 0.0
            for oid in p.obstacle_ids:
                b = by_id[oid].bbox_m
                area += (b[2] - b[0]) * (b[3] - b[1])
            if area / p.area_m2 > cfg.tau_r:
                found.append(("obstruction", p.id, loc, 3))
    for o in scene.objects:
        cat = o.category.value
        near = math.hypot(o.centroid_m[0] - up[0], o.centroid_m[1] - up[1]) <= user.activity_radius_m
        if cat not in ("person", "pet", "switch", "medication", "other") and o.height_m > cfg.tau_h_m and near:
            found.append(("user_safety", o.id, o.centroid_m, 2))
        b = o.bbox_m
        gx = max(b[0] - up[0], 0.0, up[0] - b[2])
        gy = max(b[1] - up[1], 0.0, up[1] - b[3])
        touching = math.hypot(gx, gy) <= user.activity_radius_m
        if cat in ("person", "pet") and touching:
            found.append(("collision", o.id, o.centroid_m, 2))
        elif cat in ("chair", "table", "shelf", "door") and o.movable and touching:
            found.append(("collision", o.id, o.centroid_m, 1))
        if cat in ("switch", "medication") and o.height_m > user.reach_height_m:
            found.append(("accessibility", o.id, o.centroid_m, 3))
        if cat in ("spill", "sharp_edge") and touching:
            found.append(("user_safety", o.id, o.centroid_m, 3))
        if cat == "other":
            found.append(("other", o.id, o.centroid_m, 3))
    return found


def brute_force_rank(scene: SceneDescription, cfg: RiskConfig = RiskConfig()) -> list[OracleRisk]:
    """Every hazard scored from first principles and sorted by the documented keys."""
    up = scene.user.position_m
    out = []
    for rtype, subject, loc, sev_level in _enumerate_triggers(scene, cfg):
        d = math.hypot(loc[0] - up[0], loc[1] - up[1])
        sev = _SEVERITY[sev_level]
        s = cfg.w_sev * sev + cfg.w_urg * math.exp(-cfg.alpha_per_m * d)
        level = 3 if s >= cfg.level_high else 2 if s >= cfg.level_medium else 1
        beta = cfg.beta_passage if rtype in ("obstruction", "navigation") else cfg.beta_local
        out.append(OracleRisk(rtype, subject, sev, d, s, level, level * beta * cfg.affected_users))
    out.sort(key=lambda r: (-r.priority, -r.score, r.distance_m, r.subject_id, r.risk_type))
    return out


# --- planning oracle -----------------------------------------------------------------------------


def template_actions(report: RiskReport, scene: SceneDescription, cfg: PlanConfig = PlanConfig()) -> list[ActionSpec]:
    """The action library instantiated once per risk against the initial state."""
    risk_cfg = report.config_snapshot
    state = initial_state(scene)
    out: list[ActionSpec] = []
    seen = set()

    def add(action: Optional[ActionSpec]) -> None:
        if action is not None and action.signature() not in seen:
            seen.add(action.signature())
            out.append(action)

    user = state.user_position
    for risk in report.items:
        subject = state.object(risk.subject_id)
        passage = next((p for p in scene.passages if p.id == risk.subject_id), None)
        movers = []
        if passage is not None:
            far = max((passage.polyline_m[0], passage.polyline_m[-1]), key=lambda e: math.hypot(e[0] - user[0], e[1] - user[1]))
            movers = [(state.object(i), (user, scene.user.activity_radius_m), far) for i in state.occupancy(passage)]
        elif subject is not None:
            margin = scene.user.activity_radius_m + cfg.relocation_margin_m
            movers = [(subject, (user, margin), None)]
        for obj, avoid, route_to in movers:
            if obj is None or not obj.movable:
                continue
            goal = find_goal_position(obj, state, scene, cfg, risk_cfg, (), avoid, route_to)
            if goal is None:
                goal = find_goal_position(obj, state, scene, cfg, risk_cfg, (), None, route_to)
            atype = _relocation_type(obj, cfg)
            if goal is not None and atype is not None:
                # move and reposition differ only in effort, which the rubric ignores
                add(make_action(atype, obj.id, goal, risk, state, scene, cfg, f"Relocate {obj.id}"))
        if subject is not None and risk.risk_type == RiskType.ACCESSIBILITY:
            spot = handover_point(subject, state, scene, cfg)
            if spot is not None:
                add(make_action(ActionType.LIFT_OBJECT, subject.id, spot, risk, state, scene, cfg, f"Bring {subject.id} to the user"))
            add(make_action(ActionType.LIFT_OBJECT, subject.id, subject.centroid_m, risk, state, scene, cfg, f"Lower {subject.id}"))
        away = subject.centroid_m if subject is not None else risk.location
        add(make_action(ActionType.GUIDE_USER, "user", _guide_waypoint(state, scene, away, cfg, risk_cfg), risk, state, scene, cfg, "Guide the user away"))
        add(make_action(ActionType.GUIDE_USER, "user", user, risk, state, scene, cfg, "Guide the user in place"))
        target = subject.id if subject is not None else "user"
        add(make_action(ActionType.HALT_AND_REQUEST_HUMAN, target, _target_position(state, target), risk, state, scene, cfg, "Request human help"))
    if report.items:
        top = next((r for r in report.items if r.level == 3), report.items[0])
        add(make_action(ActionType.NOTIFY_CAREGIVER, "user", user, top, state, scene, cfg, "Notify the caregiver"))
    return out


def _step(state, action: ActionSpec, index: int, scene: SceneDescription, cfg: PlanConfig):
    start = _target_position(state, action.target)
    if start is None:
        return None, None
    if action.action_type in (ActionType.NOTIFY_CAREGIVER, ActionType.HALT_AND_REQUEST_HUMAN):
        action = replace(action, goal_pos=(float(start[0]), float(start[1])))
    action = replace(action, order_index=index, move_distance=math.hypot(action.goal_pos[0] - start[0], action.goal_pos[1] - start[1]))
    try:
        return apply_transition(state, action, scene, cfg), action
    except TransitionError:
        return None, None


@dataclass(frozen=True)
class OracleValue:
    best_mean: float
    best_actions: tuple[ActionSpec, ...]
    sequences_scored: int


def brute_force_plan_search(
    report: RiskReport,
    scene: SceneDescription,
    cfg: PlanConfig = PlanConfig(),
    eval_cfg: EvalConfig = EvalConfig(),
    max_len: int = 4,
) -> OracleValue:
    """Exhaustive search over feasible orderings of template actions up to ``max_len``."""
    if not 0 <= max_len <= 6:
        raise ValueError("max_len must be in [0, 6]")
    candidates = template_actions(report, scene, cfg)
    best = (-1.0, ())
    scored = 0

    def score(actions: tuple[ActionSpec, ...]) -> float:
        seq = ActionSequence(actions=actions, source_report=report.report_id)
        s = rubric_trace(seq, report, scene, eval_cfg, cfg).scores
        return sum(s) / 4.0

    def extend(state, prefix: tuple[ActionSpec, ...], used: frozenset):
        nonlocal best, scored
        value = score(prefix)
        scored += 1
        if value > best[0] + 1e-12:
            best = (value, prefix)
        if len(prefix) == max_len:
            return
        for i, cand in enumerate(candidates):
            if i in used:
                continue
            nxt, concrete = _step(state, cand, len(prefix), scene, cfg)
            if nxt is None:
                continue
            extend(nxt, prefix + (concrete,), used | {i})

    extend(initial_state(scene), (), frozenset())
    return OracleValue(best[0], best[1], scored)


def brute_force_plan_value(
    report: RiskReport,
    scene: SceneDescription,
    cfg: PlanConfig = PlanConfig(),
    max_len: int = 4,
    eval_cfg: EvalConfig = EvalConfig(),
) -> float:
    """Best rubric mean over every feasible template sequence of length <= ``max_len``."""
    return brute_force_plan_search(report, scene, cfg, eval_cfg, max_len).best_mean


__all__ = [
    "OracleRisk",
    "OracleValue",
    "brute_force_plan_search",
    "brute_force_plan_value",
    "brute_force_rank",
    "template_actions",
]
