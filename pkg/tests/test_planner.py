from __future__ import annotations

import math
from collections import deque
from dataclasses import replace

import pytest
from hypothesis import given
from hypothesis import strategies as st

from assistplan.perception import oracle_describe
from assistplan.planner import (
    ActionSpec,
    ActionType,
    Constraints,
    Directive,
    PlanConfig,
    TaskGoal,
    TransitionError,
    action_cost,
    action_priority,
    apply_transition,
    emit_plan_file,
    feasible,
    infeasibility,
    initial_state,
    map_risk_to_task,
    parse_plan_file,
    plan,
    replay,
    route_feasible,
)
from assistplan.risk import RiskConfig, RiskLevel, assess
from assistplan.simworld import generate_world

from conftest import blocked_passage_scene, obj, others_scene, passage, scene, user

CFG = PlanConfig()


def step(atype, target, goal, distance=0.0, order=0) -> ActionSpec:
    return ActionSpec(atype, target, goal, Constraints(), order_index=order, move_distance=distance)


def medication_scene():
    med = obj("medication_1", "medication", (1.9, 0.9, 2.1, 1.1), height=1.6)
    return scene([med], [], user((1.0, 1.0), reach=1.2, radius=1.5), bounds=(0, 0, 5, 4))


# --- task mapping --------------------------------------------------------------------------------


@pytest.mark.parametrize(
    "make_scene, risk_id, goal",
    [
        (blocked_passage_scene, "obstruction:p1", TaskGoal.CLEAR_PASSAGE),
        (lambda: others_scene(1), "other:other_0", TaskGoal.REQUEST_HUMAN),
        (medication_scene, "accessibility:medication_1", TaskGoal.FETCH_OBJECT),
    ],
)
def test_map_risk_to_task_examples(make_scene, risk_id, goal):
    s = make_scene()
    risk = assess(s).by_id(risk_id)
    task = map_risk_to_task(risk, s)
    assert task.goal == goal
    assert task.source_risk_id == risk_id


def test_fixed_switch_is_lowered_not_fetched():
    s = scene([obj("switch_1", "switch", (1.9, 0.9, 2.0, 1.0), height=1.6, movable=False)], usr=user(reach=1.2))
    assert map_risk_to_task(assess(s).items[0], s).goal == TaskGoal.LOWER_OBJECT


# --- feasibility ---------------------------------------------------------------------------------


def test_feasible_examples():
    s = blocked_passage_scene()
    move = step(ActionType.MOVE_OBJECT, "chair_1", (3.0, 0.8))
    assert feasible(move, s, CFG)
    assert not feasible(replace(move, target="ghost"), s, CFG)
    assert infeasibility(replace(move, target="ghost"), s, CFG) == "target not in scene"
    no_lift = PlanConfig(capabilities=frozenset(ActionType) - {ActionType.LIFT_OBJECT})
    lift = step(ActionType.LIFT_OBJECT, "chair_1", (3.0, 2.0))
    assert not feasible(lift, s, no_lift)
    assert infeasibility(lift, s, no_lift) == "robot not capable"


def test_non_movable_targets_are_infeasible():
    s = scene([obj("door_1", "door", (2, 2, 3, 2.1), movable=False)])
    assert infeasibility(step(ActionType.MOVE_OBJECT, "door_1", (5, 5)), s, CFG) == "target not movable"


def test_halt_is_always_available():
    s = blocked_passage_scene()
    nothing = PlanConfig(capabilities=frozenset())
    assert feasible(step(ActionType.HALT_AND_REQUEST_HUMAN, "chair_1", (3.0, 2.0)), s, nothing)


# --- action priority -----------------------------------------------------------------------------


def test_action_priority_examples():
    assert action_priority(3.6, 0.25, CFG) == pytest.approx(0.7 + 0.3 * 0.75, abs=1e-12)
    assert action_priority(3.6, 0.25, CFG) == pytest.approx(0.925, abs=1e-12)
    assert action_priority(0.0, 1.0, CFG) == 0.0
    assert action_priority(1.6, 0.2, CFG) > action_priority(1.6, 0.4, CFG)


def test_literal_cost_sign_is_available():
    literal = PlanConfig(literal_cost_sign=True)
    assert action_priority(3.6, 0.25, literal) == pytest.approx(0.7 + 0.3 * 0.25)
    assert action_priority(1.6, 0.4, literal) > action_priority(1.6, 0.2, literal)


@pytest.mark.parametrize(
    "atype, d, expected",
    [
        (ActionType.NOTIFY_CAREGIVER, 0.0, 0.0),
        (ActionType.MOVE_OBJECT, 5.0, 0.6 * 0.5 + 0.4 * 2 / 3),
        (ActionType.REPOSITION_FURNITURE, 25.0, 1.0),
        (ActionType.GUIDE_USER, 1.0, 0.06 + 0.4 / 3),
    ],
)
def test_action_cost_examples(atype, d, expected):
    assert action_cost(atype, d, CFG) == pytest.approx(expected, abs=1e-12)


@given(st.floats(0, 10), st.floats(0, 10), st.floats(0, 2))
def test_priority_monotone_in_risk_priority(p1, p2, cost):
    lo, hi = sorted((p1, p2))
    assert action_priority(hi, cost, CFG) >= action_priority(lo, cost, CFG)


@given(st.floats(0, 10), st.floats(0, 2), st.floats(0, 2))
def test_priority_anti_monotone_in_cost(p, c1, c2):
    lo, hi = sorted((c1, c2))
    assert action_priority(p, hi, CFG) <= action_priority(p, lo, CFG)


# --- transitions ---------------------------------------------------------------------------------


def chair_scene():
    return scene([obj("chair_1", "chair", (0.8, 0.8, 1.2, 1.2))], usr=user((5.0, 4.0), radius=1.0), bounds=(0, 0, 6, 5))


def test_move_chair_updates_position_and_distance():
    s = chair_scene()
    state = initial_state(s)
    action = step(ActionType.MOVE_OBJECT, "chair_1", (3.0, 1.0), distance=math.dist((1.0, 1.0), (3.0, 1.0)))
    assert action.move_distance == pytest.approx(2.0)
    nxt = apply_transition(state, action, s, CFG)
    assert nxt.object("chair_1").centroid_m == (3.0, 1.0)
    assert nxt.object("chair_1").bbox_m == pytest.approx((2.8, 0.8, 3.2, 1.2))
    assert nxt.completed == (0,)
    assert state.object("chair_1").centroid_m == (1.0, 1.0)  # input untouched


def test_notify_changes_only_the_completed_set():
    s = chair_scene()
    state = initial_state(s)
    nxt = apply_transition(state, step(ActionType.NOTIFY_CAREGIVER, "user", (5.0, 4.0)), s, CFG)
    assert nxt.objects == state.objects and nxt.user_position == state.user_position
    assert nxt.completed == (0,)


def test_moving_a_fixed_object_raises_naming_the_conjunct():
    s = scene([obj("door_1", "door", (2, 2, 3, 2.1), movable=False)], bounds=(0, 0, 6, 6))
    with pytest.raises(TransitionError) as err:
        apply_transition(initial_state(s), step(ActionType.MOVE_OBJECT, "door_1", (4, 4), distance=math.dist((2.5, 2.05), (4, 4))), s, CFG)
    assert err.value.conjunct == "target not movable"


@pytest.mark.parametrize(
    "goal, problem",
    [
        ((7.0, 1.0), "goal outside bounds"),
        ((5.0, 4.0), "goal overlaps user"),
    ],
)
def test_bad_destinations_are_rejected(goal, problem):
    s = chair_scene()
    action = step(ActionType.MOVE_OBJECT, "chair_1", goal, distance=math.dist((1.0, 1.0), goal))
    with pytest.raises(TransitionError, match=problem):
        apply_transition(initial_state(s), action, s, CFG)


def test_stale_distance_is_rejected():
    s = chair_scene()
    with pytest.raises(TransitionError, match="move distance"):
        apply_transition(initial_state(s), step(ActionType.MOVE_OBJECT, "chair_1", (3.0, 1.0), distance=1.0), s, CFG)


def test_occupancy_is_rederived_from_positions():
    s = blocked_passage_scene()
    state = initial_state(s)
    assert state.occupancy(s.passages[0]) == ("chair_1",)
    moved = apply_transition(state, step(ActionType.MOVE_OBJECT, "chair_1", (3.0, 0.6), distance=1.4), s, CFG)
    assert moved.occupancy(s.passages[0]) == ()
    assert moved.as_scene(s).passages[0].obstacle_ids == ()


# --- plan ----------------------------------------------------------------------------------------


def _nearest_free_cell(o, s, avoid_center, avoid_radius):
    """Brute-force nearest 0.1 m cell centre for ``o`` outside the passage strip and the avoid disc."""
    w, d = o.bbox_m[2] - o.bbox_m[0], o.bbox_m[3] - o.bbox_m[1]
    x0, y0, x1, y1 = s.layout.bounds_m
    best = None
    for i in range(int(round((x1 - x0) / 0.1))):
        for j in range(int(round((y1 - y0) / 0.1))):
            cx, cy = round(x0 + (i + 0.5) * 0.1, 9), round(y0 + (j + 0.5) * 0.1, 9)
            b = (cx - w / 2, cy - d / 2, cx + w / 2, cy + d / 2)
            if b[0] < x0 - 1e-9 or b[1] < y0 - 1e-9 or b[2] > x1 + 1e-9 or b[3] > y1 + 1e-9:
                continue
            # passage p1 covers x in [2, 4], y in [1.5, 2.5]
            if b[0] < 4.0 and b[2] > 2.0 and b[1] < 2.5 and b[3] > 1.5:
                continue
            gx = max(b[0] - avoid_center[0], 0.0, avoid_center[0] - b[2])
            gy = max(b[1] - avoid_center[1], 0.0, avoid_center[1] - b[3])
            if math.hypot(gx, gy) <= avoid_radius:
                continue
            key = (round(math.dist((cx, cy), o.centroid_m), 9), cx, cy)
            if best is None or key < best:
                best = key
    return best[1], best[2]


def test_blocked_passage_plan_is_move_then_notify():
    s = blocked_passage_scene()
    report = assess(s)
    seq = plan(report, s, CFG)
    assert [a.action_type for a in seq.actions] == [ActionType.MOVE_OBJECT, ActionType.NOTIFY_CAREGIVER]
    move = seq.actions[0]
    assert move.target == "chair_1"
    expected = _nearest_free_cell(s.object_by_id("chair_1"), s, (1.0, 2.0), 0.5)
    assert move.goal_pos == pytest.approx(expected)
    assert move.move_distance == pytest.approx(math.dist((3.0, 2.0), expected))
    assert replay(seq.actions, s, CFG).ok
    final = replay(seq.actions, s, CFG).final
    assert route_feasible((1.0, 2.0), (4.0, 2.0), s, RiskConfig(), final.objects).feasible


def test_empty_report_gives_empty_plan():
    s = scene([], [passage("p1", 1.2, [(0, 0), (3, 0)])])
    seq = plan(assess(s), s, CFG)
    assert seq.actions == () and seq.dropped == () and seq.tasks == ()


def test_incapable_robot_halts_first():
    s = blocked_passage_scene()
    cfg = PlanConfig(capabilities=frozenset({ActionType.NOTIFY_CAREGIVER}))
    report = assess(s)
    assert report.items[0].level == RiskLevel.HIGH
    seq = plan(report, s, cfg)
    assert seq.actions[0].action_type == ActionType.HALT_AND_REQUEST_HUMAN
    assert seq.actions[0].risk_id == "obstruction:p1"
    assert any(d.risk_id == "obstruction:p1" and "not capable" in d.reason for d in seq.dropped)
    assert replay(seq.actions, s, cfg).ok


def test_medication_is_fetched_to_a_handover_point():
    s = medication_scene()
    seq = plan(assess(s), s, CFG)
    lift = next(a for a in seq.actions if a.action_type == ActionType.LIFT_OBJECT)
    assert math.dist(lift.goal_pos, (1.0, 1.0)) == pytest.approx(CFG.handover_radius_m, abs=1e-5)
    final = replay(seq.actions, s, CFG).final
    assert final.object("medication_1").height_m <= 1.2
    assert seq.actions[-1].action_type == ActionType.NOTIFY_CAREGIVER


def test_others_are_escalated_never_dropped_silently():
    s = others_scene(2)
    seq = plan(assess(s), s, CFG)
    halts = [a for a in seq.actions if a.action_type == ActionType.HALT_AND_REQUEST_HUMAN]
    assert sorted(a.risk_id for a in halts) == ["other:other_0", "other:other_1"]
    assert {d.risk_id for d in seq.dropped} == {"other:other_0", "other:other_1"}


def test_shorten_directive_drops_low_guidance_with_a_reason():
    s = scene([], [passage("p1", 0.7, [(4.0, 1.0), (6.0, 1.0)])], user((1.0, 1.0)), bounds=(0, 0, 7, 3))
    report = assess(s)
    assert report.items[0].level == RiskLevel.LOW
    assert plan(report, s, CFG).actions
    short = plan(report, s, CFG, directives=[Directive.SHORTEN_PLAN.value])
    assert short.actions == ()
    assert short.dropped[0].risk_id == "navigation:p1"


def test_fallback_directive_escalates_guided_high_risks():
    spill = obj("spill_1", "spill", (1.3, 0.9, 1.5, 1.1), height=0.0, movable=False)
    s = scene([spill], [], user((1.0, 1.0), radius=1.0), bounds=(0, 0, 6, 4))
    report = assess(s)
    assert report.items[0].level == RiskLevel.HIGH
    base = [a.action_type for a in plan(report, s, CFG).actions]
    assert ActionType.HALT_AND_REQUEST_HUMAN not in base
    safe = [a.action_type for a in plan(report, s, CFG, directives=[Directive.ADD_SAFETY_FALLBACK.value]).actions]
    assert ActionType.HALT_AND_REQUEST_HUMAN in safe


def test_plan_file_round_trip():
    s = blocked_passage_scene()
    seq = plan(assess(s), s, CFG)
    assert parse_plan_file(emit_plan_file(seq)) == seq


# --- invariants on generated scenes --------------------------------------------------------------

CORPUS = [(seed, level) for level in (1, 2) for seed in range(15)]


@pytest.mark.parametrize("seed, level", CORPUS)
def test_plan_invariants_on_generated_scenes(seed, level):
    s = oracle_describe(generate_world(seed, level))
    report = assess(s)
    seq = plan(report, s, CFG)
    # bijection between tasks and risks
    assert [t.source_risk_id for t in seq.tasks] == [r.id for r in report.items]
    # replay soundness and strictly increasing order
    assert replay(seq.actions, s, CFG).ok
    assert [a.order_index for a in seq.actions] == list(range(len(seq.actions)))
    # feasibility at every step
    state = initial_state(s)
    for a in seq.actions:
        assert feasible(a, s, CFG, state)
        state = apply_transition(state, a, s, CFG)
    # no silent drops
    traced = {a.risk_id for a in seq.actions} | {d.risk_id for d in seq.dropped} | set(seq.covered)
    assert {r.id for r in report.items} <= traced
    # determinism
    assert plan(report, s, CFG) == seq


# --- routing -------------------------------------------------------------------------------------


def _oracle_route(bounds, boxes, start, goal, min_width, res=0.1):
    """Independent grid BFS: clearance is the shorter of the free runs through a cell."""
    x0, y0, x1, y1 = bounds
    nx, ny = int(round((x1 - x0) / res)), int(round((y1 - y0) / res))

    def free(i, j):
        cx, cy = x0 + (i + 0.5) * res, y0 + (j + 0.5) * res
        return not any(b[0] < cx < b[2] and b[1] < cy < b[3] for b in boxes)

    grid = [[free(i, j) for j in range(ny)] for i in range(nx)]

    def run(i, j, di, dj):
        n = 0
        while 0 <= i < nx and 0 <= j < ny and grid[i][j]:
            n += 1
            i, j = i + di, j + dj
        return n

    def ok(i, j):
        if not grid[i][j]:
            return False
        horizontal = run(i, j, 1, 0) + run(i, j, -1, 0) - 1
        vertical = run(i, j, 0, 1) + run(i, j, 0, -1) - 1
        return min(horizontal, vertical) * res >= min_width - 1e-9

    cell = lambda p: (min(nx - 1, int((p[0] - x0) / res)), min(ny - 1, int((p[1] - y0) / res)))
    s, g = cell(start), cell(goal)
    if not ok(*s) or not ok(*g):
        return False
    seen, todo = {s}, deque([s])
    while todo:
        i, j = todo.popleft()
        if (i, j) == g:
            return True
        for a, b in ((i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)):
            if 0 <= a < nx and 0 <= b < ny and (a, b) not in seen and ok(a, b):
                seen.add((a, b))
                todo.append((a, b))
    return False


ROOMS = (0.0, 0.0, 10.0, 3.0)
CORRIDOR_WALLS = [(4.0, 0.0, 6.0, 1.0), (4.0, 2.0, 6.0, 3.0)]


def test_empty_room_corners_are_connected():
    s = scene([], [], user((0.05, 0.05)), bounds=(0, 0, 4, 3))
    check = route_feasible((0.05, 0.05), (3.95, 2.95), s)
    assert check.feasible
    assert check.bottleneck_m == pytest.approx(3.0)
    assert _oracle_route((0, 0, 4, 3), [], (0.05, 0.05), (3.95, 2.95), 0.8)


def test_walled_off_corridor_is_unreachable():
    walls = CORRIDOR_WALLS + [(5.0, 1.0, 5.2, 2.0)]
    s = scene([], [], user((1.0, 1.5)), bounds=ROOMS, walls=walls)
    assert not route_feasible((1.0, 1.5), (9.0, 1.5), s).feasible
    assert not _oracle_route(ROOMS, walls, (1.0, 1.5), (9.0, 1.5), 0.8)


def test_narrow_gap_blocks_until_obstacle_removed():
    box = obj("box_1", "other", (4.8, 1.0, 5.2, 1.3))
    s = scene([box], [], user((1.0, 1.5)), bounds=ROOMS, walls=CORRIDOR_WALLS)
    before = route_feasible((1.0, 1.5), (9.0, 1.5), s)
    assert not before.feasible and before.bottleneck_m is None
    assert not _oracle_route(ROOMS, CORRIDOR_WALLS + [box.bbox_m], (1.0, 1.5), (9.0, 1.5), 0.8)
    after = route_feasible((1.0, 1.5), (9.0, 1.5), s, objects=[])
    assert after.feasible and after.bottleneck_m == pytest.approx(1.0)
    assert _oracle_route(ROOMS, CORRIDOR_WALLS, (1.0, 1.5), (9.0, 1.5), 0.8)
    # the 0.7 m gap itself is passable for a narrower body
    assert route_feasible((1.0, 1.5), (9.0, 1.5), s, 0.7).bottleneck_m == pytest.approx(0.7)
