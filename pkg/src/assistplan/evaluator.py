"""Evaluation agent: four-dimension plan scoring, acceptance and feedback directives.

Dimensions, in order: assistance UX, task efficiency, transparency, and
ethical & social alignment. Each is scored on [0, 10].
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Any, Optional, Sequence

from .domain import SceneDescription, SceneParseError, dumps, loads
from .planner import (
    ActionSequence,
    ActionType,
    Directive,
    PlanConfig,
    SpeedClass,
    ForceClass,
    initial_state,
    replay,
)
from .domain import distance
from .risk import RiskLevel, RiskReport, RiskType, detect_all

log = logging.getLogger(__name__)

DIMENSIONS = ("assistance_ux", "task_efficiency", "transparency", "ethical_social_alignment")
MAX_SCORE = 10.0


class Judge(str, Enum):
    RULE_BASED = "rule_based"
    REMOTE_PROVIDER = "remote_provider"


class Status(str, Enum):
    RESOLVED = "resolved"
    MITIGATED = "mitigated"
    ESCALATED = "escalated"
    UNHANDLED = "unhandled"


DEFAULT_RUBRIC = {
    "assistance_ux": {"guidance": 0.6, "conciseness": 0.4},
    "task_efficiency": {"coverage": 0.7, "distance": 0.3},
    "transparency": {"action_traceability": 0.3, "risk_traceability": 0.4, "notification": 0.3},
    "ethical_social_alignment": {"compliance": 0.4, "fallback": 0.6},
}
STATUS_CREDIT = {Status.RESOLVED: 1.0, Status.MITIGATED: 0.75, Status.ESCALATED: 0.5, Status.UNHANDLED: 0.0}
# D4 ceiling when an out-of-scope risk is left without a human escalation
MISSING_ESCALATION_CAP = 4.0


@dataclass(frozen=True)
class EvalConfig:
    acceptance_threshold: float = 7.0
    rubric: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_RUBRIC), hash=False)
    judge: Judge = Judge.RULE_BASED
    long_travel_below: float = 0.8

    def problems(self) -> list[str]:
        out = []
        if not 0.0 <= self.acceptance_threshold <= MAX_SCORE:
            out.append("acceptance_threshold must be in [0, 10]")
        for dim, weights in self.rubric.items():
            if dim not in DIMENSIONS:
                out.append(f"unknown rubric dimension {dim!r}")
            elif abs(sum(weights.values()) - 1.0) > 1e-9:
                out.append(f"rubric weights for {dim} must sum to 1")
        return out

    def to_dict(self) -> dict:
        return {
            "acceptance_threshold": self.acceptance_threshold,
            "rubric": copy.deepcopy(self.rubric),
            "judge": self.judge.value,
            "long_travel_below": self.long_travel_below,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvalConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown eval config keys: {sorted(unknown)}")
        data = dict(data)
        if "judge" in data:
            data["judge"] = Judge(data["judge"])
        if "rubric" in data:
            merged = copy.deepcopy(DEFAULT_RUBRIC)
            for dim, weights in data["rubric"].items():
                merged.setdefault(dim, {}).update(weights)
            data["rubric"] = merged
        return cls(**data)


@dataclass(frozen=True)
class EvaluationReport:
    scores: tuple[float, float, float, float]
    mean: float
    d_min: int
    p_imp: tuple[float, ...]
    suggestions: tuple[str, ...]
    accepted: bool
    judge_provenance: str = Judge.RULE_BASED.value
    signals: dict = field(default_factory=dict, hash=False)
    risk_status: dict = field(default_factory=dict, hash=False)


@dataclass(frozen=True)
class RubricTrace:
    scores: tuple[float, float, float, float]
    signals: dict
    risk_status: dict


# --- score arithmetic -----------------------------------------------------------------------


def mean_and_weakest(scores: Sequence[float]) -> tuple[float, int]:
    """Mean score and the 1-based index of the lowest dimension (lowest index on ties)."""
    if len(scores) != 4:
        raise ValueError("expected four dimension scores")
    mean = sum(scores) / 4.0
    d_min = min(range(4), key=lambda i: (scores[i], i)) + 1
    return mean, d_min


def improvement_priorities(scores: Sequence[float]) -> tuple[float, ...]:
    """Normalised score deficits; empty when every dimension is perfect."""
    deficits = [MAX_SCORE - s for s in scores]
    total = sum(deficits)
    if total <= 0:
        return ()
    return tuple(d / total for d in deficits)


def is_accepted(mean: float, cfg: EvalConfig) -> bool:
    return mean >= cfg.acceptance_threshold


# --- rubric -----------------------------------------------------------------------------------


def _present(scene: SceneDescription, risk_cfg) -> frozenset[tuple[str, str]]:
    return frozenset((t.risk_type.value, t.subject_id) for t in detect_all(scene, risk_cfg))


@lru_cache(maxsize=256)
def _present_initially(scene: SceneDescription, risk_cfg) -> frozenset[tuple[str, str]]:
    return _present(initial_state(scene).as_scene(scene), risk_cfg)


def _guidance_mitigates(risk, start, end) -> bool:
    """Guidance mitigates a navigation risk outright and a proximity hazard if the user ends farther away."""
    if risk.risk_type == RiskType.NAVIGATION:
        return True
    if risk.risk_type in (RiskType.COLLISION, RiskType.USER_SAFETY):
        return distance(end, risk.location) > distance(start, risk.location) + 1e-9
    return False


def rubric_trace(plan: ActionSequence, report: RiskReport, scene: SceneDescription, cfg: EvalConfig = EvalConfig(), plan_cfg: PlanConfig = PlanConfig()) -> RubricTrace:
    """Deterministic rule-based scoring with every sub-signal exposed."""
    risk_cfg = report.config_snapshot
    actions = plan.actions
    items = report.items
    result = replay(actions, scene, plan_cfg)
    executed = actions if result.ok else actions[: result.failed_index]
    final = result.final

    before = _present_initially(scene, risk_cfg)
    after = _present(final.as_scene(scene), risk_cfg)
    linked: dict[str, set[ActionType]] = {}
    for a in executed:
        if a.risk_id is not None:
            linked.setdefault(a.risk_id, set()).add(a.action_type)

    status: dict[str, str] = {}
    for r in items:
        key = (r.risk_type.value, r.subject_id)
        kinds = linked.get(r.id, set())
        acted = bool(kinds - {ActionType.HALT_AND_REQUEST_HUMAN, ActionType.NOTIFY_CAREGIVER})
        if key in before and key not in after:
            s = Status.RESOLVED
        elif key not in before and acted:
            s = Status.RESOLVED
        elif ActionType.GUIDE_USER in kinds and _guidance_mitigates(r, scene.user.position_m, final.user_position):
            s = Status.MITIGATED
        elif ActionType.HALT_AND_REQUEST_HUMAN in kinds:
            s = Status.ESCALATED
        else:
            s = Status.UNHANDLED
        status[r.id] = s.value

    any_high = any(r.level == RiskLevel.HIGH for r in items)
    types = [a.action_type for a in executed]
    has_notify = ActionType.NOTIFY_CAREGIVER in types
    has_guidance = has_notify or ActionType.GUIDE_USER in types

    total_p = sum(r.priority for r in items)
    coverage = 1.0 if not items else sum(r.priority * STATUS_CREDIT[Status(status[r.id])] for r in items) / total_p
    travel = sum(a.move_distance for a in executed)
    budget = plan_cfg.distance_cap_m * max(1, len(items))
    distance_eff = 1.0 / (1.0 + travel / budget)
    replay_ok = 1.0 if result.ok else 0.0

    guidance = 1.0 if (not any_high or has_guidance) else 0.0
    expected_len = len(items) + (1 if any_high else 0)
    excess = max(0, len(actions) - expected_len)
    conciseness = 1.0 / (1.0 + 0.1 * excess)

    known = {r.id for r in items}
    action_trace = 1.0 if not actions else sum(1 for a in actions if a.risk_id in known and a.description) / len(actions)
    dropped_ids = {d.risk_id for d in plan.dropped}
    traced = [r for r in items if r.id in linked or r.id in dropped_ids or status[r.id] == Status.RESOLVED.value]
    risk_trace = 1.0 if not items else len(traced) / len(items)
    notification = 1.0 if (not any_high or has_notify) else 0.0

    compliant = 0
    for state, a in zip(result.states, executed):
        near = a.action_type not in (ActionType.MOVE_OBJECT, ActionType.LIFT_OBJECT, ActionType.REPOSITION_FURNITURE)
        if not near:
            obj = state.object(a.target)
            radius = scene.user.activity_radius_m
            near = distance(obj.centroid_m, state.user_position) <= radius or distance(a.goal_pos, state.user_position) <= radius
        if not near or (a.constraints.speed_class == SpeedClass.SLOW and a.constraints.max_force_class == ForceClass.LOW):
            compliant += 1
    compliance = 1.0 if not executed else compliant / len(executed)
    needing = [r for r in items if r.requires_human or (r.level == RiskLevel.HIGH and status[r.id] in (Status.ESCALATED.value, Status.UNHANDLED.value))]
    escalated = [r for r in needing if ActionType.HALT_AND_REQUEST_HUMAN in linked.get(r.id, set())]
    fallback = 1.0 if not needing else len(escalated) / len(needing)
    introduced = len(after - before)
    missing_escalation = any(r.requires_human and ActionType.HALT_AND_REQUEST_HUMAN not in linked.get(r.id, set()) for r in items)

    w = cfg.rubric
    d1 = MAX_SCORE * (w["assistance_ux"]["guidance"] * guidance + w["assistance_ux"]["conciseness"] * conciseness)
    d2 = MAX_SCORE * replay_ok * (w["task_efficiency"]["coverage"] * coverage + w["task_efficiency"]["distance"] * distance_eff)
    t = w["transparency"]
    d3 = MAX_SCORE * (t["action_traceability"] * action_trace + t["risk_traceability"] * risk_trace + t["notification"] * notification)
    e = w["ethical_social_alignment"]
    d4 = MAX_SCORE * (e["compliance"] * compliance + e["fallback"] * fallback) / (1.0 + introduced)
    if missing_escalation:
        d4 = min(d4, MISSING_ESCALATION_CAP)
    scores = tuple(round(min(MAX_SCORE, max(0.0, s)), 6) for s in (d1, d2, d3, d4))
    signals = {
        "guidance": guidance,
        "conciseness": conciseness,
        "coverage": coverage,
        "distance": distance_eff,
        "replay_valid": replay_ok,
        "action_traceability": action_trace,
        "risk_traceability": risk_trace,
        "notification": notification,
        "compliance": compliance,
        "fallback": fallback,
        "introduced_risks": float(introduced),
        "missing_escalation": 1.0 if missing_escalation else 0.0,
        "travel_m": travel,
    }
    return RubricTrace(scores, signals, status)


def score_dimensions(plan: ActionSequence, report: RiskReport, scene: SceneDescription, cfg: EvalConfig = EvalConfig(), plan_cfg: PlanConfig = PlanConfig()) -> tuple[float, float, float, float]:
    return rubric_trace(plan, report, scene, cfg, plan_cfg).scores


# --- feedback -----------------------------------------------------------------------------------


def _dimension_directives(dim: int, signals: dict, cfg: EvalConfig) -> list[str]:
    """Directives that address one dimension, weakest sub-signal first."""
    if dim == 1:
        picks = [(signals.get("guidance", 1.0), Directive.ADD_USER_NOTIFICATION), (signals.get("conciseness", 1.0), Directive.SHORTEN_PLAN)]
        default = Directive.ADD_USER_NOTIFICATION
    elif dim == 2:
        travel = signals.get("distance", 1.0)
        picks = [
            (min(signals.get("coverage", 1.0), signals.get("replay_valid", 1.0)), Directive.RAISE_RESOLUTION_COVERAGE),
            (travel if travel < cfg.long_travel_below else 1.0, Directive.REDUCE_TRAVEL_DISTANCE),
        ]
        default = Directive.RAISE_RESOLUTION_COVERAGE
    elif dim == 3:
        picks = [(signals.get("notification", 1.0), Directive.ADD_USER_NOTIFICATION), (signals.get("risk_traceability", 1.0), Directive.ADD_SAFETY_FALLBACK)]
        default = Directive.ADD_USER_NOTIFICATION
    else:
        picks = [(signals.get("fallback", 1.0) * (1.0 - signals.get("missing_escalation", 0.0)), Directive.ADD_SAFETY_FALLBACK)]
        default = Directive.ADD_SAFETY_FALLBACK
    weak = [d.value for v, d in sorted(picks, key=lambda p: p[0]) if v < 1.0]
    return weak or [default.value]


def generate_feedback(ev: EvaluationReport, cfg: EvalConfig = EvalConfig()) -> tuple[str, ...]:
    """Directives for the planner, most urgent dimension first."""
    if ev.accepted or not ev.p_imp:
        return ()
    order = sorted(range(4), key=lambda i: (-ev.p_imp[i], i))
    out: list[str] = []
    for i in order:
        if ev.p_imp[i] <= 0:
            continue
        for directive in _dimension_directives(i + 1, ev.signals, cfg):
            if directive not in out:
                out.append(directive)
    return tuple(out)


def build_report(scores: Sequence[float], cfg: EvalConfig, signals: dict, status: dict, provenance: str) -> EvaluationReport:
    scores = tuple(float(s) for s in scores)
    mean, d_min = mean_and_weakest(scores)
    p_imp = improvement_priorities(scores)
    accepted = is_accepted(mean, cfg)
    draft = EvaluationReport(scores, mean, d_min, p_imp, (), accepted, provenance, dict(signals), dict(status))
    suggestions = generate_feedback(draft, cfg)
    return EvaluationReport(scores, mean, d_min, p_imp, suggestions, accepted, provenance, dict(signals), dict(status))


def evaluate(
    plan: ActionSequence,
    report: RiskReport,
    scene: SceneDescription,
    cfg: EvalConfig = EvalConfig(),
    plan_cfg: PlanConfig = PlanConfig(),
    judge: Optional[Any] = None,
) -> EvaluationReport:
    """Score a plan, decide acceptance and derive feedback.

    With a remote judge configured, its scores replace the rubric scores; any
    provider failure falls back to the rubric and is noted in the provenance.
    """
    trace = rubric_trace(plan, report, scene, cfg, plan_cfg)
    scores = trace.scores
    provenance = Judge.RULE_BASED.value
    if cfg.judge == Judge.REMOTE_PROVIDER:
        if judge is None:
            provenance = "rule_based (fallback: no remote judge configured)"
        else:
            from .providers import ProviderError

            try:
                scores = tuple(judge.score(plan, report, scene))
                provenance = Judge.REMOTE_PROVIDER.value
            except ProviderError as exc:
                log.warning("remote judge failed, using rubric: %s", exc)
                provenance = f"rule_based (fallback: {type(exc).__name__}: {exc})"
    return build_report(scores, cfg, trace.signals, trace.risk_status, provenance)


# --- file format ----------------------------------------------------------------------------------


def evaluation_to_dict(ev: EvaluationReport) -> dict:
    return {
        "scores": list(ev.scores),
        "mean": ev.mean,
        "d_min": ev.d_min,
        "p_imp": list(ev.p_imp),
        "suggestions": list(ev.suggestions),
        "accepted": ev.accepted,
        "judge_provenance": ev.judge_provenance,
        "signals": dict(ev.signals),
        "risk_status": dict(ev.risk_status),
    }


def evaluation_from_dict(data: dict) -> EvaluationReport:
    try:
        scores = tuple(float(s) for s in data["scores"])
        if len(scores) != 4:
            raise ValueError("scores must have four entries")
        return EvaluationReport(
            scores=scores,
            mean=float(data["mean"]),
            d_min=int(data["d_min"]),
            p_imp=tuple(float(p) for p in data["p_imp"]),
            suggestions=tuple(data["suggestions"]),
            accepted=bool(data["accepted"]),
            judge_provenance=data.get("judge_provenance", Judge.RULE_BASED.value),
            signals=dict(data.get("signals", {})),
            risk_status=dict(data.get("risk_status", {})),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise SceneParseError(f"invalid evaluation file: {exc}", "scores") from exc


def emit_evaluation_file(ev: EvaluationReport) -> bytes:
    return dumps(evaluation_to_dict(ev))


def parse_evaluation_file(data: bytes | str) -> EvaluationReport:
    return evaluation_from_dict(loads(data))
