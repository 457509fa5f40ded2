"""Closed-loop pipeline: perceive, assess, then plan and evaluate until accepted or capped."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Optional, Sequence, Union

import yaml

from .domain import (
    SceneDescription,
    SceneImage,
    SceneParseError,
    dumps,
    loads,
    scene_from_dict,
    scene_to_dict,
    validate_scene,
)
from .evaluator import (
    EvalConfig,
    EvaluationReport,
    Judge,
    evaluate,
    evaluation_from_dict,
    evaluation_to_dict,
)
from .perception import OracleProvider, PerceptionProvider, RemoteProvider
from .planner import ActionSequence, PlanConfig, plan, plan_from_dict, plan_to_dict
from .providers import ProviderEndpoint, ProviderError
from .risk import RiskConfig, RiskReport, assess, report_from_dict, report_to_dict
from .simworld.world import WorldGroundTruth, is_world_dict, world_from_dict

log = logging.getLogger(__name__)


class TerminatedBy(str, Enum):
    ACCEPTED = "accepted"
    ITERATION_CAP = "iteration_cap"


class ConfigError(ValueError):
    pass


class PipelineError(RuntimeError):
    """A stage failed mid-run; ``history`` holds whatever finished before it."""

    def __init__(self, message: str, history: Optional[dict] = None):
        super().__init__(message)
        self.history = history or {}


@dataclass(frozen=True)
class PerceptionConfig:
    provider: str = "oracle"
    endpoint: Optional[ProviderEndpoint] = None

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"provider": self.provider}
        if self.endpoint is not None:
            out["endpoint"] = self.endpoint.to_dict()
        return out


@dataclass(frozen=True)
class PipelineConfig:
    risk: RiskConfig = field(default_factory=RiskConfig)
    plan: PlanConfig = field(default_factory=PlanConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    max_iterations: int = 5
    perception: PerceptionConfig = field(default_factory=PerceptionConfig)

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ConfigError("; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if not isinstance(self.max_iterations, int) or self.max_iterations < 1:
            out.append("max_iterations must be >= 1")
        out += self.risk.problems() + self.plan.problems() + self.eval.problems()
        if self.perception.provider not in ("oracle", "remote"):
            out.append(f"unknown perception provider {self.perception.provider!r}")
        return out

    def to_dict(self) -> dict:
        return {
            "risk": self.risk.to_dict(),
            "plan": self.plan.to_dict(),
            "eval": self.eval.to_dict(),
            "max_iterations": self.max_iterations,
            "perception": self.perception.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Optional[dict]) -> "PipelineConfig":
        data = data or {}
        unknown = set(data) - {"risk", "plan", "eval", "max_iterations", "perception"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        try:
            perception = dict(data.get("perception") or {})
            endpoint = perception.get("endpoint")
            return cls(
                risk=RiskConfig.from_dict(data.get("risk") or {}),
                plan=PlanConfig.from_dict(data.get("plan") or {}),
                eval=EvalConfig.from_dict(data.get("eval") or {}),
                max_iterations=data.get("max_iterations", 5),
                perception=PerceptionConfig(
                    provider=perception.get("provider", "oracle"),
                    endpoint=ProviderEndpoint.from_dict(endpoint) if endpoint else None,
                ),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError, ProviderError) as exc:
            raise ConfigError(str(exc)) from exc


def load_config(path: Optional[Union[str, os.PathLike]]) -> PipelineConfig:
    """Read a YAML (or JSON) config file; ``None`` gives the defaults."""
    if path is None:
        return PipelineConfig()
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return PipelineConfig.from_dict(data)


@dataclass(frozen=True)
class Iteration:
    index: int
    plan: ActionSequence
    evaluation: EvaluationReport
    directives: tuple[str, ...]
    added: tuple[str, ...] = ()
    removed: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "directives": list(self.directives),
            "diff": {"added": list(self.added), "removed": list(self.removed)},
            "plan": plan_to_dict(self.plan),
            "evaluation": evaluation_to_dict(self.evaluation),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Iteration":
        return cls(
            index=int(data["index"]),
            plan=plan_from_dict(data["plan"]),
            evaluation=evaluation_from_dict(data["evaluation"]),
            directives=tuple(data["directives"]),
            added=tuple(data["diff"]["added"]),
            removed=tuple(data["diff"]["removed"]),
        )


@dataclass(frozen=True)
class PipelineOutput:
    scene: SceneDescription
    risk_report: RiskReport
    iterations: tuple[Iteration, ...]
    terminated_by: TerminatedBy
    final_index: int

    @property
    def final_plan(self) -> ActionSequence:
        return self.iterations[self.final_index - 1].plan

    @property
    def final_evaluation(self) -> EvaluationReport:
        return self.iterations[self.final_index - 1].evaluation

    def to_dict(self) -> dict:
        return {
            "scene": scene_to_dict(self.scene),
            "risk_report": report_to_dict(self.risk_report),
            "iterations": [it.to_dict() for it in self.iterations],
            "terminated_by": self.terminated_by.value,
            "final_iteration": self.final_index,
            "final_plan": plan_to_dict(self.final_plan),
            "final_score": self.final_evaluation.mean,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineOutput":
        return cls(
            scene=scene_from_dict(data["scene"]),
            risk_report=report_from_dict(data["risk_report"]),
            iterations=tuple(Iteration.from_dict(i) for i in data["iterations"]),
            terminated_by=TerminatedBy(data["terminated_by"]),
            final_index=int(data["final_iteration"]),
        )


def emit_output_file(out: PipelineOutput) -> bytes:
    return dumps(out.to_dict())


def parse_output_file(data: bytes | str) -> PipelineOutput:
    return PipelineOutput.from_dict(loads(data))


# --- input resolution ------------------------------------------------------------------------------

PipelineInput = Union[SceneDescription, WorldGroundTruth, SceneImage, str, os.PathLike]


def _provider_for(cfg: PipelineConfig, provider: Optional[PerceptionProvider]) -> PerceptionProvider:
    if provider is not None:
        return provider
    if cfg.perception.provider == "remote":
        if cfg.perception.endpoint is None:
            raise ConfigError("remote perception needs perception.endpoint")
        return RemoteProvider(cfg.perception.endpoint)
    return OracleProvider()


def _load_path(path: Union[str, os.PathLike]) -> Union[SceneDescription, WorldGroundTruth, SceneImage]:
    p = Path(path)
    if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".webp"):
        return SceneImage(width_px=0, height_px=0, pixel_ref=str(p))
    data = loads(p.read_bytes())
    if is_world_dict(data):
        return world_from_dict(data)
    return scene_from_dict(data)


def perceive(source: PipelineInput, cfg: PipelineConfig, provider: Optional[PerceptionProvider] = None) -> SceneDescription:
    """Resolve any accepted input into a validated scene description."""
    if isinstance(source, (str, os.PathLike)):
        source = _load_path(source)
    if isinstance(source, SceneDescription):
        scene = source
    elif isinstance(source, WorldGroundTruth):
        scene = (provider or OracleProvider())(source)
    elif isinstance(source, SceneImage):
        scene = _provider_for(cfg, provider)(source)
    else:
        raise TypeError(f"unsupported pipeline input {type(source).__name__}")
    outcome = validate_scene(scene)
    if not outcome.ok:
        raise SceneParseError("; ".join(outcome.messages()), outcome.violations[0].path)
    return scene


# --- the loop ------------------------------------------------------------------------------------------


def _signatures(seq: ActionSequence) -> list[str]:
    return [f"{a.action_type.value}:{a.target}@{a.goal_pos[0]:.3f},{a.goal_pos[1]:.3f}" for a in seq.actions]


def _diff(prev: Optional[ActionSequence], cur: ActionSequence) -> tuple[tuple[str, ...], tuple[str, ...]]:
    new = _signatures(cur)
    if prev is None:
        return tuple(new), ()
    old = _signatures(prev)
    return tuple(s for s in new if s not in old), tuple(s for s in old if s not in new)


def run_pipeline(
    source: PipelineInput,
    cfg: PipelineConfig = PipelineConfig(),
    provider: Optional[PerceptionProvider] = None,
    judge: Optional[Any] = None,
) -> PipelineOutput:
    """Perceive once, assess once, then iterate plan -> evaluate -> feedback.

    Feedback directives accumulate across iterations. The loop stops on
    acceptance or after ``cfg.max_iterations`` plans; in the latter case the
    final plan is the best-scoring one (earliest on ties).
    """
    try:
        scene = perceive(source, cfg, provider)
    except ProviderError as exc:
        raise PipelineError(f"perception failed: {exc}", {"stage": "perception"}) from exc
    report = assess(scene, cfg.risk)
    iterations: list[Iteration] = []
    directives: tuple[str, ...] = ()
    prev: Optional[ActionSequence] = None
    terminated = TerminatedBy.ITERATION_CAP
    for t in range(1, cfg.max_iterations + 1):
        seq = plan(report, scene, cfg.plan, directives, iteration=t)
        try:
            ev = evaluate(seq, report, scene, cfg.eval, cfg.plan, judge)
        except ProviderError as exc:
            history = {"stage": "evaluation", "scene": scene, "risk_report": report, "iterations": list(iterations), "pending_plan": seq}
            raise PipelineError(f"evaluation failed at iteration {t}: {exc}", history) from exc
        added, removed = _diff(prev, seq)
        iterations.append(Iteration(t, seq, ev, directives, added, removed))
        log.debug("iteration %d: mean %.3f accepted=%s", t, ev.mean, ev.accepted)
        if ev.accepted:
            terminated = TerminatedBy.ACCEPTED
            break
        directives = tuple(sorted(set(directives) | set(ev.suggestions)))
        prev = seq
    if terminated == TerminatedBy.ACCEPTED:
        final = len(iterations)
    else:
        final = max(range(len(iterations)), key=lambda i: (iterations[i].evaluation.mean, -i)) + 1
    return PipelineOutput(scene, report, tuple(iterations), terminated, final)


# --- batch ------------------------------------------------------------------------------------------------


@dataclass(frozen=True)
class BatchItem:
    index: int
    label: str
    output: Optional[PipelineOutput] = None
    error: Optional[str] = None


@dataclass(frozen=True)
class BatchSummary:
    total: int
    succeeded: int
    failed: int
    acceptance_rate: float
    mean_iterations: float
    mean_score: float

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "succeeded": self.succeeded,
            "failed": self.failed,
            "acceptance_rate": self.acceptance_rate,
            "mean_iterations": self.mean_iterations,
            "mean_score": self.mean_score,
        }


@dataclass(frozen=True)
class BatchResult:
    items: tuple[BatchItem, ...]
    summary: BatchSummary

    @property
    def outputs(self) -> list[PipelineOutput]:
        return [i.output for i in self.items if i.output is not None]

    @property
    def errors(self) -> list[BatchItem]:
        return [i for i in self.items if i.error is not None]


def _label(source: Any, index: int) -> str:
    if isinstance(source, (str, os.PathLike)):
        return str(source)
    if isinstance(source, WorldGroundTruth):
        return source.world_id
    if isinstance(source, SceneDescription):
        return source.scene_id
    return f"input-{index}"


def summarize(items: Sequence[BatchItem]) -> BatchSummary:
    ok = [i.output for i in items if i.output is not None]
    n = len(ok)
    accepted = sum(1 for o in ok if o.terminated_by == TerminatedBy.ACCEPTED)
    return BatchSummary(
        total=len(items),
        succeeded=n,
        failed=len(items) - n,
        acceptance_rate=round(accepted / n, 3) if n else 0.0,
        mean_iterations=round(sum(len(o.iterations) for o in ok) / n, 3) if n else 0.0,
        mean_score=round(sum(o.final_evaluation.mean for o in ok) / n, 6) if n else 0.0,
    )


def run_batch(
    inputs: Sequence[PipelineInput],
    cfg: PipelineConfig = PipelineConfig(),
    parallelism: int = 1,
    provider: Optional[PerceptionProvider] = None,
) -> BatchResult:
    """Run whole pipelines concurrently; results keep input order and failures stay isolated."""
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")

    def one(args: tuple[int, Any]) -> BatchItem:
        index, source = args
        label = _label(source, index)
        try:
            return BatchItem(index, label, output=run_pipeline(source, cfg, provider))
        except Exception as exc:  # isolate every per-input failure
            log.warning("batch input %s failed: %s", label, exc)
            return BatchItem(index, label, error=f"{type(exc).__name__}: {exc}")

    indexed = list(enumerate(inputs))
    if parallelism == 1:
        items = [one(a) for a in indexed]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            items = list(pool.map(one, indexed))
    return BatchResult(tuple(items), summarize(items))


__all__ = [
    "BatchItem",
    "BatchResult",
    "BatchSummary",
    "ConfigError",
    "Iteration",
    "Judge",
    "PerceptionConfig",
    "PipelineConfig",
    "PipelineError",
    "PipelineOutput",
    "TerminatedBy",
    "emit_output_file",
    "load_config",
    "parse_output_file",
    "perceive",
    "run_batch",
    "run_pipeline",
    "summarize",
]
