"""Risk-aware multi-stage task planning for assistive home robots."""

from .domain import ContractViolation, SceneDescription, SceneParseError, emit_scene_file, parse_scene_file, validate_scene
from .evaluator import EvalConfig, EvaluationReport, evaluate
from .orchestrator import PipelineConfig, PipelineOutput, load_config, run_batch, run_pipeline
from .planner import ActionSequence, PlanConfig, plan
from .risk import RiskConfig, RiskReport, assess

__version__ = "0.1.0"

__all__ = [
    "ActionSequence",
    "ContractViolation",
    "EvalConfig",
    "EvaluationReport",
    "PipelineConfig",
    "PipelineOutput",
    "PlanConfig",
    "RiskConfig",
    "RiskReport",
    "SceneDescription",
    "SceneParseError",
    "assess",
    "emit_scene_file",
    "evaluate",
    "load_config",
    "parse_scene_file",
    "plan",
    "run_batch",
    "run_pipeline",
    "validate_scene",
]
