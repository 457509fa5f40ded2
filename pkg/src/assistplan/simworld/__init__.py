"""Synthetic homes, ground truth and brute-force oracles."""

from .oracles import brute_force_plan_search, brute_force_plan_value, brute_force_rank, template_actions
from .ranking import RankingTable, Scale, aggregate_rankings, emit_ranking_file, parse_ranking_file
from .world import (
    Corridor,
    WorldGroundTruth,
    emit_world_file,
    generate_world,
    is_world_dict,
    parse_world_file,
    world_from_dict,
    world_to_dict,
)

__all__ = [
    "Corridor",
    "RankingTable",
    "Scale",
    "WorldGroundTruth",
    "aggregate_rankings",
    "brute_force_plan_search",
    "brute_force_plan_value",
    "brute_force_rank",
    "emit_ranking_file",
    "emit_world_file",
    "generate_world",
    "is_world_dict",
    "parse_ranking_file",
    "parse_world_file",
    "template_actions",
    "world_from_dict",
    "world_to_dict",
]
