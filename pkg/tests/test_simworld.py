from __future__ import annotations

import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from assistplan.domain import Category, ContractViolation, emit_scene_file
from assistplan.evaluator import rubric_trace
from assistplan.perception import oracle_describe
from assistplan.planner import ActionSequence, ActionType, plan
from assistplan.risk import assess
from assistplan.simworld import (
    aggregate_rankings,
    brute_force_plan_search,
    brute_force_plan_value,
    brute_force_rank,
    emit_world_file,
    generate_world,
    is_world_dict,
    parse_world_file,
    template_actions,
    world_to_dict,
)
from assistplan.simworld.ranking import emit_ranking_file, parse_ranking_file

from conftest import GOLDEN, blocked_passage_scene, others_scene, scene


# --- generator -----------------------------------------------------------------------------------


def test_generation_is_deterministic():
    assert emit_world_file(generate_world(42, 1)) == emit_world_file(generate_world(42, 1))
    assert emit_world_file(generate_world(42, 1)) != emit_world_file(generate_world(43, 1))


@pytest.mark.parametrize("seed", range(20))
def test_level_bounds(seed):
    one, two = generate_world(seed, 1), generate_world(seed, 2)
    assert 2 <= len(one.entities) <= 4 and len(one.corridors) == 1 and len(one.rooms) == 1
    assert 6 <= len(two.entities) <= 12 and len(two.corridors) >= 2 and 2 <= len(two.rooms) <= 3
    assert any(e.category in (Category.PERSON, Category.PET) for e in two.entities)


def test_level_three_shares_level_two_topology():
    two, three = generate_world(7, 2), generate_world(7, 3)
    assert two.topology() == three.topology()
    assert two.entities == three.entities
    assert emit_scene_file(oracle_describe(two)) != emit_scene_file(oracle_describe(three))


@pytest.mark.parametrize("level", [0, 4, "1"])
def test_invalid_level_is_rejected(level):
    with pytest.raises(ContractViolation):
        generate_world(1, level)


def test_user_only_world():
    world = generate_world(5, 2, n_objects=0)
    assert world.entities == () and world.corridors


@pytest.mark.parametrize("seed, level", [(42, 1), (7, 2), (7, 3)])
def test_world_file_round_trip(seed, level):
    world = generate_world(seed, level)
    data = emit_world_file(world)
    assert emit_world_file(parse_world_file(data)) == data
    assert is_world_dict(world_to_dict(world))
    assert not is_world_dict({"objects": []})


# --- risk oracle ---------------------------------------------------------------------------------


def test_rank_oracle_on_empty_scene():
    assert brute_force_rank(scene()) == []


def test_rank_oracle_matches_assess_on_blocked_passage():
    s = blocked_passage_scene()
    oracle, report = brute_force_rank(s), assess(s)
    assert [r.id for r in oracle] == [r.id for r in report.items]
    assert [r.score for r in oracle] == pytest.approx([r.score for r in report.items], abs=1e-9)


# --- planning oracle -----------------------------------------------------------------------------


def test_plan_oracle_on_empty_report():
    s = scene()
    report = assess(s)
    result = brute_force_plan_search(report, s, max_len=3)
    empty_mean = sum(rubric_trace(ActionSequence(actions=()), report, s).scores) / 4
    assert result.best_actions == () and result.best_mean == pytest.approx(empty_mean)
    assert result.sequences_scored == 1


def test_plan_oracle_escalates_out_of_scope_objects():
    s = others_scene(1)
    report = assess(s)
    result = brute_force_plan_search(report, s, max_len=2)
    assert ActionType.HALT_AND_REQUEST_HUMAN in [a.action_type for a in result.best_actions]


def test_plan_oracle_bounds_the_planner():
    s = blocked_passage_scene()
    report = assess(s)
    planner_mean = sum(rubric_trace(plan(report, s), report, s).scores) / 4
    assert brute_force_plan_value(report, s, max_len=3) >= planner_mean - 1e-9
    assert template_actions(report, s)


def test_plan_oracle_rejects_long_horizons():
    s = blocked_passage_scene()
    with pytest.raises(ValueError):
        brute_force_plan_search(assess(s), s, max_len=7)


# --- ranking -------------------------------------------------------------------------------------


def _average_ranks(row):
    """Independent tie-aware ranking: each value gets the mean of the positions it spans."""
    ordered = sorted(row)
    return [sum(i + 1 for i, v in enumerate(ordered) if v == x) / ordered.count(x) for x in row]


def test_identical_rows():
    table = aggregate_rankings([[3, 1, 2], [3, 1, 2]])
    assert table.average == (3.0, 1.0, 2.0)


def test_tie_shares_mean_rank():
    assert aggregate_rankings([[1, 1, 2]]).ranks == ((1.5, 1.5, 3.0),)


def test_higher_is_better_reverses_ranks():
    assert aggregate_rankings([[0.9, 0.1, 0.5]], higher_is_better=True).ranks == ((1.0, 3.0, 2.0),)


def test_golden_four_by_eleven_table():
    golden = json.loads((GOLDEN / "ranking_4x11.json").read_text())
    table = aggregate_rankings(golden["matrix"])
    assert [list(r) for r in table.ranks] == golden["ranks"]
    assert list(table.average) == pytest.approx(golden["average"], abs=1e-9)
    assert [_average_ranks(r) for r in golden["matrix"]] == golden["ranks"]


@pytest.mark.parametrize("matrix", [[[1, 2], [1]], [], [[]], [[1, float("nan")]]])
def test_malformed_matrix_is_rejected(matrix):
    with pytest.raises(ContractViolation):
        aggregate_rankings(matrix)


def test_seven_point_scale_averages_scores():
    table = aggregate_rankings([[7, 1], [5, 3]], scale="seven_point")
    assert table.average == (6.0, 2.0) and table.ranks == ()
    with pytest.raises(ContractViolation):
        aggregate_rankings([[8, 1]], scale="seven_point")


def test_ranking_file_round_trip():
    table = aggregate_rankings([[1, 2, 3], [2, 2, 1]], conditions=["a", "b", "c"])
    assert parse_ranking_file(emit_ranking_file(table)) == table


matrices = st.integers(1, 6).flatmap(
    lambda k: st.lists(st.lists(st.integers(0, 5).map(float), min_size=k, max_size=k), min_size=1, max_size=8)
)


@given(matrices, st.randoms(use_true_random=False))
def test_ranks_are_row_permutation_invariant(matrix, rnd):
    table = aggregate_rankings(matrix)
    shuffled = list(matrix)
    rnd.shuffle(shuffled)
    assert aggregate_rankings(shuffled).average == pytest.approx(table.average)
    k = len(matrix[0])
    assert sum(table.average) == pytest.approx(k * (k + 1) / 2)
    assert [list(r) for r in table.ranks] == [_average_ranks(r) for r in matrix]
