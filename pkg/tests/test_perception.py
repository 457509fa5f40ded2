from __future__ import annotations

import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from assistplan.domain import ContractViolation, Provenance, SceneImage, emit_scene_file, scene_to_dict, validate_scene
from assistplan.perception import (
    OracleProvider,
    RemoteProvider,
    assemble_bundle,
    compute_centroid,
    oracle_describe,
    remote_describe,
    segmented_object,
)
from assistplan.providers import AuditLog, ProviderEndpoint, ProviderTimeout, SchemaValidationError
from assistplan.simworld import generate_world

from conftest import blocked_passage_scene

IMAGE = SceneImage(64, 64, "data:image/png;base64,AAAA")
ENDPOINT = ProviderEndpoint("http://localhost:9", "stub-model")


def _mask(cells, w=8, h=8):
    grid = [[0] * w for _ in range(h)]
    for x, y in cells:
        grid[y][x] = 1
    return grid


def _mean_oracle(cells):
    return sum(x for x, _ in cells) / len(cells), sum(y for _, y in cells) / len(cells)


# --- centroids -----------------------------------------------------------------------------------


@pytest.mark.parametrize(
    "cells, expected",
    [
        ([(3, 5)], (3.0, 5.0)),
        ([(2, 2), (4, 2), (2, 4), (4, 4)], (3.0, 3.0)),
        ([(0, 0), (1, 0), (2, 0)], (1.0, 0.0)),
    ],
)
def test_centroid_examples(cells, expected):
    got = compute_centroid(_mask(cells))
    assert got == pytest.approx(expected)
    assert got == pytest.approx(_mean_oracle(cells))


def test_empty_mask_has_no_centroid():
    with pytest.raises(ContractViolation):
        compute_centroid(_mask([]))


cells_strategy = st.lists(st.tuples(st.integers(0, 15), st.integers(0, 15)), min_size=1, max_size=40, unique=True)


@given(cells_strategy)
def test_centroid_lies_in_mask_bbox(cells):
    obj = segmented_object(_mask(cells, 16, 16))
    x0, y0, x1, y1 = obj.bbox_px
    cx, cy = obj.centroid_px
    assert x0 <= cx <= x1 and y0 <= cy <= y1
    assert obj.pixel_count == len(cells)
    assert (cx, cy) == pytest.approx(_mean_oracle(cells))


@given(cells_strategy, st.integers(0, 8), st.integers(0, 8))
def test_centroid_is_translation_equivariant(cells, dx, dy):
    base = compute_centroid(_mask(cells, 24, 24))
    moved = compute_centroid(_mask([(x + dx, y + dy) for x, y in cells], 24, 24))
    assert moved == pytest.approx((base[0] + dx, base[1] + dy))


# --- bundles -------------------------------------------------------------------------------------


def test_bundle_without_objects():
    bundle = assemble_bundle(IMAGE, None, [])
    assert bundle.n == 0


def test_bundle_keeps_object_order():
    a = segmented_object(_mask([(1, 1)], 64, 64), 0.9)
    b = segmented_object(_mask([(10, 20), (11, 20)], 64, 64), 0.8)
    bundle = assemble_bundle(IMAGE, None, [a, b])
    assert bundle.n == 2
    assert [o.centroid_px for o in bundle.objects] == [(1.0, 1.0), (10.5, 20.0)]


def test_bundle_rejects_mismatched_mask():
    small = segmented_object(_mask([(1, 1)], 32, 32))
    with pytest.raises(ContractViolation, match=r"object 0: mask is 32x32, image is 64x64"):
        assemble_bundle(IMAGE, None, [small])


# --- oracle provider -----------------------------------------------------------------------------


def test_oracle_scene_matches_world_census():
    world = generate_world(42, 1)
    s = OracleProvider()(world)
    assert s.provenance == Provenance.ORACLE
    assert sorted(o.id for o in s.objects) == sorted(e.id for e in world.entities)
    assert [p.width_m for p in s.passages] == [c.width_m for c in world.corridors]
    assert validate_scene(s).ok


def test_user_only_world_still_has_a_passage():
    s = oracle_describe(generate_world(42, 1, n_objects=0))
    assert s.objects == () and len(s.passages) >= 1


@pytest.mark.parametrize("seed, level", [(42, 1), (7, 2), (7, 3)])
def test_oracle_is_byte_deterministic(seed, level):
    assert emit_scene_file(oracle_describe(generate_world(seed, level))) == emit_scene_file(oracle_describe(generate_world(seed, level)))


def test_level_three_adds_noise_only_to_objects():
    exact, noisy = oracle_describe(generate_world(7, 2)), oracle_describe(generate_world(7, 3))
    assert [o.id for o in exact.objects] == [o.id for o in noisy.objects]
    assert exact.user == noisy.user
    assert any(a.centroid_m != b.centroid_m for a, b in zip(exact.objects, noisy.objects))
    assert all(0.55 <= o.confidence <= 0.85 for o in noisy.objects)


# --- remote provider -----------------------------------------------------------------------------


def _reply(text: str) -> dict:
    return {"choices": [{"message": {"content": text}}]}


def _canned_scene_text() -> str:
    d = scene_to_dict(blocked_passage_scene())
    return json.dumps({k: d[k] for k in ("objects", "passages", "user")})


def test_remote_valid_answer_becomes_a_scene():
    calls = []

    def transport(endpoint, payload):
        calls.append(payload)
        return _reply("```json\n" + _canned_scene_text() + "\n```")

    s = RemoteProvider(ENDPOINT, transport=transport)(IMAGE)
    assert s.provenance == Provenance.REMOTE_PROVIDER
    assert s.objects == blocked_passage_scene().objects
    image_parts = [p for p in calls[0]["messages"][1]["content"] if p["type"] == "image_url"]
    assert image_parts[0]["image_url"]["url"] == IMAGE.pixel_ref


def test_remote_malformed_answer_keeps_raw_text():
    with pytest.raises(SchemaValidationError) as err:
        remote_describe(IMAGE, ENDPOINT, transport=lambda e, p: _reply("I see a chair."), sleep=lambda s: None)
    assert err.value.raw_text == "I see a chair."


def test_remote_retries_after_timeouts():
    attempts = iter([ProviderTimeout("t1"), ProviderTimeout("t2"), _reply(_canned_scene_text())])

    def transport(endpoint, payload):
        nxt = next(attempts)
        if isinstance(nxt, Exception):
            raise nxt
        return nxt

    audit = AuditLog()
    remote_describe(IMAGE, ENDPOINT, transport=transport, audit=audit, sleep=lambda s: None)
    assert [r.retry_count for r in audit.records] == [0, 1, 2]
    assert audit.records[-1].parse_outcome == "ok"


def test_remote_needs_pixels():
    with pytest.raises(ContractViolation):
        remote_describe(SceneImage(64, 64, None), ENDPOINT, transport=lambda e, p: _reply("{}"))
