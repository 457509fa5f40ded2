"""Shared scene builders for the test suite."""

from __future__ import annotations

import math
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from assistplan.domain import (
    Category,
    Layout,
    Mobility,
    ObjectRecord,
    PassageAttributes,
    Provenance,
    SceneDescription,
    UserState,
)

GOLDEN = Path(__file__).parent / "golden"

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def obj(oid: str, category: str, bbox, height: float = 0.8, movable: bool = True, confidence: float = 1.0) -> ObjectRecord:
    x0, y0, x1, y1 = bbox
    return ObjectRecord(
        id=oid,
        category=Category(category),
        centroid_m=((x0 + x1) / 2, (y0 + y1) / 2),
        bbox_m=(float(x0), float(y0), float(x1), float(y1)),
        height_m=height,
        movable=movable,
        confidence=confidence,
    )


def passage(pid: str, width: float, polyline, obstacles=(), area: float | None = None) -> PassageAttributes:
    pts = tuple((float(x), float(y)) for x, y in polyline)
    length = sum(math.dist(a, b) for a, b in zip(pts, pts[1:]))
    if len(pts) > 1:
        dx, dy = pts[-1][0] - pts[0][0], pts[-1][1] - pts[0][1]
        n = math.hypot(dx, dy)
        direction = (dx / n, dy / n)
    else:
        direction = (1.0, 0.0)
    return PassageAttributes(
        id=pid,
        width_m=width,
        direction=direction,
        obstacle_ids=tuple(obstacles),
        area_m2=area if area is not None else length * width,
        polyline_m=pts,
    )


def user(pos=(1.0, 1.0), reach: float = 1.2, radius: float = 1.5, mobility: str = "wheelchair") -> UserState:
    return UserState(position_m=(float(pos[0]), float(pos[1])), mobility=Mobility(mobility), reach_height_m=reach, activity_radius_m=radius)


def scene(objects=(), passages=(), usr=None, bounds=None, walls=(), scene_id: str = "test-scene") -> SceneDescription:
    layout = Layout(bounds_m=tuple(float(v) for v in bounds), walls=tuple(walls)) if bounds is not None else None
    return SceneDescription(
        objects=tuple(objects),
        passages=tuple(passages),
        user=usr or user(),
        provenance=Provenance.FILE,
        layout=layout,
        scene_id=scene_id,
    )


def blocked_passage_scene() -> SceneDescription:
    """A chair fills 32% of a 2 m x 1 m passage that starts 1 m from the user."""
    chair = obj("chair_1", "chair", (2.6, 1.6, 3.4, 2.4), height=0.9)
    p = passage("p1", 1.0, [(2.0, 2.0), (4.0, 2.0)], obstacles=["chair_1"])
    return scene([chair], [p], user((1.0, 2.0), radius=0.5), bounds=(0, 0, 8, 4))


def others_scene(n: int = 3) -> SceneDescription:
    """Several out-of-scope objects that no robot action can resolve."""
    items = [obj(f"other_{i}", "other", (3.0 + 1.5 * i, 3.0, 3.4 + 1.5 * i, 3.4), height=0.5) for i in range(n)]
    return scene(items, [], user((1.0, 1.0), radius=1.0), bounds=(0, 0, 10, 5))


@pytest.fixture
def golden_dir() -> Path:
    return GOLDEN


# --- acceptance reporting ------------------------------------------------------------------------

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _CRITERIA[number] = (title, "PASS" if report.passed else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, verdict = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {verdict}  {title}")
