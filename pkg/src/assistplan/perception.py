"""Perception stage: mask centroids, bundle assembly and scene-description providers."""

from __future__ import annotations

import base64
import mimetypes
import os
from dataclasses import replace
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np

from .domain import (
    SCHEMA_VERSION,
    Category,
    ContractViolation,
    GlobalSemanticFeature,
    Mobility,
    ObjectRecord,
    PassageAttributes,
    PerceptionBundle,
    Provenance,
    SceneDescription,
    SceneImage,
    SceneParseError,
    SegmentedObject,
    scene_from_dict,
    validate_scene,
)
from .geometry import occupancy
from .providers import AuditLog, ProviderEndpoint, SchemaValidationError, TargetSchema, complete_structured, register_schema

if TYPE_CHECKING:
    from .simworld.world import WorldGroundTruth

NOISE_SIGMA_M = 0.05
CONFIDENCE_RANGE = (0.55, 0.85)


def compute_centroid(mask) -> tuple[float, float]:
    """Mean (x, y) of the set cells of a ``mask[y][x]`` grid."""
    grid = np.asarray(mask, dtype=bool)
    if grid.ndim != 2:
        raise ContractViolation("mask must be a 2-D grid")
    ys, xs = np.nonzero(grid)
    if xs.size == 0:
        raise ContractViolation("empty mask has no centroid")
    return float(xs.mean()), float(ys.mean())


def segmented_object(mask, confidence: float = 1.0) -> SegmentedObject:
    """Build a SegmentedObject, deriving pixel count, centroid and box from the mask."""
    grid = np.asarray(mask, dtype=bool)
    ys, xs = np.nonzero(grid)
    cx, cy = compute_centroid(grid)
    return SegmentedObject(
        mask=tuple(tuple(int(v) for v in row) for row in grid.astype(int)),
        pixel_count=int(xs.size),
        centroid_px=(cx, cy),
        bbox_px=(float(xs.min()), float(ys.min()), float(xs.max()), float(ys.max())),
        confidence=confidence,
    )


def assemble_bundle(image: SceneImage, feature: Optional[GlobalSemanticFeature], objects: Sequence[SegmentedObject]) -> PerceptionBundle:
    for i, obj in enumerate(objects):
        if obj.shape != (image.height_px, image.width_px):
            h, w = obj.shape
            raise ContractViolation(
                f"object {i}: mask is {w}x{h}, image is {image.width_px}x{image.height_px}"
            )
    return PerceptionBundle(image=image, global_feature=feature, objects=tuple(objects))


# --- providers ---------------------------------------------------------------------------------


class PerceptionProvider:
    """Turns an image or a simulated world into a validated scene description."""

    needs_pixels: bool = False

    def describe(self, source) -> SceneDescription:
        raise NotImplementedError

    def __call__(self, source) -> SceneDescription:
        scene = self.describe(source)
        outcome = validate_scene(scene)
        if not outcome.ok:
            raise SceneParseError("; ".join(outcome.messages()), outcome.violations[0].path)
        return scene


def _passages(world: "WorldGroundTruth", objects: Sequence[ObjectRecord]) -> tuple[PassageAttributes, ...]:
    out = []
    for c in world.corridors:
        p = PassageAttributes(
            id=c.id, width_m=c.width_m, direction=c.direction, obstacle_ids=(),
            area_m2=c.area_m2, polyline_m=c.polyline_m,
        )
        out.append(replace(p, obstacle_ids=occupancy(p, objects)))
    return tuple(out)


def exact_scene(world: "WorldGroundTruth") -> SceneDescription:
    """Noise-free scene: every entity exactly as generated."""
    return SceneDescription(
        objects=world.entities,
        passages=_passages(world, world.entities),
        user=world.user,
        provenance=Provenance.ORACLE,
        layout=world.layout,
        scene_id=world.world_id,
    )


def _noisy(world: "WorldGroundTruth") -> tuple[ObjectRecord, ...]:
    rng = np.random.default_rng([world.seed, world.level, 7919])
    out = []
    for obj in world.entities:
        dx, dy = rng.normal(0.0, NOISE_SIGMA_M, size=2)
        conf = float(rng.uniform(*CONFIDENCE_RANGE))
        cx = round(obj.centroid_m[0] + float(dx), 4)
        cy = round(obj.centroid_m[1] + float(dy), 4)
        moved = obj.moved_to((cx, cy))
        bbox = tuple(round(v, 4) for v in moved.bbox_m)
        out.append(replace(moved, bbox_m=bbox, footprint_area_m2=obj.footprint_area_m2, confidence=round(conf, 4)))
    return tuple(out)


def oracle_describe(world: "WorldGroundTruth") -> SceneDescription:
    """Deterministic scene from ground truth; Level 3 adds the perception noise channel.

    The noise moves each centroid (box carried along) by a seeded Gaussian draw
    and lowers confidences. Passage obstacle lists are recomputed from the
    perceived boxes, so noise can change which objects count as obstacles.
    """
    if world.level != 3:
        return exact_scene(world)
    objects = _noisy(world)
    # keep footprints consistent with the rounded boxes
    objects = tuple(replace(o, footprint_area_m2=(o.bbox_m[2] - o.bbox_m[0]) * (o.bbox_m[3] - o.bbox_m[1])) for o in objects)
    return SceneDescription(
        objects=objects,
        passages=_passages(world, objects),
        user=world.user,
        provenance=Provenance.ORACLE,
        layout=world.layout,
        scene_id=world.world_id,
    )


class OracleProvider(PerceptionProvider):
    needs_pixels = False

    def describe(self, source) -> SceneDescription:
        return oracle_describe(source)


# --- remote provider --------------------------------------------------------------------------

_POINT = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_BOX = {"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4}

SCENE_JSON_SCHEMA = {
    "type": "object",
    "required": ["objects", "passages", "user"],
    "properties": {
        "objects": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "category", "centroid_m", "bbox_m", "height_m", "movable"],
                "properties": {
                    "id": {"type": "string", "minLength": 1},
                    "category": {"enum": [c.value for c in Category]},
                    "centroid_m": _POINT,
                    "bbox_m": _BOX,
                    "height_m": {"type": "number", "minimum": 0},
                    "movable": {"type": "boolean"},
                    "footprint_area_m2": {"type": "number", "minimum": 0},
                    "confidence": {"type": "number", "minimum": 0, "maximum": 1},
                },
            },
        },
        "passages": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "width_m", "direction", "obstacle_ids", "area_m2", "polyline_m"],
                "properties": {
                    "id": {"type": "string"},
                    "width_m": {"type": "number", "exclusiveMinimum": 0},
                    "direction": _POINT,
                    "obstacle_ids": {"type": "array", "items": {"type": "string"}},
                    "area_m2": {"type": "number", "exclusiveMinimum": 0},
                    "polyline_m": {"type": "array", "items": _POINT, "minItems": 1},
                },
            },
        },
        "user": {
            "type": "object",
            "required": ["position_m", "mobility", "reach_height_m", "activity_radius_m"],
            "properties": {
                "position_m": _POINT,
                "mobility": {"enum": [m.value for m in Mobility]},
                "reach_height_m": {"type": "number", "exclusiveMinimum": 0},
                "activity_radius_m": {"type": "number", "exclusiveMinimum": 0},
            },
        },
    },
}


def _to_scene(data: dict) -> SceneDescription:
    payload = dict(data)
    payload.setdefault("schema_version", SCHEMA_VERSION)
    payload["provenance"] = Provenance.REMOTE_PROVIDER.value
    for obj in payload.get("objects", []):
        if "footprint_area_m2" not in obj:
            x0, y0, x1, y1 = obj["bbox_m"]
            obj["footprint_area_m2"] = (x1 - x0) * (y1 - y0)
    return scene_from_dict(payload)


SCENE_SCHEMA = register_schema(TargetSchema("scene_description", SCENE_JSON_SCHEMA, _to_scene))

DESCRIBE_PROMPT = (
    "Describe the indoor scene in the image for an assistive robot. List every object with its "
    "category, metric centroid and footprint box, height and whether it can be moved; every "
    "passage with its width, centerline, area and the ids of objects inside it; and the user's "
    "position, mobility, reach height and activity radius. Use meters."
)


def image_data_url(pixel_ref: str) -> str:
    if pixel_ref.startswith("data:"):
        return pixel_ref
    mime = mimetypes.guess_type(pixel_ref)[0] or "image/png"
    with open(pixel_ref, "rb") as fh:
        encoded = base64.b64encode(fh.read()).decode("ascii")
    return f"data:{mime};base64,{encoded}"


def remote_describe(image: SceneImage, endpoint: ProviderEndpoint, *, transport=None, audit: Optional[AuditLog] = None, sleep=None) -> SceneDescription:
    """Ask a hosted multimodal model for the scene and validate its answer."""
    if not image.pixel_ref:
        raise ContractViolation("remote perception needs a pixel payload (pixel_ref is empty)")
    kwargs = {}
    if transport is not None:
        kwargs["transport"] = transport
    if sleep is not None:
        kwargs["sleep"] = sleep
    result = complete_structured(endpoint, DESCRIBE_PROMPT, SCENE_SCHEMA, images=[image_data_url(image.pixel_ref)], audit=audit, **kwargs)
    scene: SceneDescription = result.value
    if scene.scene_id == "scene" and not image.pixel_ref.startswith("data:"):
        scene = replace(scene, scene_id=os.path.splitext(os.path.basename(image.pixel_ref))[0])
    return scene


class RemoteProvider(PerceptionProvider):
    needs_pixels = True

    def __init__(self, endpoint: ProviderEndpoint, transport=None, audit: Optional[AuditLog] = None, sleep=None):
        self.endpoint = endpoint
        self.transport = transport
        self.audit = audit if audit is not None else AuditLog()
        self.sleep = sleep

    def describe(self, source: SceneImage) -> SceneDescription:
        return remote_describe(source, self.endpoint, transport=self.transport, audit=self.audit, sleep=self.sleep)


__all__ = [
    "CONFIDENCE_RANGE",
    "DESCRIBE_PROMPT",
    "NOISE_SIGMA_M",
    "OracleProvider",
    "PerceptionProvider",
    "RemoteProvider",
    "SCENE_SCHEMA",
    "SchemaValidationError",
    "assemble_bundle",
    "compute_centroid",
    "exact_scene",
    "oracle_describe",
    "remote_describe",
    "segmented_object",
]
